#include "swarm/experiments/node.hpp"

#include <spdlog/spdlog.h>

#include <csignal>
#include <fstream>
#include <random>

#include <boost/asio/signal_set.hpp>

#include "swarm/dht/node.hpp"
#include "swarm/experiments/experiments.hpp"
#include "swarm/gating/liveness.hpp"
#include "swarm/net/socket.hpp"
#include "swarm/runtime/runtime.hpp"

namespace swarm::experiments {

namespace {

using Float = float;

ModelSpec node_spec(const ExperimentConfig& cfg) {
    auto spec = model_spec(cfg, "dmoe-small");
    spec.name = "node";
    return spec;
}

void write_ready(const std::string& path, const std::string& address) {
    if (path.empty()) return;
    const std::string tmp = path + ".tmp";
    {
        std::ofstream f(tmp);
        f << address << "\n";
    }
    std::rename(tmp.c_str(), path.c_str());
}

bool join_with_retry(net::AsioExecutor& ex, dht::DhtNode& dht, const ExperimentConfig& cfg, const bool& stop) {
    if (cfg.bootstrap.empty()) return true;
    double backoff = 250.0;
    for (std::size_t attempt = 0; attempt <= cfg.bootstrap_retries && !stop; ++attempt) {
        auto r = net::await_result<std::size_t>(ex, [&](auto cb) { dht.join(cfg.bootstrap, cb); }, 15'000);
        if (r) {
            spdlog::info("joined overlay, {} peers known", r.value());
            return true;
        }
        spdlog::warn("bootstrap attempt {} failed: {}; retrying in {} ms", attempt + 1, r.failure().message, backoff);
        const double until = ex.now_ms() + backoff;
        ex.run_until([&] { return stop || ex.now_ms() >= until; }, backoff);
        backoff *= 2;
    }
    return false;
}

struct RuntimeRole {
    std::unique_ptr<runtime::Runtime<Float>> rt;

    bool setup(net::AsioExecutor& ex, net::RpcEndpoint& ep, dht::DhtNode& dht, const ExperimentConfig& cfg) {
        if (cfg.experts.empty()) throw ConfigError("runtime node needs experts = <uid>,...");
        const auto spec = node_spec(cfg);
        const std::string name = cfg.experts.front().substr(0, cfg.experts.front().find('.'));
        std::size_t layer = spec.layers;
        for (std::size_t l = 0; l < spec.layers; ++l) {
            if (spec.grid(l).name == name) layer = l;
        }
        if (layer == spec.layers) throw ConfigError("expert " + cfg.experts.front() + " is outside the model's layers");
        const auto grid = spec.grid(layer);
        const auto all = gating::enumerate_grid(grid);

        runtime::RuntimeConfig rcfg;
        rcfg.grid = grid;
        rcfg.max_batch = cfg.max_batch;
        rcfg.batch_window_ms = cfg.batch_window_ms;
        rcfg.freshness_ms = cfg.freshness_ms;
        rcfg.sgd = {cfg.expert_learning_rate, cfg.gradient_clip > 0 ? std::optional<double>(cfg.gradient_clip) : std::nullopt};
        if (cfg.checkpoint_interval_ms > 0) rcfg.checkpoint_interval_ms = cfg.checkpoint_interval_ms;
        rcfg.checkpoint_ttl_ms = 7ULL * 24 * 3600 * 1000;
        rt = std::make_unique<runtime::Runtime<Float>>(ep, &dht, rcfg, std::vector<runtime::HostedExpert<Float>>{});

        for (const auto& key : cfg.experts) {
            const auto uid = gating::parse_uid(key, grid);
            auto r = net::await_result<std::uint64_t>(ex, [&](auto cb) { rt->restore(uid, cb); }, 15'000);
            if (r) {
                spdlog::info("{} restored from checkpoint at version {}", key, r.value());
                continue;
            }
            const auto index = static_cast<std::size_t>(std::find(all.begin(), all.end(), uid) - all.begin());
            const std::uint64_t seed = cfg.seed * 1'000'003ULL + layer * 65'536ULL + index;
            rt->host({uid, nn::FfnExpertState<Float>::init(spec.expert, seed, spec.layer_norm)});
            spdlog::info("{} initialised fresh ({})", key, r.failure().message);
        }
        rt->start();
        return true;
    }

    void shutdown(net::AsioExecutor& ex, const ExperimentConfig& cfg) {
        rt->stop();
        auto r = net::await_result<std::size_t>(ex, [&](auto cb) { rt->checkpoint_now(cb); }, 15'000);
        if (r) {
            spdlog::info("checkpointed {} experts", r.value());
        } else {
            spdlog::error("final checkpoint failed: {}", r.failure().message);
        }
        if (cfg.out.empty()) return;
        std::ofstream f(cfg.out);
        f << "uid,version,forward_requests,backward_requests,updates\n";
        for (const auto& uid : rt->hosted()) {
            const auto& c = rt->counters(uid);
            f << uid << "," << rt->state(uid).version << "," << c.forward_requests << "," << c.backward_requests << ","
              << c.updates << "\n";
        }
    }
};

struct TrainerRole {
    Dataset data;
    std::unique_ptr<gating::DhtLiveness> liveness;
    std::vector<std::unique_ptr<moe::DmoeLayer<Float>>> layers;
    std::unique_ptr<trainer::Trainer<Float>> tr;
    bool finished = false;

    void setup(net::AsioExecutor& ex, net::RpcEndpoint& ep, dht::DhtNode& dht, const ExperimentConfig& cfg) {
        data = load_dataset(cfg);
        const auto spec = node_spec(cfg);
        liveness = std::make_unique<gating::DhtLiveness>(dht, cfg.freshness_ms, cfg.freshness_ms / 3.0);
        moe::DmoeConfig dcfg;
        dcfg.k = spec.k;
        if (cfg.beam_width) dcfg.beam_width = cfg.beam_width;
        dcfg.timeout_ms = cfg.min_timeout_ms;
        dcfg.freshness_ms = cfg.freshness_ms;
        dcfg.per_example_routing = cfg.per_example_routing;
        trainer::TrainerConfig tcfg;
        tcfg.concurrent_batches = cfg.low_workers;
        tcfg.d_in = data.features;
        tcfg.d_model = cfg.d_model;
        tcfg.n_classes = data.classes;
        tcfg.sgd = {cfg.learning_rate, cfg.gradient_clip > 0 ? std::optional<double>(cfg.gradient_clip) : std::nullopt};
        tcfg.seed = cfg.seed;
        std::vector<moe::DmoeLayer<Float>*> raw;
        for (std::size_t l = 0; l < spec.layers; ++l) {
            const auto grid = spec.grid(l);
            layers.push_back(std::make_unique<moe::DmoeLayer<Float>>(
                grid, dcfg, gating::GatingParams<Float>::init(grid, cfg.d_model, cfg.seed * 1'000'003ULL + 7919 * (l + 1)),
                ep, *liveness));
            raw.push_back(layers.back().get());
        }
        tr = std::make_unique<trainer::Trainer<Float>>(ex, raw, tcfg, batch_source<Float>(data, cfg.batch_size, cfg.seed));
        const std::uint64_t steps = cfg.node_steps ? cfg.node_steps : ~std::uint64_t{0} / 2;
        tr->start(steps, [this] { finished = true; });
    }

    void shutdown(const ExperimentConfig& cfg) {
        spdlog::info("trainer: {} steps completed, {} skipped", tr->completed(), tr->skipped());
        if (cfg.out.empty()) return;
        std::ofstream f(cfg.out);
        trainer::write_log_csv(f, tr->log());
    }
};

}  // namespace

int run_node(const ExperimentConfig& cfg) {
    cfg.validate();
    net::AsioExecutor ex;
    const auto hp = net::parse_tcp_address(cfg.listen, /*listen=*/true);
    net::SocketTransport ep(ex, hp.host, hp.port);

    std::random_device rd;
    Rng id_rng((static_cast<std::uint64_t>(rd()) << 32) ^ rd() ^ cfg.seed);
    dht::DhtConfig dcfg;
    dcfg.default_ttl_ms = static_cast<std::uint64_t>(2 * cfg.freshness_ms);
    dht::DhtNode dht(ep, dht::NodeId::random(id_rng), dcfg);
    spdlog::info("{} node listening on {}", cfg.role, ep.address());

    bool stop = false;
    boost::asio::signal_set signals(ex.io(), SIGINT, SIGTERM);
    signals.async_wait([&](const boost::system::error_code& ec, int sig) {
        if (ec) return;
        spdlog::info("signal {} received, shutting down", sig);
        stop = true;
    });

    if (!join_with_retry(ex, dht, cfg, stop)) {
        spdlog::error("bootstrap peers unreachable after {} retries", cfg.bootstrap_retries);
        return 3;
    }
    dht.start_maintenance();

    RuntimeRole rt;
    TrainerRole tr;
    if (cfg.role == "runtime") {
        rt.setup(ex, ep, dht, cfg);
    } else if (cfg.role == "trainer") {
        tr.setup(ex, ep, dht, cfg);
    } else if (cfg.role != "dht") {
        throw ConfigError("unknown role " + cfg.role);
    }
    write_ready(cfg.ready_file, ep.address());

    const double limit = cfg.run_for_ms > 0 ? cfg.run_for_ms : 1e15;
    ex.run_until([&] { return stop || tr.finished; }, limit);
    signals.cancel();

    if (cfg.role == "runtime") rt.shutdown(ex, cfg);
    if (cfg.role == "trainer") tr.shutdown(cfg);
    dht.stop_maintenance();
    if (cfg.role == "trainer" && cfg.node_steps && tr.tr->completed() == 0) return 4;
    return 0;
}

}  // namespace swarm::experiments
