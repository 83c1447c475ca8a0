#include "swarm/experiments/experiments.hpp"

#include <spdlog/spdlog.h>

#include <algorithm>
#include <cinttypes>
#include <cmath>
#include <cstdio>

namespace swarm::experiments {

namespace {

double call_loss_prob(double call_failure_prob) {
    // a call is a request and a reply, each lost independently
    return 1.0 - std::sqrt(1.0 - call_failure_prob);
}

std::optional<double> clip(const ExperimentConfig& cfg) {
    if (cfg.gradient_clip > 0) return cfg.gradient_clip;
    return std::nullopt;
}

runtime::RuntimeConfig runtime_config(const ExperimentConfig& cfg) {
    runtime::RuntimeConfig r;
    r.max_batch = cfg.max_batch;
    r.batch_window_ms = cfg.batch_window_ms;
    r.freshness_ms = cfg.freshness_ms;
    r.sgd.learning_rate = cfg.expert_learning_rate;
    r.sgd.gradient_clip_norm = clip(cfg);
    return r;
}

void inject(const ExperimentConfig& cfg, net::SimNetwork& net, const std::vector<std::string>& addresses,
            std::uint64_t seed) {
    if (cfg.failure_daily_prob <= 0) return;
    net::FailureSchedule s;
    s.daily_failure_prob = cfg.failure_daily_prob;
    s.duration_ms = cfg.failure_duration_ms;
    Rng rng(seed ^ 0xF41L);
    net::inject_failures(net, addresses, s, rng, net::kDayMs);
}

std::string fmt(const char* f, auto... args) {
    char buf[256];
    std::snprintf(buf, sizeof buf, f, args...);
    return buf;
}

}  // namespace

ModelSpec model_spec(const ExperimentConfig& cfg, const std::string& name) {
    ModelSpec s;
    s.name = name;
    s.layers = cfg.layers;
    s.layer_norm = cfg.layer_norm;
    if (name == "ffn") {
        s.expert = {cfg.d_model, cfg.ffn_hidden, cfg.d_model};
        return s;
    }
    if (name != "dmoe-small" && name != "dmoe-large") throw ConfigError("unknown model " + name);
    s.grid_d = cfg.grid_d;
    s.grid_m = name == "dmoe-small" ? cfg.small_grid_m : cfg.large_grid_m;
    s.k = cfg.k;
    const std::size_t h = cfg.expert_hidden ? cfg.expert_hidden : parity_hidden(cfg.d_model, cfg.ffn_hidden, cfg.k);
    s.expert = {cfg.d_model, h, cfg.d_model};
    if (s.experts_per_layer() < s.k) throw ConfigError(name + " has fewer experts per layer than k");
    return s;
}

Dataset load_dataset(const ExperimentConfig& cfg) {
    if (cfg.dataset == "mnist") return load_mnist(cfg.data_dir);
    return synthetic_blobs(cfg.synthetic_samples, cfg.synthetic_features, cfg.synthetic_classes, cfg.synthetic_noise,
                           cfg.seed);
}

std::uint64_t run_seed(std::uint64_t base, std::uint64_t family, std::uint64_t index) {
    // splitmix64 over the three inputs
    std::uint64_t z = base * 0x9E3779B97F4A7C15ULL + family * 0xBF58476D1CE4E5B9ULL + index * 0x94D049BB133111EBULL;
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
    return z ^ (z >> 31);
}

double measure_throughput(const ExperimentConfig& cfg, const std::string& scheme, double delay_ms,
                          std::uint64_t seed) {
    if (cfg.device_gflops <= 0) throw ConfigError("throughput needs device_gflops > 0");
    const bool dmoe = scheme == "dmoe";
    if (!dmoe && scheme != "pipeline") throw ConfigError("unknown throughput scheme " + scheme);

    ModelSpec spec = model_spec(cfg, "ffn");
    if (dmoe) {
        spec.name = "dmoe";
        spec.grid_d = cfg.grid_d;
        spec.grid_m = cfg.small_grid_m;
        spec.k = cfg.k;
    }
    net::SimNetwork net(seed, {delay_ms, call_loss_prob(cfg.call_failure_prob), std::nullopt});
    auto rcfg = runtime_config(cfg);
    rcfg.device_gflops = cfg.device_gflops;
    SimSwarm<float> swarm(net, spec, dmoe ? cfg.runtimes : 1, rcfg, seed);
    inject(cfg, net, swarm.runtime_addresses(), seed);

    const auto data = synthetic_blobs(cfg.batch_size * 8, cfg.synthetic_features, cfg.synthetic_classes,
                                      cfg.synthetic_noise, seed);
    const std::size_t n_trainers = dmoe ? cfg.throughput_trainers : 1;
    moe::DmoeConfig dcfg;
    dcfg.timeout_ms = cfg.throughput_timeout_ms;
    dcfg.per_example_routing = cfg.per_example_routing;
    if (cfg.beam_width) dcfg.beam_width = cfg.beam_width;
    for (std::size_t t = 0; t < n_trainers; ++t) {
        trainer::TrainerConfig tcfg;
        tcfg.concurrent_batches = dmoe ? cfg.throughput_concurrency : 1;
        tcfg.d_in = data.features;
        tcfg.d_model = cfg.d_model;
        tcfg.n_classes = data.classes;
        tcfg.sgd = {cfg.learning_rate, clip(cfg)};
        tcfg.seed = run_seed(seed, 1, t);
        auto& tr = swarm.add_trainer(tcfg, dcfg, batch_source<float>(data, cfg.batch_size, tcfg.seed));
        const std::size_t share = cfg.throughput_batches / n_trainers + (t < cfg.throughput_batches % n_trainers);
        tr.start(share);
    }
    if (!swarm.run_until_idle()) throw Error("throughput run did not finish");
    std::uint64_t done = 0;
    for (std::size_t t = 0; t < n_trainers; ++t) done += swarm.trainer(t).completed();
    return static_cast<double>(done) / (net.now_ms() / 1000.0);
}

std::vector<ThroughputRow> run_throughput(const ExperimentConfig& cfg) {
    cfg.validate();
    std::vector<ThroughputRow> rows;
    for (std::size_t di = 0; di < cfg.delays_ms.size(); ++di) {
        for (const char* scheme : {"dmoe", "pipeline"}) {
            ThroughputRow row;
            row.mean_delay_ms = cfg.delays_ms[di];
            row.scheme = scheme;
            for (std::size_t r = 0; r < cfg.repetitions; ++r) {
                row.samples.push_back(measure_throughput(cfg, scheme, row.mean_delay_ms, run_seed(cfg.seed, di, r)));
            }
            double sum = 0;
            for (double v : row.samples) sum += v;
            row.batches_per_sec = sum / static_cast<double>(row.samples.size());
            double sq = 0;
            for (double v : row.samples) sq += (v - row.batches_per_sec) * (v - row.batches_per_sec);
            row.stddev = row.samples.size() > 1 ? std::sqrt(sq / static_cast<double>(row.samples.size() - 1)) : 0.0;
            spdlog::info("throughput delay={}ms {}: {:.4f} +- {:.4f} batches/s", row.mean_delay_ms, scheme,
                         row.batches_per_sec, row.stddev);
            rows.push_back(std::move(row));
        }
    }
    return rows;
}

void write_throughput_csv(std::ostream& os, const std::vector<ThroughputRow>& rows) {
    os << "mean_delay_ms,scheme,batches_per_sec,stddev\n";
    for (const auto& r : rows) {
        os << fmt("%.1f,%s,%.6f,%.6f\n", r.mean_delay_ms, r.scheme.c_str(), r.batches_per_sec, r.stddev);
    }
}

std::vector<Regime> regimes(const ExperimentConfig& cfg) {
    return {{"high", cfg.high_workers, cfg.high_delay_ms}, {"low", cfg.low_workers, cfg.low_delay_ms}};
}

TrainingRun train_once(const ExperimentConfig& cfg, const Dataset& data, const ModelSpec& spec, const Regime& regime,
                       std::uint64_t seed) {
    // a layer costs four messages per step: request and reply, forward and backward
    const double hop_ms = regime.delay_ms / static_cast<double>(4 * spec.layers);
    net::SimNetwork net(seed, {hop_ms, call_loss_prob(cfg.call_failure_prob), std::nullopt});
    SimSwarm<float> swarm(net, spec, cfg.runtimes, runtime_config(cfg), seed);
    inject(cfg, net, swarm.runtime_addresses(), seed);

    trainer::TrainerConfig tcfg;
    tcfg.concurrent_batches = regime.workers;
    tcfg.d_in = data.features;
    tcfg.d_model = cfg.d_model;
    tcfg.n_classes = data.classes;
    tcfg.sgd = {cfg.learning_rate, clip(cfg)};
    tcfg.seed = seed;
    moe::DmoeConfig dcfg;
    dcfg.timeout_ms = std::max(cfg.min_timeout_ms, cfg.timeout_factor * hop_ms);
    dcfg.freshness_ms = cfg.freshness_ms;
    dcfg.per_example_routing = cfg.per_example_routing;
    if (cfg.beam_width) dcfg.beam_width = cfg.beam_width;
    auto& tr = swarm.add_trainer(tcfg, dcfg, batch_source<float>(data, cfg.batch_size, seed));
    tr.start(cfg.steps);
    if (!swarm.run_until_idle()) throw Error("training run did not finish");

    TrainingRun run;
    run.log = tr.log();
    run.skipped = tr.skipped();
    run.expert_flops = swarm.expert_flops();
    run.staleness_mean = tr.staleness().mean();
    run.sim_time_ms = net.now_ms();
    return run;
}

double window_accuracy(const std::vector<trainer::StepLog>& log, std::size_t end, std::size_t window) {
    end = std::min(end, log.size());
    const std::size_t begin = end > window ? end - window : 0;
    std::size_t correct = 0, total = 0;
    for (std::size_t i = begin; i < end; ++i) {
        correct += log[i].correct;
        total += log[i].examples;
    }
    return total ? static_cast<double>(correct) / static_cast<double>(total) : 0.0;
}

ConvergenceResult run_convergence(const ExperimentConfig& cfg) {
    cfg.validate();
    const Dataset data = load_dataset(cfg);
    ConvergenceResult result;
    for (std::size_t mi = 0; mi < cfg.models.size(); ++mi) {
        const auto spec = model_spec(cfg, cfg.models[mi]);
        ModelSummary summary;
        summary.scheme = spec.name;
        summary.flops_per_step = expert_flops_per_step(spec, cfg.batch_size);
        double flops_sum = 0;
        std::size_t flops_runs = 0;
        for (const auto& regime : regimes(cfg)) {
            std::vector<TrainingRun> runs;
            for (std::size_t s = 0; s < cfg.seeds; ++s) {
                // same seed across models and regimes, so only the compared factor changes
                runs.push_back(train_once(cfg, data, spec, regime, run_seed(cfg.seed, 7, s)));
                const auto& r = runs.back();
                const std::uint64_t steps = r.log.size() + r.skipped;
                if (steps) flops_sum += static_cast<double>(r.expert_flops) / static_cast<double>(steps);
                ++flops_runs;
                summary.skipped += r.skipped;
                spdlog::info("convergence {} {} seed#{}: acc={:.4f} staleness={:.2f} skipped={}", spec.name,
                             regime.name, s, window_accuracy(r.log, r.log.size(), cfg.accuracy_window),
                             r.staleness_mean, r.skipped);
            }
            std::size_t n = runs.front().log.size();
            for (const auto& r : runs) n = std::min(n, r.log.size());
            std::vector<std::size_t> points;
            for (std::size_t s = cfg.log_every; s < n; s += cfg.log_every) points.push_back(s);
            if (n > 0) points.push_back(n);
            double stale = 0;
            for (const auto& r : runs) stale += r.staleness_mean / static_cast<double>(runs.size());
            for (std::size_t p : points) {
                ConvergenceRow row;
                row.scheme = spec.name;
                row.latency_regime = regime.name;
                row.step = p;
                for (const auto& r : runs) {
                    row.sim_time_ms += r.log[p - 1].sim_time_ms / static_cast<double>(runs.size());
                    row.train_accuracy += window_accuracy(r.log, p, cfg.accuracy_window) / static_cast<double>(runs.size());
                }
                result.rows.push_back(row);
            }
            const double final_acc = points.empty() ? 0.0 : result.rows.back().train_accuracy;
            if (regime.name == "low") {
                summary.final_low = final_acc;
                summary.staleness_low = stale;
            } else {
                summary.final_high = final_acc;
                summary.staleness_high = stale;
            }
        }
        summary.gap = summary.final_low - summary.final_high;
        summary.measured_flops_per_step = flops_runs ? flops_sum / static_cast<double>(flops_runs) : 0.0;
        spdlog::info("convergence {}: low={:.4f} high={:.4f} gap={:.4f} flops/step={}", summary.scheme,
                     summary.final_low, summary.final_high, summary.gap, summary.flops_per_step);
        result.models.push_back(summary);
    }
    return result;
}

void write_convergence_csv(std::ostream& os, const std::vector<ConvergenceRow>& rows) {
    os << "scheme,latency_regime,step,sim_time,train_accuracy\n";
    for (const auto& r : rows) {
        os << fmt("%s,%s,%" PRIu64 ",%.3f,%.6f\n", r.scheme.c_str(), r.latency_regime.c_str(), r.step, r.sim_time_ms,
                  r.train_accuracy);
    }
}

}  // namespace swarm::experiments
