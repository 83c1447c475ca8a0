#include "swarm/runtime/runtime.hpp"

#include <spdlog/spdlog.h>

#include <cmath>

#include "swarm/gating/liveness.hpp"
#include "swarm/moe/protocol.hpp"
#include "swarm/runtime/checkpoint.hpp"

namespace swarm::runtime {

void RuntimeConfig::validate() const {
    grid.validate();
    if (max_batch < 1) throw ConfigError("max_batch must be positive");
    if (!(batch_window_ms >= 0.0)) throw ConfigError("batch_window_ms must be >= 0");
    if (!(freshness_ms > 0.0)) throw ConfigError("freshness must be positive");
    if (!(announce_interval() > 0.0) || !(announce_interval() < freshness_ms)) {
        throw ConfigError("announce interval must be positive and below the freshness window");
    }
    if (checkpoint_interval_ms && !(*checkpoint_interval_ms > 0.0)) throw ConfigError("checkpoint interval must be positive");
    if (device_gflops && !(*device_gflops > 0.0)) throw ConfigError("device_gflops must be positive");
    if (!(sgd.learning_rate >= 0.0)) throw ConfigError("learning rate must be >= 0");
}

template <typename T>
Runtime<T>::Runtime(net::RpcEndpoint& endpoint, dht::DhtNode* dht, RuntimeConfig cfg,
                    std::vector<HostedExpert<T>> experts)
    : ep_(endpoint), dht_(dht), cfg_(std::move(cfg)), alive_(std::make_shared<bool>(true)) {
    cfg_.validate();
    for (auto& e : experts) {
        const std::string key = e.uid.to_string(cfg_.grid.name);
        if (experts_.count(key)) throw ConfigError("expert hosted twice: " + key);
        host(std::move(e));
    }
}

template <typename T>
Runtime<T>::~Runtime() {
    *alive_ = false;
    stop();
}

template <typename T>
void Runtime<T>::host(HostedExpert<T> e) {
    if (e.uid.coords.size() != static_cast<std::size_t>(cfg_.grid.d)) throw ConfigError("expert uid does not match grid");
    const std::string key = e.uid.to_string(cfg_.grid.name);
    parse_uid(key, cfg_.grid);
    auto& slot = experts_[key];
    slot.uid = std::move(e.uid);
    slot.state = std::move(e.state);
}

template <typename T>
std::vector<std::string> Runtime<T>::hosted() const {
    std::vector<std::string> out;
    for (const auto& [k, _] : experts_) out.push_back(k);
    return out;
}

template <typename T>
const nn::FfnExpertState<T>& Runtime<T>::state(const std::string& uid) const {
    auto it = experts_.find(uid);
    if (it == experts_.end()) throw UnknownExpert("not hosted: " + uid);
    return it->second.state;
}

template <typename T>
nn::FfnExpertState<T>& Runtime<T>::state(const std::string& uid) {
    auto it = experts_.find(uid);
    if (it == experts_.end()) throw UnknownExpert("not hosted: " + uid);
    return it->second.state;
}

template <typename T>
const ExpertCounters& Runtime<T>::counters(const std::string& uid) const {
    auto it = experts_.find(uid);
    if (it == experts_.end()) throw UnknownExpert("not hosted: " + uid);
    return it->second.counters;
}

template <typename T>
std::size_t Runtime<T>::queued() const {
    std::size_t n = 0;
    for (const auto& [_, e] : experts_) n += e.queue[0].size() + e.queue[1].size();
    return n;
}

template <typename T>
void Runtime<T>::start() {
    ep_.serve(net::MsgType::forward,
              [this](Bytes p, net::Responder r) { on_request(Kind::forward, std::move(p), std::move(r)); });
    ep_.serve(net::MsgType::backward,
              [this](Bytes p, net::Responder r) { on_request(Kind::backward, std::move(p), std::move(r)); });
    if (!dht_) return;
    stop();
    announce_now();
    schedule_announce();
    schedule_checkpoint();
}

template <typename T>
void Runtime<T>::stop() {
    if (announce_timer_) ep_.executor().cancel(*announce_timer_);
    if (checkpoint_timer_) ep_.executor().cancel(*checkpoint_timer_);
    announce_timer_.reset();
    checkpoint_timer_.reset();
}

template <typename T>
void Runtime<T>::crash() {
    stop();
    *alive_ = false;
    alive_ = std::make_shared<bool>(true);
    for (auto& [_, e] : experts_) {
        for (auto& t : e.window_timer) {
            if (t) ep_.executor().cancel(*t);
        }
    }
    experts_.clear();
    ready_.clear();
    busy_ = false;
}

template <typename T>
void Runtime<T>::schedule_announce() {
    auto alive = alive_;
    announce_timer_ = ep_.executor().schedule(cfg_.announce_interval(), [this, alive] {
        if (!*alive) return;
        announce_now();
        schedule_announce();
    });
}

template <typename T>
void Runtime<T>::schedule_checkpoint() {
    if (!cfg_.checkpoint_interval_ms) return;
    auto alive = alive_;
    checkpoint_timer_ = ep_.executor().schedule(*cfg_.checkpoint_interval_ms, [this, alive] {
        if (!*alive) return;
        checkpoint_now([](Result<std::size_t>) {});
        schedule_checkpoint();
    });
}

template <typename T>
void Runtime<T>::announce_now() {
    if (!dht_) return;
    const auto ts = static_cast<std::uint64_t>(ep_.executor().epoch_ms());
    const auto ttl = static_cast<std::uint64_t>(std::ceil(2 * cfg_.freshness_ms));
    auto alive = alive_;
    for (const auto& [key, e] : experts_) {
        for (const auto& k : gating::announce_keys(e.uid, cfg_.grid)) {
            ++stats_.announces;
            dht_->store(k, gating::encode_liveness(ts, ep_.address()), ttl, [this, alive, k](Result<std::size_t> r) {
                if (!*alive || r) return;
                ++stats_.announce_failures;
                spdlog::debug("announce of {} failed: {}", k, r.failure().message);
            });
        }
    }
}

template <typename T>
void Runtime<T>::checkpoint_now(std::function<void(Result<std::size_t>)> cb) {
    if (!dht_) return cb(fail(Errc::store_failed, "runtime has no DHT node"));
    if (experts_.empty()) return cb(std::size_t{0});
    struct Tally {
        std::size_t left, saved = 0;
    };
    auto tally = std::make_shared<Tally>(Tally{experts_.size()});
    auto alive = alive_;
    for (const auto& [key, e] : experts_) {
        save_checkpoint<T>(*dht_, key, e.state, cfg_.checkpoint_ttl_ms,
                           [this, alive, tally, cb, key](Result<std::uint64_t> r) {
                               if (*alive) {
                                   if (r) {
                                       ++stats_.checkpoints;
                                       ++tally->saved;
                                   } else {
                                       ++stats_.checkpoint_failures;
                                       spdlog::debug("checkpoint of {} failed: {}", key, r.failure().message);
                                   }
                               }
                               if (--tally->left > 0) return;
                               if (tally->saved == 0) return cb(fail(Errc::store_failed, "no checkpoint saved"));
                               cb(tally->saved);
                           });
    }
}

template <typename T>
void Runtime<T>::restore(const gating::ExpertUid& uid, std::function<void(Result<std::uint64_t>)> cb) {
    if (!dht_) return cb(fail(Errc::corrupt, "runtime has no DHT node"));
    auto alive = alive_;
    load_checkpoint<T>(*dht_, uid.to_string(cfg_.grid.name), [this, alive, uid, cb](Result<nn::FfnExpertState<T>> r) {
        if (!*alive) return cb(fail(Errc::unreachable, "runtime crashed during restore"));
        if (!r) return cb(r.failure());
        const std::uint64_t v = r.value().version;
        host(HostedExpert<T>{uid, std::move(r).value()});
        cb(v);
    });
}

template <typename T>
void Runtime<T>::on_request(Kind kind, Bytes payload, net::Responder respond) {
    const std::string uid = moe::peek_uid(payload);
    auto it = experts_.find(uid);
    if (it == experts_.end()) {
        ++stats_.unknown_expert;
        return respond(fail(Errc::unknown_expert, "not hosted here: " + uid));
    }
    Expert& e = it->second;
    const auto& dims = e.state.dims;
    Request req;
    req.respond = std::move(respond);
    if (kind == Kind::forward) {
        auto m = moe::decode<moe::ForwardRequest<T>>(payload);
        req.x = std::move(m.x);
    } else {
        auto m = moe::decode<moe::BackwardRequest<T>>(payload);
        req.x = std::move(m.x);
        req.dy = std::move(m.dy);
        req.forward_version = m.forward_version;
    }
    const bool shape_ok = req.x.rank() == 2 && req.x.cols() == dims.d_in &&
                          (kind == Kind::forward ||
                           (req.dy.rank() == 2 && req.dy.cols() == dims.d_out && req.dy.rows() == req.x.rows()));
    if (!shape_ok) {
        ++stats_.rejected;
        return req.respond(fail(Errc::dimension, "request shape does not match " + uid));
    }
    if (!req.x.all_finite()) {
        ++stats_.rejected;
        return req.respond(fail(Errc::numeric, "non-finite input for " + uid));
    }
    auto& counters = e.counters;
    ++(kind == Kind::forward ? counters.forward_requests : counters.backward_requests);
    e.queue[static_cast<int>(kind)].push_back(std::move(req));
    mark_ready(uid, kind);
}

template <typename T>
void Runtime<T>::mark_ready(const std::string& uid, Kind kind) {
    auto it = experts_.find(uid);
    if (it == experts_.end()) return;
    const int k = static_cast<int>(kind);
    auto& q = it->second.queue[k];
    auto& timer = it->second.window_timer[k];
    if (q.empty()) return;
    if (q.size() >= cfg_.max_batch || cfg_.batch_window_ms <= 0.0) {
        if (timer) ep_.executor().cancel(*timer);
        timer.reset();
        ready_.emplace_back(uid, kind);
        pump();
        return;
    }
    if (timer) return;
    auto alive = alive_;
    timer = ep_.executor().schedule(cfg_.batch_window_ms, [this, alive, uid, kind] {
        if (!*alive) return;
        auto it = experts_.find(uid);
        if (it == experts_.end()) return;
        it->second.window_timer[static_cast<int>(kind)].reset();
        ready_.emplace_back(uid, kind);
        pump();
    });
}

template <typename T>
void Runtime<T>::pump() {
    if (pumping_) return;
    pumping_ = true;
    while (!busy_ && !ready_.empty()) {
        auto [uid, kind] = ready_.front();
        ready_.pop_front();
        auto it = experts_.find(uid);
        if (it == experts_.end()) continue;
        auto& q = it->second.queue[static_cast<int>(kind)];
        if (q.empty()) continue;
        const std::size_t n = std::min(cfg_.max_batch, q.size());
        std::vector<Request> batch;
        for (std::size_t i = 0; i < n; ++i) {
            batch.push_back(std::move(q.front()));
            q.pop_front();
        }
        // Whatever is left has already waited at least as long as this batch.
        if (!q.empty()) ready_.emplace_back(uid, kind);

        std::vector<std::function<void()>> replies;
        const double cost = run_batch(it->second, kind, batch, replies);
        if (cost > 0.0) {
            busy_ = true;
            stats_.busy_ms += cost;
            auto alive = alive_;
            ep_.executor().schedule(cost, [this, alive, replies = std::move(replies)] {
                if (!*alive) return;
                for (const auto& r : replies) r();
                busy_ = false;
                pump();
            });
        } else {
            for (const auto& r : replies) r();
        }
    }
    pumping_ = false;
}

template <typename T>
double Runtime<T>::run_batch(Expert& e, Kind kind, std::vector<Request>& batch,
                             std::vector<std::function<void()>>& replies) {
    auto& c = e.counters;
    auto& state = e.state;
    std::vector<std::size_t> offsets{0};
    std::vector<nn::BasicTensor<T>> xs, dys;
    for (auto& r : batch) {
        offsets.push_back(offsets.back() + r.x.rows());
        xs.push_back(std::move(r.x));
        if (kind == Kind::backward) dys.push_back(std::move(r.dy));
    }
    const std::size_t rows = offsets.back();
    const auto X = nn::concat_rows<T>(xs);
    xs.clear();
    std::uint64_t flops = nn::ffn_forward_flops(state.dims, rows);
    ++c.evaluations;

    if (kind == Kind::forward) {
        ++c.forward_batches;
        const auto Y = nn::ffn_infer(state, X);
        const std::uint64_t version = state.version;
        for (std::size_t i = 0; i < batch.size(); ++i) {
            auto y = nn::slice_rows(Y, offsets[i], offsets[i + 1]);
            replies.push_back([respond = batch[i].respond, y = std::move(y), version] {
                respond(moe::encode(moe::ForwardReply<T>{y, version}));
            });
        }
    } else {
        ++c.backward_batches;
        flops += nn::ffn_backward_flops(state.dims, rows);
        const auto DY = nn::concat_rows<T>(dys);
        dys.clear();
        nn::FfnBackwardResult<T> res;
        try {
            res = nn::ffn_backward(state, X, DY);
        } catch (const NumericError& err) {
            ++c.skipped_updates;
            const std::string msg = err.what();
            for (auto& r : batch) replies.push_back([respond = r.respond, msg] { respond(fail(Errc::numeric, msg)); });
            c.flops += flops;
            return cfg_.device_gflops ? static_cast<double>(flops) / (*cfg_.device_gflops * 1e6) : 0.0;
        }
        const std::uint64_t applied_at = state.version;
        if (!cfg_.sum_gradients) {
            const T inv = T(1) / static_cast<T>(rows);
            res.grads.for_each([inv](nn::BasicTensor<T>& g) {
                for (auto& v : g.data()) v *= inv;
            });
        }
        try {
            nn::sgd_step(state, res.grads, cfg_.sgd);
            ++c.updates;
            c.version_trace.push_back(state.version);
        } catch (const NumericError&) {
            ++c.skipped_updates;
        }
        for (std::size_t i = 0; i < batch.size(); ++i) {
            const std::uint64_t fv = batch[i].forward_version;
            const std::uint64_t staleness = applied_at >= fv ? applied_at - fv : 0;
            ++c.staleness[staleness];
            auto dx = nn::slice_rows(res.dx, offsets[i], offsets[i + 1]);
            replies.push_back([respond = batch[i].respond, dx = std::move(dx), staleness] {
                respond(moe::encode(moe::BackwardReply<T>{dx, staleness}));
            });
        }
    }
    c.flops += flops;
    return cfg_.device_gflops ? static_cast<double>(flops) / (*cfg_.device_gflops * 1e6) : 0.0;
}

template class Runtime<float>;
template class Runtime<double>;

}  // namespace swarm::runtime
