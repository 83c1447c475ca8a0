#pragma once

#include <deque>
#include <functional>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "swarm/dht/node.hpp"
#include "swarm/gating/grid.hpp"
#include "swarm/net/transport.hpp"
#include "swarm/nn/ffn.hpp"

namespace swarm::runtime {

template <typename T>
struct HostedExpert {
    gating::ExpertUid uid;
    nn::FfnExpertState<T> state;
};

struct RuntimeConfig {
    gating::GridConfig grid;
    std::size_t max_batch = 64;
    double batch_window_ms = 0.0;
    double freshness_ms = 30'000.0;
    /// Defaults to freshness / 3.
    std::optional<double> announce_interval_ms;
    /// No periodic checkpoints when unset.
    std::optional<double> checkpoint_interval_ms;
    std::optional<std::uint64_t> checkpoint_ttl_ms;
    nn::SgdConfig sgd;
    /// Sum parameter gradients over a collected batch; average them when false.
    bool sum_gradients = true;
    /// Simulated device speed. When set, a batch keeps the device busy for flops / speed.
    std::optional<double> device_gflops;

    double announce_interval() const { return announce_interval_ms.value_or(freshness_ms / 3.0); }
    void validate() const;
};

struct ExpertCounters {
    std::uint64_t forward_requests = 0, backward_requests = 0;
    std::uint64_t forward_batches = 0, backward_batches = 0;
    /// Forward evaluations of the block, including the recomputation inside backward.
    std::uint64_t evaluations = 0;
    std::uint64_t flops = 0;
    std::uint64_t updates = 0, skipped_updates = 0;
    std::map<std::uint64_t, std::uint64_t> staleness;  // histogram
    std::vector<std::uint64_t> version_trace;          // version after every update
};

struct RuntimeStats {
    std::uint64_t unknown_expert = 0, rejected = 0;
    std::uint64_t announces = 0, announce_failures = 0;
    std::uint64_t checkpoints = 0, checkpoint_failures = 0;
    double busy_ms = 0.0;
};

/// Expert server. Serves FORWARD and BACKWARD on an endpoint, batches requests per expert
/// and kind, recomputes activations on backward and applies one SGD step per backward batch.
/// Everything runs on the endpoint's executor.
template <typename T>
class Runtime {
public:
    Runtime(net::RpcEndpoint& endpoint, dht::DhtNode* dht, RuntimeConfig cfg, std::vector<HostedExpert<T>> experts);
    ~Runtime();
    Runtime(const Runtime&) = delete;
    Runtime& operator=(const Runtime&) = delete;

    /// Register handlers and start announcing (and checkpointing, if configured).
    void start();
    /// Stop periodic activities. Handlers stay registered.
    void stop();

    void announce_now();
    /// Save every hosted expert; reports how many were saved.
    void checkpoint_now(std::function<void(Result<std::size_t>)> cb);
    /// Load `uid` from the DHT and host it, replacing any local copy.
    void restore(const gating::ExpertUid& uid, std::function<void(Result<std::uint64_t>)> cb);

    /// Lose all volatile state: hosted experts, queued requests and timers.
    void crash();

    bool hosts(const std::string& uid) const { return experts_.count(uid) > 0; }
    const nn::FfnExpertState<T>& state(const std::string& uid) const;
    nn::FfnExpertState<T>& state(const std::string& uid);
    const ExpertCounters& counters(const std::string& uid) const;
    std::vector<std::string> hosted() const;
    const RuntimeStats& stats() const noexcept { return stats_; }
    const RuntimeConfig& config() const noexcept { return cfg_; }
    std::size_t queued() const;

    /// Host a new expert (or replace one).
    void host(HostedExpert<T> e);

private:
    enum class Kind { forward, backward };
    struct Request {
        nn::BasicTensor<T> x, dy;
        std::uint64_t forward_version = 0;
        net::Responder respond;
    };
    struct Expert {
        gating::ExpertUid uid;
        nn::FfnExpertState<T> state;
        ExpertCounters counters;
        std::deque<Request> queue[2];
        std::optional<net::TimerId> window_timer[2];
    };

    void on_request(Kind kind, Bytes payload, net::Responder respond);
    void mark_ready(const std::string& uid, Kind kind);
    void pump();
    double run_batch(Expert& e, Kind kind, std::vector<Request>& batch, std::vector<std::function<void()>>& replies);
    void schedule_announce();
    void schedule_checkpoint();

    net::RpcEndpoint& ep_;
    dht::DhtNode* dht_;
    RuntimeConfig cfg_;
    std::map<std::string, Expert> experts_;
    std::deque<std::pair<std::string, Kind>> ready_;
    bool busy_ = false;
    bool pumping_ = false;
    std::optional<net::TimerId> announce_timer_, checkpoint_timer_;
    RuntimeStats stats_;
    std::shared_ptr<bool> alive_;
};

}  // namespace swarm::runtime
