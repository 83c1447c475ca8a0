#pragma once

#include <functional>
#include <limits>
#include <map>
#include <memory>
#include <optional>
#include <queue>
#include <set>
#include <string>
#include <unordered_set>
#include <vector>

#include "swarm/net/transport.hpp"
#include "swarm/util/rng.hpp"

namespace swarm::net {

/// One-way message delay and loss. Delays are i.i.d. exponential(mean_ms) plus
/// a serialization term bytes / bandwidth when a bandwidth is configured.
struct LatencyModel {
    double mean_ms = 0.0;
    double loss_prob = 0.0;
    std::optional<double> bandwidth_mbps;

    void validate() const;
};

class SimTransport;

/// Deterministic discrete-event network: a virtual clock, an event queue ordered by
/// (time, insertion order), and message delivery with sampled latency and loss.
class SimNetwork final : public Executor {
public:
    explicit SimNetwork(std::uint64_t seed, LatencyModel latency = {});
    ~SimNetwork() override;

    // Executor
    double now_ms() const override { return now_; }
    TimerId schedule(double delay_ms, std::function<void()> fn) override;
    void cancel(TimerId id) override;
    void post(std::function<void()> fn) override { schedule(0.0, std::move(fn)); }
    bool simulated() const override { return true; }
    bool run_until(const std::function<bool()>& done, double timeout_ms) override;

    /// Process every event with timestamp <= until_ms, then set the clock to until_ms.
    void advance(double until_ms);
    /// Process a single event; false when the queue is empty.
    bool step();
    std::size_t pending_events() const noexcept { return live_.size(); }

    /// Create an endpoint with a unique address ("sim://<name>").
    std::unique_ptr<SimTransport> endpoint(const std::string& name);

    void set_latency(const LatencyModel& latency);
    const LatencyModel& latency() const noexcept { return latency_; }

    /// A failed node silently drops everything it would send or receive.
    void set_failed(const std::string& address, bool failed);
    bool is_failed(const std::string& address) const;

    Rng& rng() noexcept { return rng_; }

    /// Record one line per delivered or dropped message.
    void enable_trace(bool on) { tracing_ = on; }
    const std::vector<std::string>& trace() const noexcept { return trace_; }

    std::uint64_t messages_delivered() const noexcept { return delivered_; }
    std::uint64_t messages_dropped() const noexcept { return dropped_; }

private:
    friend class SimTransport;

    struct Event {
        double time;
        std::uint64_t seq;
        TimerId id;
        std::function<void()> fn;
    };
    struct Later {
        bool operator()(const Event& a, const Event& b) const {
            return a.time != b.time ? a.time > b.time : a.seq > b.seq;
        }
    };

    void transmit(const std::string& src, const std::string& dst, Bytes frame);
    void detach(const std::string& address);
    void record(const char* what, const std::string& src, const std::string& dst, const Bytes& frame);

    double now_ = 0.0;
    std::uint64_t seq_ = 0;
    TimerId next_timer_ = 1;
    std::priority_queue<Event, std::vector<Event>, Later> queue_;
    std::unordered_set<TimerId> live_;
    LatencyModel latency_;
    Rng rng_;
    std::map<std::string, SimTransport*> nodes_;
    std::set<std::string> failed_;
    bool tracing_ = false;
    std::vector<std::string> trace_;
    std::uint64_t delivered_ = 0, dropped_ = 0;
};

class SimTransport final : public RpcEndpoint {
public:
    ~SimTransport() override;

    const std::string& address() const override { return address_; }
    SimNetwork& network() noexcept { return net_; }

    /// Observer for failure/recovery of this node (volatile state is wiped by the owner).
    void on_failure_change(std::function<void(bool failed)> fn) { failure_listeners_.push_back(std::move(fn)); }

private:
    friend class SimNetwork;
    SimTransport(SimNetwork& net, std::string address) : RpcEndpoint(net), net_(net), address_(std::move(address)) {}

    void send_frame(const std::string& dst, Bytes frame) override;
    void receive(const std::string& src, const Bytes& frame);
    void notify_failure(bool failed);

    SimNetwork& net_;
    std::string address_;
    std::vector<std::function<void(bool)>> failure_listeners_;
};

/// Per-node failure process.
struct FailureSchedule {
    enum class Duration { fixed, exponential, permanent };

    double daily_failure_prob = 0.0;
    Duration duration_kind = Duration::fixed;
    double duration_ms = 60'000.0;  // fixed length or exponential mean

    void validate() const;
};

struct PlannedFailure {
    std::string address;
    double start_ms;
    double end_ms;  // +inf when permanent
};

inline constexpr double kDayMs = 86'400'000.0;

/// For every node and every simulated day in [now, now + horizon_ms), fail the node with
/// daily_failure_prob at a uniformly chosen time for a sampled duration. Recovery restores
/// the transport only. Returns the plan in schedule order.
std::vector<PlannedFailure> inject_failures(SimNetwork& net, const std::vector<std::string>& addresses,
                                            const FailureSchedule& schedule, Rng& rng, double horizon_ms);

}  // namespace swarm::net
