#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <optional>
#include <string>

#include "swarm/net/wire.hpp"
#include "swarm/util/error.hpp"

namespace swarm::net {

using TimerId = std::uint64_t;

/// Event loop plus clock. In simulation the clock is virtual; in socket mode it is a steady wall clock.
/// All node logic runs as callbacks on one executor and must never block.
class Executor {
public:
    virtual ~Executor() = default;

    virtual double now_ms() const = 0;
    /// Milliseconds since the Unix epoch for record timestamps (equal to now_ms in simulation).
    virtual double epoch_ms() const { return now_ms(); }
    virtual TimerId schedule(double delay_ms, std::function<void()> fn) = 0;
    virtual void cancel(TimerId id) = 0;
    /// Thread-safe in socket mode; in simulation equivalent to schedule(0, fn).
    virtual void post(std::function<void()> fn) = 0;
    virtual bool simulated() const = 0;

    /// Drive (simulation) or wait for (socket mode) the loop until `done` holds or
    /// `timeout_ms` of loop time passes. Call from outside the loop only.
    virtual bool run_until(const std::function<bool()>& done, double timeout_ms) = 0;
};

/// Start an asynchronous operation and drive the executor until it completes.
template <typename T, typename Start>
Result<T> await_result(Executor& ex, Start&& start, double timeout_ms = 1e12) {
    std::optional<Result<T>> out;
    start([&out](Result<T> r) { out.emplace(std::move(r)); });
    if (!ex.run_until([&] { return out.has_value(); }, timeout_ms)) return fail(Errc::timeout, "operation did not complete");
    return std::move(*out);
}

using ReplyCallback = std::function<void(Result<Bytes>)>;
/// One-shot reply sink handed to request handlers; replies may be deferred.
using Responder = std::function<void(Result<Bytes>)>;
using Handler = std::function<void(Bytes payload, Responder respond)>;

struct TransportStats {
    std::uint64_t requests_sent = 0;
    std::uint64_t requests_served = 0;
    std::uint64_t timeouts = 0;
    std::uint64_t malformed = 0;
    std::uint64_t bytes_sent = 0;
};

/// Request/response endpoint shared by the simulated and socket transports.
/// Handles request ids, timeouts, dispatch by message type and reply status bytes.
class RpcEndpoint {
public:
    explicit RpcEndpoint(Executor& ex) : executor_(ex) {}
    virtual ~RpcEndpoint() = default;
    RpcEndpoint(const RpcEndpoint&) = delete;
    RpcEndpoint& operator=(const RpcEndpoint&) = delete;

    Executor& executor() noexcept { return executor_; }
    virtual const std::string& address() const = 0;

    /// Send a request; `cb` runs exactly once with the reply body, a remote error, or Errc::timeout.
    void call(const std::string& dst, MsgType type, Bytes payload, double timeout_ms, ReplyCallback cb);

    void serve(MsgType type, Handler handler) { handlers_[type] = std::move(handler); }

    /// Fail every outstanding call (used when a node goes dark and its volatile state is lost).
    void abandon_pending();

    const TransportStats& stats() const noexcept { return stats_; }

protected:
    virtual void send_frame(const std::string& dst, Bytes frame) = 0;
    /// Feed one received frame. `reply_path` carries a reply frame back to the requester.
    void deliver(ByteView frame, const std::function<void(Bytes)>& reply_path);

    TransportStats stats_;

private:
    struct Pending {
        ReplyCallback cb;
        TimerId timer;
    };

    Executor& executor_;
    std::map<MsgType, Handler> handlers_;
    std::map<std::uint64_t, Pending> pending_;
    std::uint64_t next_id_ = 1;
};

}  // namespace swarm::net
