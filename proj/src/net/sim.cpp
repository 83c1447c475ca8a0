#include "swarm/net/sim.hpp"

#include <cmath>
#include <cstdio>

namespace swarm::net {

void LatencyModel::validate() const {
    if (!(mean_ms >= 0.0) || !std::isfinite(mean_ms)) throw ConfigError("latency mean_ms must be >= 0");
    if (!(loss_prob >= 0.0 && loss_prob <= 1.0)) throw ConfigError("loss_prob must be in [0, 1]");
    if (bandwidth_mbps && !(*bandwidth_mbps > 0.0)) throw ConfigError("bandwidth_mbps must be positive");
}

void FailureSchedule::validate() const {
    if (!(daily_failure_prob >= 0.0 && daily_failure_prob <= 1.0)) {
        throw ConfigError("daily failure probability must be in [0, 1]");
    }
    if (duration_kind != Duration::permanent && !(duration_ms >= 0.0)) {
        throw ConfigError("failure duration must be >= 0");
    }
}

SimNetwork::SimNetwork(std::uint64_t seed, LatencyModel latency) : latency_(latency), rng_(seed) {
    latency_.validate();
}

SimNetwork::~SimNetwork() = default;

TimerId SimNetwork::schedule(double delay_ms, std::function<void()> fn) {
    const TimerId id = next_timer_++;
    const double at = now_ + std::max(0.0, delay_ms);
    queue_.push(Event{at, seq_++, id, std::move(fn)});
    live_.insert(id);
    return id;
}

void SimNetwork::cancel(TimerId id) { live_.erase(id); }

bool SimNetwork::step() {
    while (!queue_.empty()) {
        Event ev = queue_.top();
        queue_.pop();
        if (live_.erase(ev.id) == 0) continue;
        now_ = std::max(now_, ev.time);
        ev.fn();
        return true;
    }
    return false;
}

void SimNetwork::advance(double until_ms) {
    while (!queue_.empty()) {
        const Event& top = queue_.top();
        if (!live_.count(top.id)) {
            queue_.pop();
            continue;
        }
        if (top.time > until_ms) break;
        step();
    }
    now_ = std::max(now_, until_ms);
}

bool SimNetwork::run_until(const std::function<bool()>& done, double timeout_ms) {
    const double deadline = now_ + timeout_ms;
    while (!done()) {
        while (!queue_.empty() && !live_.count(queue_.top().id)) queue_.pop();
        if (queue_.empty()) return false;
        if (queue_.top().time > deadline) {
            now_ = std::max(now_, deadline);
            return false;
        }
        step();
    }
    return true;
}

std::unique_ptr<SimTransport> SimNetwork::endpoint(const std::string& name) {
    std::string address = "sim://" + name;
    if (nodes_.count(address)) throw ConfigError("duplicate simulated endpoint " + address);
    std::unique_ptr<SimTransport> t(new SimTransport(*this, address));
    nodes_[address] = t.get();
    return t;
}

void SimNetwork::detach(const std::string& address) { nodes_.erase(address); }

void SimNetwork::set_latency(const LatencyModel& latency) {
    latency.validate();
    latency_ = latency;
}

void SimNetwork::set_failed(const std::string& address, bool failed) {
    const bool was = failed_.count(address) > 0;
    if (was == failed) return;
    if (failed) {
        failed_.insert(address);
    } else {
        failed_.erase(address);
    }
    if (auto it = nodes_.find(address); it != nodes_.end()) it->second->notify_failure(failed);
}

bool SimNetwork::is_failed(const std::string& address) const { return failed_.count(address) > 0; }

void SimNetwork::record(const char* what, const std::string& src, const std::string& dst, const Bytes& frame) {
    if (!tracing_) return;
    unsigned type = frame.size() > 5 ? frame[5] : 0;
    std::uint64_t id = 0;
    for (int i = 7; i >= 0 && frame.size() >= kHeaderSize; --i) id = (id << 8) | frame[6 + i];
    char buf[512];
    std::snprintf(buf, sizeof buf, "%.6f %s %s->%s type=%u id=%llu len=%zu", now_, what, src.c_str(), dst.c_str(),
                  type, static_cast<unsigned long long>(id), frame.size());
    trace_.emplace_back(buf);
}

void SimNetwork::transmit(const std::string& src, const std::string& dst, Bytes frame) {
    // Both draws happen for every message so that streams stay aligned across latency settings.
    const double loss_draw = rng_.uniform();
    double delay = rng_.exponential(latency_.mean_ms);
    if (latency_.bandwidth_mbps) {
        delay += static_cast<double>(frame.size()) * 8.0 / (*latency_.bandwidth_mbps * 1000.0);
    }
    if (is_failed(src) || loss_draw < latency_.loss_prob) {
        ++dropped_;
        record("drop", src, dst, frame);
        return;
    }
    schedule(delay, [this, src, dst, frame = std::move(frame)] {
        auto it = nodes_.find(dst);
        if (it == nodes_.end() || is_failed(dst)) {
            ++dropped_;
            record("lost", src, dst, frame);
            return;
        }
        ++delivered_;
        record("recv", src, dst, frame);
        it->second->receive(src, frame);
    });
}

SimTransport::~SimTransport() { net_.detach(address_); }

void SimTransport::send_frame(const std::string& dst, Bytes frame) { net_.transmit(address_, dst, std::move(frame)); }

void SimTransport::receive(const std::string& src, const Bytes& frame) {
    SimNetwork* net = &net_;
    const std::string me = address_;
    deliver(frame, [net, me, src](Bytes reply) { net->transmit(me, src, std::move(reply)); });
}

void SimTransport::notify_failure(bool failed) {
    if (failed) abandon_pending();
    for (auto& fn : failure_listeners_) fn(failed);
}

std::vector<PlannedFailure> inject_failures(SimNetwork& net, const std::vector<std::string>& addresses,
                                            const FailureSchedule& schedule, Rng& rng, double horizon_ms) {
    schedule.validate();
    std::vector<PlannedFailure> plan;
    const double start = net.now_ms();
    const auto days = static_cast<std::size_t>(std::ceil(horizon_ms / kDayMs));
    for (const auto& address : addresses) {
        double busy_until = -1.0;
        for (std::size_t day = 0; day < days; ++day) {
            if (!rng.bernoulli(schedule.daily_failure_prob)) continue;
            const double at = start + (static_cast<double>(day) + rng.uniform()) * kDayMs;
            double length = 0.0;
            switch (schedule.duration_kind) {
                case FailureSchedule::Duration::fixed: length = schedule.duration_ms; break;
                case FailureSchedule::Duration::exponential: length = rng.exponential(schedule.duration_ms); break;
                case FailureSchedule::Duration::permanent: length = std::numeric_limits<double>::infinity(); break;
            }
            if (at >= start + horizon_ms || at < busy_until) continue;
            const double end = at + length;
            busy_until = end;
            plan.push_back({address, at, end});
            net.schedule(at - net.now_ms(), [&net, address] { net.set_failed(address, true); });
            if (std::isfinite(end)) {
                net.schedule(end - net.now_ms(), [&net, address] { net.set_failed(address, false); });
            }
        }
    }
    return plan;
}

}  // namespace swarm::net
