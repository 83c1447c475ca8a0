#pragma once

#include <map>
#include <optional>
#include <string>
#include <vector>

#include "swarm/dht/node.hpp"
#include "swarm/gating/gating.hpp"

namespace swarm::gating {

/// Liveness record value: 8-byte big-endian millisecond timestamp followed by the endpoint.
Bytes encode_liveness(std::uint64_t timestamp_ms, const std::string& endpoint);

struct LivenessValue {
    std::uint64_t timestamp_ms = 0;
    std::string endpoint;
};
LivenessValue decode_liveness(ByteView value);

/// Alive iff a record exists and now - timestamp < freshness_ms.
bool is_fresh(const std::optional<dht::Record>& rec, double now_ms, double freshness_ms,
              std::string* endpoint = nullptr);

/// DHT-backed oracle with an answer cache. Lookup failures count as dead.
class DhtLiveness final : public LivenessOracle {
public:
    DhtLiveness(dht::DhtNode& node, double freshness_ms, double cache_ttl_ms = 0.0)
        : node_(node), freshness_ms_(freshness_ms), cache_ttl_ms_(cache_ttl_ms) {}

    void query(const std::vector<std::string>& keys, std::function<void(Answer)> done) override;

    std::uint64_t dht_queries() const noexcept { return dht_queries_; }
    std::uint64_t cache_hits() const noexcept { return cache_hits_; }
    void clear_cache() { cache_.clear(); }

private:
    struct Cached {
        std::optional<std::string> endpoint;
        double expires_ms;
    };

    dht::DhtNode& node_;
    double freshness_ms_;
    double cache_ttl_ms_;
    std::map<std::string, Cached> cache_;
    std::uint64_t dht_queries_ = 0, cache_hits_ = 0;
};

/// In-memory directory of announced keys, answering synchronously. Used where the
/// DHT is deliberately left out of the measurement.
class StaticLiveness final : public LivenessOracle {
public:
    explicit StaticLiveness(GridConfig grid) : grid_(std::move(grid)) {}

    /// Announce every prefix of `uid` at `endpoint`.
    void add(const ExpertUid& uid, const std::string& endpoint);
    /// Forget `uid`. Prefixes still shared with other experts stay alive.
    void remove(const ExpertUid& uid);
    void query(const std::vector<std::string>& keys, std::function<void(Answer)> done) override;

private:
    GridConfig grid_;
    std::map<std::string, std::string> full_;       // uid -> endpoint
    std::map<std::string, std::size_t> prefixes_;   // proper prefix -> experts below it
};

/// Prefixes from `prefixes` that are alive, in input order.
void filter_alive(dht::DhtNode& node, const std::vector<std::string>& prefixes, double freshness_ms,
                  std::function<void(std::vector<std::string>)> done);

}  // namespace swarm::gating
