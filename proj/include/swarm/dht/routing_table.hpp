#pragma once

#include <array>
#include <list>
#include <optional>
#include <string>
#include <vector>

#include "swarm/dht/node_id.hpp"

namespace swarm::dht {

struct Contact {
    NodeId id;
    std::string endpoint;
    double last_seen_ms = 0.0;

    bool operator==(const Contact& o) const { return id == o.id && endpoint == o.endpoint; }
};

/// 160 k-buckets ordered least-recently-seen first.
class RoutingTable {
public:
    enum class Outcome { inserted, refreshed, bucket_full, ignored };

    struct UpdateResult {
        Outcome outcome;
        /// Oldest entry of the full bucket; the caller pings it and calls evict() if it is dead.
        std::optional<Contact> oldest;
    };

    explicit RoutingTable(NodeId self, std::size_t k = 20) : self_(self), k_(k) {}

    const NodeId& self() const noexcept { return self_; }
    std::size_t k() const noexcept { return k_; }

    /// Record contact with `c`. Known nodes move to the tail; new nodes are appended while
    /// the bucket has room.
    UpdateResult update(const Contact& c);

    /// Replace `stale` with `fresh` (fresh must map to the same bucket).
    void evict(const NodeId& stale, const std::optional<Contact>& fresh);
    bool remove(const NodeId& id);
    bool contains(const NodeId& id) const;
    std::optional<Contact> find(const NodeId& id) const;

    /// Up to n known contacts ordered by distance to target.
    std::vector<Contact> closest(const NodeId& target, std::size_t n) const;

    std::size_t size() const noexcept { return size_; }
    const std::list<Contact>& bucket(int index) const { return buckets_.at(static_cast<std::size_t>(index)); }
    void clear();

    /// Placement law, capacity and uniqueness; true when every entry is where it belongs.
    bool audit() const;

private:
    NodeId self_;
    std::size_t k_;
    std::array<std::list<Contact>, kIdBits> buckets_;
    std::size_t size_ = 0;
};

}  // namespace swarm::dht
