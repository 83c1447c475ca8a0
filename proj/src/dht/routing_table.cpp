#include "swarm/dht/routing_table.hpp"

#include <algorithm>
#include <set>

namespace swarm::dht {

RoutingTable::UpdateResult RoutingTable::update(const Contact& c) {
    const int idx = bucket_index(self_, c.id);
    if (idx < 0) return {Outcome::ignored, std::nullopt};
    auto& b = buckets_[static_cast<std::size_t>(idx)];
    auto it = std::find_if(b.begin(), b.end(), [&](const Contact& e) { return e.id == c.id; });
    if (it != b.end()) {
        b.erase(it);
        b.push_back(c);
        return {Outcome::refreshed, std::nullopt};
    }
    if (b.size() < k_) {
        b.push_back(c);
        ++size_;
        return {Outcome::inserted, std::nullopt};
    }
    return {Outcome::bucket_full, b.front()};
}

void RoutingTable::evict(const NodeId& stale, const std::optional<Contact>& fresh) {
    remove(stale);
    if (fresh) update(*fresh);
}

bool RoutingTable::remove(const NodeId& id) {
    const int idx = bucket_index(self_, id);
    if (idx < 0) return false;
    auto& b = buckets_[static_cast<std::size_t>(idx)];
    auto it = std::find_if(b.begin(), b.end(), [&](const Contact& e) { return e.id == id; });
    if (it == b.end()) return false;
    b.erase(it);
    --size_;
    return true;
}

bool RoutingTable::contains(const NodeId& id) const { return find(id).has_value(); }

std::optional<Contact> RoutingTable::find(const NodeId& id) const {
    const int idx = bucket_index(self_, id);
    if (idx < 0) return std::nullopt;
    for (const auto& e : buckets_[static_cast<std::size_t>(idx)]) {
        if (e.id == id) return e;
    }
    return std::nullopt;
}

std::vector<Contact> RoutingTable::closest(const NodeId& target, std::size_t n) const {
    std::vector<Contact> all;
    all.reserve(size_);
    for (const auto& b : buckets_) all.insert(all.end(), b.begin(), b.end());
    const auto by_distance = [&](const Contact& a, const Contact& b) { return closer(target, a.id, b.id); };
    if (all.size() > n) {
        std::partial_sort(all.begin(), all.begin() + static_cast<std::ptrdiff_t>(n), all.end(), by_distance);
        all.resize(n);
    } else {
        std::sort(all.begin(), all.end(), by_distance);
    }
    return all;
}

void RoutingTable::clear() {
    for (auto& b : buckets_) b.clear();
    size_ = 0;
}

bool RoutingTable::audit() const {
    std::set<NodeId> seen;
    std::size_t count = 0;
    for (std::size_t i = 0; i < buckets_.size(); ++i) {
        if (buckets_[i].size() > k_) return false;
        for (const auto& e : buckets_[i]) {
            if (bucket_index(self_, e.id) != static_cast<int>(i)) return false;
            if (!seen.insert(e.id).second) return false;
            ++count;
        }
    }
    return count == size_;
}

}  // namespace swarm::dht
