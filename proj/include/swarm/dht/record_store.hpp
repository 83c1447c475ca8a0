#pragma once

#include <cstdint>
#include <map>
#include <optional>

#include "swarm/dht/node_id.hpp"
#include "swarm/util/bytes.hpp"

namespace swarm::dht {

inline constexpr std::size_t kMaxValueBytes = 64 * 1024;

struct Record {
    Bytes value;
    std::uint64_t timestamp_ms = 0;
    std::uint64_t ttl_ms = 0;

    bool expired(double now_ms) const noexcept {
        return now_ms - static_cast<double>(timestamp_ms) > static_cast<double>(ttl_ms);
    }
    bool operator==(const Record&) const = default;
};

/// Local key-value storage with newest-timestamp-wins and lazy expiry.
class RecordStore {
public:
    struct Entry {
        Record record;
        double received_ms = 0.0;  // local clock, for republish suppression
    };

    /// False when an entry with a newer timestamp is already present.
    bool put(const NodeId& key, Record rec, double now_ms);
    /// Unexpired record, if any; expired entries are removed on access.
    std::optional<Record> get(const NodeId& key, double now_ms);
    bool erase(const NodeId& key) { return entries_.erase(key) > 0; }
    void purge(double now_ms);
    void clear() { entries_.clear(); }

    std::size_t size() const noexcept { return entries_.size(); }
    std::map<NodeId, Entry>& entries() noexcept { return entries_; }

private:
    std::map<NodeId, Entry> entries_;
};

}  // namespace swarm::dht
