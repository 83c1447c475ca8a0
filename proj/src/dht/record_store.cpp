#include "swarm/dht/record_store.hpp"

namespace swarm::dht {

bool RecordStore::put(const NodeId& key, Record rec, double now_ms) {
    if (rec.expired(now_ms)) return false;
    auto it = entries_.find(key);
    if (it != entries_.end() && !it->second.record.expired(now_ms) &&
        it->second.record.timestamp_ms > rec.timestamp_ms) {
        return false;
    }
    entries_[key] = Entry{std::move(rec), now_ms};
    return true;
}

std::optional<Record> RecordStore::get(const NodeId& key, double now_ms) {
    auto it = entries_.find(key);
    if (it == entries_.end()) return std::nullopt;
    if (it->second.record.expired(now_ms)) {
        entries_.erase(it);
        return std::nullopt;
    }
    return it->second.record;
}

void RecordStore::purge(double now_ms) {
    std::erase_if(entries_, [&](const auto& kv) { return kv.second.record.expired(now_ms); });
}

}  // namespace swarm::dht
