#pragma once

#include <functional>
#include <memory>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "swarm/dht/record_store.hpp"
#include "swarm/dht/routing_table.hpp"
#include "swarm/net/transport.hpp"

namespace swarm::dht {

struct DhtConfig {
    std::size_t k = 20;
    std::size_t alpha = 3;
    double rpc_timeout_ms = 1000.0;
    std::uint64_t default_ttl_ms = 30'000;
    /// Defaults to default_ttl_ms / 2 when unset.
    std::optional<double> republish_interval_ms;

    double republish_interval() const {
        return republish_interval_ms.value_or(static_cast<double>(default_ttl_ms) / 2.0);
    }
    void validate() const;
};

enum class LookupMode { nodes, value };

struct LookupResult {
    /// Up to K closest live-known nodes, self included when it qualifies.
    std::vector<Contact> nodes;
    /// Newest unexpired record seen (value mode only).
    std::optional<Record> value;
    std::size_t contacted = 0;
    std::size_t rounds = 0;
    /// Closest distance among queried nodes after each round.
    std::vector<NodeId> best_distance_per_round;
};

struct DhtStats {
    std::uint64_t lookups = 0;
    std::uint64_t lookup_contacts = 0;
    std::uint64_t stores_served = 0;
    std::uint64_t republished = 0;
};

/// Kademlia node. All methods must run on the endpoint's executor; the node answers
/// peers' RPCs while its own lookups are in flight.
class DhtNode {
public:
    using LookupCallback = std::function<void(Result<LookupResult>)>;
    using StoreCallback = std::function<void(Result<std::size_t>)>;
    using GetCallback = std::function<void(Result<std::optional<Record>>)>;

    DhtNode(net::RpcEndpoint& endpoint, NodeId id, DhtConfig cfg = {});
    ~DhtNode();
    DhtNode(const DhtNode&) = delete;
    DhtNode& operator=(const DhtNode&) = delete;

    const NodeId& id() const noexcept { return id_; }
    const std::string& address() const { return ep_.address(); }
    const DhtConfig& config() const noexcept { return cfg_; }
    net::Executor& executor() noexcept { return ep_.executor(); }

    /// Ping the bootstrap endpoints, then look up our own id. Reports the routing table size.
    void join(const std::vector<std::string>& bootstrap, StoreCallback cb);

    void lookup(const NodeId& key, LookupMode mode, LookupCallback cb);

    /// Replicate to the K closest nodes, timestamped now. Reports the number of acks.
    void store(const std::string& key, Bytes value, std::optional<std::uint64_t> ttl_ms, StoreCallback cb);
    void store_record(const NodeId& key, Record rec, StoreCallback cb);

    /// Newest unexpired record under key, or nullopt when none exists.
    void get(const std::string& key, GetCallback cb);
    void get_key(const NodeId& key, GetCallback cb);

    /// Periodic republish of held and originally published records.
    void start_maintenance();
    void stop_maintenance();

    /// Drop all volatile state (routing table, records, timers). Used when a node fails.
    void wipe();

    RoutingTable& table() noexcept { return table_; }
    RecordStore& records() noexcept { return store_; }
    const DhtStats& stats() const noexcept { return stats_; }

private:
    struct LookupState;

    void serve_handlers();
    void write_header(ByteWriter& w) const;
    Contact read_header(ByteReader& r);
    void observe(const Contact& c);
    void rpc(const Contact& to, net::MsgType type, Bytes body, std::function<void(Result<Bytes>)> cb);
    void run_round(const std::shared_ptr<LookupState>& st);
    void finish(const std::shared_ptr<LookupState>& st);
    void republish();
    void refresh_buckets(std::function<void()> done);
    double now() const { return ep_.executor().epoch_ms(); }

    net::RpcEndpoint& ep_;
    NodeId id_;
    DhtConfig cfg_;
    RoutingTable table_;
    RecordStore store_;
    std::map<NodeId, Record> published_;
    std::set<int> pinging_buckets_;
    std::optional<net::TimerId> republish_timer_;
    std::shared_ptr<bool> alive_;
    DhtStats stats_;
    Rng rng_;
};

}  // namespace swarm::dht
