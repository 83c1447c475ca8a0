#include "swarm/dht/node.hpp"

#include <algorithm>

namespace swarm::dht {

using net::MsgType;

namespace {

void write_contacts(ByteWriter& w, const std::vector<Contact>& cs) {
    w.u16(static_cast<std::uint16_t>(cs.size()));
    for (const auto& c : cs) {
        w.raw(c.id.bytes);
        w.str16(c.endpoint);
    }
}

NodeId read_id(ByteReader& r) {
    NodeId id;
    auto v = r.raw(kIdBytes);
    std::copy(v.begin(), v.end(), id.bytes.begin());
    return id;
}

std::vector<Contact> read_contacts(ByteReader& r) {
    const auto n = r.u16();
    std::vector<Contact> out;
    out.reserve(n);
    for (std::uint16_t i = 0; i < n; ++i) {
        Contact c;
        c.id = read_id(r);
        c.endpoint = r.str16();
        out.push_back(std::move(c));
    }
    return out;
}

void write_record(ByteWriter& w, const Record& rec) {
    w.u64(rec.timestamp_ms);
    w.u64(rec.ttl_ms);
    w.blob32(rec.value);
}

Record read_record(ByteReader& r) {
    Record rec;
    rec.timestamp_ms = r.u64();
    rec.ttl_ms = r.u64();
    auto v = r.blob32();
    if (v.size() > kMaxValueBytes) throw ProtocolError("record value exceeds 64 KiB");
    rec.value.assign(v.begin(), v.end());
    return rec;
}

std::uint64_t seed_from(const NodeId& id) {
    std::uint64_t v = 0;
    for (std::size_t i = 0; i < 8; ++i) v = (v << 8) | id.bytes[i];
    return v;
}

bool newer(const std::optional<Record>& a, const Record& b) { return !a || b.timestamp_ms > a->timestamp_ms; }

}  // namespace

void DhtConfig::validate() const {
    if (k == 0 || alpha == 0) throw ConfigError("dht k and alpha must be positive");
    if (!(rpc_timeout_ms > 0)) throw ConfigError("dht rpc timeout must be positive");
    if (default_ttl_ms == 0) throw ConfigError("dht ttl must be positive");
    if (!(republish_interval() > 0)) throw ConfigError("dht republish interval must be positive");
}

struct DhtNode::LookupState {
    enum class Status { fresh, inflight, ok, failed };
    struct Candidate {
        Contact contact;
        Status status = Status::fresh;
    };

    NodeId key;
    LookupMode mode;
    LookupCallback cb;
    std::map<NodeId, Candidate> shortlist;  // keyed by distance to key
    std::size_t outstanding = 0;
    std::size_t responses = 0;
    bool round_responded = false;
    LookupResult result;
    bool done = false;

    /// No closer node is left to try: the `width` closest live candidates have all answered.
    bool settled(std::size_t width) const {
        std::size_t seen = 0;
        for (const auto& [d, c] : shortlist) {
            if (c.status == Status::failed) continue;
            if (c.status != Status::ok) return false;
            if (++seen == width) break;
        }
        return true;
    }
    std::optional<NodeId> best_queried() const {
        for (const auto& [d, c] : shortlist) {
            if (c.status == Status::ok) return d;
        }
        return std::nullopt;
    }
};

DhtNode::DhtNode(net::RpcEndpoint& endpoint, NodeId id, DhtConfig cfg)
    : ep_(endpoint), id_(id), cfg_(cfg), table_(id, cfg.k), alive_(std::make_shared<bool>(true)), rng_(seed_from(id)) {
    cfg_.validate();
    serve_handlers();
}

DhtNode::~DhtNode() {
    *alive_ = false;
    stop_maintenance();
}

void DhtNode::write_header(ByteWriter& w) const {
    w.raw(id_.bytes);
    w.str16(ep_.address());
}

Contact DhtNode::read_header(ByteReader& r) {
    Contact c;
    c.id = read_id(r);
    c.endpoint = r.str16();
    c.last_seen_ms = now();
    return c;
}

void DhtNode::serve_handlers() {
    ep_.serve(MsgType::ping, [this](Bytes payload, net::Responder respond) {
        ByteReader r(payload);
        auto sender = read_header(r);
        observe(sender);
        ByteWriter w;
        w.raw(id_.bytes);
        respond(std::move(w).take());
    });
    ep_.serve(MsgType::store, [this](Bytes payload, net::Responder respond) {
        ByteReader r(payload);
        auto sender = read_header(r);
        const NodeId key = read_id(r);
        Record rec = read_record(r);
        r.expect_done("dht request");
        observe(sender);
        ++stats_.stores_served;
        const bool accepted = store_.put(key, std::move(rec), now());
        ByteWriter w;
        w.raw(id_.bytes);
        w.u8(accepted ? 1 : 0);
        respond(std::move(w).take());
    });
    auto find = [this](bool want_value) {
        return [this, want_value](Bytes payload, net::Responder respond) {
            ByteReader r(payload);
            auto sender = read_header(r);
            const NodeId key = read_id(r);
            r.expect_done("dht request");
            observe(sender);
            ByteWriter w;
            w.raw(id_.bytes);
            if (want_value) {
                auto rec = store_.get(key, now());
                w.u8(rec ? 1 : 0);
                if (rec) write_record(w, *rec);
            }
            auto closest = table_.closest(key, cfg_.k + 1);
            std::erase_if(closest, [&](const Contact& c) { return c.id == sender.id; });
            if (closest.size() > cfg_.k) closest.resize(cfg_.k);
            write_contacts(w, closest);
            respond(std::move(w).take());
        };
    };
    ep_.serve(MsgType::find_node, find(false));
    ep_.serve(MsgType::find_value, find(true));
}

void DhtNode::observe(const Contact& c) {
    if (c.id == id_) return;
    auto res = table_.update(c);
    if (res.outcome != RoutingTable::Outcome::bucket_full) return;
    const int idx = bucket_index(id_, c.id);
    if (!pinging_buckets_.insert(idx).second) return;
    const Contact oldest = *res.oldest;
    ByteWriter w;
    write_header(w);
    auto alive = alive_;
    rpc(oldest, MsgType::ping, std::move(w).take(), [this, alive, idx, oldest, c](Result<Bytes> r) {
        if (!*alive) return;
        pinging_buckets_.erase(idx);
        if (!r.ok()) table_.evict(oldest.id, c);
    });
}

void DhtNode::rpc(const Contact& to, MsgType type, Bytes body, std::function<void(Result<Bytes>)> cb) {
    auto alive = alive_;
    ep_.call(to.endpoint, type, std::move(body), cfg_.rpc_timeout_ms,
             [this, alive, to, cb = std::move(cb)](Result<Bytes> r) {
                 if (!*alive) return;
                 if (!r.ok()) {
                     if (!to.id.is_zero()) table_.remove(to.id);
                     return cb(std::move(r));
                 }
                 ByteReader reader(r.value());
                 Contact responder{};
                 try {
                     responder.id = read_id(reader);
                 } catch (const ParseError& e) {
                     return cb(fail(Errc::protocol, e.what()));
                 }
                 if (!to.id.is_zero() && responder.id != to.id) {
                     table_.remove(to.id);
                     return cb(fail(Errc::protocol, "peer answered with a different node id"));
                 }
                 responder.endpoint = to.endpoint;
                 responder.last_seen_ms = now();
                 observe(responder);
                 auto rest = reader.raw(reader.remaining());
                 cb(Bytes(rest.begin(), rest.end()));
             });
}

void DhtNode::join(const std::vector<std::string>& bootstrap, StoreCallback cb) {
    std::vector<std::string> peers;
    for (const auto& b : bootstrap) {
        if (b != address()) peers.push_back(b);
    }
    if (peers.empty()) return cb(std::size_t{0});
    auto remaining = std::make_shared<std::size_t>(peers.size());
    auto alive = alive_;
    for (const auto& addr : peers) {
        ByteWriter w;
        write_header(w);
        rpc(Contact{NodeId{}, addr, 0.0}, MsgType::ping, std::move(w).take(), [this, alive, remaining, cb](Result<Bytes>) {
            if (!*alive || --*remaining > 0) return;
            if (table_.size() == 0) return cb(fail(Errc::lookup_failed, "no bootstrap peer answered"));
            lookup(id_, LookupMode::nodes, [this, alive, cb](Result<LookupResult>) {
                if (!*alive) return;
                refresh_buckets([this, alive, cb] {
                    if (*alive) cb(table_.size());
                });
            });
        });
    }
}

void DhtNode::refresh_buckets(std::function<void()> done) {
    // Buckets beyond the closest neighbour are refreshed with a lookup of a random id inside them.
    int nearest = kIdBits;
    for (int i = 0; i < kIdBits; ++i) {
        if (!table_.bucket(i).empty()) {
            nearest = i;
            break;
        }
    }
    auto remaining = std::make_shared<int>(0);
    std::vector<NodeId> targets;
    for (int i = nearest + 1; i < kIdBits; ++i) targets.push_back(random_in_bucket(id_, i, rng_));
    if (targets.empty()) return done();
    *remaining = static_cast<int>(targets.size());
    for (const auto& t : targets) {
        lookup(t, LookupMode::nodes, [remaining, done](Result<LookupResult>) {
            if (--*remaining == 0) done();
        });
    }
}

void DhtNode::lookup(const NodeId& key, LookupMode mode, LookupCallback cb) {
    auto st = std::make_shared<LookupState>();
    st->key = key;
    st->mode = mode;
    st->cb = std::move(cb);
    for (auto& c : table_.closest(key, cfg_.k)) st->shortlist.emplace(xor_distance(key, c.id), LookupState::Candidate{c});
    ++stats_.lookups;
    run_round(st);
}

void DhtNode::run_round(const std::shared_ptr<LookupState>& st) {
    using Status = LookupState::Status;
    std::vector<LookupState::Candidate*> picked;
    std::size_t considered = 0;
    for (auto& [d, c] : st->shortlist) {
        if (c.status == Status::failed) continue;
        if (++considered > cfg_.k) break;
        if (c.status == Status::fresh) picked.push_back(&c);
        if (picked.size() == cfg_.alpha) break;
    }
    if (picked.empty()) return finish(st);

    st->round_responded = false;
    st->outstanding = picked.size();
    const auto type = st->mode == LookupMode::value ? MsgType::find_value : MsgType::find_node;
    auto alive = alive_;
    for (auto* cand : picked) {
        cand->status = Status::inflight;
        ++st->result.contacted;
        ByteWriter w;
        write_header(w);
        w.raw(st->key.bytes);
        const NodeId dist = xor_distance(st->key, cand->contact.id);
        rpc(cand->contact, type, std::move(w).take(), [this, alive, st, dist](Result<Bytes> r) {
            if (!*alive || st->done) return;
            auto& me = st->shortlist.at(dist);
            if (r.ok()) {
                try {
                    ByteReader reader(r.value());
                    if (st->mode == LookupMode::value && reader.u8()) {
                        Record rec = read_record(reader);
                        if (!rec.expired(now()) && newer(st->result.value, rec)) st->result.value = std::move(rec);
                    }
                    for (auto& c : read_contacts(reader)) {
                        if (c.id == id_) continue;
                        st->shortlist.emplace(xor_distance(st->key, c.id), LookupState::Candidate{std::move(c)});
                    }
                    me.status = Status::ok;
                    ++st->responses;
                    st->round_responded = true;
                } catch (const Error&) {
                    me.status = Status::failed;
                }
            } else {
                me.status = Status::failed;
            }
            if (--st->outstanding > 0) return;

            ++st->result.rounds;
            if (auto b = st->best_queried()) st->result.best_distance_per_round.push_back(*b);
            if (st->mode == LookupMode::value && st->result.value) return finish(st);
            if (st->round_responded && st->settled(cfg_.alpha)) return finish(st);
            run_round(st);
        });
    }
}

void DhtNode::finish(const std::shared_ptr<LookupState>& st) {
    if (st->done) return;
    st->done = true;
    stats_.lookup_contacts += st->result.contacted;
    if (st->result.contacted > 0 && st->responses == 0) {
        return st->cb(fail(Errc::lookup_failed, "no contact answered"));
    }
    std::vector<Contact> nodes;
    for (const auto& [d, c] : st->shortlist) {
        if (c.status != LookupState::Status::failed) nodes.push_back(c.contact);
    }
    nodes.push_back(Contact{id_, address(), now()});
    std::sort(nodes.begin(), nodes.end(), [&](const Contact& a, const Contact& b) { return closer(st->key, a.id, b.id); });
    if (nodes.size() > cfg_.k) nodes.resize(cfg_.k);
    st->result.nodes = std::move(nodes);
    if (st->mode == LookupMode::value) {
        if (auto local = store_.get(st->key, now()); local && newer(st->result.value, *local)) st->result.value = *local;
    }
    st->cb(std::move(st->result));
}

void DhtNode::store(const std::string& key, Bytes value, std::optional<std::uint64_t> ttl_ms, StoreCallback cb) {
    if (value.size() > kMaxValueBytes) return cb(fail(Errc::store_failed, "value exceeds 64 KiB"));
    Record rec{std::move(value), static_cast<std::uint64_t>(now()), ttl_ms.value_or(cfg_.default_ttl_ms)};
    const NodeId k = NodeId::for_key(key);
    published_[k] = rec;
    store_record(k, std::move(rec), std::move(cb));
}

void DhtNode::store_record(const NodeId& key, Record rec, StoreCallback cb) {
    auto alive = alive_;
    lookup(key, LookupMode::nodes, [this, alive, key, rec = std::move(rec), cb = std::move(cb)](Result<LookupResult> r) {
        if (!*alive) return;
        if (!r.ok()) return cb(fail(Errc::store_failed, "lookup failed: " + r.failure().message));
        struct Tally {
            std::size_t pending = 0, acks = 0;
        };
        auto tally = std::make_shared<Tally>();
        tally->pending = r.value().nodes.size();
        auto settle = [cb, tally](bool ok) {
            if (ok) ++tally->acks;
            if (--tally->pending > 0) return;
            if (tally->acks == 0) return cb(fail(Errc::store_failed, "no replica acknowledged"));
            cb(tally->acks);
        };
        for (const auto& node : r.value().nodes) {
            if (node.id == id_) {
                store_.put(key, rec, now());
                settle(true);
                continue;
            }
            ByteWriter w;
            write_header(w);
            w.raw(key.bytes);
            write_record(w, rec);
            rpc(node, MsgType::store, std::move(w).take(), [settle](Result<Bytes> res) { settle(res.ok()); });
        }
    });
}

void DhtNode::get(const std::string& key, GetCallback cb) { get_key(NodeId::for_key(key), std::move(cb)); }

void DhtNode::get_key(const NodeId& key, GetCallback cb) {
    auto alive = alive_;
    lookup(key, LookupMode::value, [this, alive, key, cb = std::move(cb)](Result<LookupResult> r) {
        if (!*alive) return;
        if (!r.ok()) {
            if (auto local = store_.get(key, now())) return cb(std::optional<Record>(*local));
            return cb(r.failure());
        }
        cb(std::move(r.value().value));
    });
}

void DhtNode::start_maintenance() {
    stop_maintenance();
    auto alive = alive_;
    republish_timer_ = executor().schedule(cfg_.republish_interval(), [this, alive] {
        if (!*alive) return;
        republish_timer_.reset();
        republish();
        start_maintenance();
    });
}

void DhtNode::stop_maintenance() {
    if (republish_timer_) executor().cancel(*republish_timer_);
    republish_timer_.reset();
}

void DhtNode::republish() {
    const double t = now();
    const double interval = cfg_.republish_interval();
    store_.purge(t);
    std::erase_if(published_, [&](const auto& kv) { return kv.second.expired(t); });
    std::map<NodeId, Record> todo = published_;
    for (auto& [key, entry] : store_.entries()) {
        // A record received within the last interval was just replicated by someone else.
        if (t - entry.received_ms < interval) continue;
        entry.received_ms = t;
        todo.emplace(key, entry.record);
    }
    for (auto& [key, rec] : todo) {
        ++stats_.republished;
        store_record(key, rec, [](Result<std::size_t>) {});
    }
}

void DhtNode::wipe() {
    stop_maintenance();
    table_.clear();
    store_.clear();
    published_.clear();
    pinging_buckets_.clear();
}

}  // namespace swarm::dht
