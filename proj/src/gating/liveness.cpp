#include "swarm/gating/liveness.hpp"

#include <algorithm>
#include <memory>

namespace swarm::gating {

Bytes encode_liveness(std::uint64_t timestamp_ms, const std::string& endpoint) {
    ByteWriter w(Endian::big);
    w.u64(timestamp_ms);
    w.raw(ByteView(reinterpret_cast<const std::uint8_t*>(endpoint.data()), endpoint.size()));
    return std::move(w).take();
}

LivenessValue decode_liveness(ByteView value) {
    ByteReader r(value, Endian::big);
    LivenessValue v;
    v.timestamp_ms = r.u64();
    auto rest = r.raw(r.remaining());
    v.endpoint.assign(rest.begin(), rest.end());
    return v;
}

bool is_fresh(const std::optional<dht::Record>& rec, double now_ms, double freshness_ms, std::string* endpoint) {
    if (!rec) return false;
    LivenessValue v;
    try {
        v = decode_liveness(rec->value);
    } catch (const ParseError&) {
        return false;
    }
    if (!(now_ms - static_cast<double>(v.timestamp_ms) < freshness_ms)) return false;
    if (endpoint) *endpoint = std::move(v.endpoint);
    return true;
}

void DhtLiveness::query(const std::vector<std::string>& keys, std::function<void(Answer)> done) {
    struct Pending {
        Answer answer;
        std::size_t outstanding = 0;
        std::function<void(Answer)> done;
    };
    auto p = std::make_shared<Pending>();
    p->answer.resize(keys.size());
    p->done = std::move(done);
    const double now = node_.executor().epoch_ms();
    std::vector<std::size_t> misses;
    for (std::size_t i = 0; i < keys.size(); ++i) {
        auto it = cache_.find(keys[i]);
        if (it != cache_.end() && now < it->second.expires_ms) {
            ++cache_hits_;
            p->answer[i] = it->second.endpoint;
        } else {
            misses.push_back(i);
        }
    }
    if (misses.empty()) return p->done(std::move(p->answer));
    p->outstanding = misses.size();
    for (auto i : misses) {
        ++dht_queries_;
        const std::string key = keys[i];
        node_.get(key, [this, p, i, key](Result<std::optional<dht::Record>> r) {
            const double t = node_.executor().epoch_ms();
            std::string endpoint;
            std::optional<std::string> ans;
            double expires = t + cache_ttl_ms_;
            if (r.ok() && is_fresh(r.value(), t, freshness_ms_, &endpoint)) {
                ans = std::move(endpoint);
                // an alive answer never outlives the announcement it came from
                expires = std::min(expires, static_cast<double>(decode_liveness(r.value()->value).timestamp_ms) + freshness_ms_);
            }
            if (cache_ttl_ms_ > 0) cache_[key] = Cached{ans, expires};
            p->answer[i] = std::move(ans);
            if (--p->outstanding == 0) p->done(std::move(p->answer));
        });
    }
}

void filter_alive(dht::DhtNode& node, const std::vector<std::string>& prefixes, double freshness_ms,
                  std::function<void(std::vector<std::string>)> done) {
    auto oracle = std::make_shared<DhtLiveness>(node, freshness_ms);
    oracle->query(prefixes, [oracle, prefixes, done = std::move(done)](LivenessOracle::Answer a) {
        std::vector<std::string> out;
        for (std::size_t i = 0; i < prefixes.size(); ++i) {
            if (a[i]) out.push_back(prefixes[i]);
        }
        done(std::move(out));
    });
}

void StaticLiveness::add(const ExpertUid& uid, const std::string& endpoint) {
    const std::string key = uid.to_string(grid_.name);
    if (full_.count(key)) remove(uid);
    full_[key] = endpoint;
    for (std::size_t len = 1; len < uid.coords.size(); ++len) ++prefixes_[uid.prefix(len).to_string(grid_.name)];
}

void StaticLiveness::remove(const ExpertUid& uid) {
    if (full_.erase(uid.to_string(grid_.name)) == 0) return;
    for (std::size_t len = 1; len < uid.coords.size(); ++len) {
        auto it = prefixes_.find(uid.prefix(len).to_string(grid_.name));
        if (--it->second == 0) prefixes_.erase(it);
    }
}

void StaticLiveness::query(const std::vector<std::string>& keys, std::function<void(Answer)> done) {
    Answer out;
    for (const auto& k : keys) {
        if (auto it = full_.find(k); it != full_.end()) {
            out.emplace_back(it->second);
        } else if (prefixes_.count(k)) {
            out.emplace_back(std::string());
        } else {
            out.emplace_back(std::nullopt);
        }
    }
    done(std::move(out));
}

}  // namespace swarm::gating
