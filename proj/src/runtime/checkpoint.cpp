#include "swarm/runtime/checkpoint.hpp"

#include <memory>

#include "swarm/util/sha1.hpp"

namespace swarm::runtime {

namespace {

constexpr char kMagic[4] = {'C', 'K', 'P', '1'};

template <typename T>
constexpr std::uint8_t dtype_tag() {
    return sizeof(T) == 8 ? 2 : 1;
}

}  // namespace

template <typename T>
Bytes serialize_state(const nn::FfnExpertState<T>& state) {
    ByteWriter w;
    w.raw(ByteView(reinterpret_cast<const std::uint8_t*>(kMagic), 4));
    w.u8(dtype_tag<T>());
    w.u8(state.layer_norm ? 1 : 0);
    w.u32(static_cast<std::uint32_t>(state.dims.d_in));
    w.u32(static_cast<std::uint32_t>(state.dims.d_hidden));
    w.u32(static_cast<std::uint32_t>(state.dims.d_out));
    w.u64(state.version);
    state.params.for_each([&](const nn::BasicTensor<T>& t) {
        for (T v : t.vec()) {
            if constexpr (sizeof(T) == 8) {
                w.f64(v);
            } else {
                w.f32(v);
            }
        }
    });
    return std::move(w).take();
}

template <typename T>
nn::FfnExpertState<T> deserialize_state(ByteView bytes) {
    try {
        ByteReader r(bytes);
        auto magic = r.raw(4);
        if (!std::equal(magic.begin(), magic.end(), kMagic)) throw CheckpointCorrupt("bad checkpoint magic");
        if (r.u8() != dtype_tag<T>()) throw CheckpointCorrupt("checkpoint precision mismatch");
        nn::FfnExpertState<T> s;
        s.layer_norm = r.u8() != 0;
        s.dims.d_in = r.u32();
        s.dims.d_hidden = r.u32();
        s.dims.d_out = r.u32();
        if (s.dims.d_in == 0 || s.dims.d_hidden == 0 || s.dims.d_out == 0) throw CheckpointCorrupt("zero checkpoint dims");
        s.version = r.u64();
        s.params = nn::FfnParams<T>::zeros(s.dims);
        s.params.for_each([&](nn::BasicTensor<T>& t) {
            for (auto& v : t.data()) {
                if constexpr (sizeof(T) == 8) {
                    v = r.f64();
                } else {
                    v = r.f32();
                }
            }
        });
        r.expect_done("checkpoint");
        return s;
    } catch (const ParseError& e) {
        throw CheckpointCorrupt(std::string("truncated checkpoint: ") + e.what());
    }
}

Bytes encode_manifest(const Manifest& m) {
    ByteWriter w(Endian::big);
    w.u32(static_cast<std::uint32_t>(m.digests.size()));
    for (const auto& d : m.digests) w.raw(d);
    w.u64(m.total_bytes);
    return std::move(w).take();
}

Manifest decode_manifest(ByteView b) {
    try {
        ByteReader r(b, Endian::big);
        Manifest m;
        const std::uint32_t n = r.u32();
        if (static_cast<std::size_t>(n) * 20 + 8 != r.remaining()) throw CheckpointCorrupt("manifest length mismatch");
        for (std::uint32_t i = 0; i < n; ++i) {
            auto raw = r.raw(20);
            Sha1Digest d;
            std::copy(raw.begin(), raw.end(), d.begin());
            m.digests.push_back(d);
        }
        m.total_bytes = r.u64();
        return m;
    } catch (const ParseError& e) {
        throw CheckpointCorrupt(std::string("bad manifest: ") + e.what());
    }
}

template <typename T>
void save_checkpoint(dht::DhtNode& node, const std::string& uid, const nn::FfnExpertState<T>& state,
                     std::optional<std::uint64_t> ttl_ms, std::function<void(Result<std::uint64_t>)> cb) {
    const Bytes blob = serialize_state(state);
    Manifest m;
    m.total_bytes = blob.size();
    std::vector<Bytes> chunks;
    for (std::size_t off = 0; off < blob.size(); off += kChunkBytes) {
        const std::size_t end = std::min(blob.size(), off + kChunkBytes);
        chunks.emplace_back(blob.begin() + static_cast<std::ptrdiff_t>(off), blob.begin() + static_cast<std::ptrdiff_t>(end));
        m.digests.push_back(sha1(chunks.back()));
    }
    struct Pending {
        std::size_t left;
        bool failed = false;
        std::string reason;
    };
    auto st = std::make_shared<Pending>(Pending{chunks.size()});
    const std::uint64_t version = state.version;
    Bytes manifest = encode_manifest(m);
    dht::DhtNode* n = &node;
    auto after_chunks = [n, uid, ttl_ms, version, manifest = std::move(manifest), cb, st]() mutable {
        if (st->failed) return cb(fail(Errc::store_failed, "checkpoint chunk: " + st->reason));
        n->store(manifest_key(uid), std::move(manifest), ttl_ms, [cb, version](Result<std::size_t> r) {
            if (!r) return cb(r.failure());
            cb(version);
        });
    };
    for (std::size_t i = 0; i < chunks.size(); ++i) {
        node.store(chunk_key(uid, i), std::move(chunks[i]), ttl_ms, [st, after_chunks](Result<std::size_t> r) mutable {
            if (!r && !st->failed) {
                st->failed = true;
                st->reason = r.failure().message;
            }
            if (--st->left == 0) after_chunks();
        });
    }
}

template <typename T>
void load_checkpoint(dht::DhtNode& node, const std::string& uid,
                     std::function<void(Result<nn::FfnExpertState<T>>)> cb) {
    dht::DhtNode* n = &node;
    node.get(manifest_key(uid), [n, uid, cb](Result<std::optional<dht::Record>> r) {
        if (!r || !r.value()) return cb(fail(Errc::corrupt, "no checkpoint manifest for " + uid));
        Manifest m;
        try {
            m = decode_manifest(r.value()->value);
        } catch (const CheckpointCorrupt& e) {
            return cb(fail(Errc::corrupt, e.what()));
        }
        if (m.digests.empty()) return cb(fail(Errc::corrupt, "empty checkpoint manifest"));
        struct Pending {
            Manifest m;
            std::vector<Bytes> chunks;
            std::size_t left;
            std::string problem;
        };
        auto st = std::make_shared<Pending>();
        st->m = std::move(m);
        st->chunks.resize(st->m.digests.size());
        st->left = st->chunks.size();
        for (std::size_t i = 0; i < st->chunks.size(); ++i) {
            n->get(chunk_key(uid, i), [st, i, cb](Result<std::optional<dht::Record>> cr) {
                if (!cr || !cr.value()) {
                    if (st->problem.empty()) st->problem = "missing chunk " + std::to_string(i);
                } else if (sha1(cr.value()->value) != st->m.digests[i]) {
                    if (st->problem.empty()) st->problem = "digest mismatch in chunk " + std::to_string(i);
                } else {
                    st->chunks[i] = std::move(cr.value()->value);
                }
                if (--st->left > 0) return;
                if (!st->problem.empty()) return cb(fail(Errc::corrupt, st->problem));
                Bytes blob;
                for (auto& c : st->chunks) blob.insert(blob.end(), c.begin(), c.end());
                if (blob.size() != st->m.total_bytes) return cb(fail(Errc::corrupt, "checkpoint length mismatch"));
                try {
                    cb(deserialize_state<T>(blob));
                } catch (const CheckpointCorrupt& e) {
                    cb(fail(Errc::corrupt, e.what()));
                }
            });
        }
    });
}

template Bytes serialize_state(const nn::FfnExpertState<float>&);
template Bytes serialize_state(const nn::FfnExpertState<double>&);
template nn::FfnExpertState<float> deserialize_state(ByteView);
template nn::FfnExpertState<double> deserialize_state(ByteView);
template void save_checkpoint(dht::DhtNode&, const std::string&, const nn::FfnExpertState<float>&,
                              std::optional<std::uint64_t>, std::function<void(Result<std::uint64_t>)>);
template void save_checkpoint(dht::DhtNode&, const std::string&, const nn::FfnExpertState<double>&,
                              std::optional<std::uint64_t>, std::function<void(Result<std::uint64_t>)>);
template void load_checkpoint(dht::DhtNode&, const std::string&, std::function<void(Result<nn::FfnExpertState<float>>)>);
template void load_checkpoint(dht::DhtNode&, const std::string&, std::function<void(Result<nn::FfnExpertState<double>>)>);

}  // namespace swarm::runtime
