#pragma once

#include <functional>
#include <optional>
#include <string>

#include "swarm/dht/node.hpp"
#include "swarm/nn/ffn.hpp"

namespace swarm::runtime {

inline constexpr std::size_t kChunkBytes = 64 * 1024;

/// Flat encoding of an expert: "CKP1" | dtype u8 | layer_norm u8 | dims u32 x3 | version u64 | tensors.
template <typename T>
Bytes serialize_state(const nn::FfnExpertState<T>& state);

/// Throws CheckpointCorrupt on anything that does not decode cleanly.
template <typename T>
nn::FfnExpertState<T> deserialize_state(ByteView bytes);

/// Manifest value: count u32 | SHA-1 per chunk | total length u64, big-endian.
struct Manifest {
    std::vector<Sha1Digest> digests;
    std::uint64_t total_bytes = 0;
};
Bytes encode_manifest(const Manifest& m);
Manifest decode_manifest(ByteView b);

inline std::string manifest_key(const std::string& uid) { return uid + ".ckpt"; }
inline std::string chunk_key(const std::string& uid, std::size_t n) { return uid + ".ckpt." + std::to_string(n); }

/// Stores every chunk, then the manifest. Reports the saved version.
template <typename T>
void save_checkpoint(dht::DhtNode& node, const std::string& uid, const nn::FfnExpertState<T>& state,
                     std::optional<std::uint64_t> ttl_ms, std::function<void(Result<std::uint64_t>)> cb);

/// Errc::corrupt when the manifest or any chunk is missing or does not match its digest.
template <typename T>
void load_checkpoint(dht::DhtNode& node, const std::string& uid,
                     std::function<void(Result<nn::FfnExpertState<T>>)> cb);

}  // namespace swarm::runtime
