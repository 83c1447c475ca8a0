#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <string_view>

#include "swarm/util/rng.hpp"
#include "swarm/util/sha1.hpp"

namespace swarm::dht {

inline constexpr std::size_t kIdBytes = 20;
inline constexpr int kIdBits = 160;

/// 160-bit identifier, stored big-endian. Keys share the same space.
struct NodeId {
    std::array<std::uint8_t, kIdBytes> bytes{};

    static NodeId random(Rng& rng);
    /// SHA-1 of the UTF-8 key string.
    static NodeId for_key(std::string_view key) { return NodeId{sha1(key)}; }
    /// Identifier whose low-order byte is `v` and all other bytes zero.
    static NodeId from_low_byte(std::uint8_t v) {
        NodeId id;
        id.bytes[kIdBytes - 1] = v;
        return id;
    }

    bool is_zero() const noexcept;
    std::string hex() const;

    auto operator<=>(const NodeId&) const = default;
};

NodeId xor_distance(const NodeId& a, const NodeId& b) noexcept;

/// floor(log2(distance)), or -1 when the ids are equal.
int bucket_index(const NodeId& self, const NodeId& other) noexcept;

/// True when a is strictly closer to target than b.
inline bool closer(const NodeId& target, const NodeId& a, const NodeId& b) noexcept {
    return xor_distance(target, a) < xor_distance(target, b);
}

/// Uniformly random id lying in bucket `index` relative to `self`.
NodeId random_in_bucket(const NodeId& self, int index, Rng& rng);

}  // namespace swarm::dht
