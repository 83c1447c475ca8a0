#include "swarm/dht/node_id.hpp"

#include <bit>

#include "swarm/util/bytes.hpp"

namespace swarm::dht {

NodeId NodeId::random(Rng& rng) {
    NodeId id;
    for (std::size_t i = 0; i < kIdBytes; i += 8) {
        std::uint64_t v = rng.next_u64();
        for (std::size_t j = i; j < std::min(i + 8, kIdBytes); ++j, v >>= 8) id.bytes[j] = static_cast<std::uint8_t>(v);
    }
    return id;
}

bool NodeId::is_zero() const noexcept {
    for (auto b : bytes) {
        if (b) return false;
    }
    return true;
}

std::string NodeId::hex() const { return swarm::hex(bytes); }

NodeId xor_distance(const NodeId& a, const NodeId& b) noexcept {
    NodeId d;
    for (std::size_t i = 0; i < kIdBytes; ++i) d.bytes[i] = a.bytes[i] ^ b.bytes[i];
    return d;
}

int bucket_index(const NodeId& self, const NodeId& other) noexcept {
    for (std::size_t i = 0; i < kIdBytes; ++i) {
        const auto x = static_cast<std::uint8_t>(self.bytes[i] ^ other.bytes[i]);
        if (x) return static_cast<int>((kIdBytes - 1 - i) * 8) + (7 - std::countl_zero(x));
    }
    return -1;
}

NodeId random_in_bucket(const NodeId& self, int index, Rng& rng) {
    NodeId d = NodeId::random(rng);
    const int top_byte = kIdBytes - 1 - index / 8;
    const int bit = index % 8;
    for (int i = 0; i < top_byte; ++i) d.bytes[i] = 0;
    auto& b = d.bytes[top_byte];
    b = static_cast<std::uint8_t>((b & ((1u << bit) - 1)) | (1u << bit));
    return xor_distance(self, d);
}

}  // namespace swarm::dht
