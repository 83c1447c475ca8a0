#pragma once

#include <array>
#include <cstdint>
#include <string_view>

#include "swarm/util/bytes.hpp"

namespace swarm {

using Sha1Digest = std::array<std::uint8_t, 20>;

Sha1Digest sha1(ByteView data);
inline Sha1Digest sha1(std::string_view s) {
    return sha1(ByteView(reinterpret_cast<const std::uint8_t*>(s.data()), s.size()));
}

}  // namespace swarm
