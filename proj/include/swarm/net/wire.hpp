#pragma once

#include <cstdint>
#include <optional>

#include "swarm/nn/tensor.hpp"
#include "swarm/util/bytes.hpp"

namespace swarm::net {

// Envelope layout (all integers little-endian):
//   magic "LAH1" | version u8 = 1 | msg_type u8 | request_id u64 | payload_len u32 | payload
inline constexpr std::uint8_t kMagic[4] = {'L', 'A', 'H', '1'};
inline constexpr std::uint8_t kWireVersion = 1;
inline constexpr std::size_t kHeaderSize = 18;
inline constexpr std::uint8_t kReplyBit = 0x80;
inline constexpr std::uint32_t kMaxPayload = 64u << 20;

enum class MsgType : std::uint8_t {
    ping = 1,
    store = 2,
    find_node = 3,
    find_value = 4,
    forward = 16,
    backward = 17,
};

const char* to_string(MsgType t) noexcept;
bool is_known_type(std::uint8_t raw) noexcept;

struct Envelope {
    std::uint8_t type = 0;  // MsgType, with kReplyBit set on replies
    std::uint64_t request_id = 0;
    Bytes payload;

    bool is_reply() const noexcept { return (type & kReplyBit) != 0; }
    MsgType base_type() const noexcept { return static_cast<MsgType>(type & ~kReplyBit); }

    bool operator==(const Envelope&) const = default;
};

Bytes encode(const Envelope& env);

/// Decodes one complete frame. Bad magic, unknown version/type, or a payload
/// length that disagrees with the frame size raise ProtocolError.
Envelope decode(ByteView frame);

/// Total frame length announced by a header, or nullopt if fewer than kHeaderSize bytes are given.
std::optional<std::size_t> frame_length(ByteView header);

// Tensor encoding: rank u8 | dims u32[rank] | values. f32 tensors carry 32-bit floats.
// f64 tensors set the high bit of the rank byte and carry 64-bit floats.
inline constexpr std::uint8_t kRankF64Flag = 0x80;

template <typename T>
void write_tensor(ByteWriter& w, const nn::BasicTensor<T>& t);

template <typename T>
nn::BasicTensor<T> read_tensor(ByteReader& r);

// Reply payloads start with a status byte: 0 on success, otherwise 1 + Errc followed by a u16 message.
Bytes ok_reply(ByteView body);
Bytes error_reply(Errc code, std::string_view message);
/// Splits a reply payload into its body or the failure it carries.
Result<Bytes> parse_reply(ByteView payload);

}  // namespace swarm::net
