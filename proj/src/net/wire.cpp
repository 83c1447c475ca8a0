#include "swarm/net/wire.hpp"

#include <algorithm>

namespace swarm::net {

const char* to_string(MsgType t) noexcept {
    switch (t) {
        case MsgType::ping: return "PING";
        case MsgType::store: return "STORE";
        case MsgType::find_node: return "FIND_NODE";
        case MsgType::find_value: return "FIND_VALUE";
        case MsgType::forward: return "FORWARD";
        case MsgType::backward: return "BACKWARD";
    }
    return "?";
}

bool is_known_type(std::uint8_t raw) noexcept {
    switch (raw & ~kReplyBit) {
        case 1: case 2: case 3: case 4: case 16: case 17: return true;
        default: return false;
    }
}

Bytes encode(const Envelope& env) {
    if (!is_known_type(env.type)) throw ProtocolError("unknown message type " + std::to_string(env.type));
    if (env.payload.size() > kMaxPayload) throw ProtocolError("payload exceeds maximum frame size");
    ByteWriter w(Endian::little);
    w.raw(ByteView(kMagic, 4));
    w.u8(kWireVersion);
    w.u8(env.type);
    w.u64(env.request_id);
    w.u32(static_cast<std::uint32_t>(env.payload.size()));
    w.raw(env.payload);
    return std::move(w).take();
}

std::optional<std::size_t> frame_length(ByteView header) {
    if (header.size() < kHeaderSize) return std::nullopt;
    if (!std::equal(kMagic, kMagic + 4, header.begin())) throw ProtocolError("bad envelope magic");
    ByteReader r(header.subspan(14, 4), Endian::little);
    const auto len = r.u32();
    if (len > kMaxPayload) throw ProtocolError("announced payload length too large");
    return kHeaderSize + len;
}

Envelope decode(ByteView frame) {
    if (frame.size() < kHeaderSize) throw ProtocolError("frame shorter than envelope header");
    if (!std::equal(kMagic, kMagic + 4, frame.begin())) throw ProtocolError("bad envelope magic");
    ByteReader r(frame.subspan(4), Endian::little);
    const auto version = r.u8();
    if (version != kWireVersion) throw ProtocolError("unsupported envelope version " + std::to_string(version));
    Envelope env;
    env.type = r.u8();
    if (!is_known_type(env.type)) throw ProtocolError("unknown message type " + std::to_string(env.type));
    env.request_id = r.u64();
    const auto len = r.u32();
    if (r.remaining() != len) {
        throw ProtocolError("payload_len " + std::to_string(len) + " disagrees with frame size");
    }
    auto body = r.raw(len);
    env.payload.assign(body.begin(), body.end());
    return env;
}

template <typename T>
void write_tensor(ByteWriter& w, const nn::BasicTensor<T>& t) {
    static_assert(std::is_same_v<T, float> || std::is_same_v<T, double>);
    if (t.rank() == 0 || t.rank() >= kRankF64Flag) throw ProtocolError("tensor rank not encodable");
    std::uint8_t rank = static_cast<std::uint8_t>(t.rank());
    if constexpr (std::is_same_v<T, double>) rank |= kRankF64Flag;
    w.u8(rank);
    for (auto d : t.shape()) w.u32(static_cast<std::uint32_t>(d));
    for (auto v : t.data()) {
        if constexpr (std::is_same_v<T, float>) {
            w.f32(v);
        } else {
            w.f64(v);
        }
    }
}

template <typename T>
nn::BasicTensor<T> read_tensor(ByteReader& r) {
    const std::size_t at = r.offset();
    const auto rank_byte = r.u8();
    const bool wide = (rank_byte & kRankF64Flag) != 0;
    const std::size_t rank = rank_byte & ~kRankF64Flag;
    if (wide != std::is_same_v<T, double>) throw ProtocolError("tensor precision does not match receiver");
    if (rank == 0) throw ParseError("tensor rank 0", at);
    nn::Shape shape(rank);
    std::size_t numel = 1;
    for (auto& d : shape) {
        d = r.u32();
        if (d == 0) throw ParseError("zero tensor dimension", r.offset());
        numel *= d;
        if (numel * sizeof(T) > r.remaining() + sizeof(T)) throw ParseError("tensor larger than payload", r.offset());
    }
    std::vector<T> data(numel);
    for (auto& v : data) {
        if constexpr (std::is_same_v<T, float>) {
            v = r.f32();
        } else {
            v = r.f64();
        }
    }
    return nn::BasicTensor<T>(std::move(shape), std::move(data));
}

template void write_tensor(ByteWriter&, const nn::BasicTensor<float>&);
template void write_tensor(ByteWriter&, const nn::BasicTensor<double>&);
template nn::BasicTensor<float> read_tensor(ByteReader&);
template nn::BasicTensor<double> read_tensor(ByteReader&);

Bytes ok_reply(ByteView body) {
    Bytes out;
    out.reserve(body.size() + 1);
    out.push_back(0);
    out.insert(out.end(), body.begin(), body.end());
    return out;
}

Bytes error_reply(Errc code, std::string_view message) {
    ByteWriter w;
    w.u8(static_cast<std::uint8_t>(1 + static_cast<int>(code)));
    w.str16(message.substr(0, 1024));
    return std::move(w).take();
}

Result<Bytes> parse_reply(ByteView payload) {
    if (payload.empty()) return fail(Errc::protocol, "empty reply");
    if (payload[0] == 0) return Bytes(payload.begin() + 1, payload.end());
    const int code = payload[0] - 1;
    if (code > static_cast<int>(Errc::dropped)) return fail(Errc::protocol, "unknown reply status");
    try {
        ByteReader r(payload.subspan(1));
        return fail(static_cast<Errc>(code), r.str16());
    } catch (const ParseError&) {
        return fail(Errc::protocol, "malformed error reply");
    }
}

}  // namespace swarm::net
