#pragma once

#include <string>

#include "swarm/net/wire.hpp"

namespace swarm::moe {

// FORWARD  request: uid str16 | x tensor                      reply: y tensor | version u64
// BACKWARD request: uid str16 | x tensor | dy tensor | version u64   reply: dx tensor | staleness u64

template <typename T>
struct ForwardRequest {
    std::string uid;
    nn::BasicTensor<T> x;
};

template <typename T>
struct ForwardReply {
    nn::BasicTensor<T> y;
    std::uint64_t version = 0;
};

template <typename T>
struct BackwardRequest {
    std::string uid;
    nn::BasicTensor<T> x, dy;
    std::uint64_t forward_version = 0;
};

template <typename T>
struct BackwardReply {
    nn::BasicTensor<T> dx;
    std::uint64_t staleness = 0;
};

template <typename T>
Bytes encode(const ForwardRequest<T>& m) {
    ByteWriter w;
    w.str16(m.uid);
    net::write_tensor(w, m.x);
    return std::move(w).take();
}

template <typename T>
Bytes encode(const ForwardReply<T>& m) {
    ByteWriter w;
    net::write_tensor(w, m.y);
    w.u64(m.version);
    return std::move(w).take();
}

template <typename T>
Bytes encode(const BackwardRequest<T>& m) {
    ByteWriter w;
    w.str16(m.uid);
    net::write_tensor(w, m.x);
    net::write_tensor(w, m.dy);
    w.u64(m.forward_version);
    return std::move(w).take();
}

template <typename T>
Bytes encode(const BackwardReply<T>& m) {
    ByteWriter w;
    net::write_tensor(w, m.dx);
    w.u64(m.staleness);
    return std::move(w).take();
}

/// `Msg` is one of the four structs above, for float or double.
template <typename Msg>
Msg decode(ByteView b);

template <> ForwardRequest<float> decode(ByteView b);
template <> ForwardRequest<double> decode(ByteView b);
template <> ForwardReply<float> decode(ByteView b);
template <> ForwardReply<double> decode(ByteView b);
template <> BackwardRequest<float> decode(ByteView b);
template <> BackwardRequest<double> decode(ByteView b);
template <> BackwardReply<float> decode(ByteView b);
template <> BackwardReply<double> decode(ByteView b);

/// UID of a forward or backward request without decoding the tensors.
inline std::string peek_uid(ByteView b) {
    ByteReader r(b);
    return r.str16();
}

}  // namespace swarm::moe
