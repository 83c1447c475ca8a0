#include "swarm/moe/protocol.hpp"

namespace swarm::moe {

namespace {

template <typename T>
ForwardRequest<T> forward_request(ByteView b) {
    ByteReader r(b);
    ForwardRequest<T> m;
    m.uid = r.str16();
    m.x = net::read_tensor<T>(r);
    r.expect_done("forward request");
    return m;
}

template <typename T>
ForwardReply<T> forward_reply(ByteView b) {
    ByteReader r(b);
    ForwardReply<T> m;
    m.y = net::read_tensor<T>(r);
    m.version = r.u64();
    r.expect_done("forward reply");
    return m;
}

template <typename T>
BackwardRequest<T> backward_request(ByteView b) {
    ByteReader r(b);
    BackwardRequest<T> m;
    m.uid = r.str16();
    m.x = net::read_tensor<T>(r);
    m.dy = net::read_tensor<T>(r);
    m.forward_version = r.u64();
    r.expect_done("backward request");
    return m;
}

template <typename T>
BackwardReply<T> backward_reply(ByteView b) {
    ByteReader r(b);
    BackwardReply<T> m;
    m.dx = net::read_tensor<T>(r);
    m.staleness = r.u64();
    r.expect_done("backward reply");
    return m;
}

}  // namespace

template <> ForwardRequest<float> decode(ByteView b) { return forward_request<float>(b); }
template <> ForwardRequest<double> decode(ByteView b) { return forward_request<double>(b); }
template <> ForwardReply<float> decode(ByteView b) { return forward_reply<float>(b); }
template <> ForwardReply<double> decode(ByteView b) { return forward_reply<double>(b); }
template <> BackwardRequest<float> decode(ByteView b) { return backward_request<float>(b); }
template <> BackwardRequest<double> decode(ByteView b) { return backward_request<double>(b); }
template <> BackwardReply<float> decode(ByteView b) { return backward_reply<float>(b); }
template <> BackwardReply<double> decode(ByteView b) { return backward_reply<double>(b); }

}  // namespace swarm::moe
