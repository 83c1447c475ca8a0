#include "swarm/net/transport.hpp"

#include <memory>

namespace swarm::net {

void RpcEndpoint::call(const std::string& dst, MsgType type, Bytes payload, double timeout_ms, ReplyCallback cb) {
    const std::uint64_t id = next_id_++;
    const TimerId timer = executor_.schedule(timeout_ms, [this, id] {
        auto it = pending_.find(id);
        if (it == pending_.end()) return;
        auto callback = std::move(it->second.cb);
        pending_.erase(it);
        ++stats_.timeouts;
        callback(fail(Errc::timeout, "request timed out"));
    });
    pending_.emplace(id, Pending{std::move(cb), timer});
    Envelope env{static_cast<std::uint8_t>(type), id, std::move(payload)};
    Bytes frame = encode(env);
    ++stats_.requests_sent;
    stats_.bytes_sent += frame.size();
    send_frame(dst, std::move(frame));
}

void RpcEndpoint::abandon_pending() {
    auto pending = std::move(pending_);
    pending_.clear();
    for (auto& [id, p] : pending) {
        executor_.cancel(p.timer);
        p.cb(fail(Errc::unreachable, "local node went down"));
    }
}

void RpcEndpoint::deliver(ByteView frame, const std::function<void(Bytes)>& reply_path) {
    Envelope env;
    try {
        env = decode(frame);
    } catch (const Error&) {
        ++stats_.malformed;
        return;
    }

    if (env.is_reply()) {
        auto it = pending_.find(env.request_id);
        if (it == pending_.end()) return;  // late reply after timeout
        auto cb = std::move(it->second.cb);
        executor_.cancel(it->second.timer);
        pending_.erase(it);
        cb(parse_reply(env.payload));
        return;
    }

    const auto type = env.base_type();
    const auto request_id = env.request_id;
    auto answered = std::make_shared<bool>(false);
    Responder respond = [this, type, request_id, reply_path, answered](Result<Bytes> result) {
        if (*answered) return;
        *answered = true;
        Envelope reply;
        reply.type = static_cast<std::uint8_t>(static_cast<std::uint8_t>(type) | kReplyBit);
        reply.request_id = request_id;
        reply.payload = result.ok() ? ok_reply(result.value())
                                    : error_reply(result.code(), result.failure().message);
        Bytes out = encode(reply);
        stats_.bytes_sent += out.size();
        reply_path(std::move(out));
    };

    auto h = handlers_.find(type);
    if (h == handlers_.end()) {
        respond(fail(Errc::protocol, std::string("no handler for ") + to_string(type)));
        return;
    }
    ++stats_.requests_served;
    try {
        h->second(std::move(env.payload), respond);
    } catch (const ParseError& e) {
        ++stats_.malformed;
        respond(fail(Errc::protocol, e.what()));
    } catch (const ProtocolError& e) {
        ++stats_.malformed;
        respond(fail(Errc::protocol, e.what()));
    }
}

}  // namespace swarm::net
