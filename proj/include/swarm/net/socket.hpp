#pragma once

#include <chrono>
#include <map>
#include <memory>
#include <string>
#include <unordered_map>

#include <boost/asio.hpp>

#include "swarm/net/transport.hpp"

namespace swarm::net {

/// Wall-clock executor over a Boost.Asio io_context. The loop only runs inside
/// run_until, on the calling thread; post() may be called from any thread.
class AsioExecutor final : public Executor {
public:
    AsioExecutor();
    ~AsioExecutor() override;

    double now_ms() const override;
    double epoch_ms() const override;
    TimerId schedule(double delay_ms, std::function<void()> fn) override;
    void cancel(TimerId id) override;
    void post(std::function<void()> fn) override;
    bool simulated() const override { return false; }
    bool run_until(const std::function<bool()>& done, double timeout_ms) override;

    boost::asio::io_context& io() noexcept { return io_; }

private:
    boost::asio::io_context io_;
    std::chrono::steady_clock::time_point start_;
    std::unordered_map<TimerId, std::unique_ptr<boost::asio::steady_timer>> timers_;
    TimerId next_timer_ = 1;
};

struct HostPort {
    std::string host;
    std::uint16_t port = 0;
};

/// Parses "tcp://host:port". A listen address may use port 0 for any free port.
HostPort parse_tcp_address(const std::string& address, bool listen = false);

/// TCP transport. Frames are length-delimited by the envelope header; replies
/// return on the connection that carried the request.
class SocketTransport final : public RpcEndpoint {
public:
    /// Listens on host:port (port 0 picks a free port).
    SocketTransport(AsioExecutor& ex, const std::string& host, std::uint16_t port);
    ~SocketTransport() override;

    const std::string& address() const override { return address_; }

    class Connection;

private:
    void send_frame(const std::string& dst, Bytes frame) override;
    void accept();
    void on_frame(const std::shared_ptr<Connection>& conn, Bytes frame);
    void on_closed(const Connection* conn);

    AsioExecutor& ex_;
    boost::asio::ip::tcp::acceptor acceptor_;
    std::string address_;
    std::map<std::string, std::shared_ptr<Connection>> outgoing_;
    std::map<const Connection*, std::shared_ptr<Connection>> incoming_;
    std::shared_ptr<bool> alive_;
};

}  // namespace swarm::net
