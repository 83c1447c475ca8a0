#include "swarm/net/socket.hpp"

#include <deque>

namespace swarm::net {

namespace asio = boost::asio;
using asio::ip::tcp;

AsioExecutor::AsioExecutor() : start_(std::chrono::steady_clock::now()) {}

AsioExecutor::~AsioExecutor() = default;

double AsioExecutor::now_ms() const {
    return std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - start_).count();
}

double AsioExecutor::epoch_ms() const {
    return std::chrono::duration<double, std::milli>(std::chrono::system_clock::now().time_since_epoch()).count();
}

TimerId AsioExecutor::schedule(double delay_ms, std::function<void()> fn) {
    const TimerId id = next_timer_++;
    auto timer = std::make_unique<asio::steady_timer>(io_);
    timer->expires_after(std::chrono::microseconds(static_cast<std::int64_t>(std::max(0.0, delay_ms) * 1000.0)));
    timer->async_wait([this, id, fn = std::move(fn)](const boost::system::error_code& ec) {
        if (ec) return;
        if (timers_.erase(id) == 0) return;
        fn();
    });
    timers_.emplace(id, std::move(timer));
    return id;
}

void AsioExecutor::cancel(TimerId id) {
    auto it = timers_.find(id);
    if (it == timers_.end()) return;
    it->second->cancel();
    // The handler still runs with operation_aborted; keep the timer alive until then.
    auto timer = std::shared_ptr<asio::steady_timer>(std::move(it->second));
    timers_.erase(it);
    asio::post(io_, [timer] {});
}

void AsioExecutor::post(std::function<void()> fn) { asio::post(io_, std::move(fn)); }

bool AsioExecutor::run_until(const std::function<bool()>& done, double timeout_ms) {
    const auto deadline = std::chrono::steady_clock::now() +
                          std::chrono::microseconds(static_cast<std::int64_t>(std::min(timeout_ms, 1e15) * 1000.0));
    while (!done()) {
        const auto now = std::chrono::steady_clock::now();
        if (now >= deadline) return false;
        if (io_.stopped()) io_.restart();
        io_.run_one_for(std::min<std::chrono::steady_clock::duration>(deadline - now, std::chrono::milliseconds(50)));
    }
    return true;
}

HostPort parse_tcp_address(const std::string& address, bool listen) {
    constexpr std::string_view scheme = "tcp://";
    if (address.rfind(scheme, 0) != 0) throw ConfigError("not a tcp address: " + address);
    const auto rest = address.substr(scheme.size());
    const auto colon = rest.rfind(':');
    if (colon == std::string::npos || colon == 0) throw ConfigError("missing port in " + address);
    int port = 0;
    try {
        port = std::stoi(rest.substr(colon + 1));
    } catch (const std::exception&) {
        throw ConfigError("bad port in " + address);
    }
    if (port < (listen ? 0 : 1) || port > 65535) throw ConfigError("bad port in " + address);
    return {rest.substr(0, colon), static_cast<std::uint16_t>(port)};
}

class SocketTransport::Connection : public std::enable_shared_from_this<Connection> {
public:
    Connection(SocketTransport& owner, tcp::socket socket) : owner_(owner), alive_(owner.alive_), socket_(std::move(socket)) {}

    void start_read() { read_header(); }

    void connect(const HostPort& hp) {
        connecting_ = true;
        auto self = shared_from_this();
        auto resolver = std::make_shared<tcp::resolver>(socket_.get_executor());
        resolver->async_resolve(hp.host, std::to_string(hp.port),
                                [self, resolver](const boost::system::error_code& ec, tcp::resolver::results_type r) {
                                    if (ec) return self->close();
                                    asio::async_connect(self->socket_, r,
                                                        [self](const boost::system::error_code& ec2, const tcp::endpoint&) {
                                                            if (ec2) return self->close();
                                                            self->connecting_ = false;
                                                            self->socket_.set_option(tcp::no_delay(true));
                                                            self->read_header();
                                                            self->flush();
                                                        });
                                });
    }

    void send(Bytes frame) {
        if (closed_) return;
        queue_.push_back(std::move(frame));
        if (!connecting_) flush();
    }

    void close() {
        if (closed_) return;
        closed_ = true;
        boost::system::error_code ignored;
        socket_.close(ignored);
        queue_.clear();
        if (*alive_) owner_.on_closed(this);
    }

private:
    void flush() {
        if (writing_ || queue_.empty() || closed_) return;
        writing_ = true;
        auto self = shared_from_this();
        asio::async_write(socket_, asio::buffer(queue_.front()), [self](const boost::system::error_code& ec, std::size_t) {
            self->writing_ = false;
            if (ec) return self->close();
            self->queue_.pop_front();
            self->flush();
        });
    }

    void read_header() {
        buf_.resize(kHeaderSize);
        auto self = shared_from_this();
        asio::async_read(socket_, asio::buffer(buf_), [self](const boost::system::error_code& ec, std::size_t) {
            if (ec) return self->close();
            std::size_t total = 0;
            try {
                total = *frame_length(self->buf_);
            } catch (const Error&) {
                return self->close();  // unframeable stream
            }
            if (total == kHeaderSize) return self->deliver();
            self->buf_.resize(total);
            asio::async_read(self->socket_, asio::buffer(self->buf_.data() + kHeaderSize, total - kHeaderSize),
                             [self](const boost::system::error_code& ec2, std::size_t) {
                                 if (ec2) return self->close();
                                 self->deliver();
                             });
        });
    }

    void deliver() {
        if (!*alive_) return;
        Bytes frame = std::move(buf_);
        owner_.on_frame(shared_from_this(), std::move(frame));
        if (!closed_) read_header();
    }

    SocketTransport& owner_;
    std::shared_ptr<bool> alive_;
    tcp::socket socket_;
    std::deque<Bytes> queue_;
    Bytes buf_;
    bool writing_ = false;
    bool connecting_ = false;
    bool closed_ = false;
};

SocketTransport::SocketTransport(AsioExecutor& ex, const std::string& host, std::uint16_t port)
    : RpcEndpoint(ex), ex_(ex), acceptor_(ex.io()), alive_(std::make_shared<bool>(true)) {
    tcp::resolver resolver(ex.io());
    auto endpoints = resolver.resolve(host, std::to_string(port));
    const tcp::endpoint ep = *endpoints.begin();
    acceptor_.open(ep.protocol());
    acceptor_.set_option(tcp::acceptor::reuse_address(true));
    acceptor_.bind(ep);
    acceptor_.listen();
    address_ = "tcp://" + host + ":" + std::to_string(acceptor_.local_endpoint().port());
    accept();
}

SocketTransport::~SocketTransport() {
    *alive_ = false;
    boost::system::error_code ignored;
    acceptor_.close(ignored);
    auto out = std::move(outgoing_);
    auto in = std::move(incoming_);
    for (auto& [k, c] : out) c->close();
    for (auto& [k, c] : in) c->close();
}

void SocketTransport::accept() {
    auto alive = alive_;
    acceptor_.async_accept([this, alive](const boost::system::error_code& ec, tcp::socket socket) {
        if (!*alive || ec == asio::error::operation_aborted) return;
        if (!ec) {
            socket.set_option(tcp::no_delay(true));
            auto conn = std::make_shared<Connection>(*this, std::move(socket));
            incoming_[conn.get()] = conn;
            conn->start_read();
        }
        accept();
    });
}

void SocketTransport::send_frame(const std::string& dst, Bytes frame) {
    auto it = outgoing_.find(dst);
    if (it == outgoing_.end()) {
        HostPort hp;
        try {
            hp = parse_tcp_address(dst);
        } catch (const ConfigError&) {
            return;  // unroutable; the call times out
        }
        auto conn = std::make_shared<Connection>(*this, tcp::socket(ex_.io()));
        it = outgoing_.emplace(dst, conn).first;
        conn->connect(hp);
    }
    it->second->send(std::move(frame));
}

void SocketTransport::on_frame(const std::shared_ptr<Connection>& conn, Bytes frame) {
    std::weak_ptr<Connection> weak = conn;
    deliver(frame, [weak](Bytes reply) {
        if (auto c = weak.lock()) c->send(std::move(reply));
    });
}

void SocketTransport::on_closed(const Connection* conn) {
    incoming_.erase(conn);
    for (auto it = outgoing_.begin(); it != outgoing_.end(); ++it) {
        if (it->second.get() == conn) {
            outgoing_.erase(it);
            break;
        }
    }
}

}  // namespace swarm::net
