#pragma once

#include <memory>
#include <vector>

#include "swarm/dht/node.hpp"
#include "swarm/net/sim.hpp"

namespace harness {

using namespace swarm;

/// N simulated DHT nodes, each joined through node 0.
struct SimDht {
    net::SimNetwork net;
    std::vector<std::unique_ptr<net::SimTransport>> endpoints;
    std::vector<std::unique_ptr<dht::DhtNode>> nodes;
    Rng rng;

    SimDht(std::size_t n, std::uint64_t seed, net::LatencyModel latency = {10.0, 0.0, std::nullopt},
           dht::DhtConfig cfg = {.rpc_timeout_ms = 200.0})
        : net(seed, latency), rng(seed ^ 0xA5A5) {
        for (std::size_t i = 0; i < n; ++i) {
            endpoints.push_back(net.endpoint("dht" + std::to_string(i)));
            nodes.push_back(std::make_unique<dht::DhtNode>(*endpoints.back(), dht::NodeId::random(rng), cfg));
            if (i > 0) {
                auto r = net::await_result<std::size_t>(
                    net, [&](auto cb) { nodes.back()->join({endpoints[0]->address()}, cb); });
                if (!r.ok()) throw std::runtime_error("join failed");
            }
        }
    }

    void start_maintenance() {
        for (auto& n : nodes) n->start_maintenance();
    }

    Result<std::size_t> store(std::size_t from, const std::string& key, const std::string& value,
                              std::optional<std::uint64_t> ttl = std::nullopt) {
        return net::await_result<std::size_t>(
            net, [&](auto cb) { nodes[from]->store(key, to_bytes(value), ttl, cb); });
    }

    Result<std::optional<dht::Record>> get(std::size_t from, const std::string& key) {
        return net::await_result<std::optional<dht::Record>>(net, [&](auto cb) { nodes[from]->get(key, cb); });
    }

    Result<dht::LookupResult> lookup(std::size_t from, const dht::NodeId& key, dht::LookupMode mode) {
        return net::await_result<dht::LookupResult>(net, [&](auto cb) { nodes[from]->lookup(key, mode, cb); });
    }

    void fail(std::size_t i) { net.set_failed(endpoints[i]->address(), true); }
};

}  // namespace harness
