#include <gtest/gtest.h>

#include "support/dht_harness.hpp"
#include "support/moe_harness.hpp"
#include "swarm/runtime/checkpoint.hpp"

using namespace swarm;
using namespace swarm::runtime;
using Tensor = nn::BasicTensor<double>;

namespace {

const nn::FfnDims kDims{3, 6, 2};

Tensor random_tensor(Rng& rng, std::size_t r, std::size_t c) {
    Tensor t({r, c});
    for (auto& v : t.data()) v = rng.uniform(-1, 1);
    return t;
}

struct Bench {
    net::SimNetwork net{1, {1.0, 0.0, std::nullopt}};
    gating::GridConfig grid{2, 4, "expert"};
    std::unique_ptr<net::SimTransport> server = net.endpoint("runtime");
    std::unique_ptr<net::SimTransport> client = net.endpoint("client");
    std::unique_ptr<Runtime<double>> rt;

    explicit Bench(RuntimeConfig cfg = {}, std::vector<std::vector<int>> uids = {{0, 0}, {1, 2}}) {
        cfg.grid = grid;
        std::vector<HostedExpert<double>> hosted;
        std::uint64_t seed = 1;
        for (auto& u : uids) hosted.push_back({gating::ExpertUid{u}, nn::FfnExpertState<double>::init(kDims, seed++)});
        rt = std::make_unique<Runtime<double>>(*server, nullptr, cfg, hosted);
        rt->start();
    }

    void send_forward(const std::string& uid, const Tensor& x, std::function<void(Result<Bytes>)> cb) {
        client->call(server->address(), net::MsgType::forward, moe::encode(moe::ForwardRequest<double>{uid, x}), 1e6,
                     std::move(cb));
    }
    void send_backward(const std::string& uid, const Tensor& x, const Tensor& dy, std::uint64_t v,
                       std::function<void(Result<Bytes>)> cb) {
        client->call(server->address(), net::MsgType::backward,
                     moe::encode(moe::BackwardRequest<double>{uid, x, dy, v}), 1e6, std::move(cb));
    }
    Result<moe::ForwardReply<double>> forward(const std::string& uid, const Tensor& x) {
        auto r = net::await_result<Bytes>(net, [&](auto cb) { send_forward(uid, x, cb); });
        if (!r) return r.failure();
        return moe::decode<moe::ForwardReply<double>>(r.value());
    }
    Result<moe::BackwardReply<double>> backward(const std::string& uid, const Tensor& x, const Tensor& dy,
                                                std::uint64_t v) {
        auto r = net::await_result<Bytes>(net, [&](auto cb) { send_backward(uid, x, dy, v, cb); });
        if (!r) return r.failure();
        return moe::decode<moe::BackwardReply<double>>(r.value());
    }
};

}  // namespace

TEST(Runtime, ForwardMatchesLocalEvaluationAndKeepsVersion) {
    Bench b;
    Rng rng(1);
    auto x = random_tensor(rng, 4, 3);
    const auto before = b.rt->state("expert.1.2");
    auto r = b.forward("expert.1.2", x);
    ASSERT_TRUE(r.ok());
    EXPECT_EQ(r.value().y, nn::ffn_infer(before, x));
    EXPECT_EQ(r.value().version, 0u);
    EXPECT_EQ(b.rt->state("expert.1.2"), before);
    EXPECT_EQ(nn::ActivationMeter::live(), 0);
}

TEST(Runtime, BatchingIsTransparent) {
    RuntimeConfig cfg;
    cfg.batch_window_ms = 5.0;
    Bench b(cfg);
    Rng rng(2);
    auto x = random_tensor(rng, 2, 3);
    std::vector<Tensor> got(2);
    int done = 0;
    for (std::size_t i = 0; i < 2; ++i) {
        b.send_forward("expert.0.0", nn::slice_rows(x, i, i + 1), [&, i](Result<Bytes> r) {
            got[i] = moe::decode<moe::ForwardReply<double>>(r.value()).y;
            ++done;
        });
    }
    ASSERT_TRUE(b.net.run_until([&] { return done == 2; }, 1e6));
    EXPECT_EQ(b.rt->counters("expert.0.0").forward_batches, 1u);
    auto whole = b.forward("expert.0.0", x);
    Tensor parts[2] = {got[0], got[1]};
    EXPECT_EQ(nn::concat_rows<double>(parts), whole.value().y);
}

TEST(Runtime, UnknownExpertLeavesEndpointHealthy) {
    Bench b;
    Rng rng(3);
    auto bad = b.forward("expert.3.3", random_tensor(rng, 1, 3));
    EXPECT_EQ(bad.code(), Errc::unknown_expert);
    EXPECT_TRUE(b.forward("expert.0.0", random_tensor(rng, 1, 3)).ok());
    EXPECT_EQ(b.rt->stats().unknown_expert, 1u);
}

TEST(Runtime, ShapeErrorDoesNotAffectBatchMates) {
    RuntimeConfig cfg;
    cfg.batch_window_ms = 5.0;
    Bench b(cfg);
    Rng rng(4);
    std::optional<Result<Bytes>> good, bad;
    b.send_forward("expert.0.0", random_tensor(rng, 1, 3), [&](Result<Bytes> r) { good.emplace(std::move(r)); });
    b.send_forward("expert.0.0", random_tensor(rng, 1, 5), [&](Result<Bytes> r) { bad.emplace(std::move(r)); });
    ASSERT_TRUE(b.net.run_until([&] { return good && bad; }, 1e6));
    EXPECT_TRUE(good->ok());
    EXPECT_EQ(bad->code(), Errc::dimension);
}

TEST(Runtime, BackwardRecomputesAndAppliesOneSummedStep) {
    RuntimeConfig cfg;
    cfg.batch_window_ms = 5.0;
    cfg.sgd.learning_rate = 0.1;
    Bench b(cfg);
    Rng rng(5);
    auto x = random_tensor(rng, 3, 3);
    auto dy = random_tensor(rng, 3, 2);
    auto local = b.rt->state("expert.0.0");
    const auto want = nn::ffn_backward(local, x, dy);
    nn::sgd_step(local, want.grads, cfg.sgd);

    std::vector<Tensor> dx(2);
    int done = 0;
    b.send_backward("expert.0.0", nn::slice_rows(x, 0, 1), nn::slice_rows(dy, 0, 1), 0, [&](Result<Bytes> r) {
        dx[0] = moe::decode<moe::BackwardReply<double>>(r.value()).dx;
        ++done;
    });
    b.send_backward("expert.0.0", nn::slice_rows(x, 1, 3), nn::slice_rows(dy, 1, 3), 0, [&](Result<Bytes> r) {
        dx[1] = moe::decode<moe::BackwardReply<double>>(r.value()).dx;
        ++done;
    });
    ASSERT_TRUE(b.net.run_until([&] { return done == 2; }, 1e6));
    const auto& c = b.rt->counters("expert.0.0");
    EXPECT_EQ(c.backward_batches, 1u);
    EXPECT_EQ(c.updates, 1u);
    EXPECT_EQ(nn::concat_rows<double>(dx), want.dx);
    EXPECT_EQ(b.rt->state("expert.0.0"), local);
    EXPECT_EQ(nn::ActivationMeter::live(), 0);
}

TEST(Runtime, ZeroCotangentOnlyBumpsVersion) {
    Bench b;
    Rng rng(6);
    const auto before = b.rt->state("expert.1.2");
    auto r = b.backward("expert.1.2", random_tensor(rng, 2, 3), Tensor({2, 2}), 0);
    ASSERT_TRUE(r.ok());
    EXPECT_EQ(r.value().dx, Tensor({2, 3}));
    const auto& after = b.rt->state("expert.1.2");
    EXPECT_EQ(after.params, before.params);
    EXPECT_EQ(after.version, 1u);
}

TEST(Runtime, StaleBackwardIsAppliedAndRecorded) {
    Bench b;
    Rng rng(7);
    auto x = random_tensor(rng, 1, 3);
    auto f = b.forward("expert.0.0", x);
    ASSERT_EQ(f.value().version, 0u);
    for (int i = 0; i < 3; ++i) ASSERT_TRUE(b.backward("expert.0.0", x, random_tensor(rng, 1, 2), 0 + i).ok());
    auto r = b.backward("expert.0.0", x, random_tensor(rng, 1, 2), f.value().version);
    ASSERT_TRUE(r.ok());
    EXPECT_EQ(r.value().staleness, 3u);
    const auto& c = b.rt->counters("expert.0.0");
    EXPECT_EQ(c.updates, 4u);
    EXPECT_EQ(c.staleness.at(3), 1u);
    EXPECT_EQ(c.version_trace, (std::vector<std::uint64_t>{1, 2, 3, 4}));
}

TEST(Runtime, NonFiniteGradientSkipsUpdateButReturnsDx) {
    Bench b;
    Rng rng(8);
    Tensor dy({2, 2}, {1e308, -1e308, 1e308, 1e308});
    const auto before = b.rt->state("expert.0.0");
    auto r = b.backward("expert.0.0", random_tensor(rng, 2, 3), dy, 0);
    ASSERT_TRUE(r.ok());
    EXPECT_EQ(r.value().dx.shape(), (nn::Shape{2, 3}));
    const auto& c = b.rt->counters("expert.0.0");
    EXPECT_EQ(c.skipped_updates, 1u);
    EXPECT_EQ(c.updates, 0u);
    EXPECT_EQ(b.rt->state("expert.0.0"), before);
}

TEST(Runtime, TwoEvaluationsPerForwardBackwardPair) {
    Bench b;
    Rng rng(9);
    for (int step = 0; step < 5; ++step) {
        auto x = random_tensor(rng, 2, 3);
        auto f = b.forward("expert.0.0", x);
        ASSERT_TRUE(b.backward("expert.0.0", x, random_tensor(rng, 2, 2), f.value().version).ok());
    }
    const auto& c = b.rt->counters("expert.0.0");
    EXPECT_EQ(c.evaluations, 10u);
    EXPECT_EQ(c.flops, 5 * (2 * nn::ffn_forward_flops(kDims, 2) + nn::ffn_backward_flops(kDims, 2)));
}

TEST(BatchCollect, SingleRequestWithZeroWindowGoesImmediately) {
    Bench b;
    Rng rng(10);
    net::SimNetwork& net = b.net;
    net.set_latency({0.0, 0.0, std::nullopt});
    ASSERT_TRUE(b.forward("expert.0.0", random_tensor(rng, 1, 3)).ok());
    EXPECT_EQ(net.now_ms(), 0.0);
}

TEST(BatchCollect, FullBatchDoesNotWaitForWindow) {
    RuntimeConfig cfg;
    cfg.max_batch = 3;
    cfg.batch_window_ms = 10'000.0;
    Bench b(cfg);
    b.net.set_latency({0.0, 0.0, std::nullopt});
    Rng rng(11);
    int done = 0;
    for (int i = 0; i < 3; ++i) b.send_forward("expert.0.0", random_tensor(rng, 1, 3), [&](auto) { ++done; });
    ASSERT_TRUE(b.net.run_until([&] { return done == 3; }, 1e6));
    EXPECT_EQ(b.net.now_ms(), 0.0);
    EXPECT_EQ(b.rt->counters("expert.0.0").forward_batches, 1u);

    // a partial batch waits out the window
    b.send_forward("expert.0.0", random_tensor(rng, 1, 3), [&](auto) { ++done; });
    ASSERT_TRUE(b.net.run_until([&] { return done == 4; }, 1e6));
    EXPECT_EQ(b.net.now_ms(), 10'000.0);
}

TEST(BatchCollect, SplitsByExpertAndCapsBatchSize) {
    RuntimeConfig cfg;
    cfg.max_batch = 2;
    cfg.batch_window_ms = 5.0;
    Bench b(cfg);
    Rng rng(12);
    int done = 0;
    for (int i = 0; i < 5; ++i) b.send_forward("expert.0.0", random_tensor(rng, 1, 3), [&](auto) { ++done; });
    b.send_forward("expert.1.2", random_tensor(rng, 1, 3), [&](auto) { ++done; });
    ASSERT_TRUE(b.net.run_until([&] { return done == 6; }, 1e6));
    EXPECT_EQ(b.rt->counters("expert.0.0").forward_batches, 3u);
    EXPECT_EQ(b.rt->counters("expert.1.2").forward_batches, 1u);
}

TEST(Runtime, DeviceTimeSerializesBatches) {
    RuntimeConfig cfg;
    cfg.device_gflops = 1e-3;  // 1 flop per microsecond
    Bench b(cfg);
    b.net.set_latency({0.0, 0.0, std::nullopt});
    Rng rng(13);
    int done = 0;
    for (const char* uid : {"expert.0.0", "expert.1.2"}) {
        b.send_forward(uid, random_tensor(rng, 1, 3), [&](auto) { ++done; });
    }
    ASSERT_TRUE(b.net.run_until([&] { return done == 2; }, 1e9));
    const double one = static_cast<double>(nn::ffn_forward_flops(kDims, 1)) / 1e3;
    EXPECT_DOUBLE_EQ(b.net.now_ms(), 2 * one);
    EXPECT_DOUBLE_EQ(b.rt->stats().busy_ms, 2 * one);
}

TEST(Runtime, RetainedActivationsDoNotGrowWithInFlightRequests) {
    auto peak_for = [](int in_flight) {
        RuntimeConfig cfg;
        cfg.max_batch = 1;
        Bench b(cfg);
        Rng rng(14);
        nn::ActivationMeter::reset_peak();
        const auto base = nn::ActivationMeter::peak();
        int done = 0;
        for (int i = 0; i < in_flight; ++i) {
            b.send_backward("expert.0.0", random_tensor(rng, 1, 3), random_tensor(rng, 1, 2), 0, [&](auto) { ++done; });
        }
        b.net.run_until([&] { return done == in_flight; }, 1e6);
        EXPECT_EQ(nn::ActivationMeter::live(), 0);
        return nn::ActivationMeter::peak() - base;
    };
    const auto p1 = peak_for(1);
    EXPECT_GT(p1, 0);
    EXPECT_EQ(peak_for(16), p1);
    EXPECT_EQ(peak_for(64), p1);
}

TEST(Runtime, ConfigValidation) {
    RuntimeConfig cfg;
    cfg.max_batch = 0;
    EXPECT_THROW(cfg.validate(), ConfigError);
    cfg = {};
    cfg.announce_interval_ms = cfg.freshness_ms;
    EXPECT_THROW(cfg.validate(), ConfigError);
    cfg = {};
    EXPECT_DOUBLE_EQ(cfg.announce_interval(), 10'000.0);
    net::SimNetwork net(1);
    auto ep = net.endpoint("r");
    std::vector<HostedExpert<double>> twice{{gating::ExpertUid{{0, 0}}, nn::FfnExpertState<double>::init(kDims, 1)},
                                            {gating::ExpertUid{{0, 0}}, nn::FfnExpertState<double>::init(kDims, 2)}};
    EXPECT_THROW(Runtime<double>(*ep, nullptr, cfg, twice), ConfigError);
}

// --- DHT-backed behaviour ---

namespace {

struct DhtBench {
    harness::SimDht dht{16, 3, {5.0, 0.0, std::nullopt}, {.rpc_timeout_ms = 100.0, .default_ttl_ms = 3'600'000}};
    gating::GridConfig grid{2, 8, "expert"};

    std::unique_ptr<net::SimTransport> ep_a = dht.net.endpoint("rt-a");
    std::unique_ptr<net::SimTransport> ep_b = dht.net.endpoint("rt-b");
    std::unique_ptr<dht::DhtNode> node_a, node_b;

    DhtBench() {
        node_a = join(*ep_a, 101);
        node_b = join(*ep_b, 102);
    }

    std::unique_ptr<dht::DhtNode> join(net::SimTransport& ep, std::uint64_t seed) {
        Rng rng(seed);
        auto n = std::make_unique<dht::DhtNode>(ep, dht::NodeId::random(rng), dht::DhtConfig{.rpc_timeout_ms = 100.0});
        auto r = net::await_result<std::size_t>(dht.net, [&](auto cb) { n->join({dht.endpoints[0]->address()}, cb); });
        EXPECT_TRUE(r.ok());
        return n;
    }

    RuntimeConfig config() {
        RuntimeConfig cfg;
        cfg.grid = grid;
        cfg.freshness_ms = 3000;
        return cfg;
    }
};

}  // namespace

TEST(Announce, PublishesEveryPrefix) {
    DhtBench b;
    Runtime<double> rt(*b.ep_a, b.node_a.get(), b.config(),
                       {{gating::ExpertUid{{3, 7}}, nn::FfnExpertState<double>::init(kDims, 1)}});
    rt.start();
    b.dht.net.advance(b.dht.net.now_ms() + 500);
    for (const char* key : {"expert.3", "expert.3.7"}) {
        auto r = b.dht.get(5, key);
        ASSERT_TRUE(r.ok() && r.value()) << key;
        EXPECT_EQ(gating::decode_liveness(r.value()->value).endpoint, b.ep_a->address());
    }
    EXPECT_EQ(rt.stats().announces, 2u);
}

TEST(Announce, DeadRuntimeDropsOutAfterFreshnessWindow) {
    DhtBench b;
    Runtime<double> rt(*b.ep_a, b.node_a.get(), b.config(),
                       {{gating::ExpertUid{{3, 7}}, nn::FfnExpertState<double>::init(kDims, 1)}});
    rt.start();
    auto alive = [&] {
        return net::await_result<std::vector<std::string>>(b.dht.net, [&](auto cb) {
                   gating::filter_alive(*b.dht.nodes[4], {"expert.3.7"}, 3000, cb);
               }).value();
    };
    b.dht.net.advance(b.dht.net.now_ms() + 5000);
    EXPECT_EQ(alive().size(), 1u);
    rt.crash();
    b.dht.net.set_failed(b.ep_a->address(), true);
    b.dht.net.advance(b.dht.net.now_ms() + 3000);
    EXPECT_TRUE(alive().empty());
}

TEST(Announce, NewestAnnouncementWins) {
    DhtBench b;
    auto cfg = b.config();
    Runtime<double> a(*b.ep_a, b.node_a.get(), cfg, {{gating::ExpertUid{{1, 1}}, nn::FfnExpertState<double>::init(kDims, 1)}});
    Runtime<double> c(*b.ep_b, b.node_b.get(), cfg, {{gating::ExpertUid{{1, 1}}, nn::FfnExpertState<double>::init(kDims, 2)}});
    a.start();
    b.dht.net.advance(b.dht.net.now_ms() + 200);
    c.start();
    b.dht.net.advance(b.dht.net.now_ms() + 200);
    a.stop();
    auto r = b.dht.get(9, "expert.1.1");
    ASSERT_TRUE(r.ok() && r.value());
    EXPECT_EQ(gating::decode_liveness(r.value()->value).endpoint, b.ep_b->address());
}

TEST(Checkpoint, SerializationRoundTripsBitExactly) {
    auto s = nn::FfnExpertState<float>::init({64, 256, 64}, 5);
    s.version = 77;
    EXPECT_EQ(deserialize_state<float>(serialize_state(s)), s);
    auto d = nn::FfnExpertState<double>::init(kDims, 6, false);
    EXPECT_EQ(deserialize_state<double>(serialize_state(d)), d);
    auto bytes = serialize_state(d);
    EXPECT_THROW(deserialize_state<float>(bytes), CheckpointCorrupt);
    bytes.pop_back();
    EXPECT_THROW(deserialize_state<double>(bytes), CheckpointCorrupt);
}

TEST(Checkpoint, ManifestLayoutIsBigEndian) {
    Manifest m;
    m.digests = {sha1(std::string_view("a")), sha1(std::string_view("b"))};
    m.total_bytes = 0x0102;
    auto b = encode_manifest(m);
    ASSERT_EQ(b.size(), 4u + 40u + 8u);
    EXPECT_EQ((std::vector<std::uint8_t>(b.begin(), b.begin() + 4)), (std::vector<std::uint8_t>{0, 0, 0, 2}));
    EXPECT_EQ(b[b.size() - 2], 0x01);
    EXPECT_EQ(b.back(), 0x02);
    auto back = decode_manifest(b);
    EXPECT_EQ(back.digests, m.digests);
    EXPECT_EQ(back.total_bytes, m.total_bytes);
    b.pop_back();
    EXPECT_THROW(decode_manifest(b), CheckpointCorrupt);
}

TEST(Checkpoint, DhtRoundTripAndMissingChunk) {
    DhtBench b;
    auto s = nn::FfnExpertState<float>::init({64, 256, 64}, 9);
    s.version = 12;
    auto saved = net::await_result<std::uint64_t>(
        b.dht.net, [&](auto cb) { save_checkpoint<float>(*b.node_a, "expert.2.2", s, std::nullopt, cb); });
    ASSERT_TRUE(saved.ok());
    EXPECT_EQ(saved.value(), 12u);
    auto load = [&] {
        return net::await_result<nn::FfnExpertState<float>>(
            b.dht.net, [&](auto cb) { load_checkpoint<float>(*b.node_b, "expert.2.2", cb); });
    };
    auto got = load();
    ASSERT_TRUE(got.ok());
    EXPECT_EQ(got.value(), s);
    EXPECT_GT(serialize_state(s).size(), 4 * kChunkBytes);

    const auto key = dht::NodeId::for_key(chunk_key("expert.2.2", 2));
    for (auto& n : b.dht.nodes) n->records().erase(key);
    b.node_a->records().erase(key);
    b.node_b->records().erase(key);
    EXPECT_EQ(load().code(), Errc::corrupt);

    auto none = net::await_result<nn::FfnExpertState<float>>(
        b.dht.net, [&](auto cb) { load_checkpoint<float>(*b.node_b, "expert.0.1", cb); });
    EXPECT_EQ(none.code(), Errc::corrupt);
}

TEST(Checkpoint, ReplacementRuntimeServesCheckpointedVersion) {
    DhtBench b;
    auto cfg = b.config();
    cfg.sgd.learning_rate = 0.05;
    const gating::ExpertUid uid{{4, 4}};
    Runtime<double> a(*b.ep_a, b.node_a.get(), cfg, {{uid, nn::FfnExpertState<double>::init(kDims, 1)}});
    a.start();
    auto client = b.dht.net.endpoint("client");
    Rng rng(15);
    auto step = [&](const std::string& dst) {
        auto x = random_tensor(rng, 2, 3);
        auto r = net::await_result<Bytes>(b.dht.net, [&](auto cb) {
            client->call(dst, net::MsgType::backward,
                         moe::encode(moe::BackwardRequest<double>{"expert.4.4", x, random_tensor(rng, 2, 2), 0}), 1e5, cb);
        });
        ASSERT_TRUE(r.ok());
    };
    for (int i = 0; i < 3; ++i) step(b.ep_a->address());
    ASSERT_TRUE(net::await_result<std::size_t>(b.dht.net, [&](auto cb) { a.checkpoint_now(cb); }).ok());
    const auto persisted = a.state("expert.4.4");
    step(b.ep_a->address());  // progress after the checkpoint is lost with the runtime
    a.crash();
    b.dht.net.set_failed(b.ep_a->address(), true);

    Runtime<double> c(*b.ep_b, b.node_b.get(), cfg, {});
    auto v = net::await_result<std::uint64_t>(b.dht.net, [&](auto cb) { c.restore(uid, cb); });
    ASSERT_TRUE(v.ok());
    EXPECT_EQ(v.value(), 3u);
    c.start();
    EXPECT_EQ(c.state("expert.4.4"), persisted);
    auto x = random_tensor(rng, 2, 3);
    auto r = net::await_result<Bytes>(b.dht.net, [&](auto cb) {
        client->call(b.ep_b->address(), net::MsgType::forward, moe::encode(moe::ForwardRequest<double>{"expert.4.4", x}),
                     1e5, cb);
    });
    ASSERT_TRUE(r.ok());
    auto reply = moe::decode<moe::ForwardReply<double>>(r.value());
    EXPECT_EQ(reply.y, nn::ffn_infer(persisted, x));
    EXPECT_EQ(reply.version, 3u);
}
