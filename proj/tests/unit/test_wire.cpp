#include <gtest/gtest.h>

#include "swarm/net/wire.hpp"
#include "swarm/util/rng.hpp"

using namespace swarm;
using namespace swarm::net;

namespace {

Envelope random_envelope(Rng& rng) {
    static const std::uint8_t types[] = {1, 2, 3, 4, 16, 17};
    Envelope env;
    env.type = types[rng.below(6)];
    if (rng.bernoulli(0.5)) env.type |= kReplyBit;
    env.request_id = rng.next_u64();
    env.payload.resize(rng.below(300));
    for (auto& b : env.payload) b = static_cast<std::uint8_t>(rng.below(256));
    return env;
}

}  // namespace

TEST(Envelope, HeaderLayout) {
    Envelope env{static_cast<std::uint8_t>(MsgType::find_node), 0x0102030405060708ULL, {0xAA, 0xBB}};
    auto frame = encode(env);
    ASSERT_EQ(frame.size(), kHeaderSize + 2);
    const Bytes expect = {'L', 'A', 'H', '1', 1, 3, 8, 7, 6, 5, 4, 3, 2, 1, 2, 0, 0, 0, 0xAA, 0xBB};
    EXPECT_EQ(frame, expect);
    EXPECT_EQ(frame_length(frame), frame.size());
    EXPECT_FALSE(frame_length(ByteView(frame).first(kHeaderSize - 1)).has_value());
}

TEST(Envelope, RoundTripProperty) {
    Rng rng(17);
    for (int i = 0; i < 1000; ++i) {
        auto env = random_envelope(rng);
        ASSERT_EQ(decode(encode(env)), env);
    }
}

TEST(Envelope, RejectsBadMagic) {
    auto frame = encode({1, 1, {}});
    frame[0] = 'X';
    EXPECT_THROW(decode(frame), ProtocolError);
}

TEST(Envelope, RejectsBadVersion) {
    auto frame = encode({1, 1, {}});
    frame[4] = 2;
    EXPECT_THROW(decode(frame), ProtocolError);
}

TEST(Envelope, RejectsUnknownType) {
    auto frame = encode({1, 1, {}});
    frame[5] = 9;
    EXPECT_THROW(decode(frame), ProtocolError);
    frame[5] = 9 | kReplyBit;
    EXPECT_THROW(decode(frame), ProtocolError);
}

TEST(Envelope, RejectsLengthMismatch) {
    auto frame = encode({1, 1, {1, 2, 3}});
    auto shorter = frame;
    shorter.pop_back();
    EXPECT_THROW(decode(shorter), ProtocolError);
    auto longer = frame;
    longer.push_back(0);
    EXPECT_THROW(decode(longer), ProtocolError);
    EXPECT_THROW(decode(ByteView(frame).first(10)), ProtocolError);
}

TEST(Envelope, RejectsOversizedPayloadHeader) {
    auto frame = encode({1, 1, {}});
    frame[14] = 0xFF, frame[15] = 0xFF, frame[16] = 0xFF, frame[17] = 0x7F;
    EXPECT_THROW(frame_length(frame), ProtocolError);
}

TEST(TensorCodec, RoundTripF32AndF64) {
    Rng rng(3);
    for (int i = 0; i < 200; ++i) {
        nn::Shape shape;
        const auto rank = 1 + rng.below(3);
        for (std::size_t k = 0; k < rank; ++k) shape.push_back(1 + rng.below(5));
        nn::Tensor64 t(shape);
        for (auto& v : t.data()) v = rng.normal();
        ByteWriter w;
        write_tensor(w, t);
        write_tensor(w, t.cast<float>());
        auto bytes = std::move(w).take();
        ByteReader r(bytes);
        ASSERT_EQ(read_tensor<double>(r), t);
        ASSERT_EQ(read_tensor<float>(r), t.cast<float>());
        EXPECT_TRUE(r.done());
    }
}

TEST(TensorCodec, PrecisionMismatchIsProtocolError) {
    ByteWriter w;
    write_tensor(w, nn::Tensor({2}, 1.0f));
    auto bytes = std::move(w).take();
    ByteReader r(bytes);
    EXPECT_THROW(read_tensor<double>(r), ProtocolError);
}

TEST(TensorCodec, TruncatedIsParseError) {
    ByteWriter w;
    write_tensor(w, nn::Tensor({3, 2}, 1.0f));
    auto bytes = std::move(w).take();
    bytes.pop_back();
    ByteReader r(bytes);
    EXPECT_THROW(read_tensor<float>(r), ParseError);
}

TEST(ReplyStatus, OkAndErrorRoundTrip) {
    const Bytes body{1, 2, 3};
    auto ok = parse_reply(ok_reply(body));
    ASSERT_TRUE(ok.ok());
    EXPECT_EQ(ok.value(), body);
    auto err = parse_reply(error_reply(Errc::unknown_expert, "expert.1.2"));
    ASSERT_FALSE(err.ok());
    EXPECT_EQ(err.code(), Errc::unknown_expert);
    EXPECT_EQ(err.failure().message, "expert.1.2");
}

TEST(ByteReader, ReportsOffsetOnOverrun) {
    Bytes b{1, 2, 3};
    ByteReader r(b);
    r.u16();
    try {
        r.u32();
        FAIL();
    } catch (const ParseError& e) {
        EXPECT_EQ(e.offset(), 2u);
    }
}
