#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>

#include "swarm/experiments/experiments.hpp"

using namespace swarm;
using namespace swarm::experiments;

namespace {

Bytes idx_bytes(std::uint32_t magic, std::vector<std::uint32_t> dims, std::size_t data_len) {
    ByteWriter w(Endian::big);
    w.u32(magic);
    for (auto d : dims) w.u32(d);
    for (std::size_t i = 0; i < data_len; ++i) w.u8(static_cast<std::uint8_t>(i % 251));
    return std::move(w).take();
}

ExperimentConfig tiny_throughput() {
    ExperimentConfig c;
    c.d_model = 8;
    c.ffn_hidden = 16;
    c.batch_size = 4;
    c.synthetic_features = 8;
    c.synthetic_classes = 3;
    c.device_gflops = 0.001;
    c.delays_ms = {0, 100};
    c.repetitions = 2;
    c.throughput_batches = 12;
    c.throughput_trainers = 2;
    c.throughput_concurrency = 3;
    return c;
}

}  // namespace

TEST(Config, DefaultsRoundTrip) {
    ExperimentConfig c;
    const auto text = serialize_config(c);
    auto back = parse_config(text);
    EXPECT_TRUE(back == c);
    EXPECT_EQ(serialize_config(back), text);
}

TEST(Config, ParseSerializeParseIsParse) {
    const std::string text = R"(# comment line
schema = 1
seed = 42   # trailing comment
learning_rate = 0.1
delays_ms = 0, 25.5 ,200
models = ffn,dmoe-large
layer_norm = false
bootstrap = tcp://127.0.0.1:4000,tcp://127.0.0.1:4001
out =
)";
    auto a = parse_config(text);
    EXPECT_EQ(a.seed, 42u);
    EXPECT_DOUBLE_EQ(a.learning_rate, 0.1);
    EXPECT_EQ(a.delays_ms, (std::vector<double>{0, 25.5, 200}));
    EXPECT_EQ(a.models, (std::vector<std::string>{"ffn", "dmoe-large"}));
    EXPECT_FALSE(a.layer_norm);
    EXPECT_EQ(a.bootstrap.size(), 2u);
    auto b = parse_config(serialize_config(a));
    EXPECT_TRUE(a == b);
}

TEST(Config, DoublesSurviveExactly) {
    ExperimentConfig c;
    c.learning_rate = 0.1 + 0.2;
    c.synthetic_noise = 1.0 / 3.0;
    auto back = parse_config(serialize_config(c));
    EXPECT_EQ(back.learning_rate, c.learning_rate);
    EXPECT_EQ(back.synthetic_noise, c.synthetic_noise);
}

TEST(Config, UnknownKeyRejectedWithLine) {
    try {
        parse_config("schema = 1\nlearnin_rate = 0.1\n");
        FAIL();
    } catch (const ConfigError& e) {
        EXPECT_NE(std::string(e.what()).find("line 2"), std::string::npos);
        EXPECT_NE(std::string(e.what()).find("learnin_rate"), std::string::npos);
    }
}

TEST(Config, SchemaRequired) {
    EXPECT_THROW(parse_config("seed = 1\n"), ConfigError);
    EXPECT_THROW(parse_config("schema = 2\n"), ConfigError);
}

TEST(Config, MalformedValuesRejected) {
    EXPECT_THROW(parse_config("schema = 1\nseed = -3\n"), ConfigError);
    EXPECT_THROW(parse_config("schema = 1\nseed = 12abc\n"), ConfigError);
    EXPECT_THROW(parse_config("schema = 1\nlearning_rate = fast\n"), ConfigError);
    EXPECT_THROW(parse_config("schema = 1\nlayer_norm = maybe\n"), ConfigError);
    EXPECT_THROW(parse_config("schema = 1\njust words\n"), ConfigError);
    EXPECT_THROW(parse_config("schema = 1\nseed = 1\nseed = 2\n"), ConfigError);
}

TEST(Config, ValidationRuns) {
    EXPECT_THROW(parse_config("schema = 1\nk = 0\n"), ConfigError);
    EXPECT_THROW(parse_config("schema = 1\nmodels = ffn,transformer\n"), ConfigError);
    EXPECT_THROW(parse_config("schema = 1\ncall_failure_prob = 1\n"), ConfigError);
    EXPECT_THROW(parse_config("schema = 1\nrole = observer\n"), ConfigError);
}

TEST(Idx, ParsesImagesAndLabels) {
    auto img = parse_idx(idx_bytes(kIdxImagesMagic, {3, 2, 2}, 12));
    EXPECT_EQ(img.dims, (std::vector<std::uint32_t>{3, 2, 2}));
    EXPECT_EQ(img.data.size(), 12u);
    EXPECT_EQ(img.data[5], 5);
    auto lab = parse_idx(idx_bytes(kIdxLabelsMagic, {3}, 3));
    EXPECT_EQ(lab.dims, (std::vector<std::uint32_t>{3}));
}

TEST(Idx, TruncatedNamesOffset) {
    auto bytes = idx_bytes(kIdxImagesMagic, {3, 2, 2}, 12);
    bytes.resize(20);  // header is 16 bytes, 4 of 12 data bytes remain
    try {
        parse_idx(bytes);
        FAIL();
    } catch (const ParseError& e) {
        EXPECT_EQ(e.offset(), 20u);
        EXPECT_NE(std::string(e.what()).find("offset 20"), std::string::npos);
    }
    // truncated inside the header
    auto head = idx_bytes(kIdxImagesMagic, {3, 2, 2}, 0);
    head.resize(10);
    try {
        parse_idx(head);
        FAIL();
    } catch (const ParseError& e) {
        EXPECT_EQ(e.offset(), 8u);
    }
}

TEST(Idx, BadMagic) {
    try {
        parse_idx(idx_bytes(0x00000802, {1}, 1));
        FAIL();
    } catch (const ParseError& e) {
        EXPECT_EQ(e.offset(), 0u);
    }
}

TEST(Idx, LoadPairsFilesAndNormalizes) {
    const auto dir = std::filesystem::temp_directory_path() / "swarm_idx_test";
    std::filesystem::create_directories(dir);
    auto write = [&](const char* name, const Bytes& b) {
        std::ofstream f(dir / name, std::ios::binary);
        f.write(reinterpret_cast<const char*>(b.data()), static_cast<std::streamsize>(b.size()));
    };
    write("train-images-idx3-ubyte", idx_bytes(kIdxImagesMagic, {2, 2, 3}, 12));
    Bytes labels = idx_bytes(kIdxLabelsMagic, {2}, 0);
    labels.push_back(7);
    labels.push_back(1);
    write("train-labels-idx1-ubyte", labels);
    auto d = load_mnist(dir.string());
    EXPECT_EQ(d.n, 2u);
    EXPECT_EQ(d.features, 6u);
    EXPECT_EQ(d.classes, 8u);
    EXPECT_EQ(d.y, (std::vector<int>{7, 1}));
    EXPECT_FLOAT_EQ(d.x[11], 11.0f / 255.0f);

    write("train-labels-idx1-ubyte", idx_bytes(kIdxLabelsMagic, {3}, 3));
    EXPECT_THROW(load_mnist(dir.string()), ParseError);
    std::filesystem::remove_all(dir);
}

TEST(Idx, MissingDatasetTellsHowToFetch) {
    try {
        load_mnist("/nonexistent/dir");
        FAIL();
    } catch (const ConfigError& e) {
        EXPECT_NE(std::string(e.what()).find("DMOE_DATA_DIR"), std::string::npos);
    }
}

TEST(Dataset, SyntheticIsDeterministic) {
    auto a = synthetic_blobs(500, 8, 4, 1.0, 3);
    auto b = synthetic_blobs(500, 8, 4, 1.0, 3);
    auto c = synthetic_blobs(500, 8, 4, 1.0, 4);
    EXPECT_EQ(a.x, b.x);
    EXPECT_EQ(a.y, b.y);
    EXPECT_NE(a.x, c.x);
    for (int y : a.y) EXPECT_TRUE(y >= 0 && y < 4);
}

TEST(Dataset, BatchSourceIsAPermutationPerEpoch) {
    auto d = synthetic_blobs(40, 2, 2, 1.0, 5);
    // row identity from the first feature
    auto src = batch_source<double>(d, 8, 9);
    std::multiset<float> seen;
    for (std::uint64_t s = 0; s < 5; ++s) {
        auto b = src(s);
        EXPECT_EQ(b.index, s);
        for (std::size_t r = 0; r < 8; ++r) seen.insert(static_cast<float>(b.x(r, 0)));
    }
    std::multiset<float> all(d.x.begin(), d.x.end());
    std::multiset<float> firsts;
    for (std::size_t i = 0; i < d.n; ++i) firsts.insert(d.x[i * 2]);
    EXPECT_EQ(seen, firsts);
    // revisiting a step gives the same batch, in any order
    auto again = batch_source<double>(d, 8, 9);
    EXPECT_EQ(again(7).x, src(7).x);
    EXPECT_EQ(again(3).labels, src(3).labels);
    EXPECT_NE(src(5).x, src(0).x);
}

TEST(Experiments, ParityHiddenWidth) {
    // 2*64*H + H^2 at H=256 is 98304; a quarter is 24576. h=105 gives 24465, h=106 gives 24804.
    EXPECT_EQ(parity_hidden(64, 256, 4), 105u);
    EXPECT_EQ(parity_hidden(64, 256, 1), 256u);
    EXPECT_EQ(parity_hidden(32, 64, 4), 23u);  // target 2048; h=23 gives 2001, h=24 gives 2112
}

TEST(Experiments, ModelsAreComputeMatched) {
    ExperimentConfig c;
    const auto ffn = expert_flops_per_step(model_spec(c, "ffn"), c.batch_size);
    for (const char* m : {"dmoe-small", "dmoe-large"}) {
        const auto spec = model_spec(c, m);
        EXPECT_EQ(spec.k, 4u);
        EXPECT_EQ(spec.expert.d_hidden, 105u);
        const auto f = expert_flops_per_step(spec, c.batch_size);
        EXPECT_LT(std::abs(static_cast<double>(f) / static_cast<double>(ffn) - 1.0), 0.05) << m;
    }
    EXPECT_EQ(model_spec(c, "dmoe-small").experts_per_layer(), 16u);
    EXPECT_EQ(model_spec(c, "dmoe-large").experts_per_layer(), 64u);
    EXPECT_EQ(model_spec(c, "ffn").experts_per_layer(), 1u);
    EXPECT_THROW(model_spec(c, "moe"), ConfigError);
}

TEST(Experiments, WindowAccuracy) {
    std::vector<trainer::StepLog> log(4);
    for (std::size_t i = 0; i < 4; ++i) log[i].correct = i, log[i].examples = 4;
    EXPECT_DOUBLE_EQ(window_accuracy(log, 4, 2), 5.0 / 8.0);
    EXPECT_DOUBLE_EQ(window_accuracy(log, 2, 10), 1.0 / 8.0);
    EXPECT_DOUBLE_EQ(window_accuracy(log, 0, 3), 0.0);
}

TEST(Experiments, ThroughputNeedsDeviceSpeed) {
    auto c = tiny_throughput();
    c.device_gflops = 0;
    EXPECT_THROW(measure_throughput(c, "dmoe", 0, 1), ConfigError);
}

TEST(Experiments, ThroughputCsvIsReproducible) {
    auto c = tiny_throughput();
    std::ostringstream a, b;
    write_throughput_csv(a, run_throughput(c));
    write_throughput_csv(b, run_throughput(c));
    const std::string csv = a.str();
    EXPECT_EQ(csv, b.str());
    EXPECT_EQ(csv.substr(0, csv.find('\n')), "mean_delay_ms,scheme,batches_per_sec,stddev");
    // 2 delays x 2 schemes + header
    EXPECT_EQ(std::count(csv.begin(), csv.end(), '\n'), 5);
}

TEST(Experiments, MeasuredFlopsMatchAnalytic) {
    ExperimentConfig c;
    c.d_model = 8;
    c.ffn_hidden = 16;
    c.batch_size = 4;
    c.synthetic_samples = 200;
    c.synthetic_features = 8;
    c.synthetic_classes = 3;
    c.steps = 10;
    const auto data = load_dataset(c);
    for (const char* m : {"ffn", "dmoe-small"}) {
        const auto spec = model_spec(c, m);
        auto run = train_once(c, data, spec, {"low", 2, 10.0}, 3);
        ASSERT_EQ(run.log.size(), 10u);
        EXPECT_EQ(run.expert_flops, 10 * expert_flops_per_step(spec, c.batch_size)) << m;
    }
}
