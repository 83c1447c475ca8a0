#pragma once

#include <functional>
#include <map>
#include <memory>
#include <ostream>
#include <string>
#include <vector>

#include "swarm/moe/layer.hpp"
#include "swarm/nn/ffn.hpp"
#include "swarm/nn/layers.hpp"

namespace swarm::trainer {

template <typename T>
struct Batch {
    std::uint64_t index = 0;
    nn::BasicTensor<T> x;
    std::vector<int> labels;
};

/// Batch for a given step number. Must be deterministic for reproducible runs.
template <typename T>
using BatchSource = std::function<Batch<T>(std::uint64_t step)>;

struct TrainerConfig {
    std::size_t concurrent_batches = 1;
    std::size_t d_in = 784;
    std::size_t d_model = 64;
    std::size_t n_classes = 10;
    /// h <- h + layer(h) instead of h <- layer(h).
    bool residual = true;
    /// Applied to the locally held parameters: projections and gating.
    nn::SgdConfig sgd;
    std::uint64_t seed = 0;

    void validate() const;
};

struct StepLog {
    std::uint64_t step = 0;  // completion order
    std::uint64_t batch = 0;  // index passed to the batch source
    double sim_time_ms = 0;
    double loss = 0;
    double staleness_mean = 0;
    std::uint64_t skipped = 0;  // skipped steps so far
    std::size_t correct = 0, examples = 0;
};

/// Per-expert histogram of (version at backward - version at forward).
struct StalenessStats {
    std::map<std::string, std::map<std::uint64_t, std::uint64_t>> per_expert;

    void add(const std::string& uid, std::uint64_t s) { ++per_expert[uid][s]; }
    double mean() const;
    std::uint64_t count() const;
    std::uint64_t max() const;
};

/// Drives a stack of DMoE layers between a local input projection and a local classifier,
/// keeping up to concurrent_batches steps in flight on the layers' executor.
template <typename T>
class Trainer {
public:
    Trainer(net::Executor& ex, std::vector<moe::DmoeLayer<T>*> layers, TrainerConfig cfg, BatchSource<T> source);
    ~Trainer();
    Trainer(const Trainer&) = delete;
    Trainer& operator=(const Trainer&) = delete;

    /// Start `steps` more steps; `done` runs once all of them have finished or been skipped.
    void start(std::uint64_t steps, std::function<void()> done = {});
    /// start() and drive the executor until finished. False on timeout.
    bool run(std::uint64_t steps, double timeout_ms = 1e15);

    bool idle() const noexcept { return in_flight_ == 0 && remaining_ == 0; }
    std::size_t in_flight() const noexcept { return in_flight_; }
    std::uint64_t completed() const noexcept { return completed_; }
    std::uint64_t skipped() const noexcept { return skipped_; }
    const std::vector<StepLog>& log() const noexcept { return log_; }
    const StalenessStats& staleness() const noexcept { return staleness_; }

    nn::Linear<T>& input() noexcept { return in_; }
    nn::Linear<T>& output() noexcept { return out_; }
    const TrainerConfig& config() const noexcept { return cfg_; }

    /// Classifier logits for `x` through the current model (one forward, no updates).
    void predict(nn::BasicTensor<T> x, std::function<void(Result<nn::BasicTensor<T>>)> cb);

private:
    struct Step;
    void launch();
    void forward_layer(std::shared_ptr<Step> st, std::size_t l);
    void backward_layer(std::shared_ptr<Step> st, std::size_t l, nn::BasicTensor<T> dh);
    void finish(std::shared_ptr<Step> st, bool skipped);
    void predict_from(nn::BasicTensor<T> h, std::size_t l, std::function<void(Result<nn::BasicTensor<T>>)> cb);

    net::Executor& ex_;
    std::vector<moe::DmoeLayer<T>*> layers_;
    TrainerConfig cfg_;
    BatchSource<T> source_;
    nn::Linear<T> in_, out_;
    std::uint64_t next_batch_ = 0, remaining_ = 0, completed_ = 0, skipped_ = 0;
    std::size_t in_flight_ = 0;
    std::function<void()> done_;
    std::vector<StepLog> log_;
    StalenessStats staleness_;
    std::shared_ptr<bool> alive_;
};

/// `step,sim_time_ms,loss,staleness_mean,skipped` with a header line.
void write_log_csv(std::ostream& os, const std::vector<StepLog>& log);

}  // namespace swarm::trainer
