#pragma once

#include <functional>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "swarm/gating/gating.hpp"
#include "swarm/net/transport.hpp"
#include "swarm/nn/tensor.hpp"

namespace swarm::moe {

struct DmoeConfig {
    std::size_t k = 4;
    /// Defaults to 4k.
    std::optional<std::size_t> beam_width;
    double timeout_ms = 1000.0;
    double freshness_ms = 30'000.0;
    /// Route each example separately instead of routing the batch by its mean input.
    bool per_example_routing = false;
    /// Weight of the importance-balancing penalty on the gate. Zero disables it.
    double load_balance_weight = 0.0;

    std::size_t beam() const { return beam_width.value_or(4 * k); }
    void validate() const;
};

/// Softmax over the ok entries only; failed entries get weight 0. Max-subtracted.
std::vector<double> masked_softmax(const std::vector<double>& scores, const std::vector<bool>& ok);

template <typename T>
struct Aggregate {
    nn::BasicTensor<T> y;
    std::vector<double> weights;
};

/// y = sum_i softmax(scores restricted to ok)_i * outputs_i. Outputs that are nullopt failed.
/// Fails with Errc::dropped when nothing survived.
template <typename T>
Result<Aggregate<T>> aggregate(const std::vector<std::optional<nn::BasicTensor<T>>>& outputs,
                               const std::vector<double>& scores);

template <typename T>
struct ExpertCall {
    gating::ExpertUid uid;
    std::string key;
    std::string endpoint;
    std::vector<std::size_t> rows;  // rows of the layer input sent to this expert
    bool ok = false;
    std::string reason;
    nn::BasicTensor<T> y;
    std::uint64_t version = 0;
};

template <typename T>
struct RouteGroup {
    std::vector<std::size_t> rows;
    std::vector<T> gate_input;
    gating::GateScores scores;
    std::vector<gating::Selected> selected;
    std::vector<std::size_t> call_index;  // per selected expert
    std::vector<double> weights;          // per selected expert, zero when its call failed
};

/// Everything a forward dispatch produced; the trainer keeps it for backward.
template <typename T>
struct DispatchRecord {
    nn::BasicTensor<T> x;
    std::vector<RouteGroup<T>> groups;
    std::vector<ExpertCall<T>> calls;

    /// Position of `row` inside calls[c].rows.
    std::size_t local_row(std::size_t c, std::size_t row) const;
};

template <typename T>
struct LayerGrads {
    nn::BasicTensor<T> dx;
    std::vector<nn::BasicTensor<T>> gate_w, gate_b;
    std::vector<std::pair<std::string, std::uint64_t>> staleness;  // (uid, staleness) per answered backward call
    std::size_t backward_failed = 0;
    double balance_loss = 0.0;
};

struct LayerStats {
    std::uint64_t forward_calls = 0, forward_failed = 0;
    std::uint64_t backward_calls = 0, backward_failed = 0;
    std::uint64_t dropped = 0;
    std::uint64_t expert_rows = 0;  // rows evaluated remotely in forward
};

/// One decentralized mixture-of-experts layer as seen from a trainer.
template <typename T>
class DmoeLayer {
public:
    using RecordPtr = std::shared_ptr<DispatchRecord<T>>;
    using ForwardCallback = std::function<void(Result<std::pair<nn::BasicTensor<T>, RecordPtr>>)>;
    using BackwardCallback = std::function<void(Result<LayerGrads<T>>)>;

    DmoeLayer(gating::GridConfig grid, DmoeConfig cfg, gating::GatingParams<T> params, net::RpcEndpoint& endpoint,
              gating::LivenessOracle& liveness);

    /// Select experts, send the inputs, aggregate the survivors. Errc::dropped if none survive.
    void forward(nn::BasicTensor<T> x, ForwardCallback cb);

    /// Send weighted cotangents to the experts that answered forward and compute gating
    /// gradients locally. Errc::dropped if every backward call fails.
    void backward(RecordPtr record, nn::BasicTensor<T> dy, BackwardCallback cb);

    gating::GatingParams<T>& gating() noexcept { return gating_; }
    const gating::GridConfig& grid() const noexcept { return grid_; }
    const DmoeConfig& config() const noexcept { return cfg_; }
    const LayerStats& stats() const noexcept { return stats_; }

    /// Called with every record once its forward calls have settled, dropped or not.
    void observe(std::function<void(const DispatchRecord<T>&, bool dropped)> fn) { observer_ = std::move(fn); }

private:
    void dispatch(RecordPtr rec, ForwardCallback cb);

    gating::GridConfig grid_;
    DmoeConfig cfg_;
    gating::GatingParams<T> gating_;
    net::RpcEndpoint& ep_;
    gating::LivenessOracle& liveness_;
    LayerStats stats_;
    std::function<void(const DispatchRecord<T>&, bool)> observer_;
    std::shared_ptr<bool> alive_;
};

template <typename T>
nn::BasicTensor<T> gather_rows(const nn::BasicTensor<T>& x, const std::vector<std::size_t>& rows);

}  // namespace swarm::moe
