#pragma once

#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "swarm/gating/grid.hpp"
#include "swarm/nn/tensor.hpp"

namespace swarm::gating {

/// Per-dimension linear gates: g_i(x, j) = (x W_i + b_i)[j].
template <typename T>
struct GatingParams {
    std::vector<nn::BasicTensor<T>> w;  // d tensors [d_in x M]
    std::vector<nn::BasicTensor<T>> b;  // d tensors [M]

    static GatingParams init(const GridConfig& grid, std::size_t d_in, std::uint64_t seed);
    std::size_t d_in() const { return w.front().rows(); }
    bool operator==(const GatingParams&) const = default;
};

/// scores[i][j] = g_i(x, j).
using GateScores = std::vector<std::vector<double>>;

template <typename T>
GateScores gate_scores(const GatingParams<T>& params, std::span<const T> x);

/// Sum of per-dimension scores along the uid's coordinates (a prefix sums its own dimensions).
double uid_score(const GateScores& scores, const ExpertUid& uid);

/// Gradients of a scalar with respect to the gates, given d(loss)/d(scores) and the gate input.
template <typename T>
struct GatingGrads {
    std::vector<nn::BasicTensor<T>> w, b;
    std::vector<T> dx;
};

template <typename T>
GatingGrads<T> gate_backward(const GatingParams<T>& params, std::span<const T> x, const GateScores& dscores);

struct Selected {
    ExpertUid uid;
    double score = 0.0;
    std::string endpoint;  // from the full-UID liveness record; empty for synchronous oracles
};

/// Liveness oracle for a batch of prefixes. Answers arrive through `done`, one entry per
/// prefix in the same order; nullopt means dead, otherwise the announced endpoint.
class LivenessOracle {
public:
    using Answer = std::vector<std::optional<std::string>>;
    virtual ~LivenessOracle() = default;
    virtual void query(const std::vector<std::string>& keys, std::function<void(Answer)> done) = 0;
};

/// Beam search over grid dimensions keeping the best `beam_width` alive prefixes per level.
/// Candidates are ordered by score, ties by lexicographic coordinates; the top k alive
/// full UIDs are returned. Issues at most d * beam_width * M liveness queries.
void select_experts(const GateScores& scores, const GridConfig& grid, std::size_t k, std::size_t beam_width,
                    LivenessOracle& alive, std::function<void(std::vector<Selected>)> done);

/// Synchronous form with a predicate oracle over prefix strings.
std::vector<Selected> select_experts(const GateScores& scores, const GridConfig& grid, std::size_t k,
                                     std::size_t beam_width, const std::function<bool(const std::string&)>& alive);

/// Squared coefficient of variation of per-expert importance and its gradient.
struct BalanceLoss {
    double loss = 0.0;
    std::vector<double> grad;
};
BalanceLoss load_balance_loss(std::span<const double> importance);

}  // namespace swarm::gating
