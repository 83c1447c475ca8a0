#pragma once

#include <cstdint>
#include <optional>
#include <utility>

#include "swarm/nn/ops.hpp"
#include "swarm/nn/tensor.hpp"

namespace swarm::nn {

/// Widths of the expert block: d_in -> d_hidden -> d_hidden -> d_out.
struct FfnDims {
    std::size_t d_in = 64;
    std::size_t d_hidden = 256;
    std::size_t d_out = 64;

    bool operator==(const FfnDims&) const = default;
};

/// Trainable tensors of one block. Also used for gradients, which mirror the parameters.
template <typename T>
struct FfnParams {
    BasicTensor<T> w1, b1, w2, b2, w3, b3, ln_gamma, ln_beta;

    static FfnParams zeros(const FfnDims& dims);

    template <typename F>
    void for_each(F&& f) {
        f(w1), f(b1), f(w2), f(b2), f(w3), f(b3), f(ln_gamma), f(ln_beta);
    }
    template <typename F>
    void for_each(F&& f) const {
        f(w1), f(b1), f(w2), f(b2), f(w3), f(b3), f(ln_gamma), f(ln_beta);
    }

    std::size_t numel() const;
    bool operator==(const FfnParams&) const = default;
};

template <typename T>
using FfnGrads = FfnParams<T>;

/// Feed-forward expert: relu(x W1 + b1) -> relu(. W2 + b2) -> . W3 + b3 -> layer norm.
template <typename T>
struct FfnExpertState {
    FfnDims dims;
    bool layer_norm = true;
    FfnParams<T> params;
    std::uint64_t version = 0;

    /// Seeded uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) weights, zero biases, unit gamma.
    static FfnExpertState init(const FfnDims& dims, std::uint64_t seed, bool layer_norm = true);

    bool operator==(const FfnExpertState&) const = default;
};

inline constexpr double kLayerNormEps = 1e-5;

/// Intermediate activations of one forward pass; enough to run backward without recomputation.
template <typename T>
struct FfnCache {
    BasicTensor<T> x, a1, h1, a2, h2, z, xhat;
    std::vector<T> rstd;
    ActivationLease lease;
};

template <typename T>
struct FfnBackwardResult {
    BasicTensor<T> dx;
    FfnGrads<T> grads;
};

/// Forward pass that keeps the activation cache.
template <typename T>
std::pair<BasicTensor<T>, FfnCache<T>> ffn_forward(const FfnExpertState<T>& state, const BasicTensor<T>& x);

/// Forward pass that retains nothing once it returns.
template <typename T>
BasicTensor<T> ffn_infer(const FfnExpertState<T>& state, const BasicTensor<T>& x);

template <typename T>
FfnBackwardResult<T> ffn_backward(const FfnExpertState<T>& state, const FfnCache<T>& cache, const BasicTensor<T>& dy);

/// Backward with activation recomputation from the supplied inputs.
template <typename T>
FfnBackwardResult<T> ffn_backward(const FfnExpertState<T>& state, const BasicTensor<T>& x, const BasicTensor<T>& dy);

/// Floating point operations of one forward pass over `batch` rows (a multiply-add counts as 2).
std::uint64_t ffn_forward_flops(const FfnDims& dims, std::size_t batch);
/// Floating point operations of one backward pass, excluding any recomputation.
std::uint64_t ffn_backward_flops(const FfnDims& dims, std::size_t batch);

struct SgdConfig {
    double learning_rate = 0.05;
    std::optional<double> gradient_clip_norm;
};

/// Global L2 norm over every tensor in `grads`.
template <typename T>
double global_norm(const FfnGrads<T>& grads);

/// param -= lr * grad (after optional global-norm clipping) and bump the version.
/// Non-finite gradients raise NumericError and leave the state untouched.
template <typename T>
void sgd_step(FfnExpertState<T>& state, const FfnGrads<T>& grads, const SgdConfig& cfg);

/// The same update rule over an arbitrary list of (parameter, gradient) pairs.
template <typename T>
void sgd_update(std::span<BasicTensor<T>* const> params, std::span<const BasicTensor<T>* const> grads,
                const SgdConfig& cfg);

}  // namespace swarm::nn
