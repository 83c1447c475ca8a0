#pragma once

#include <cstdint>
#include <span>

#include "swarm/nn/ops.hpp"
#include "swarm/nn/tensor.hpp"

namespace swarm::nn {

template <typename T>
struct SoftmaxXentResult {
    double loss = 0;
    BasicTensor<T> dlogits;
};

/// Row-wise softmax with max subtraction.
template <typename T>
BasicTensor<T> softmax_rows(const BasicTensor<T>& logits);

/// Mean cross-entropy over the batch and its gradient (softmax - onehot) / batch.
template <typename T>
SoftmaxXentResult<T> softmax_xent(const BasicTensor<T>& logits, std::span<const int> labels);

/// Count of rows whose argmax equals the label.
template <typename T>
std::size_t count_correct(const BasicTensor<T>& logits, std::span<const int> labels);

/// Plain affine layer held locally by a trainer (input/output projections).
template <typename T>
struct Linear {
    BasicTensor<T> w;  // [in x out]
    BasicTensor<T> b;  // [out]

    static Linear init(std::size_t in, std::size_t out, std::uint64_t seed);

    BasicTensor<T> forward(const BasicTensor<T>& x) const { return affine(x, w, b); }

    struct Grads {
        BasicTensor<T> dx, dw, db;
    };
    Grads backward(const BasicTensor<T>& x, const BasicTensor<T>& dy) const;
};

}  // namespace swarm::nn
