#pragma once

#include <atomic>
#include <cstdint>

#include "swarm/nn/tensor.hpp"

namespace swarm::nn {

// Dense kernels. Each output row depends only on the matching input row and the
// summation order is fixed, so splitting or merging batches is bit-transparent.

/// y = x . w + b, with x [n x in], w [in x out], b [out].
template <typename T>
BasicTensor<T> affine(const BasicTensor<T>& x, const BasicTensor<T>& w, const BasicTensor<T>& b);

/// Returns a^T . b for a [n x p], b [n x q].
template <typename T>
BasicTensor<T> matmul_tn(const BasicTensor<T>& a, const BasicTensor<T>& b);

/// Returns a . b^T for a [n x q], b [p x q].
template <typename T>
BasicTensor<T> matmul_nt(const BasicTensor<T>& a, const BasicTensor<T>& b);

/// Column sums of a 2-D tensor.
template <typename T>
BasicTensor<T> column_sum(const BasicTensor<T>& a);

/// Live/peak byte counter for retained forward activations. Used to audit that
/// checkpointed execution does not accumulate activations across batches.
class ActivationMeter {
public:
    static void add(std::int64_t bytes) noexcept;
    static std::int64_t live() noexcept;
    static std::int64_t peak() noexcept;
    static void reset_peak() noexcept;
};

/// RAII registration of retained activation bytes with the meter.
class ActivationLease {
public:
    ActivationLease() = default;
    explicit ActivationLease(std::int64_t bytes) : bytes_(bytes) { ActivationMeter::add(bytes_); }
    ActivationLease(const ActivationLease& other) : ActivationLease(other.bytes_) {}
    ActivationLease(ActivationLease&& other) noexcept : bytes_(other.bytes_) { other.bytes_ = 0; }
    ActivationLease& operator=(ActivationLease other) noexcept {
        std::swap(bytes_, other.bytes_);
        return *this;
    }
    ~ActivationLease() { ActivationMeter::add(-bytes_); }

private:
    std::int64_t bytes_ = 0;
};

}  // namespace swarm::nn
