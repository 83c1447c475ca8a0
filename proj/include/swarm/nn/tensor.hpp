#pragma once

#include <cmath>
#include <cstddef>
#include <functional>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include "swarm/util/error.hpp"

namespace swarm::nn {

using Shape = std::vector<std::size_t>;

std::string shape_string(const Shape& shape);

inline std::size_t shape_numel(const Shape& shape) {
    return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

/// Dense row-major array with an explicit shape. Every dimension is positive.
template <typename T>
class BasicTensor {
public:
    using value_type = T;

    BasicTensor() = default;

    explicit BasicTensor(Shape shape, T fill = T(0)) : shape_(std::move(shape)) {
        check_shape(shape_);
        data_.assign(shape_numel(shape_), fill);
    }

    BasicTensor(Shape shape, std::vector<T> data) : shape_(std::move(shape)), data_(std::move(data)) {
        check_shape(shape_);
        if (shape_numel(shape_) != data_.size()) {
            throw DimensionError("tensor data length " + std::to_string(data_.size()) +
                                 " does not match shape " + shape_string(shape_));
        }
    }

    static BasicTensor matrix(std::size_t rows, std::size_t cols, std::vector<T> data) {
        return BasicTensor({rows, cols}, std::move(data));
    }

    const Shape& shape() const noexcept { return shape_; }
    std::size_t rank() const noexcept { return shape_.size(); }
    std::size_t size() const noexcept { return data_.size(); }
    bool empty() const noexcept { return data_.empty(); }
    std::size_t dim(std::size_t i) const { return shape_.at(i); }

    /// Leading dimension of a 2-D tensor.
    std::size_t rows() const { return require_2d(), shape_[0]; }
    /// Trailing dimension of a 2-D tensor.
    std::size_t cols() const { return require_2d(), shape_[1]; }

    std::span<T> data() noexcept { return data_; }
    std::span<const T> data() const noexcept { return data_; }
    const std::vector<T>& vec() const noexcept { return data_; }

    T& operator[](std::size_t i) noexcept { return data_[i]; }
    const T& operator[](std::size_t i) const noexcept { return data_[i]; }
    T& operator()(std::size_t r, std::size_t c) noexcept { return data_[r * shape_[1] + c]; }
    const T& operator()(std::size_t r, std::size_t c) const noexcept { return data_[r * shape_[1] + c]; }

    std::span<T> row(std::size_t r) { return std::span<T>(data_).subspan(r * shape_[1], shape_[1]); }
    std::span<const T> row(std::size_t r) const {
        return std::span<const T>(data_).subspan(r * shape_[1], shape_[1]);
    }

    bool all_finite() const noexcept {
        for (const T& v : data_) {
            if (!std::isfinite(v)) return false;
        }
        return true;
    }

    void fill(T v) { std::fill(data_.begin(), data_.end(), v); }

    /// Element type conversion (used to move between 32- and 64-bit modes).
    template <typename U>
    BasicTensor<U> cast() const {
        return BasicTensor<U>(shape_, std::vector<U>(data_.begin(), data_.end()));
    }

    bool operator==(const BasicTensor& other) const = default;

private:
    static void check_shape(const Shape& shape) {
        for (auto d : shape) {
            if (d == 0) throw DimensionError("tensor dimensions must be positive, got " + shape_string(shape));
        }
    }
    void require_2d() const {
        if (shape_.size() != 2) throw DimensionError("expected a 2-D tensor, got " + shape_string(shape_));
    }

    Shape shape_;
    std::vector<T> data_;
};

using Tensor = BasicTensor<float>;
using Tensor64 = BasicTensor<double>;

template <typename T>
void require_finite(const BasicTensor<T>& t, const char* what) {
    if (!t.all_finite()) throw NumericError(std::string("non-finite values in ") + what);
}

/// Rows [begin, end) of a 2-D tensor.
template <typename T>
BasicTensor<T> slice_rows(const BasicTensor<T>& t, std::size_t begin, std::size_t end) {
    const std::size_t c = t.cols();
    if (begin >= end || end > t.rows()) throw DimensionError("row slice out of range");
    std::vector<T> out(t.vec().begin() + static_cast<std::ptrdiff_t>(begin * c),
                       t.vec().begin() + static_cast<std::ptrdiff_t>(end * c));
    return BasicTensor<T>({end - begin, c}, std::move(out));
}

/// Vertical concatenation of 2-D tensors with matching column counts.
template <typename T>
BasicTensor<T> concat_rows(std::span<const BasicTensor<T>> parts) {
    if (parts.empty()) throw DimensionError("concat_rows of nothing");
    const std::size_t c = parts.front().cols();
    std::size_t rows = 0;
    for (const auto& p : parts) {
        if (p.cols() != c) throw DimensionError("concat_rows column mismatch");
        rows += p.rows();
    }
    std::vector<T> out;
    out.reserve(rows * c);
    for (const auto& p : parts) out.insert(out.end(), p.vec().begin(), p.vec().end());
    return BasicTensor<T>({rows, c}, std::move(out));
}

/// a += s * b, elementwise.
template <typename T>
void axpy(BasicTensor<T>& a, T s, const BasicTensor<T>& b) {
    if (a.shape() != b.shape()) {
        throw DimensionError("axpy shape mismatch " + shape_string(a.shape()) + " vs " + shape_string(b.shape()));
    }
    auto ad = a.data();
    auto bd = b.data();
    for (std::size_t i = 0; i < ad.size(); ++i) ad[i] += s * bd[i];
}

template <typename T>
BasicTensor<T> scaled(const BasicTensor<T>& a, T s) {
    BasicTensor<T> out = a;
    for (auto& v : out.data()) v *= s;
    return out;
}

/// Column means of a 2-D tensor, as a 1-D tensor.
template <typename T>
BasicTensor<T> column_mean(const BasicTensor<T>& x) {
    BasicTensor<T> out({x.cols()});
    for (std::size_t r = 0; r < x.rows(); ++r) {
        for (std::size_t c = 0; c < x.cols(); ++c) out[c] += x(r, c);
    }
    for (auto& v : out.data()) v /= static_cast<T>(x.rows());
    return out;
}

}  // namespace swarm::nn
