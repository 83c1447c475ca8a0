#include "swarm/nn/layers.hpp"

#include <cmath>

#include "swarm/util/rng.hpp"

namespace swarm::nn {

template <typename T>
BasicTensor<T> softmax_rows(const BasicTensor<T>& logits) {
    BasicTensor<T> p = logits;
    for (std::size_t r = 0; r < p.rows(); ++r) {
        auto row = p.row(r);
        T mx = row[0];
        for (auto v : row) mx = std::max(mx, v);
        T sum = 0;
        for (auto& v : row) {
            v = std::exp(v - mx);
            sum += v;
        }
        for (auto& v : row) v /= sum;
    }
    return p;
}

template <typename T>
SoftmaxXentResult<T> softmax_xent(const BasicTensor<T>& logits, std::span<const int> labels) {
    if (logits.rank() != 2 || logits.rows() != labels.size()) {
        throw DimensionError("softmax_xent: logits " + shape_string(logits.shape()) + " vs " +
                             std::to_string(labels.size()) + " labels");
    }
    const std::size_t n = logits.rows(), classes = logits.cols();
    for (auto l : labels) {
        if (l < 0 || static_cast<std::size_t>(l) >= classes) {
            throw IndexError("label " + std::to_string(l) + " outside [0, " + std::to_string(classes) + ")");
        }
    }
    SoftmaxXentResult<T> out;
    out.dlogits = BasicTensor<T>({n, classes});
    double total = 0;
    for (std::size_t r = 0; r < n; ++r) {
        auto row = logits.row(r);
        T mx = row[0];
        for (auto v : row) mx = std::max(mx, v);
        double sum = 0;
        for (auto v : row) sum += std::exp(static_cast<double>(v - mx));
        const double log_z = std::log(sum) + static_cast<double>(mx);
        const auto label = static_cast<std::size_t>(labels[r]);
        total += log_z - static_cast<double>(row[label]);
        for (std::size_t c = 0; c < classes; ++c) {
            const double p = std::exp(static_cast<double>(row[c]) - log_z);
            out.dlogits(r, c) = static_cast<T>((p - (c == label ? 1.0 : 0.0)) / static_cast<double>(n));
        }
    }
    out.loss = total / static_cast<double>(n);
    return out;
}

template <typename T>
std::size_t count_correct(const BasicTensor<T>& logits, std::span<const int> labels) {
    std::size_t hits = 0;
    for (std::size_t r = 0; r < logits.rows(); ++r) {
        auto row = logits.row(r);
        std::size_t best = 0;
        for (std::size_t c = 1; c < row.size(); ++c) {
            if (row[c] > row[best]) best = c;
        }
        if (static_cast<int>(best) == labels[r]) ++hits;
    }
    return hits;
}

template <typename T>
Linear<T> Linear<T>::init(std::size_t in, std::size_t out, std::uint64_t seed) {
    Linear l;
    l.w = BasicTensor<T>({in, out});
    l.b = BasicTensor<T>({out});
    Rng rng(seed);
    const double bound = 1.0 / std::sqrt(static_cast<double>(in));
    for (auto& v : l.w.data()) v = static_cast<T>(rng.uniform(-bound, bound));
    return l;
}

template <typename T>
typename Linear<T>::Grads Linear<T>::backward(const BasicTensor<T>& x, const BasicTensor<T>& dy) const {
    Grads g;
    g.dw = matmul_tn(x, dy);
    g.db = column_sum(dy);
    g.dx = matmul_nt(dy, w);
    return g;
}

#define SWARM_INSTANTIATE(T)                                                              \
    template BasicTensor<T> softmax_rows(const BasicTensor<T>&);                         \
    template SoftmaxXentResult<T> softmax_xent(const BasicTensor<T>&, std::span<const int>); \
    template std::size_t count_correct(const BasicTensor<T>&, std::span<const int>);     \
    template struct Linear<T>;
SWARM_INSTANTIATE(float)
SWARM_INSTANTIATE(double)
#undef SWARM_INSTANTIATE

}  // namespace swarm::nn
