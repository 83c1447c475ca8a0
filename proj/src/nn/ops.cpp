#include "swarm/nn/ops.hpp"

#include <sstream>

namespace swarm::nn {

std::string shape_string(const Shape& shape) {
    std::ostringstream os;
    os << '[';
    for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "," : "") << shape[i];
    os << ']';
    return os.str();
}

template <typename T>
BasicTensor<T> affine(const BasicTensor<T>& x, const BasicTensor<T>& w, const BasicTensor<T>& b) {
    const std::size_t n = x.rows(), in = x.cols(), out = w.cols();
    if (w.rows() != in || b.size() != out) {
        throw DimensionError("affine: input " + shape_string(x.shape()) + " vs weight " + shape_string(w.shape()) +
                             " / bias " + shape_string(b.shape()));
    }
    BasicTensor<T> y({n, out});
    const T* wd = w.data().data();
    const T* bd = b.data().data();
    for (std::size_t r = 0; r < n; ++r) {
        T* yr = y.row(r).data();
        for (std::size_t j = 0; j < out; ++j) yr[j] = bd[j];
        const T* xr = x.row(r).data();
        for (std::size_t i = 0; i < in; ++i) {
            const T xi = xr[i];
            const T* wi = wd + i * out;
            for (std::size_t j = 0; j < out; ++j) yr[j] += xi * wi[j];
        }
    }
    return y;
}

template <typename T>
BasicTensor<T> matmul_tn(const BasicTensor<T>& a, const BasicTensor<T>& b) {
    const std::size_t n = a.rows(), p = a.cols(), q = b.cols();
    if (b.rows() != n) throw DimensionError("matmul_tn row mismatch");
    BasicTensor<T> out({p, q});
    T* od = out.data().data();
    for (std::size_t r = 0; r < n; ++r) {
        const T* ar = a.row(r).data();
        const T* br = b.row(r).data();
        for (std::size_t i = 0; i < p; ++i) {
            const T ai = ar[i];
            if (ai == T(0)) continue;
            T* oi = od + i * q;
            for (std::size_t j = 0; j < q; ++j) oi[j] += ai * br[j];
        }
    }
    return out;
}

template <typename T>
BasicTensor<T> matmul_nt(const BasicTensor<T>& a, const BasicTensor<T>& b) {
    const std::size_t n = a.rows(), q = a.cols(), p = b.rows();
    if (b.cols() != q) throw DimensionError("matmul_nt column mismatch");
    BasicTensor<T> out({n, p});
    for (std::size_t r = 0; r < n; ++r) {
        const T* ar = a.row(r).data();
        T* orow = out.row(r).data();
        for (std::size_t i = 0; i < p; ++i) {
            const T* bi = b.row(i).data();
            T acc = 0;
            for (std::size_t j = 0; j < q; ++j) acc += ar[j] * bi[j];
            orow[i] = acc;
        }
    }
    return out;
}

template <typename T>
BasicTensor<T> column_sum(const BasicTensor<T>& a) {
    BasicTensor<T> out({a.cols()});
    for (std::size_t r = 0; r < a.rows(); ++r) {
        const T* ar = a.row(r).data();
        for (std::size_t c = 0; c < a.cols(); ++c) out[c] += ar[c];
    }
    return out;
}

namespace {
std::atomic<std::int64_t> g_live{0};
std::atomic<std::int64_t> g_peak{0};
}  // namespace

void ActivationMeter::add(std::int64_t bytes) noexcept {
    const auto now = g_live.fetch_add(bytes) + bytes;
    auto peak = g_peak.load();
    while (now > peak && !g_peak.compare_exchange_weak(peak, now)) {
    }
}
std::int64_t ActivationMeter::live() noexcept { return g_live.load(); }
std::int64_t ActivationMeter::peak() noexcept { return g_peak.load(); }
void ActivationMeter::reset_peak() noexcept { g_peak.store(g_live.load()); }

#define SWARM_INSTANTIATE(T)                                                                          \
    template BasicTensor<T> affine(const BasicTensor<T>&, const BasicTensor<T>&, const BasicTensor<T>&); \
    template BasicTensor<T> matmul_tn(const BasicTensor<T>&, const BasicTensor<T>&);                  \
    template BasicTensor<T> matmul_nt(const BasicTensor<T>&, const BasicTensor<T>&);                  \
    template BasicTensor<T> column_sum(const BasicTensor<T>&);
SWARM_INSTANTIATE(float)
SWARM_INSTANTIATE(double)
#undef SWARM_INSTANTIATE

}  // namespace swarm::nn
