#include "swarm/nn/ffn.hpp"

#include <cmath>

#include "swarm/util/rng.hpp"

namespace swarm::nn {

template <typename T>
FfnParams<T> FfnParams<T>::zeros(const FfnDims& d) {
    FfnParams p;
    p.w1 = BasicTensor<T>({d.d_in, d.d_hidden});
    p.b1 = BasicTensor<T>({d.d_hidden});
    p.w2 = BasicTensor<T>({d.d_hidden, d.d_hidden});
    p.b2 = BasicTensor<T>({d.d_hidden});
    p.w3 = BasicTensor<T>({d.d_hidden, d.d_out});
    p.b3 = BasicTensor<T>({d.d_out});
    p.ln_gamma = BasicTensor<T>({d.d_out});
    p.ln_beta = BasicTensor<T>({d.d_out});
    return p;
}

template <typename T>
std::size_t FfnParams<T>::numel() const {
    std::size_t n = 0;
    for_each([&](const BasicTensor<T>& t) { n += t.size(); });
    return n;
}

template <typename T>
FfnExpertState<T> FfnExpertState<T>::init(const FfnDims& dims, std::uint64_t seed, bool layer_norm) {
    if (dims.d_in == 0 || dims.d_hidden == 0 || dims.d_out == 0) throw DimensionError("expert dims must be positive");
    FfnExpertState s;
    s.dims = dims;
    s.layer_norm = layer_norm;
    s.params = FfnParams<T>::zeros(dims);
    Rng rng(seed);
    auto fill_uniform = [&](BasicTensor<T>& w, std::size_t fan_in) {
        const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
        for (auto& v : w.data()) v = static_cast<T>(rng.uniform(-bound, bound));
    };
    fill_uniform(s.params.w1, dims.d_in);
    fill_uniform(s.params.w2, dims.d_hidden);
    fill_uniform(s.params.w3, dims.d_hidden);
    s.params.ln_gamma.fill(T(1));
    return s;
}

namespace {

template <typename T>
void check_input(const FfnExpertState<T>& state, const BasicTensor<T>& x) {
    if (x.rank() != 2 || x.cols() != state.dims.d_in) {
        throw DimensionError("expert expects [batch, " + std::to_string(state.dims.d_in) + "] input, got " +
                             shape_string(x.shape()));
    }
    require_finite(x, "expert input");
}

template <typename T>
BasicTensor<T> relu(const BasicTensor<T>& a) {
    BasicTensor<T> h = a;
    for (auto& v : h.data()) v = v > T(0) ? v : T(0);
    return h;
}

template <typename T>
void relu_backward_inplace(BasicTensor<T>& dh, const BasicTensor<T>& pre) {
    auto d = dh.data();
    auto p = pre.data();
    for (std::size_t i = 0; i < d.size(); ++i) {
        if (!(p[i] > T(0))) d[i] = T(0);
    }
}

template <typename T>
std::int64_t cache_bytes(const FfnCache<T>& c) {
    const std::size_t n = c.x.size() + c.a1.size() + c.h1.size() + c.a2.size() + c.h2.size() + c.z.size() +
                          c.xhat.size() + c.rstd.size();
    return static_cast<std::int64_t>(n * sizeof(T));
}

}  // namespace

template <typename T>
std::pair<BasicTensor<T>, FfnCache<T>> ffn_forward(const FfnExpertState<T>& state, const BasicTensor<T>& x) {
    check_input(state, x);
    const auto& p = state.params;
    FfnCache<T> c;
    c.x = x;
    c.a1 = affine(x, p.w1, p.b1);
    c.h1 = relu(c.a1);
    c.a2 = affine(c.h1, p.w2, p.b2);
    c.h2 = relu(c.a2);
    c.z = affine(c.h2, p.w3, p.b3);

    BasicTensor<T> y;
    if (state.layer_norm) {
        const std::size_t n = c.z.rows(), m = c.z.cols();
        c.xhat = BasicTensor<T>({n, m});
        c.rstd.assign(n, T(0));
        y = BasicTensor<T>({n, m});
        for (std::size_t r = 0; r < n; ++r) {
            auto zr = c.z.row(r);
            T mean = 0;
            for (auto v : zr) mean += v;
            mean /= static_cast<T>(m);
            T var = 0;
            for (auto v : zr) var += (v - mean) * (v - mean);
            var /= static_cast<T>(m);
            const T rstd = T(1) / std::sqrt(var + static_cast<T>(kLayerNormEps));
            c.rstd[r] = rstd;
            for (std::size_t j = 0; j < m; ++j) {
                const T xh = (zr[j] - mean) * rstd;
                c.xhat(r, j) = xh;
                y(r, j) = p.ln_gamma[j] * xh + p.ln_beta[j];
            }
        }
    } else {
        y = c.z;
    }
    if (!y.all_finite()) throw NumericError("non-finite expert output");
    c.lease = ActivationLease(cache_bytes(c));
    return {std::move(y), std::move(c)};
}

template <typename T>
BasicTensor<T> ffn_infer(const FfnExpertState<T>& state, const BasicTensor<T>& x) {
    return ffn_forward(state, x).first;
}

template <typename T>
FfnBackwardResult<T> ffn_backward(const FfnExpertState<T>& state, const FfnCache<T>& c, const BasicTensor<T>& dy) {
    if (dy.shape() != c.z.shape()) {
        throw DimensionError("grad_outputs shape " + shape_string(dy.shape()) + " does not match output shape " +
                             shape_string(c.z.shape()));
    }
    const auto& p = state.params;
    FfnBackwardResult<T> out;
    out.grads = FfnParams<T>::zeros(state.dims);
    auto& g = out.grads;

    BasicTensor<T> dz;
    if (state.layer_norm) {
        const std::size_t n = dy.rows(), m = dy.cols();
        dz = BasicTensor<T>({n, m});
        std::vector<T> dxhat(m);
        for (std::size_t r = 0; r < n; ++r) {
            T mean_dxhat = 0, mean_dxhat_xhat = 0;
            for (std::size_t j = 0; j < m; ++j) {
                const T d = dy(r, j);
                g.ln_gamma[j] += d * c.xhat(r, j);
                g.ln_beta[j] += d;
                dxhat[j] = d * p.ln_gamma[j];
                mean_dxhat += dxhat[j];
                mean_dxhat_xhat += dxhat[j] * c.xhat(r, j);
            }
            mean_dxhat /= static_cast<T>(m);
            mean_dxhat_xhat /= static_cast<T>(m);
            for (std::size_t j = 0; j < m; ++j) {
                dz(r, j) = c.rstd[r] * (dxhat[j] - mean_dxhat - c.xhat(r, j) * mean_dxhat_xhat);
            }
        }
    } else {
        dz = dy;
    }

    g.w3 = matmul_tn(c.h2, dz);
    g.b3 = column_sum(dz);
    BasicTensor<T> dh2 = matmul_nt(dz, p.w3);
    relu_backward_inplace(dh2, c.a2);
    g.w2 = matmul_tn(c.h1, dh2);
    g.b2 = column_sum(dh2);
    BasicTensor<T> dh1 = matmul_nt(dh2, p.w2);
    relu_backward_inplace(dh1, c.a1);
    g.w1 = matmul_tn(c.x, dh1);
    g.b1 = column_sum(dh1);
    out.dx = matmul_nt(dh1, p.w1);
    return out;
}

template <typename T>
FfnBackwardResult<T> ffn_backward(const FfnExpertState<T>& state, const BasicTensor<T>& x, const BasicTensor<T>& dy) {
    auto [y, cache] = ffn_forward(state, x);
    if (dy.shape() != y.shape()) {
        throw DimensionError("grad_outputs shape " + shape_string(dy.shape()) + " does not match output shape " +
                             shape_string(y.shape()));
    }
    return ffn_backward(state, cache, dy);
}

std::uint64_t ffn_forward_flops(const FfnDims& d, std::size_t batch) {
    return 2ULL * batch * (d.d_in * d.d_hidden + d.d_hidden * d.d_hidden + d.d_hidden * d.d_out);
}

std::uint64_t ffn_backward_flops(const FfnDims& d, std::size_t batch) { return 2ULL * ffn_forward_flops(d, batch); }

template <typename T>
double global_norm(const FfnGrads<T>& grads) {
    double sq = 0;
    grads.for_each([&](const BasicTensor<T>& t) {
        for (auto v : t.data()) sq += static_cast<double>(v) * static_cast<double>(v);
    });
    return std::sqrt(sq);
}

template <typename T>
void sgd_update(std::span<BasicTensor<T>* const> params, std::span<const BasicTensor<T>* const> grads,
                const SgdConfig& cfg) {
    if (!(cfg.learning_rate >= 0) || !std::isfinite(cfg.learning_rate)) {
        throw ConfigError("learning rate must be a finite non-negative number");
    }
    if (params.size() != grads.size()) throw DimensionError("sgd_update: parameter/gradient count mismatch");
    double sq = 0;
    for (std::size_t i = 0; i < grads.size(); ++i) {
        if (grads[i]->shape() != params[i]->shape()) {
            throw DimensionError("sgd_update: gradient shape " + shape_string(grads[i]->shape()) +
                                 " does not match parameter " + shape_string(params[i]->shape()));
        }
        for (auto v : grads[i]->data()) {
            if (!std::isfinite(v)) throw NumericError("non-finite gradient; update skipped");
            sq += static_cast<double>(v) * static_cast<double>(v);
        }
    }
    double scale = cfg.learning_rate;
    if (cfg.gradient_clip_norm) {
        const double norm = std::sqrt(sq);
        if (norm > *cfg.gradient_clip_norm) scale *= *cfg.gradient_clip_norm / norm;
    }
    const T s = static_cast<T>(scale);
    for (std::size_t i = 0; i < params.size(); ++i) {
        auto pd = params[i]->data();
        auto gd = grads[i]->data();
        for (std::size_t j = 0; j < pd.size(); ++j) pd[j] -= s * gd[j];
    }
}

template <typename T>
void sgd_step(FfnExpertState<T>& state, const FfnGrads<T>& grads, const SgdConfig& cfg) {
    std::vector<BasicTensor<T>*> ps;
    std::vector<const BasicTensor<T>*> gs;
    state.params.for_each([&](BasicTensor<T>& t) { ps.push_back(&t); });
    grads.for_each([&](const BasicTensor<T>& t) { gs.push_back(&t); });
    sgd_update<T>(ps, gs, cfg);
    ++state.version;
}

#define SWARM_INSTANTIATE(T)                                                                                   \
    template struct FfnParams<T>;                                                                              \
    template struct FfnExpertState<T>;                                                                         \
    template std::pair<BasicTensor<T>, FfnCache<T>> ffn_forward(const FfnExpertState<T>&, const BasicTensor<T>&); \
    template BasicTensor<T> ffn_infer(const FfnExpertState<T>&, const BasicTensor<T>&);                        \
    template FfnBackwardResult<T> ffn_backward(const FfnExpertState<T>&, const FfnCache<T>&, const BasicTensor<T>&); \
    template FfnBackwardResult<T> ffn_backward(const FfnExpertState<T>&, const BasicTensor<T>&,                \
                                               const BasicTensor<T>&);                                         \
    template double global_norm(const FfnGrads<T>&);                                                           \
    template void sgd_update(std::span<BasicTensor<T>* const>, std::span<const BasicTensor<T>* const>,         \
                             const SgdConfig&);                                                                \
    template void sgd_step(FfnExpertState<T>&, const FfnGrads<T>&, const SgdConfig&);
SWARM_INSTANTIATE(float)
SWARM_INSTANTIATE(double)
#undef SWARM_INSTANTIATE

}  // namespace swarm::nn
