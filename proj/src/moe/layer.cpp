#include "swarm/moe/layer.hpp"

#include <algorithm>
#include <cmath>
#include <map>

#include "swarm/moe/protocol.hpp"

namespace swarm::moe {

void DmoeConfig::validate() const {
    if (k < 1) throw ConfigError("dmoe k must be >= 1");
    if (beam() < k) throw ConfigError("dmoe beam_width must be >= k");
    if (!(timeout_ms > 0)) throw ConfigError("dmoe timeout must be positive");
    if (!(freshness_ms > 0)) throw ConfigError("dmoe freshness must be positive");
    if (!(load_balance_weight >= 0)) throw ConfigError("load balance weight must be >= 0");
}

std::vector<double> masked_softmax(const std::vector<double>& scores, const std::vector<bool>& ok) {
    std::vector<double> w(scores.size(), 0.0);
    double top = -INFINITY;
    for (std::size_t i = 0; i < scores.size(); ++i) {
        if (ok[i]) top = std::max(top, scores[i]);
    }
    if (top == -INFINITY) return w;
    double z = 0.0;
    for (std::size_t i = 0; i < scores.size(); ++i) {
        if (ok[i]) z += (w[i] = std::exp(scores[i] - top));
    }
    for (auto& v : w) v /= z;
    return w;
}

template <typename T>
Result<Aggregate<T>> aggregate(const std::vector<std::optional<nn::BasicTensor<T>>>& outputs,
                               const std::vector<double>& scores) {
    if (outputs.size() != scores.size()) throw DimensionError("aggregate: outputs and scores differ in length");
    std::vector<bool> ok(outputs.size());
    const nn::BasicTensor<T>* first = nullptr;
    for (std::size_t i = 0; i < outputs.size(); ++i) {
        ok[i] = outputs[i].has_value();
        if (ok[i] && !first) first = &*outputs[i];
    }
    if (!first) return fail(Errc::dropped, "no expert survived");
    Aggregate<T> out;
    out.weights = masked_softmax(scores, ok);
    out.y = nn::BasicTensor<T>(first->shape());
    for (std::size_t i = 0; i < outputs.size(); ++i) {
        if (!ok[i]) continue;
        if (outputs[i]->shape() != first->shape()) throw DimensionError("aggregate: expert outputs differ in shape");
        nn::axpy(out.y, static_cast<T>(out.weights[i]), *outputs[i]);
    }
    return out;
}

template <typename T>
nn::BasicTensor<T> gather_rows(const nn::BasicTensor<T>& x, const std::vector<std::size_t>& rows) {
    nn::BasicTensor<T> out({rows.size(), x.cols()});
    for (std::size_t i = 0; i < rows.size(); ++i) {
        auto src = x.row(rows[i]);
        std::copy(src.begin(), src.end(), out.row(i).begin());
    }
    return out;
}

template <typename T>
std::size_t DispatchRecord<T>::local_row(std::size_t c, std::size_t row) const {
    const auto& rows = calls[c].rows;
    return static_cast<std::size_t>(std::lower_bound(rows.begin(), rows.end(), row) - rows.begin());
}

template <typename T>
DmoeLayer<T>::DmoeLayer(gating::GridConfig grid, DmoeConfig cfg, gating::GatingParams<T> params,
                        net::RpcEndpoint& endpoint, gating::LivenessOracle& liveness)
    : grid_(std::move(grid)), cfg_(cfg), gating_(std::move(params)), ep_(endpoint), liveness_(liveness),
      alive_(std::make_shared<bool>(true)) {
    grid_.validate();
    cfg_.validate();
    if (gating_.w.size() != static_cast<std::size_t>(grid_.d)) throw DimensionError("gating params do not match grid");
}

template <typename T>
void DmoeLayer<T>::forward(nn::BasicTensor<T> x, ForwardCallback cb) {
    if (x.rank() != 2 || x.cols() != gating_.d_in()) {
        throw DimensionError("dmoe input " + nn::shape_string(x.shape()) + " does not match gate width " +
                             std::to_string(gating_.d_in()));
    }
    nn::require_finite(x, "dmoe input");
    auto rec = std::make_shared<DispatchRecord<T>>();
    rec->x = std::move(x);
    const std::size_t batch = rec->x.rows();
    if (cfg_.per_example_routing) {
        for (std::size_t r = 0; r < batch; ++r) {
            RouteGroup<T> g;
            g.rows = {r};
            auto row = rec->x.row(r);
            g.gate_input.assign(row.begin(), row.end());
            rec->groups.push_back(std::move(g));
        }
    } else {
        RouteGroup<T> g;
        for (std::size_t r = 0; r < batch; ++r) g.rows.push_back(r);
        auto mean = nn::column_mean(rec->x);
        g.gate_input.assign(mean.vec().begin(), mean.vec().end());
        rec->groups.push_back(std::move(g));
    }
    for (auto& g : rec->groups) g.scores = gating::gate_scores<T>(gating_, g.gate_input);

    auto remaining = std::make_shared<std::size_t>(rec->groups.size());
    auto alive = alive_;
    for (std::size_t gi = 0; gi < rec->groups.size(); ++gi) {
        gating::select_experts(rec->groups[gi].scores, grid_, cfg_.k, cfg_.beam(), liveness_,
                               [this, alive, rec, gi, remaining, cb](std::vector<gating::Selected> sel) {
                                   if (!*alive) return;
                                   rec->groups[gi].selected = std::move(sel);
                                   if (--*remaining == 0) dispatch(rec, cb);
                               });
    }
}

template <typename T>
void DmoeLayer<T>::dispatch(RecordPtr rec, ForwardCallback cb) {
    std::map<std::string, std::size_t> by_key;
    for (auto& g : rec->groups) {
        if (g.selected.empty()) {
            ++stats_.dropped;
            return cb(fail(Errc::dropped, "no alive expert for a route group"));
        }
        for (const auto& s : g.selected) {
            const std::string key = s.uid.to_string(grid_.name);
            auto [it, fresh] = by_key.emplace(key, rec->calls.size());
            if (fresh) {
                ExpertCall<T> call;
                call.uid = s.uid;
                call.key = key;
                call.endpoint = s.endpoint;
                rec->calls.push_back(std::move(call));
            }
            g.call_index.push_back(it->second);
            auto& rows = rec->calls[it->second].rows;
            rows.insert(rows.end(), g.rows.begin(), g.rows.end());
        }
    }
    for (auto& c : rec->calls) {
        std::sort(c.rows.begin(), c.rows.end());
        c.rows.erase(std::unique(c.rows.begin(), c.rows.end()), c.rows.end());
    }

    auto remaining = std::make_shared<std::size_t>(rec->calls.size());
    auto alive = alive_;
    auto finish = [this, alive, rec, cb] {
        if (!*alive) return;
        const std::size_t d_out = [&] {
            for (const auto& c : rec->calls) {
                if (c.ok) return c.y.cols();
            }
            return std::size_t{0};
        }();
        bool dropped = false;
        for (auto& g : rec->groups) {
            std::vector<double> scores;
            std::vector<bool> ok;
            for (std::size_t i = 0; i < g.selected.size(); ++i) {
                scores.push_back(g.selected[i].score);
                ok.push_back(rec->calls[g.call_index[i]].ok);
            }
            g.weights = masked_softmax(scores, ok);
            if (std::none_of(ok.begin(), ok.end(), [](bool b) { return b; })) dropped = true;
        }
        if (observer_) observer_(*rec, dropped);
        if (dropped) {
            ++stats_.dropped;
            return cb(fail(Errc::dropped, "every selected expert failed"));
        }
        nn::BasicTensor<T> y({rec->x.rows(), d_out});
        for (const auto& g : rec->groups) {
            for (std::size_t i = 0; i < g.selected.size(); ++i) {
                const std::size_t c = g.call_index[i];
                if (!rec->calls[c].ok) continue;
                const auto& call = rec->calls[c];
                const T w = static_cast<T>(g.weights[i]);
                for (std::size_t r : g.rows) {
                    auto src = call.y.row(rec->local_row(c, r));
                    auto dst = y.row(r);
                    for (std::size_t j = 0; j < d_out; ++j) dst[j] += w * src[j];
                }
            }
        }
        cb(std::make_pair(std::move(y), rec));
    };

    for (std::size_t c = 0; c < rec->calls.size(); ++c) {
        auto& call = rec->calls[c];
        ++stats_.forward_calls;
        stats_.expert_rows += call.rows.size();
        ForwardRequest<T> req{call.key, gather_rows(rec->x, call.rows)};
        ep_.call(call.endpoint, net::MsgType::forward, encode(req), cfg_.timeout_ms,
                 [this, alive, rec, c, remaining, finish](Result<Bytes> r) {
                     if (!*alive) return;
                     auto& call = rec->calls[c];
                     if (r.ok()) {
                         try {
                             auto reply = decode<ForwardReply<T>>(r.value());
                             if (reply.y.rank() != 2 || reply.y.rows() != call.rows.size() || !reply.y.all_finite()) {
                                 throw ProtocolError("malformed expert output");
                             }
                             call.y = std::move(reply.y);
                             call.version = reply.version;
                             call.ok = true;
                         } catch (const Error& e) {
                             call.reason = e.what();
                         }
                     } else {
                         call.reason = r.failure().message;
                     }
                     if (!call.ok) ++stats_.forward_failed;
                     if (--*remaining == 0) finish();
                 });
    }
}

template <typename T>
void DmoeLayer<T>::backward(RecordPtr rec, nn::BasicTensor<T> dy, BackwardCallback cb) {
    if (dy.rank() != 2 || dy.rows() != rec->x.rows()) throw DimensionError("dmoe backward: dy shape mismatch");
    auto out = std::make_shared<LayerGrads<T>>();
    out->dx = nn::BasicTensor<T>(rec->x.shape());
    for (int i = 0; i < grid_.d; ++i) {
        out->gate_w.emplace_back(gating_.w[static_cast<std::size_t>(i)].shape());
        out->gate_b.emplace_back(gating_.b[static_cast<std::size_t>(i)].shape());
    }

    // Gating path: dL/dw_i = sum_r <dy_r, f_i(x_r)>, then through the softmax to the scores.
    std::vector<nn::BasicTensor<T>> cot(rec->calls.size());
    for (std::size_t c = 0; c < rec->calls.size(); ++c) {
        if (rec->calls[c].ok) cot[c] = nn::BasicTensor<T>(rec->calls[c].y.shape());
    }
    auto flat = [this](const gating::ExpertUid& u) {
        std::size_t f = 0;
        for (int c : u.coords) f = f * static_cast<std::size_t>(grid_.M) + static_cast<std::size_t>(c);
        return f;
    };
    std::vector<double> balance_grad;
    if (cfg_.load_balance_weight > 0) {
        std::vector<double> importance(static_cast<std::size_t>(grid_.capacity()), 0.0);
        for (const auto& g : rec->groups) {
            for (std::size_t i = 0; i < g.selected.size(); ++i) {
                importance[flat(g.selected[i].uid)] += g.weights[i] * static_cast<double>(g.rows.size());
            }
        }
        auto lb = gating::load_balance_loss(importance);
        out->balance_loss = cfg_.load_balance_weight * lb.loss;
        balance_grad = std::move(lb.grad);
        for (auto& v : balance_grad) v *= cfg_.load_balance_weight;
    }
    for (const auto& g : rec->groups) {
        std::vector<double> dw(g.selected.size(), 0.0);
        double wdw = 0.0;
        for (std::size_t i = 0; i < g.selected.size(); ++i) {
            const std::size_t c = g.call_index[i];
            if (!rec->calls[c].ok) continue;
            const auto& call = rec->calls[c];
            const T w = static_cast<T>(g.weights[i]);
            for (std::size_t r : g.rows) {
                const std::size_t lr = rec->local_row(c, r);
                auto yr = call.y.row(lr);
                auto dyr = dy.row(r);
                auto cr = cot[c].row(lr);
                for (std::size_t j = 0; j < yr.size(); ++j) {
                    dw[i] += static_cast<double>(dyr[j]) * static_cast<double>(yr[j]);
                    cr[j] += w * dyr[j];
                }
            }
            if (!balance_grad.empty()) dw[i] += balance_grad[flat(g.selected[i].uid)] * static_cast<double>(g.rows.size());
            wdw += g.weights[i] * dw[i];
        }
        gating::GateScores dscores(static_cast<std::size_t>(grid_.d), std::vector<double>(static_cast<std::size_t>(grid_.M), 0.0));
        bool any = false;
        for (std::size_t i = 0; i < g.selected.size(); ++i) {
            const double ds = g.weights[i] * (dw[i] - wdw);
            if (ds == 0.0) continue;
            any = true;
            for (std::size_t dim = 0; dim < g.selected[i].uid.coords.size(); ++dim) {
                dscores[dim][static_cast<std::size_t>(g.selected[i].uid.coords[dim])] += ds;
            }
        }
        if (!any) continue;
        auto gg = gating::gate_backward<T>(gating_, g.gate_input, dscores);
        for (std::size_t i = 0; i < gg.w.size(); ++i) {
            nn::axpy(out->gate_w[i], T(1), gg.w[i]);
            nn::axpy(out->gate_b[i], T(1), gg.b[i]);
        }
        const T share = T(1) / static_cast<T>(g.rows.size());
        for (std::size_t r : g.rows) {
            auto dxr = out->dx.row(r);
            for (std::size_t j = 0; j < dxr.size(); ++j) dxr[j] += share * gg.dx[j];
        }
    }

    // Expert path: weighted cotangents go to every expert that answered forward.
    std::vector<std::size_t> targets;
    for (std::size_t c = 0; c < rec->calls.size(); ++c) {
        if (rec->calls[c].ok) targets.push_back(c);
    }
    if (targets.empty()) return cb(fail(Errc::dropped, "no expert to send gradients to"));
    auto remaining = std::make_shared<std::size_t>(targets.size());
    auto alive = alive_;
    for (std::size_t c : targets) {
        const auto& call = rec->calls[c];
        ++stats_.backward_calls;
        BackwardRequest<T> req{call.key, gather_rows(rec->x, call.rows), std::move(cot[c]), call.version};
        ep_.call(call.endpoint, net::MsgType::backward, encode(req), cfg_.timeout_ms,
                 [this, alive, rec, c, out, remaining, cb](Result<Bytes> r) {
                     if (!*alive) return;
                     bool ok = false;
                     if (r.ok()) {
                         try {
                             auto reply = decode<BackwardReply<T>>(r.value());
                             const auto& call = rec->calls[c];
                             if (reply.dx.shape() != nn::Shape{call.rows.size(), rec->x.cols()}) {
                                 throw ProtocolError("malformed expert gradient");
                             }
                             for (std::size_t i = 0; i < call.rows.size(); ++i) {
                                 auto src = reply.dx.row(i);
                                 auto dst = out->dx.row(call.rows[i]);
                                 for (std::size_t j = 0; j < dst.size(); ++j) dst[j] += src[j];
                             }
                             out->staleness.emplace_back(call.key, reply.staleness);
                             ok = true;
                         } catch (const Error&) {
                         }
                     }
                     if (!ok) {
                         ++out->backward_failed;
                         ++stats_.backward_failed;
                     }
                     if (--*remaining > 0) return;
                     if (out->staleness.empty()) {
                         ++stats_.dropped;
                         return cb(fail(Errc::dropped, "every backward call failed"));
                     }
                     cb(std::move(*out));
                 });
    }
}

template std::size_t DispatchRecord<float>::local_row(std::size_t, std::size_t) const;
template std::size_t DispatchRecord<double>::local_row(std::size_t, std::size_t) const;
template class DmoeLayer<float>;
template class DmoeLayer<double>;
template Result<Aggregate<float>> aggregate(const std::vector<std::optional<nn::BasicTensor<float>>>&,
                                            const std::vector<double>&);
template Result<Aggregate<double>> aggregate(const std::vector<std::optional<nn::BasicTensor<double>>>&,
                                             const std::vector<double>&);
template nn::BasicTensor<float> gather_rows(const nn::BasicTensor<float>&, const std::vector<std::size_t>&);
template nn::BasicTensor<double> gather_rows(const nn::BasicTensor<double>&, const std::vector<std::size_t>&);

}  // namespace swarm::moe
