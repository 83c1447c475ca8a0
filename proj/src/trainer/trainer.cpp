#include "swarm/trainer/trainer.hpp"

#include <cmath>
#include <limits>

namespace swarm::trainer {

void TrainerConfig::validate() const {
    if (concurrent_batches < 1) throw ConfigError("concurrent_batches must be >= 1");
    if (d_in < 1 || d_model < 1 || n_classes < 2) throw ConfigError("trainer dims must be positive, classes >= 2");
    if (!(sgd.learning_rate >= 0)) throw ConfigError("learning rate must be >= 0");
}

double StalenessStats::mean() const {
    double sum = 0;
    std::uint64_t n = 0;
    for (const auto& [_, h] : per_expert) {
        for (auto [s, c] : h) {
            sum += static_cast<double>(s) * static_cast<double>(c);
            n += c;
        }
    }
    return n ? sum / static_cast<double>(n) : 0.0;
}

std::uint64_t StalenessStats::count() const {
    std::uint64_t n = 0;
    for (const auto& [_, h] : per_expert) {
        for (auto [s, c] : h) n += c;
    }
    return n;
}

std::uint64_t StalenessStats::max() const {
    std::uint64_t m = 0;
    for (const auto& [_, h] : per_expert) {
        if (!h.empty()) m = std::max(m, h.rbegin()->first);
    }
    return m;
}

template <typename T>
struct Trainer<T>::Step {
    Batch<T> batch;
    std::vector<nn::BasicTensor<T>> hs;
    std::vector<typename moe::DmoeLayer<T>::RecordPtr> recs;
    std::vector<moe::LayerGrads<T>> grads;
    typename nn::Linear<T>::Grads gin, gout;
    double loss = 0;
    std::size_t correct = 0;
    std::vector<std::uint64_t> stale;
};

template <typename T>
Trainer<T>::Trainer(net::Executor& ex, std::vector<moe::DmoeLayer<T>*> layers, TrainerConfig cfg, BatchSource<T> source)
    : ex_(ex), layers_(std::move(layers)), cfg_(cfg), source_(std::move(source)),
      in_(nn::Linear<T>::init(cfg.d_in, cfg.d_model, cfg.seed * 2 + 1)),
      out_(nn::Linear<T>::init(cfg.d_model, cfg.n_classes, cfg.seed * 2 + 2)), alive_(std::make_shared<bool>(true)) {
    cfg_.validate();
    if (layers_.empty()) throw ConfigError("trainer needs at least one layer");
    for (auto* l : layers_) {
        if (l->gating().d_in() != cfg_.d_model) throw DimensionError("layer gate width differs from d_model");
    }
}

template <typename T>
Trainer<T>::~Trainer() {
    *alive_ = false;
}

template <typename T>
void Trainer<T>::start(std::uint64_t steps, std::function<void()> done) {
    remaining_ += steps;
    done_ = std::move(done);
    if (steps == 0 && idle()) {
        if (auto d = std::move(done_)) d();
        return;
    }
    launch();
}

template <typename T>
bool Trainer<T>::run(std::uint64_t steps, double timeout_ms) {
    bool finished = false;
    start(steps, [&finished] { finished = true; });
    const bool ok = ex_.run_until([&] { return finished; }, timeout_ms);
    if (!ok) done_ = nullptr;
    return ok;
}

template <typename T>
void Trainer<T>::launch() {
    while (remaining_ > 0 && in_flight_ < cfg_.concurrent_batches) {
        --remaining_;
        ++in_flight_;
        auto st = std::make_shared<Step>();
        st->batch = source_(next_batch_);
        st->batch.index = next_batch_++;
        if (st->batch.x.cols() != cfg_.d_in || st->batch.labels.size() != st->batch.x.rows()) {
            throw DimensionError("batch does not match trainer input");
        }
        st->hs.push_back(in_.forward(st->batch.x));
        st->recs.resize(layers_.size());
        st->grads.resize(layers_.size());
        // layers may answer synchronously; keep the launch loop flat
        auto alive = alive_;
        ex_.post([this, alive, st] {
            if (*alive) forward_layer(st, 0);
        });
    }
}

template <typename T>
void Trainer<T>::forward_layer(std::shared_ptr<Step> st, std::size_t l) {
    if (l == layers_.size()) {
        const auto& h = st->hs.back();
        const auto logits = out_.forward(h);
        auto xent = nn::softmax_xent(logits, st->batch.labels);
        st->loss = xent.loss;
        st->correct = nn::count_correct(logits, st->batch.labels);
        st->gout = out_.backward(h, xent.dlogits);
        auto dh = st->gout.dx;
        return backward_layer(st, layers_.size() - 1, std::move(dh));
    }
    auto alive = alive_;
    layers_[l]->forward(st->hs[l], [this, alive, st, l](Result<std::pair<nn::BasicTensor<T>, typename moe::DmoeLayer<T>::RecordPtr>> r) {
        if (!*alive) return;
        if (!r) return finish(st, true);
        auto& [y, rec] = r.value();
        st->recs[l] = rec;
        if (cfg_.residual) nn::axpy(y, T(1), st->hs[l]);
        st->hs.push_back(std::move(y));
        forward_layer(st, l + 1);
    });
}

template <typename T>
void Trainer<T>::backward_layer(std::shared_ptr<Step> st, std::size_t l, nn::BasicTensor<T> dh) {
    auto alive = alive_;
    auto keep = cfg_.residual ? std::make_shared<nn::BasicTensor<T>>(dh) : nullptr;
    layers_[l]->backward(st->recs[l], std::move(dh), [this, alive, st, l, keep](Result<moe::LayerGrads<T>> r) {
        if (!*alive) return;
        if (!r) return finish(st, true);
        auto& g = r.value();
        for (const auto& [uid, s] : g.staleness) {
            staleness_.add(uid, s);
            st->stale.push_back(s);
        }
        auto dx = std::move(g.dx);
        if (keep) nn::axpy(dx, T(1), *keep);
        st->grads[l] = std::move(g);
        if (l > 0) return backward_layer(st, l - 1, std::move(dx));
        st->gin = in_.backward(st->batch.x, dx);
        finish(st, false);
    });
}

template <typename T>
void Trainer<T>::finish(std::shared_ptr<Step> st, bool skipped) {
    if (!skipped) {
        std::vector<nn::BasicTensor<T>*> params{&in_.w, &in_.b, &out_.w, &out_.b};
        std::vector<const nn::BasicTensor<T>*> grads{&st->gin.dw, &st->gin.db, &st->gout.dw, &st->gout.db};
        for (std::size_t l = 0; l < layers_.size(); ++l) {
            auto& gp = layers_[l]->gating();
            for (std::size_t i = 0; i < gp.w.size(); ++i) {
                params.push_back(&gp.w[i]);
                grads.push_back(&st->grads[l].gate_w[i]);
                params.push_back(&gp.b[i]);
                grads.push_back(&st->grads[l].gate_b[i]);
            }
        }
        try {
            nn::sgd_update<T>(params, grads, cfg_.sgd);
        } catch (const NumericError&) {
            skipped = true;
        }
        if (!std::isfinite(st->loss)) skipped = true;
    }
    --in_flight_;
    if (skipped) {
        ++skipped_;
    } else {
        StepLog e;
        e.step = completed_++;
        e.batch = st->batch.index;
        e.sim_time_ms = ex_.now_ms();
        e.loss = st->loss;
        double s = 0;
        for (auto v : st->stale) s += static_cast<double>(v);
        e.staleness_mean = st->stale.empty() ? 0.0 : s / static_cast<double>(st->stale.size());
        e.skipped = skipped_;
        e.correct = st->correct;
        e.examples = st->batch.labels.size();
        log_.push_back(e);
    }
    if (remaining_ == 0 && in_flight_ == 0) {
        if (auto d = std::move(done_)) d();
        return;
    }
    launch();
}

template <typename T>
void Trainer<T>::predict(nn::BasicTensor<T> x, std::function<void(Result<nn::BasicTensor<T>>)> cb) {
    predict_from(in_.forward(x), 0, std::move(cb));
}

template <typename T>
void Trainer<T>::predict_from(nn::BasicTensor<T> h, std::size_t l, std::function<void(Result<nn::BasicTensor<T>>)> cb) {
    if (l == layers_.size()) return cb(out_.forward(h));
    auto alive = alive_;
    auto keep = std::make_shared<nn::BasicTensor<T>>(h);
    layers_[l]->forward(std::move(h), [this, alive, keep, l, cb](auto r) {
        if (!*alive) return;
        if (!r) return cb(r.failure());
        auto y = std::move(r.value().first);
        if (cfg_.residual) nn::axpy(y, T(1), *keep);
        predict_from(std::move(y), l + 1, cb);
    });
}

void write_log_csv(std::ostream& os, const std::vector<StepLog>& log) {
    os << "step,sim_time_ms,loss,staleness_mean,skipped\n";
    char buf[160];
    for (const auto& e : log) {
        std::snprintf(buf, sizeof buf, "%llu,%.3f,%.6f,%.4f,%llu\n", static_cast<unsigned long long>(e.step),
                      e.sim_time_ms, e.loss, e.staleness_mean, static_cast<unsigned long long>(e.skipped));
        os << buf;
    }
}

template class Trainer<float>;
template class Trainer<double>;

}  // namespace swarm::trainer
