#include "swarm/gating/gating.hpp"

#include <algorithm>
#include <memory>

#include "swarm/util/rng.hpp"

namespace swarm::gating {

template <typename T>
GatingParams<T> GatingParams<T>::init(const GridConfig& grid, std::size_t d_in, std::uint64_t seed) {
    grid.validate();
    Rng rng(seed);
    const double bound = 1.0 / std::sqrt(static_cast<double>(d_in));
    GatingParams p;
    for (int i = 0; i < grid.d; ++i) {
        nn::BasicTensor<T> w({d_in, static_cast<std::size_t>(grid.M)});
        for (auto& v : w.data()) v = static_cast<T>(rng.uniform(-bound, bound));
        p.w.push_back(std::move(w));
        p.b.emplace_back(nn::Shape{static_cast<std::size_t>(grid.M)});
    }
    return p;
}

template <typename T>
GateScores gate_scores(const GatingParams<T>& params, std::span<const T> x) {
    GateScores out;
    for (std::size_t i = 0; i < params.w.size(); ++i) {
        const auto& w = params.w[i];
        if (x.size() != w.rows()) {
            throw DimensionError("gate input has " + std::to_string(x.size()) + " features, expected " +
                                 std::to_string(w.rows()));
        }
        std::vector<double> s(w.cols());
        for (std::size_t j = 0; j < w.cols(); ++j) {
            T acc = params.b[i][j];
            for (std::size_t r = 0; r < w.rows(); ++r) acc += x[r] * w(r, j);
            s[j] = static_cast<double>(acc);
        }
        out.push_back(std::move(s));
    }
    return out;
}

double uid_score(const GateScores& scores, const ExpertUid& uid) {
    double s = 0.0;
    for (std::size_t i = 0; i < uid.coords.size(); ++i) s += scores.at(i).at(static_cast<std::size_t>(uid.coords[i]));
    return s;
}

template <typename T>
GatingGrads<T> gate_backward(const GatingParams<T>& params, std::span<const T> x, const GateScores& dscores) {
    GatingGrads<T> g;
    g.dx.assign(x.size(), T(0));
    for (std::size_t i = 0; i < params.w.size(); ++i) {
        const auto& w = params.w[i];
        nn::BasicTensor<T> dw(w.shape());
        nn::BasicTensor<T> db(params.b[i].shape());
        for (std::size_t j = 0; j < w.cols(); ++j) {
            const T ds = static_cast<T>(dscores.at(i).at(j));
            if (ds == T(0)) continue;
            db[j] = ds;
            for (std::size_t r = 0; r < w.rows(); ++r) {
                dw(r, j) = x[r] * ds;
                g.dx[r] += w(r, j) * ds;
            }
        }
        g.w.push_back(std::move(dw));
        g.b.push_back(std::move(db));
    }
    return g;
}

namespace {

struct Cand {
    ExpertUid uid;
    double score;
};

bool better(const Cand& a, const Cand& b) {
    if (a.score != b.score) return a.score > b.score;
    return a.uid.coords < b.uid.coords;
}

std::vector<Cand> expand(const std::vector<Cand>& beam, const GateScores& scores, std::size_t level) {
    std::vector<Cand> out;
    const auto& g = scores.at(level);
    for (const auto& p : beam) {
        for (std::size_t j = 0; j < g.size(); ++j) {
            Cand c = p;
            c.uid.coords.push_back(static_cast<int>(j));
            c.score += g[j];
            out.push_back(std::move(c));
        }
    }
    std::sort(out.begin(), out.end(), better);
    return out;
}

struct SearchState {
    GateScores scores;
    GridConfig grid;
    std::size_t k, beam_width;
    std::size_t level = 0;
    std::vector<Cand> beam{Cand{{}, 0.0}};
    LivenessOracle* oracle;
    std::function<void(std::vector<Selected>)> done;
};

void search_level(const std::shared_ptr<SearchState>& st) {
    auto cands = expand(st->beam, st->scores, st->level);
    std::vector<std::string> keys;
    keys.reserve(cands.size());
    for (const auto& c : cands) keys.push_back(c.uid.to_string(st->grid.name));
    st->oracle->query(keys, [st, cands = std::move(cands)](LivenessOracle::Answer answer) {
        const bool last = st->level + 1 == static_cast<std::size_t>(st->grid.d);
        const std::size_t keep = last ? st->k : st->beam_width;
        std::vector<Cand> next;
        std::vector<std::string> endpoints;
        for (std::size_t i = 0; i < cands.size() && next.size() < keep; ++i) {
            if (i < answer.size() && answer[i]) {
                next.push_back(cands[i]);
                endpoints.push_back(*answer[i]);
            }
        }
        if (last || next.empty()) {
            std::vector<Selected> out;
            if (last) {
                for (std::size_t i = 0; i < next.size(); ++i) out.push_back({next[i].uid, next[i].score, endpoints[i]});
            }
            return st->done(std::move(out));
        }
        st->beam = std::move(next);
        ++st->level;
        search_level(st);
    });
}

class PredicateOracle final : public LivenessOracle {
public:
    explicit PredicateOracle(const std::function<bool(const std::string&)>& f) : f_(f) {}
    void query(const std::vector<std::string>& keys, std::function<void(Answer)> done) override {
        Answer a;
        for (const auto& k : keys) a.push_back(f_(k) ? std::optional<std::string>("") : std::nullopt);
        done(std::move(a));
    }

private:
    const std::function<bool(const std::string&)>& f_;
};

}  // namespace

void select_experts(const GateScores& scores, const GridConfig& grid, std::size_t k, std::size_t beam_width,
                    LivenessOracle& alive, std::function<void(std::vector<Selected>)> done) {
    grid.validate();
    if (k < 1) throw ConfigError("k must be >= 1");
    if (beam_width < k) throw ConfigError("beam_width must be >= k");
    if (scores.size() != static_cast<std::size_t>(grid.d)) throw DimensionError("scores do not match grid d");
    for (const auto& s : scores) {
        if (s.size() != static_cast<std::size_t>(grid.M)) throw DimensionError("scores do not match grid M");
    }
    auto st = std::make_shared<SearchState>();
    st->scores = scores;
    st->grid = grid;
    st->k = k;
    st->beam_width = beam_width;
    st->oracle = &alive;
    st->done = std::move(done);
    search_level(st);
}

std::vector<Selected> select_experts(const GateScores& scores, const GridConfig& grid, std::size_t k,
                                     std::size_t beam_width, const std::function<bool(const std::string&)>& alive) {
    PredicateOracle oracle(alive);
    std::vector<Selected> out;
    select_experts(scores, grid, k, beam_width, oracle, [&](std::vector<Selected> r) { out = std::move(r); });
    return out;
}

BalanceLoss load_balance_loss(std::span<const double> importance) {
    BalanceLoss r;
    const auto n = static_cast<double>(importance.size());
    r.grad.assign(importance.size(), 0.0);
    if (importance.empty()) return r;
    double mean = 0.0;
    for (double v : importance) mean += v;
    mean /= n;
    if (mean == 0.0) return r;
    double var = 0.0;
    for (double v : importance) var += (v - mean) * (v - mean);
    var /= n;
    r.loss = var / (mean * mean);
    for (std::size_t j = 0; j < importance.size(); ++j) {
        const double dvar = 2.0 * (importance[j] - mean) / n;
        r.grad[j] = dvar / (mean * mean) - 2.0 * var / (mean * mean * mean) / n;
    }
    return r;
}

template struct GatingParams<float>;
template struct GatingParams<double>;
template GateScores gate_scores(const GatingParams<float>&, std::span<const float>);
template GateScores gate_scores(const GatingParams<double>&, std::span<const double>);
template GatingGrads<float> gate_backward(const GatingParams<float>&, std::span<const float>, const GateScores&);
template GatingGrads<double> gate_backward(const GatingParams<double>&, std::span<const double>, const GateScores&);

}  // namespace swarm::gating
