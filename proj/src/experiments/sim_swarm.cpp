#include "swarm/experiments/sim_swarm.hpp"

#include <cmath>

namespace swarm::experiments {

gating::GridConfig ModelSpec::grid(std::size_t layer) const {
    return {grid_d, grid_m, "expert" + std::to_string(layer)};
}

std::size_t ModelSpec::experts_per_layer() const {
    return static_cast<std::size_t>(std::pow(grid_m, grid_d));
}

std::size_t parity_hidden(std::size_t d_model, std::size_t ffn_hidden, std::size_t k) {
    const double d = static_cast<double>(d_model), H = static_cast<double>(ffn_hidden);
    const double target = (2 * d * H + H * H) / static_cast<double>(k);
    const double root = -d + std::sqrt(d * d + target);
    std::size_t best = 1;
    double best_err = 1e300;
    for (auto h = static_cast<std::size_t>(std::max(1.0, std::floor(root))); h <= std::ceil(root) + 1; ++h) {
        const double hh = static_cast<double>(h);
        const double err = std::abs(2 * d * hh + hh * hh - target);
        if (err < best_err) best = h, best_err = err;
    }
    return best;
}

std::uint64_t expert_flops_per_step(const ModelSpec& spec, std::size_t batch) {
    const std::uint64_t one = 2 * nn::ffn_forward_flops(spec.expert, batch) + nn::ffn_backward_flops(spec.expert, batch);
    return spec.layers * spec.k * one;
}

template <typename T>
SimSwarm<T>::SimSwarm(net::SimNetwork& net, ModelSpec spec, std::size_t runtimes_per_layer,
                      runtime::RuntimeConfig rcfg, std::uint64_t seed)
    : net_(net), spec_(std::move(spec)) {
    if (runtimes_per_layer == 0) throw ConfigError("need at least one runtime per layer");
    for (std::size_t l = 0; l < spec_.layers; ++l) {
        const auto grid = spec_.grid(l);
        liveness_.push_back(std::make_unique<gating::StaticLiveness>(grid));
        std::vector<std::vector<runtime::HostedExpert<T>>> share(runtimes_per_layer);
        std::size_t i = 0;
        for (const auto& uid : gating::enumerate_grid(grid)) {
            const std::uint64_t expert_seed = seed * 1'000'003ULL + l * 65'536ULL + i;
            share[i % runtimes_per_layer].push_back(
                {uid, nn::FfnExpertState<T>::init(spec_.expert, expert_seed, spec_.layer_norm)});
            ++i;
        }
        auto cfg = rcfg;
        cfg.grid = grid;
        for (std::size_t r = 0; r < runtimes_per_layer; ++r) {
            endpoints_.push_back(net_.endpoint(grid.name + "-rt" + std::to_string(r)));
            for (const auto& e : share[r]) liveness_.back()->add(e.uid, endpoints_.back()->address());
            runtimes_.push_back(std::make_unique<runtime::Runtime<T>>(*endpoints_.back(), nullptr, cfg, share[r]));
            runtimes_.back()->start();
        }
    }
}

template <typename T>
SimSwarm<T>::~SimSwarm() {
    trainers_.clear();
    runtimes_.clear();
}

template <typename T>
trainer::Trainer<T>& SimSwarm<T>::add_trainer(trainer::TrainerConfig tcfg, moe::DmoeConfig dcfg,
                                              trainer::BatchSource<T> src) {
    auto slot = std::make_unique<TrainerSlot>();
    slot->ep = net_.endpoint("trainer" + std::to_string(trainers_.size()));
    dcfg.k = spec_.k;
    std::vector<moe::DmoeLayer<T>*> raw;
    for (std::size_t l = 0; l < spec_.layers; ++l) {
        const auto grid = spec_.grid(l);
        auto gate = gating::GatingParams<T>::init(grid, tcfg.d_model, tcfg.seed * 1'000'003ULL + 7919 * (l + 1));
        slot->layers.push_back(std::make_unique<moe::DmoeLayer<T>>(grid, dcfg, std::move(gate), *slot->ep,
                                                                    *liveness_[l]));
        raw.push_back(slot->layers.back().get());
    }
    slot->trainer = std::make_unique<trainer::Trainer<T>>(net_, raw, tcfg, std::move(src));
    trainers_.push_back(std::move(slot));
    return *trainers_.back()->trainer;
}

template <typename T>
std::vector<runtime::Runtime<T>*> SimSwarm<T>::runtimes() const {
    std::vector<runtime::Runtime<T>*> out;
    for (const auto& r : runtimes_) out.push_back(r.get());
    return out;
}

template <typename T>
std::vector<std::string> SimSwarm<T>::runtime_addresses() const {
    std::vector<std::string> out;
    for (const auto& e : endpoints_) out.push_back(e->address());
    return out;
}

template <typename T>
std::vector<moe::DmoeLayer<T>*> SimSwarm<T>::layers(std::size_t trainer) const {
    std::vector<moe::DmoeLayer<T>*> out;
    for (const auto& l : trainers_.at(trainer)->layers) out.push_back(l.get());
    return out;
}

template <typename T>
std::uint64_t SimSwarm<T>::expert_flops() const {
    std::uint64_t total = 0;
    for (const auto& r : runtimes_) {
        for (const auto& uid : r->hosted()) total += r->counters(uid).flops;
    }
    return total;
}

template <typename T>
bool SimSwarm<T>::run_until_idle(double timeout_ms) {
    return net_.run_until(
        [this] {
            for (const auto& t : trainers_) {
                if (!t->trainer->idle()) return false;
            }
            return true;
        },
        timeout_ms);
}

template class SimSwarm<float>;
template class SimSwarm<double>;

}  // namespace swarm::experiments
