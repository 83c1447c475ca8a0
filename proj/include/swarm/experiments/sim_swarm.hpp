#pragma once

#include <memory>
#include <string>
#include <vector>

#include "swarm/gating/liveness.hpp"
#include "swarm/moe/layer.hpp"
#include "swarm/net/sim.hpp"
#include "swarm/runtime/runtime.hpp"
#include "swarm/trainer/trainer.hpp"

namespace swarm::experiments {

/// Shape of a model: `layers` DMoE layers over d x M grids, k experts per call.
/// A plain FFN stack is the 1 x 1 grid with k = 1.
struct ModelSpec {
    std::string name;
    std::size_t layers = 4;
    int grid_d = 1;
    int grid_m = 1;
    std::size_t k = 1;
    nn::FfnDims expert;
    bool layer_norm = true;

    gating::GridConfig grid(std::size_t layer) const;
    std::size_t experts_per_layer() const;
};

/// Hidden width h whose block cost 2*d*h + h^2 is closest to (2*d*H + H^2) / k.
std::size_t parity_hidden(std::size_t d_model, std::size_t ffn_hidden, std::size_t k);

/// Expert FLOPs of one training step over `batch` rows: per layer, k experts each run
/// forward, a recomputed forward and backward.
std::uint64_t expert_flops_per_step(const ModelSpec& spec, std::size_t batch);

/// Runtimes for every layer of a model on a simulated network, found through static directories.
template <typename T>
class SimSwarm {
public:
    SimSwarm(net::SimNetwork& net, ModelSpec spec, std::size_t runtimes_per_layer, runtime::RuntimeConfig rcfg,
             std::uint64_t seed);
    ~SimSwarm();

    /// A trainer with its own endpoint, input/output projections and gating.
    trainer::Trainer<T>& add_trainer(trainer::TrainerConfig tcfg, moe::DmoeConfig dcfg, trainer::BatchSource<T> src);

    net::SimNetwork& network() noexcept { return net_; }
    const ModelSpec& spec() const noexcept { return spec_; }
    std::vector<runtime::Runtime<T>*> runtimes() const;
    std::vector<std::string> runtime_addresses() const;
    gating::StaticLiveness& liveness(std::size_t layer) { return *liveness_.at(layer); }
    trainer::Trainer<T>& trainer(std::size_t i) { return *trainers_.at(i)->trainer; }
    std::size_t trainer_count() const noexcept { return trainers_.size(); }
    std::vector<moe::DmoeLayer<T>*> layers(std::size_t trainer) const;

    /// Sum of FLOPs counted by every runtime.
    std::uint64_t expert_flops() const;
    /// Drive the network until every trainer is idle. False on timeout.
    bool run_until_idle(double timeout_ms = 1e15);

private:
    struct TrainerSlot {
        std::unique_ptr<net::SimTransport> ep;
        std::vector<std::unique_ptr<moe::DmoeLayer<T>>> layers;
        std::unique_ptr<trainer::Trainer<T>> trainer;
    };

    net::SimNetwork& net_;
    ModelSpec spec_;
    std::vector<std::unique_ptr<gating::StaticLiveness>> liveness_;
    std::vector<std::unique_ptr<net::SimTransport>> endpoints_;
    std::vector<std::unique_ptr<runtime::Runtime<T>>> runtimes_;
    std::vector<std::unique_ptr<TrainerSlot>> trainers_;
};

}  // namespace swarm::experiments
