#pragma once

#include <ostream>
#include <string>
#include <vector>

#include "swarm/experiments/config.hpp"
#include "swarm/experiments/dataset.hpp"
#include "swarm/experiments/sim_swarm.hpp"

namespace swarm::experiments {

/// "ffn": layers blocks of ffn_hidden; "dmoe-small"/"dmoe-large": grid_d x {small,large}_grid_m
/// experts per layer with hidden width expert_hidden (or the parity width when 0).
ModelSpec model_spec(const ExperimentConfig& cfg, const std::string& name);

/// Synthetic blobs or MNIST, per cfg.dataset.
Dataset load_dataset(const ExperimentConfig& cfg);

/// Seed of run `index` in a family of runs derived from the configured seed.
std::uint64_t run_seed(std::uint64_t base, std::uint64_t family, std::uint64_t index);

// throughput

struct ThroughputRow {
    double mean_delay_ms = 0;
    std::string scheme;  // dmoe | pipeline
    double batches_per_sec = 0;
    double stddev = 0;
    std::vector<double> samples;
};

/// Batches per simulated second of the asynchronous DMoE and of the sequential pipeline,
/// for every delay in cfg.delays_ms, cfg.repetitions times each.
std::vector<ThroughputRow> run_throughput(const ExperimentConfig& cfg);
/// One repetition of one scheme.
double measure_throughput(const ExperimentConfig& cfg, const std::string& scheme, double delay_ms, std::uint64_t seed);
void write_throughput_csv(std::ostream& os, const std::vector<ThroughputRow>& rows);

// convergence

struct Regime {
    std::string name;  // high | low
    std::size_t workers;
    double delay_ms;
};
std::vector<Regime> regimes(const ExperimentConfig& cfg);

/// One model trained under one regime with one seed.
struct TrainingRun {
    std::vector<trainer::StepLog> log;
    std::uint64_t skipped = 0;
    std::uint64_t expert_flops = 0;
    double staleness_mean = 0;
    double sim_time_ms = 0;
};
TrainingRun train_once(const ExperimentConfig& cfg, const Dataset& data, const ModelSpec& spec, const Regime& regime,
                       std::uint64_t seed);

/// Train accuracy over the `window` log entries ending at position `end` (exclusive).
double window_accuracy(const std::vector<trainer::StepLog>& log, std::size_t end, std::size_t window);

struct ConvergenceRow {
    std::string scheme, latency_regime;
    std::uint64_t step = 0;
    double sim_time_ms = 0;
    double train_accuracy = 0;
};

struct ModelSummary {
    std::string scheme;
    double final_low = 0, final_high = 0;
    double gap = 0;  // low - high
    std::uint64_t flops_per_step = 0;          // analytic
    double measured_flops_per_step = 0;        // from runtime counters
    double staleness_low = 0, staleness_high = 0;
    std::uint64_t skipped = 0;
};

struct ConvergenceResult {
    std::vector<ConvergenceRow> rows;  // seed-averaged
    std::vector<ModelSummary> models;
};

ConvergenceResult run_convergence(const ExperimentConfig& cfg);
void write_convergence_csv(std::ostream& os, const std::vector<ConvergenceRow>& rows);

}  // namespace swarm::experiments
