#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace swarm::experiments {

inline constexpr int kSchemaVersion = 1;

/// Every knob of the command line tool. Files are `key = value` lines, `#` starts a comment,
/// lists are comma separated, and `schema = 1` must be present. Unknown keys are errors.
struct ExperimentConfig {
    int schema = kSchemaVersion;
    std::uint64_t seed = 0;
    std::string out;

    // model
    std::size_t d_model = 64;
    std::size_t ffn_hidden = 256;
    std::size_t expert_hidden = 0;  // 0: pick the width with the FFN block's parameter count / k
    std::size_t layers = 4;
    int grid_d = 2;
    int small_grid_m = 4;
    int large_grid_m = 8;
    std::size_t k = 4;
    std::size_t beam_width = 0;  // 0: 4k
    bool per_example_routing = true;
    std::size_t batch_size = 32;
    double learning_rate = 0.05;
    double expert_learning_rate = 0.05;
    double gradient_clip = 0.0;  // 0: off
    bool layer_norm = true;

    // runtimes
    std::size_t runtimes = 1;  // per layer
    std::size_t max_batch = 64;
    double batch_window_ms = 0.0;
    double device_gflops = 0.0;  // 0: compute takes no simulated time
    double timeout_factor = 10.0;
    double min_timeout_ms = 1000.0;

    // data
    std::string dataset = "synthetic";  // synthetic | mnist
    std::string data_dir;               // falls back to DMOE_DATA_DIR
    std::size_t synthetic_samples = 20000;
    std::size_t synthetic_features = 64;
    std::size_t synthetic_classes = 10;
    double synthetic_noise = 1.0;

    // convergence
    std::size_t steps = 600;
    std::size_t seeds = 5;
    std::size_t high_workers = 64;
    double high_delay_ms = 1000.0;  // mean network delay per batch, spread over every message
    std::size_t low_workers = 16;
    double low_delay_ms = 100.0;
    std::size_t accuracy_window = 60;
    std::size_t log_every = 20;
    double target_accuracy = 0.9;  // reported against, never enforced
    std::vector<std::string> models{"ffn", "dmoe-small", "dmoe-large"};

    // throughput
    std::vector<double> delays_ms{0, 50, 100, 150, 200};
    std::size_t repetitions = 5;
    std::size_t throughput_batches = 100;
    std::size_t throughput_trainers = 4;
    std::size_t throughput_concurrency = 8;
    double throughput_timeout_ms = 60'000.0;

    // failures
    double failure_daily_prob = 0.0;
    double failure_duration_ms = 60'000.0;
    double call_failure_prob = 0.0;

    // node
    std::string role;  // dht | runtime | trainer
    std::string listen = "tcp://127.0.0.1:0";
    std::vector<std::string> bootstrap;
    std::vector<std::string> experts;  // hosted UIDs for a runtime
    double freshness_ms = 30'000.0;
    double checkpoint_interval_ms = 0.0;  // 0: only on shutdown
    std::size_t node_steps = 0;           // trainer: 0 runs until stopped
    double run_for_ms = 0.0;              // 0: until signalled
    std::size_t bootstrap_retries = 5;
    std::string ready_file;               // written once the node is up

    void validate() const;
};

ExperimentConfig parse_config(const std::string& text);
ExperimentConfig load_config(const std::string& path);
/// Canonical text form; parse_config(serialize_config(c)) reproduces c.
std::string serialize_config(const ExperimentConfig& cfg);
/// Apply one `key = value` override.
void set_config_value(ExperimentConfig& cfg, const std::string& key, const std::string& value);

bool operator==(const ExperimentConfig& a, const ExperimentConfig& b);

}  // namespace swarm::experiments
