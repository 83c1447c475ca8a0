#pragma once

#include "swarm/experiments/config.hpp"

namespace swarm::experiments {

/// Run one dht, runtime or trainer node over TCP until signalled (or run_for_ms / node_steps
/// elapse). Returns the process exit code.
int run_node(const ExperimentConfig& cfg);

}  // namespace swarm::experiments
