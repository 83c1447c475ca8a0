#include <CLI11.hpp>
#include <spdlog/sinks/stdout_color_sinks.h>
#include <spdlog/spdlog.h>

#include <fstream>
#include <iostream>
#include <optional>

#include "swarm/experiments/experiments.hpp"
#include "swarm/experiments/node.hpp"

using namespace swarm::experiments;

namespace {

struct Common {
    std::string config;
    std::optional<std::uint64_t> seed;
    std::string out;
    std::vector<std::string> overrides;
    std::string log_level = "info";
};

void add_common(CLI::App* cmd, Common& c) {
    cmd->add_option("--config", c.config, "Config file (key = value lines, schema = 1)")->required();
    cmd->add_option("--seed", c.seed, "Override the config seed");
    cmd->add_option("--out", c.out, "CSV output path (stdout when empty)");
    cmd->add_option("--set", c.overrides, "Extra key=value override, repeatable");
    cmd->add_option("--log-level", c.log_level, "trace|debug|info|warn|error|off");
}

ExperimentConfig resolve(const Common& c) {
    auto cfg = load_config(c.config);
    for (const auto& kv : c.overrides) {
        const auto eq = kv.find('=');
        if (eq == std::string::npos) throw swarm::ConfigError("--set expects key=value, got " + kv);
        set_config_value(cfg, kv.substr(0, eq), kv.substr(eq + 1));
    }
    if (c.seed) cfg.seed = *c.seed;
    if (!c.out.empty()) cfg.out = c.out;
    cfg.validate();
    return cfg;
}

template <typename F>
void with_output(const ExperimentConfig& cfg, F&& write) {
    if (cfg.out.empty()) {
        write(std::cout);
        return;
    }
    std::ofstream f(cfg.out);
    if (!f) throw swarm::ConfigError("cannot write " + cfg.out);
    write(f);
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Decentralized mixture-of-experts swarm: experiments and nodes"};
    app.require_subcommand(1);
    Common tp, cv, nd;
    std::string role;
    auto* throughput = app.add_subcommand("throughput", "Throughput of asynchronous DMoE vs a sequential pipeline");
    add_common(throughput, tp);
    auto* convergence = app.add_subcommand("convergence", "Accuracy under high and low latency regimes");
    add_common(convergence, cv);
    auto* node = app.add_subcommand("node", "Run a dht, runtime or trainer node over TCP");
    add_common(node, nd);
    node->add_option("--role", role, "Override the configured role")->check(CLI::IsMember({"dht", "runtime", "trainer"}));

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        return app.exit(e) == 0 ? 0 : 2;
    }

    const Common& c = throughput->parsed() ? tp : convergence->parsed() ? cv : nd;
    spdlog::set_default_logger(spdlog::stderr_color_mt("dmoe"));
    spdlog::set_level(spdlog::level::from_str(c.log_level));
    try {
        auto cfg = resolve(c);
        if (throughput->parsed()) {
            auto rows = run_throughput(cfg);
            with_output(cfg, [&](std::ostream& os) { write_throughput_csv(os, rows); });
        } else if (convergence->parsed()) {
            auto res = run_convergence(cfg);
            with_output(cfg, [&](std::ostream& os) { write_convergence_csv(os, res.rows); });
        } else {
            if (!role.empty()) cfg.role = role;
            if (cfg.role.empty()) throw swarm::ConfigError("node needs a role (dht, runtime or trainer)");
            return run_node(cfg);
        }
    } catch (const swarm::ConfigError& e) {
        spdlog::error("{}", e.what());
        return 2;
    } catch (const std::exception& e) {
        spdlog::error("{}", e.what());
        return 1;
    }
    return 0;
}
