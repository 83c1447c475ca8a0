#include "swarm/experiments/config.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>
#include <variant>

#include "swarm/util/error.hpp"

namespace swarm::experiments {

namespace {

using C = ExperimentConfig;
static_assert(std::is_same_v<std::size_t, std::uint64_t>, "size fields share the u64 accessor");
using Member = std::variant<int C::*, std::uint64_t C::*, double C::*, bool C::*, std::string C::*,
                            std::vector<double> C::*, std::vector<std::string> C::*>;

struct Field {
    const char* name;
    Member member;
};

const std::vector<Field>& fields() {
    static const std::vector<Field> f{
        {"schema", &C::schema},
        {"seed", &C::seed},
        {"out", &C::out},
        {"d_model", &C::d_model},
        {"ffn_hidden", &C::ffn_hidden},
        {"expert_hidden", &C::expert_hidden},
        {"layers", &C::layers},
        {"grid_d", &C::grid_d},
        {"small_grid_m", &C::small_grid_m},
        {"large_grid_m", &C::large_grid_m},
        {"k", &C::k},
        {"beam_width", &C::beam_width},
        {"per_example_routing", &C::per_example_routing},
        {"batch_size", &C::batch_size},
        {"learning_rate", &C::learning_rate},
        {"expert_learning_rate", &C::expert_learning_rate},
        {"gradient_clip", &C::gradient_clip},
        {"layer_norm", &C::layer_norm},
        {"runtimes", &C::runtimes},
        {"max_batch", &C::max_batch},
        {"batch_window_ms", &C::batch_window_ms},
        {"device_gflops", &C::device_gflops},
        {"timeout_factor", &C::timeout_factor},
        {"min_timeout_ms", &C::min_timeout_ms},
        {"dataset", &C::dataset},
        {"data_dir", &C::data_dir},
        {"synthetic_samples", &C::synthetic_samples},
        {"synthetic_features", &C::synthetic_features},
        {"synthetic_classes", &C::synthetic_classes},
        {"synthetic_noise", &C::synthetic_noise},
        {"steps", &C::steps},
        {"seeds", &C::seeds},
        {"high_workers", &C::high_workers},
        {"high_delay_ms", &C::high_delay_ms},
        {"low_workers", &C::low_workers},
        {"low_delay_ms", &C::low_delay_ms},
        {"accuracy_window", &C::accuracy_window},
        {"log_every", &C::log_every},
        {"target_accuracy", &C::target_accuracy},
        {"models", &C::models},
        {"delays_ms", &C::delays_ms},
        {"repetitions", &C::repetitions},
        {"throughput_batches", &C::throughput_batches},
        {"throughput_trainers", &C::throughput_trainers},
        {"throughput_concurrency", &C::throughput_concurrency},
        {"throughput_timeout_ms", &C::throughput_timeout_ms},
        {"failure_daily_prob", &C::failure_daily_prob},
        {"failure_duration_ms", &C::failure_duration_ms},
        {"call_failure_prob", &C::call_failure_prob},
        {"role", &C::role},
        {"listen", &C::listen},
        {"bootstrap", &C::bootstrap},
        {"experts", &C::experts},
        {"freshness_ms", &C::freshness_ms},
        {"checkpoint_interval_ms", &C::checkpoint_interval_ms},
        {"node_steps", &C::node_steps},
        {"run_for_ms", &C::run_for_ms},
        {"bootstrap_retries", &C::bootstrap_retries},
        {"ready_file", &C::ready_file},
    };
    return f;
}

std::string trim(std::string_view s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string_view::npos) return {};
    const auto e = s.find_last_not_of(" \t\r");
    return std::string(s.substr(b, e - b + 1));
}

std::vector<std::string> split_list(const std::string& v) {
    std::vector<std::string> out;
    if (trim(v).empty()) return out;
    std::stringstream ss(v);
    std::string item;
    while (std::getline(ss, item, ',')) out.push_back(trim(item));
    return out;
}

template <typename I>
I parse_int(const std::string& key, const std::string& v) {
    I out{};
    auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
    if (ec != std::errc() || p != v.data() + v.size()) throw ConfigError("bad integer for " + key + ": '" + v + "'");
    return out;
}

double parse_double(const std::string& key, const std::string& v) {
    try {
        std::size_t used = 0;
        const double d = std::stod(v, &used);
        if (used != v.size() || !std::isfinite(d)) throw std::invalid_argument(v);
        return d;
    } catch (const std::exception&) {
        throw ConfigError("bad number for " + key + ": '" + v + "'");
    }
}

std::string format_double(double d) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.17g", d);
    return buf;
}

}  // namespace

void set_config_value(ExperimentConfig& cfg, const std::string& key, const std::string& raw) {
    const std::string v = trim(raw);
    for (const auto& f : fields()) {
        if (key != f.name) continue;
        std::visit(
            [&](auto m) {
                using M = std::remove_cvref_t<decltype(cfg.*m)>;
                if constexpr (std::is_same_v<M, bool>) {
                    if (v == "true" || v == "1") {
                        cfg.*m = true;
                    } else if (v == "false" || v == "0") {
                        cfg.*m = false;
                    } else {
                        throw ConfigError("bad boolean for " + key + ": '" + v + "'");
                    }
                } else if constexpr (std::is_integral_v<M>) {
                    cfg.*m = parse_int<M>(key, v);
                } else if constexpr (std::is_same_v<M, double>) {
                    cfg.*m = parse_double(key, v);
                } else if constexpr (std::is_same_v<M, std::string>) {
                    cfg.*m = v;
                } else if constexpr (std::is_same_v<M, std::vector<double>>) {
                    M out;
                    for (const auto& item : split_list(v)) out.push_back(parse_double(key, item));
                    cfg.*m = out;
                } else {
                    cfg.*m = split_list(v);
                }
            },
            f.member);
        return;
    }
    throw ConfigError("unknown config key '" + key + "'");
}

ExperimentConfig parse_config(const std::string& text) {
    ExperimentConfig cfg;
    cfg.schema = 0;
    std::istringstream in(text);
    std::string line;
    int lineno = 0;
    std::vector<std::string> seen;
    while (std::getline(in, line)) {
        ++lineno;
        if (auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
        if (trim(line).empty()) continue;
        const auto eq = line.find('=');
        if (eq == std::string::npos) throw ConfigError("line " + std::to_string(lineno) + ": expected key = value");
        const std::string key = trim(line.substr(0, eq));
        if (std::find(seen.begin(), seen.end(), key) != seen.end()) {
            throw ConfigError("line " + std::to_string(lineno) + ": duplicate key '" + key + "'");
        }
        seen.push_back(key);
        try {
            set_config_value(cfg, key, line.substr(eq + 1));
        } catch (const ConfigError& e) {
            throw ConfigError("line " + std::to_string(lineno) + ": " + e.what());
        }
    }
    if (cfg.schema != kSchemaVersion) {
        throw ConfigError("config must declare schema = " + std::to_string(kSchemaVersion));
    }
    cfg.validate();
    return cfg;
}

ExperimentConfig load_config(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw ConfigError("cannot open config file " + path);
    std::stringstream ss;
    ss << f.rdbuf();
    return parse_config(ss.str());
}

std::string serialize_config(const ExperimentConfig& cfg) {
    std::ostringstream os;
    for (const auto& f : fields()) {
        os << f.name << " = ";
        std::visit(
            [&](auto m) {
                using M = std::remove_cvref_t<decltype(cfg.*m)>;
                const auto& v = cfg.*m;
                if constexpr (std::is_same_v<M, bool>) {
                    os << (v ? "true" : "false");
                } else if constexpr (std::is_integral_v<M>) {
                    os << v;
                } else if constexpr (std::is_same_v<M, double>) {
                    os << format_double(v);
                } else if constexpr (std::is_same_v<M, std::string>) {
                    os << v;
                } else if constexpr (std::is_same_v<M, std::vector<double>>) {
                    for (std::size_t i = 0; i < v.size(); ++i) os << (i ? "," : "") << format_double(v[i]);
                } else {
                    for (std::size_t i = 0; i < v.size(); ++i) os << (i ? "," : "") << v[i];
                }
            },
            f.member);
        os << "\n";
    }
    return os.str();
}

bool operator==(const ExperimentConfig& a, const ExperimentConfig& b) {
    for (const auto& f : fields()) {
        const bool same = std::visit([&](auto m) { return a.*m == b.*m; }, f.member);
        if (!same) return false;
    }
    return true;
}

void ExperimentConfig::validate() const {
    auto need = [](bool ok, const char* what) {
        if (!ok) throw ConfigError(what);
    };
    need(schema == kSchemaVersion, "unsupported schema version");
    need(d_model > 0 && ffn_hidden > 0 && layers > 0, "model dims and layers must be positive");
    need(grid_d >= 1 && small_grid_m >= 1 && large_grid_m >= 1, "grid sizes must be positive");
    need(k >= 1, "k must be >= 1");
    need(beam_width == 0 || beam_width >= k, "beam_width must be 0 or >= k");
    need(batch_size > 0, "batch_size must be positive");
    need(learning_rate >= 0 && expert_learning_rate >= 0 && gradient_clip >= 0, "learning rates must be >= 0");
    need(runtimes > 0 && max_batch > 0, "runtimes and max_batch must be positive");
    need(batch_window_ms >= 0 && device_gflops >= 0, "batch window and device speed must be >= 0");
    need(timeout_factor > 0 && min_timeout_ms > 0, "timeouts must be positive");
    need(dataset == "synthetic" || dataset == "mnist", "dataset must be synthetic or mnist");
    need(synthetic_samples > 0 && synthetic_features > 0 && synthetic_classes >= 2, "bad synthetic dataset shape");
    need(synthetic_noise >= 0, "synthetic_noise must be >= 0");
    need(seeds > 0 && repetitions > 0, "seeds and repetitions must be positive");
    need(high_workers > 0 && low_workers > 0, "worker counts must be positive");
    need(high_delay_ms >= 0 && low_delay_ms >= 0, "delays must be >= 0");
    need(accuracy_window > 0 && log_every > 0, "accuracy_window and log_every must be positive");
    for (const auto& m : models) need(m == "ffn" || m == "dmoe-small" || m == "dmoe-large", "unknown model name");
    for (double d : delays_ms) need(d >= 0, "delays must be >= 0");
    need(throughput_batches > 0 && throughput_trainers > 0 && throughput_concurrency > 0 && throughput_timeout_ms > 0,
         "bad throughput settings");
    need(target_accuracy >= 0 && target_accuracy <= 1, "target_accuracy must be in [0, 1]");
    need(failure_daily_prob >= 0 && failure_daily_prob <= 1, "failure_daily_prob must be in [0, 1]");
    need(call_failure_prob >= 0 && call_failure_prob < 1, "call_failure_prob must be in [0, 1)");
    need(role.empty() || role == "dht" || role == "runtime" || role == "trainer", "role must be dht, runtime or trainer");
    need(freshness_ms > 0, "freshness_ms must be positive");
    need(checkpoint_interval_ms >= 0 && run_for_ms >= 0, "intervals must be >= 0");
}

}  // namespace swarm::experiments
