#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <sstream>

#include "swarm/experiments/experiments.hpp"
#include "swarm/gating/gating.hpp"
#include "swarm/moe/layer.hpp"

namespace py = pybind11;
using namespace swarm;
using namespace swarm::experiments;

namespace {

py::dict config_dict(const ExperimentConfig& c) {
    py::dict d;
    std::istringstream in(serialize_config(c));
    std::string line;
    while (std::getline(in, line)) {
        const auto eq = line.find(" = ");
        d[py::str(line.substr(0, eq))] = line.substr(eq + 3);
    }
    return d;
}

ExperimentConfig make_config(const py::dict& overrides) {
    ExperimentConfig c;
    for (auto [k, v] : overrides) {
        std::string value;
        if (py::isinstance<py::bool_>(v)) {
            value = v.cast<bool>() ? "true" : "false";
        } else if (py::isinstance<py::list>(v) || py::isinstance<py::tuple>(v)) {
            for (auto item : v) value += (value.empty() ? "" : ",") + py::str(item).cast<std::string>();
        } else {
            value = py::str(v).cast<std::string>();
        }
        set_config_value(c, k.cast<std::string>(), value);
    }
    c.validate();
    return c;
}

}  // namespace

PYBIND11_MODULE(_core, m) {
    m.doc() = "Decentralized mixture-of-experts swarm core";

    py::register_exception<ConfigError>(m, "ConfigError", PyExc_ValueError);
    py::register_exception<ParseError>(m, "ParseError", PyExc_ValueError);
    py::register_exception<DimensionError>(m, "DimensionError", PyExc_ValueError);

    py::class_<ExperimentConfig>(m, "Config")
        .def(py::init([](const py::kwargs& kw) { return make_config(kw); }))
        .def_static("parse", &parse_config, py::arg("text"))
        .def_static("load", &load_config, py::arg("path"))
        .def("serialize", &serialize_config)
        .def("set", &set_config_value, py::arg("key"), py::arg("value"))
        .def("validate", &ExperimentConfig::validate)
        .def("as_dict", &config_dict)
        .def("__eq__", [](const ExperimentConfig& a, const ExperimentConfig& b) { return a == b; })
        .def_readwrite("seed", &ExperimentConfig::seed)
        .def_readwrite("steps", &ExperimentConfig::steps)
        .def_readwrite("seeds", &ExperimentConfig::seeds)
        .def_readwrite("repetitions", &ExperimentConfig::repetitions)
        .def_readwrite("delays_ms", &ExperimentConfig::delays_ms)
        .def_readwrite("models", &ExperimentConfig::models);

    m.def("parity_hidden", &parity_hidden, py::arg("d_model"), py::arg("ffn_hidden"), py::arg("k"));

    m.def(
        "run_throughput",
        [](const ExperimentConfig& c) {
            py::gil_scoped_release release;
            std::ostringstream os;
            write_throughput_csv(os, run_throughput(c));
            return os.str();
        },
        py::arg("config"), "Throughput sweep; returns the CSV text.");

    m.def(
        "run_convergence",
        [](const ExperimentConfig& c) {
            ConvergenceResult res;
            {
                py::gil_scoped_release release;
                res = run_convergence(c);
            }
            std::ostringstream os;
            write_convergence_csv(os, res.rows);
            py::list models;
            for (const auto& s : res.models) {
                py::dict d;
                d["scheme"] = s.scheme;
                d["final_low"] = s.final_low;
                d["final_high"] = s.final_high;
                d["gap"] = s.gap;
                d["flops_per_step"] = s.flops_per_step;
                d["measured_flops_per_step"] = s.measured_flops_per_step;
                d["staleness_low"] = s.staleness_low;
                d["staleness_high"] = s.staleness_high;
                d["skipped"] = s.skipped;
                models.append(d);
            }
            return py::make_tuple(os.str(), models);
        },
        py::arg("config"), "Convergence runs; returns (csv text, per-model summaries).");

    m.def(
        "synthetic_blobs",
        [](std::size_t samples, std::size_t features, std::size_t classes, double noise, std::uint64_t seed) {
            auto d = synthetic_blobs(samples, features, classes, noise, seed);
            py::array_t<float> x({d.n, d.features});
            std::copy(d.x.begin(), d.x.end(), x.mutable_data());
            py::array_t<int> y(static_cast<py::ssize_t>(d.n));
            std::copy(d.y.begin(), d.y.end(), y.mutable_data());
            return py::make_tuple(x, y);
        },
        py::arg("samples"), py::arg("features"), py::arg("classes"), py::arg("noise"), py::arg("seed"));

    m.def(
        "select_experts",
        [](const std::vector<std::vector<double>>& scores, int M, std::size_t k, std::size_t beam_width,
           std::optional<std::vector<std::string>> alive_uids) {
            gating::GridConfig grid{static_cast<int>(scores.size()), M, "expert"};
            std::set<std::string> alive;
            if (alive_uids) {
                for (const auto& u : *alive_uids) {
                    const auto uid = gating::parse_uid(u, grid);
                    for (const auto& key : gating::announce_keys(uid, grid)) alive.insert(key);
                }
            }
            auto sel = gating::select_experts(scores, grid, k, beam_width, [&](const std::string& key) {
                return !alive_uids || alive.count(key) > 0;
            });
            py::list out;
            for (const auto& s : sel) out.append(py::make_tuple(s.uid.to_string(grid.name), s.score));
            return out;
        },
        py::arg("scores"), py::arg("M"), py::arg("k"), py::arg("beam_width"), py::arg("alive") = py::none(),
        "Beam search over a d x M grid; scores[i][j] scores coordinate j of dimension i.");

    m.def(
        "aggregate",
        [](const std::vector<std::optional<py::array_t<double, py::array::c_style | py::array::forcecast>>>& outputs,
           const std::vector<double>& scores) {
            std::vector<std::optional<nn::BasicTensor<double>>> ts;
            for (const auto& o : outputs) {
                if (!o) {
                    ts.emplace_back();
                    continue;
                }
                if (o->ndim() != 2) throw DimensionError("expert outputs must be 2-D");
                const auto r = static_cast<std::size_t>(o->shape(0)), c = static_cast<std::size_t>(o->shape(1));
                ts.emplace_back(nn::BasicTensor<double>({r, c}, std::vector<double>(o->data(), o->data() + r * c)));
            }
            auto res = moe::aggregate(ts, scores);
            if (!res) throw std::runtime_error(res.failure().message);
            const auto& y = res.value().y;
            py::array_t<double> out({y.rows(), y.cols()});
            std::copy(y.data().begin(), y.data().end(), out.mutable_data());
            return py::make_tuple(out, res.value().weights);
        },
        py::arg("outputs"), py::arg("scores"), "Softmax-weighted average over the outputs that are not None.");
}
