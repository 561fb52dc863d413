#include "ridnoise/cli.hpp"
#include "ridnoise/errors.hpp"
#include "ridnoise/evaluation.hpp"
#include "ridnoise/flow.hpp"
#include "ridnoise/io.hpp"
#include "ridnoise/robust_weights.hpp"
#include "ridnoise/seeding.hpp"
#include "ridnoise/tasks.hpp"

#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <sstream>

namespace py = pybind11;
using namespace ridnoise;

namespace {

using Array = py::array_t<double, py::array::c_style | py::array::forcecast>;

Matrix to_matrix(const Array& a) {
    if (a.ndim() == 1) {
        return Matrix(static_cast<std::size_t>(a.shape(0)), 1,
                      std::vector<double>(a.data(), a.data() + a.size()));
    }
    if (a.ndim() != 2) throw ShapeError("expected a 1-D or 2-D array");
    return Matrix(static_cast<std::size_t>(a.shape(0)), static_cast<std::size_t>(a.shape(1)),
                  std::vector<double>(a.data(), a.data() + a.size()));
}

Array to_array(const Matrix& m) {
    Array out({m.rows(), m.cols()});
    std::copy(m.values().begin(), m.values().end(), out.mutable_data());
    return out;
}

Array to_array(const std::vector<double>& v) {
    Array out(static_cast<py::ssize_t>(v.size()));
    std::copy(v.begin(), v.end(), out.mutable_data());
    return out;
}

std::vector<double> to_vector(const Array& a) { return {a.data(), a.data() + a.size()}; }

// Python dicts travel as JSON text so the C++ partial-update parsers apply.
template <class Config>
Config config_from(const py::object& overrides) {
    Config c;
    if (!overrides.is_none()) {
        const std::string text = py::module_::import("json").attr("dumps")(overrides).cast<std::string>();
        update_from_json(json::parse(text), c);
    }
    return c;
}

py::object json_to_py(const json& j) { return py::module_::import("json").attr("loads")(j.dump()); }

struct Problem {
    TaskSpec task;
    NoiseSpec noise;
};

Problem problem(const std::string& task, const std::string& noise) {
    const TaskName t = parse_task_name(task);
    return {make_task(t), default_noise(t, parse_noise_mode(noise))};
}

Dataset dataset(const Array& x, const Array& y) {
    Dataset d{to_matrix(x), to_matrix(y), std::nullopt};
    if (d.x.rows() != d.y.rows()) throw DataError("x and y have different row counts");
    return d;
}

}  // namespace

PYBIND11_MODULE(_ridnoise, m) {
    m.doc() = "Noise-robust inverse design with weighted conditional flows";

    py::register_exception<DataError>(m, "DataError", PyExc_ValueError);
    py::register_exception<NumericalError>(m, "NumericalError", PyExc_ArithmeticError);
    py::register_exception<ShapeError>(m, "ShapeError", PyExc_ValueError);

    m.def("derive_seed", [](std::uint64_t master, const std::string& role) { return derive_seed(master, role); },
          py::arg("master"), py::arg("role"));

    m.def(
        "generate",
        [](const std::string& task, const std::string& noise, std::size_t n, std::uint64_t seed) {
            const Problem p = problem(task, noise);
            const Dataset d = generate_dataset(p.task, p.noise, n, seed);
            return py::make_tuple(to_array(d.x), to_array(d.y));
        },
        py::arg("task"), py::arg("noise") = "n_x", py::arg("n") = 5000, py::arg("seed") = 0,
        "Sample (x, y) pairs from a benchmark task under a noise setting.");

    m.def(
        "simulate",
        [](const std::string& task, const Array& x) { return to_array(forward(problem(task, "none").task, to_matrix(x))); },
        py::arg("task"), py::arg("x"), "Noise-free forward process.");

    m.def(
        "sample_robustness",
        [](const Array& x, const Array& y, const py::object& config) {
            const RobustnessEstimate e = estimate_sample_robustness(dataset(x, y), config_from<WeightConfig>(config));
            return py::make_tuple(to_array(e.raw), to_array(e.r));
        },
        py::arg("x"), py::arg("y"), py::arg("config") = py::none(),
        "Cross-validated surrogate error per sample: (raw, normalized).");

    m.def(
        "weights_from_robustness",
        [](const Array& r, double tau, double eps) { return to_array(robustness_to_weights(to_vector(r), tau, eps)); },
        py::arg("r"), py::arg("tau"), py::arg("eps") = 1e-3);

    m.def(
        "robust_weights",
        [](const Array& x, const Array& y, const py::object& config) {
            return to_array(estimate_weights(dataset(x, y), config_from<WeightConfig>(config)));
        },
        py::arg("x"), py::arg("y"), py::arg("config") = py::none());

    py::class_<FlowModel>(m, "Flow")
        .def(py::init([](std::size_t dx, std::size_t dy, const py::object& arch, std::uint64_t seed) {
                 return make_flow(dx, dy, config_from<FlowArchitecture>(arch), seed);
             }),
             py::arg("dx"), py::arg("dy"), py::arg("architecture") = py::none(), py::arg("seed") = 0)
        .def_property_readonly("dx", [](const FlowModel& f) { return f.dx; })
        .def_property_readonly("dy", [](const FlowModel& f) { return f.dy; })
        .def(
            "fit",
            [](FlowModel& f, const Array& x, const Array& y, const py::object& weights, const py::object& config) {
                const Dataset d = dataset(x, y);
                const std::vector<double> w =
                    weights.is_none() ? std::vector<double>(d.size(), 1.0) : to_vector(weights.cast<Array>());
                FlowFit fit = train_flow_wnll(f, d, w, config_from<WnllConfig>(config));
                f = std::move(fit.model);
                return fit.loss_trace;
            },
            py::arg("x"), py::arg("y"), py::arg("weights") = py::none(), py::arg("config") = py::none(),
            "Train in place on the weighted NLL; returns the per-epoch loss.")
        .def(
            "log_prob",
            [](const FlowModel& f, const Array& x, const Array& y) {
                return to_array(flow_log_prob(f, to_matrix(x), to_matrix(y)));
            },
            py::arg("x"), py::arg("y"))
        .def(
            "sample",
            [](const FlowModel& f, const Array& y, std::size_t n, std::uint64_t seed) {
                return to_array(flow_sample(f, to_matrix(y), n, seed));
            },
            py::arg("y"), py::arg("n") = 1, py::arg("seed") = 0,
            "n designs per target row, grouped by target.")
        .def("to_json", [](const FlowModel& f) { return to_json(f).dump(); })
        .def_static("from_json", [](const std::string& text) { return flow_from_json(json::parse(text)); });

    m.def(
        "resimulation_error",
        [](const FlowModel& f, const std::string& task, const std::string& noise, const Array& targets,
           const py::object& config) {
            const Problem p = problem(task, noise);
            const EvalReport r =
                resimulation_error(f, p.task, p.noise, to_matrix(targets), config_from<EvalConfig>(config));
            py::dict out;
            out["mse"] = r.mse;
            out["std_error"] = r.std_error;
            out["per_target"] = to_array(r.per_target);
            return out;
        },
        py::arg("flow"), py::arg("task"), py::arg("noise"), py::arg("targets"), py::arg("config") = py::none());

    m.def(
        "test_targets",
        [](const std::string& task, const std::string& noise, std::size_t n, std::uint64_t seed) {
            const Problem p = problem(task, noise);
            return to_array(make_test_targets(p.task, p.noise, n, seed));
        },
        py::arg("task"), py::arg("noise"), py::arg("n") = 512, py::arg("seed") = 0);

    m.def(
        "welch_t_test",
        [](const Array& a, const Array& b) {
            const WelchResult w = welch_t_test(to_vector(a), to_vector(b));
            return py::make_tuple(w.t, w.p);
        },
        py::arg("a"), py::arg("b"), "Two-sided Welch test; returns (t, p).");

    m.def(
        "run_cli",
        [](const std::vector<std::string>& args) {
            std::ostringstream out, err;
            int code;
            {
                py::gil_scoped_release release;
                code = run_cli(args, out, err);
            }
            return py::make_tuple(code, out.str(), err.str());
        },
        py::arg("args"), "Run a CLI command in-process; returns (exit_code, stdout, stderr).");

    m.def("default_config", [](const std::string& kind) -> py::object {
        if (kind == "weights") return json_to_py(to_json(WeightConfig{}));
        if (kind == "train") return json_to_py(to_json(WnllConfig{}));
        if (kind == "architecture") return json_to_py(to_json(FlowArchitecture{}));
        if (kind == "eval") return json_to_py(to_json(EvalConfig{}));
        throw DataError("unknown config kind: " + kind);
    });
}
