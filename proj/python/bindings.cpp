#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include "mclstm/checkpoint.hpp"
#include "mclstm/experiments.hpp"
#include "mclstm/suites.hpp"
#include "mclstm/verify.hpp"

namespace py = pybind11;
using namespace mclstm;

namespace {

using Array = py::array_t<double, py::array::c_style | py::array::forcecast>;

Tensor to_tensor(const Array& a) {
  Shape shape(a.shape(), a.shape() + a.ndim());
  return Tensor(std::move(shape), std::vector<double>(a.data(), a.data() + a.size()));
}

Array to_array(const Tensor& t) {
  Array out(std::vector<py::ssize_t>(t.shape().begin(), t.shape().end()));
  std::copy(t.data().begin(), t.data().end(), out.mutable_data());
  return out;
}

// JSON crosses the boundary as Python dicts via the json module.
py::object to_python(const nlohmann::json& j) {
  return py::module_::import("json").attr("loads")(j.dump());
}

nlohmann::json from_python(const py::object& o) {
  return nlohmann::json::parse(py::module_::import("json").attr("dumps")(o).cast<std::string>());
}

py::dict trace_dict(const cells::CellTrace& tr) {
  py::list steps;
  for (const auto& s : tr.steps) {
    py::dict d;
    d["x"] = to_array(s.x);
    d["c"] = to_array(s.c);
    d["h"] = to_array(s.h);
    if (s.i.size()) d["i"] = to_array(s.i);
    if (s.o.size()) d["o"] = to_array(s.o);
    if (s.r.size()) d["r"] = to_array(s.r);
    steps.append(d);
  }
  py::dict out;
  out["variant"] = std::string(cells::variant_name(tr.variant));
  out["c0"] = to_array(tr.c0);
  out["steps"] = steps;
  return out;
}

tasks::Dataset dataset_from(const py::dict& d) {
  tasks::Dataset out;
  out.mass = to_tensor(d["mass"].cast<Array>());
  out.aux = to_tensor(d["aux"].cast<Array>());
  out.targets = to_tensor(d["targets"].cast<Array>());
  out.split = d.contains("split") ? d["split"].cast<std::string>() : "train";
  if (d.contains("descriptor")) out.descriptor = from_python(d["descriptor"]);
  return out;
}

py::dict dataset_dict(const tasks::Dataset& d) {
  py::dict out;
  out["mass"] = to_array(d.mass);
  out["aux"] = to_array(d.aux);
  out["targets"] = to_array(d.targets);
  out["split"] = d.split;
  out["descriptor"] = to_python(d.descriptor);
  return out;
}

}  // namespace

PYBIND11_MODULE(_mclstm, m) {
  m.doc() = "Mass-conserving recurrent cells: models, tasks, training and verification";

  py::register_exception<DimensionError>(m, "DimensionError", PyExc_ValueError);
  py::register_exception<ContractError>(m, "ContractError", PyExc_ValueError);
  py::register_exception<DomainError>(m, "DomainError", PyExc_ValueError);

  m.def("variants", [] {
    std::vector<std::string> out;
    for (auto v : cells::kAllVariants) out.emplace_back(cells::variant_name(v));
    return out;
  });

  py::class_<cells::CellParams>(m, "Model")
      .def(py::init([](const std::string& variant, std::size_t K, std::size_t M, std::size_t L,
                       std::uint64_t seed, const std::string& readout,
                       std::vector<std::size_t> hypernet_hidden) {
             cells::InitOptions opt;
             opt.readout = cells::parse_readout(readout);
             opt.hypernet_hidden = std::move(hypernet_hidden);
             return cells::init_params({K, M, L}, cells::parse_variant(variant), seed, opt);
           }),
           py::arg("variant") = "mclstm-basic", py::arg("K") = 10, py::arg("M") = 1,
           py::arg("L") = 2, py::arg("seed") = 0, py::arg("readout") = "sum",
           py::arg("hypernet_hidden") = std::vector<std::size_t>{50, 100})
      .def_property_readonly("variant", [](const cells::CellParams& p) {
        return std::string(cells::variant_name(p.variant));
      })
      .def_property_readonly("dims", [](const cells::CellParams& p) {
        return py::make_tuple(p.dims.cells, p.dims.mass, p.dims.aux);
      })
      .def_property_readonly("readout", [](const cells::CellParams& p) {
        return std::string(cells::readout_name(p.readout));
      })
      .def("parameter_count", &cells::CellParams::parameter_count)
      .def("names", [](const cells::CellParams& p) {
        std::vector<std::string> out;
        for (const auto& [k, _] : p.tensors) out.push_back(k);
        return out;
      })
      .def("get", [](const cells::CellParams& p, const std::string& name) { return to_array(p.get(name)); })
      .def("set", [](cells::CellParams& p, const std::string& name, const Array& a) {
        Tensor t = to_tensor(a);
        if (t.shape() != p.get(name).shape()) {
          throw DimensionError("parameter '" + name + "' expects shape " + shape_str(p.get(name).shape()) +
                               ", got " + shape_str(t.shape()));
        }
        p.get(name) = std::move(t);
      })
      .def("step", [](const cells::CellParams& p, const Array& c, const Array& x, const Array& a) {
        const cells::SingleStep s = cells::step_single(p, to_tensor(c), to_tensor(x), to_tensor(a));
        py::dict out;
        out["h"] = to_array(s.h);
        out["c"] = to_array(s.c);
        out["i"] = to_array(s.i);
        out["o"] = to_array(s.o);
        out["r"] = to_array(s.r);
        out["m_tot"] = to_array(s.m_tot);
        return out;
      }, py::arg("c"), py::arg("x"), py::arg("a"),
         "One step for a single sample; c, x and a are 1-D.")
      .def("run", [](const cells::CellParams& p, const Array& c0, const Array& xs, const Array& as) {
        const cells::SingleSequence s = cells::run_sequence(p, to_tensor(c0), to_tensor(xs), to_tensor(as));
        py::dict out;
        out["h"] = to_array(s.hs);
        out["c"] = to_array(s.cs);
        out["trace"] = trace_dict(s.trace);
        return out;
      }, py::arg("c0"), py::arg("xs"), py::arg("as_"))
      .def("predict", [](const cells::CellParams& p, const py::dict& data) {
        return to_array(training::predict(p, dataset_from(data)));
      })
      .def("evaluate_mse", [](const cells::CellParams& p, const py::dict& data) {
        return training::evaluate_mse(p, dataset_from(data));
      })
      .def("save", [](const cells::CellParams& p, const std::filesystem::path& path) {
        save_checkpoint(path, p);
      });

  m.def("load_model", [](const std::filesystem::path& path) { return load_checkpoint(path); });

  // Tasks
  m.def("gen_addition", [](std::size_t count, std::size_t seq_len, double value_hi, std::size_t n_marked,
                           std::uint64_t seed) {
    return dataset_dict(tasks::gen_addition({count, seq_len, value_hi, n_marked, seed, "train"}));
  }, py::arg("count") = 1000, py::arg("seq_len") = 100, py::arg("value_hi") = 0.5,
     py::arg("n_marked") = 2, py::arg("seed") = 0);
  m.def("gen_addition_scenario", [](const std::string& name, std::size_t count, std::uint64_t seed) {
    return dataset_dict(tasks::gen_addition_scenario(name, count, seed));
  }, py::arg("name"), py::arg("count") = 1000, py::arg("seed") = 0);
  m.def("pendulum_series", [](double theta0, double length, double gamma, std::size_t steps,
                              double noise_sigma, std::uint64_t seed) {
    tasks::PendulumConfig c;
    c.theta0 = theta0;
    c.length = length;
    c.gamma = gamma;
    c.steps = steps;
    c.noise_sigma = noise_sigma;
    c.seed = seed;
    const tasks::PendulumSeries s = tasks::pendulum_series(c);
    py::dict out;
    out["time"] = s.time;
    out["theta"] = s.theta;
    out["e_pot"] = s.e_pot;
    out["e_kin"] = s.e_kin;
    return out;
  }, py::arg("theta0") = 0.2, py::arg("length") = 1.0, py::arg("gamma") = 0.0,
     py::arg("steps") = 200, py::arg("noise_sigma") = 0.0, py::arg("seed") = 0);
  m.def("regenerate", [](const py::object& descriptor) {
    return dataset_dict(tasks::regenerate(from_python(descriptor)));
  });

  // Training
  m.def("train", [](cells::CellParams init, const py::dict& train, const py::dict& valid,
                    std::size_t epochs, std::size_t batch_size, double lr, std::uint64_t seed,
                    double verify_fraction) {
    training::TrainConfig cfg;
    cfg.epochs = epochs;
    cfg.batch_size = batch_size;
    cfg.lr = lr;
    cfg.seed = seed;
    cfg.verify_fraction = verify_fraction;
    const tasks::Dataset tr = dataset_from(train), va = dataset_from(valid);
    training::TrainResult r;
    {
      py::gil_scoped_release release;
      r = training::train_sequence_to_one(cfg, tr, va, std::move(init));
    }
    return py::make_tuple(r.params, to_python(training::summary_json(r)));
  }, py::arg("model"), py::arg("train"), py::arg("valid"), py::arg("epochs") = 10,
     py::arg("batch_size") = 64, py::arg("lr") = 0.01, py::arg("seed") = 0,
     py::arg("verify_fraction") = 0.01,
     "Sequence-to-one training; returns (trained model, summary dict).");
  m.def("run_pendulum", [](double lr, std::size_t max_iterations, std::uint64_t seed) {
    training::PendulumExperimentConfig cfg;
    cfg.train.lr = lr;
    cfg.train.max_iterations = max_iterations;
    cfg.seed = seed;
    training::PendulumExperiment e;
    {
      py::gil_scoped_release release;
      e = training::run_pendulum_experiment(cfg);
    }
    py::dict out = to_python(e.to_json());
    out["rollout"] = to_array(e.rollout);
    out["target"] = to_array(e.target);
    return out;
  }, py::arg("lr") = 0.01, py::arg("max_iterations") = 3000, py::arg("seed") = 0);

  // Verification
  m.def("spectral_norm", [](const Array& r) { return verify::spectral_norm(to_tensor(r)).sigma; });
  m.def("random_column_stochastic", [](std::size_t k, std::uint64_t seed) {
    return to_array(verify::random_column_stochastic(k, seed));
  });
  m.def("stationary_distribution", [](const Array& r, const Array& start) {
    return to_array(verify::stationary_distribution(to_tensor(r), to_tensor(start)).distribution);
  });
  m.def("check_conservation", [](const cells::CellParams& p, const Array& c0, const Array& xs,
                                 const Array& as, double tol) {
    const auto s = cells::run_sequence(p, to_tensor(c0), to_tensor(xs), to_tensor(as));
    return to_python(verify::check_conservation(s.trace, tol).to_json());
  }, py::arg("model"), py::arg("c0"), py::arg("xs"), py::arg("as_"), py::arg("tol") = 1e-10);
  m.def("gradcheck", [](const cells::CellParams& p, std::size_t batch, std::size_t steps, std::uint64_t seed) {
    const auto sample = verify::random_gradcheck_sample(p, batch, steps, seed);
    return to_python(verify::gradcheck_model(p, sample).to_json());
  }, py::arg("model"), py::arg("batch") = 2, py::arg("steps") = 4, py::arg("seed") = 0);
  m.def("conservation_suite", [](std::size_t configs, std::uint64_t seed) {
    verify::SuiteOutcome o;
    {
      py::gil_scoped_release release;
      o = verify::conservation_suite({configs, 2, 1e-10, seed});
    }
    return to_python(o.to_json());
  }, py::arg("configs") = 1000, py::arg("seed") = 0);
  m.def("markov_suite", [](std::size_t seeds, std::uint64_t seed) {
    return to_python(verify::markov_suite({seeds, 5, 1000, 1e-8, seed}).to_json());
  }, py::arg("seeds") = 50, py::arg("seed") = 0);
  m.def("ablation_suite", [](std::size_t seeds, std::uint64_t seed) {
    return to_python(verify::ablation_suite({seeds, 1e-6, 0.95, seed}).to_json());
  }, py::arg("seeds") = 100, py::arg("seed") = 0);
}
