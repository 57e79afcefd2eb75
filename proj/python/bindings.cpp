#include "dgp/cli.hpp"
#include "dgp/model.hpp"
#include "dgp/oracles.hpp"
#include "dgp/trainer.hpp"

#include <pybind11/eigen.h>
#include <pybind11/functional.h>
#include <pybind11/iostream.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <iostream>
#include <optional>
#include <random>

namespace py = pybind11;
using namespace dgp;

// Python-facing point arrays are (N, D); the library stores points as columns.
namespace {

MatrixXd cols(const MatrixXd& rows) { return rows.transpose(); }

Dataset make_dataset(const MatrixXd& X, const VectorXd& y) {
  Dataset d;
  d.inputs = cols(X);
  d.targets = y;
  d.validate();
  return d;
}

py::dict moments_dict(const PredictiveMoments& m) {
  py::dict d;
  d["mean"] = m.mean;
  d["variance"] = m.variance;
  return d;
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "Decoupled variational Gaussian-process regression";

  py::class_<KernelHyper>(m, "KernelHyper")
      .def(py::init<>())
      .def(py::init<double, VectorXd>(), py::arg("log_amplitude"), py::arg("log_lengthscales"))
      .def_static("unit", &KernelHyper::unit, py::arg("dim"))
      .def_readwrite("log_amplitude", &KernelHyper::log_amplitude)
      .def_readwrite("log_lengthscales", &KernelHyper::log_lengthscales)
      .def_property_readonly("amplitude", &KernelHyper::amplitude)
      .def_property_readonly("lengthscales", &KernelHyper::lengthscales)
      .def_property_readonly("dim", &KernelHyper::dim);

  py::class_<BasisSet>(m, "BasisSet")
      .def(py::init<Index>(), py::arg("dim"))
      .def(py::init([](const MatrixXd& locations, const MatrixXd& log_multipliers) {
             return BasisSet(cols(locations), cols(log_multipliers));
           }),
           py::arg("locations"), py::arg("log_multipliers"))
      .def_static("at", [](const MatrixXd& points) { return BasisSet::at(cols(points)); },
                  py::arg("points"))
      .def_property(
          "locations", [](const BasisSet& b) -> MatrixXd { return b.locations.transpose(); },
          [](BasisSet& b, const MatrixXd& v) { b.locations = cols(v); })
      .def_property(
          "log_multipliers",
          [](const BasisSet& b) -> MatrixXd { return b.log_multipliers.transpose(); },
          [](BasisSet& b, const MatrixXd& v) { b.log_multipliers = cols(v); })
      .def("__len__", &BasisSet::size)
      .def_property_readonly("dim", &BasisSet::dim);

  py::class_<DecoupledModel>(m, "DecoupledModel")
      .def(py::init<>())
      .def_static("empty", &DecoupledModel::empty, py::arg("hyper"), py::arg("log_noise"))
      .def_readwrite("alpha", &DecoupledModel::alpha)
      .def_readwrite("a", &DecoupledModel::a)
      .def_readwrite("beta", &DecoupledModel::beta)
      .def_readwrite("L", &DecoupledModel::L)
      .def_readwrite("hyper", &DecoupledModel::hyper)
      .def_readwrite("log_noise", &DecoupledModel::log_noise)
      .def_property_readonly("m_alpha", &DecoupledModel::m_alpha)
      .def_property_readonly("m_beta", &DecoupledModel::m_beta)
      .def_property_readonly("dim", &DecoupledModel::dim)
      .def("validate", &DecoupledModel::validate)
      .def("parameters", [](const DecoupledModel& self) { return flatten_parameters(self); })
      .def("set_parameters",
           [](DecoupledModel& self, const VectorXd& v) { assign_parameters(self, v); })
      .def("to_json",
           [](const DecoupledModel& self) { return cli::model_to_json(self).dump(); })
      .def_static("from_json", [](const std::string& text) {
        return cli::model_from_json(cli::Json::parse(text));
      });

  m.def(
      "predict",
      [](const DecoupledModel& model, const MatrixXd& X) {
        return moments_dict(predict(model, cols(X)));
      },
      py::arg("model"), py::arg("X"), "Predictive mean and variance at the rows of X.");
  m.def("kl_normal_prior", py::overload_cast<const DecoupledModel&>(&kl_normal_prior),
        py::arg("model"));
  m.def("kl_general", py::overload_cast<const DecoupledModel&, const DecoupledModel&>(&kl_general),
        py::arg("q"), py::arg("p"));
  m.def(
      "ell_gaussian",
      [](const DecoupledModel& model, const MatrixXd& X, const VectorXd& y) {
        return ell_gaussian(predict(model, cols(X)), y, model.log_noise);
      },
      py::arg("model"), py::arg("X"), py::arg("y"));
  m.def(
      "elbo",
      [](const DecoupledModel& model, const MatrixXd& X, const VectorXd& y,
         std::optional<Index> n_total) {
        return elbo(model, cols(X), y, n_total.value_or(X.rows()));
      },
      py::arg("model"), py::arg("X"), py::arg("y"), py::arg("n_total") = py::none());
  m.def(
      "elbo_gradient",
      [](const DecoupledModel& model, const MatrixXd& X, const VectorXd& y,
         std::optional<Index> n_total) {
        const ObjectiveEstimate e = elbo_objective(model, cols(X), y, n_total.value_or(X.rows()));
        return py::make_tuple(e.value, flatten(e.gradient));
      },
      py::arg("model"), py::arg("X"), py::arg("y"), py::arg("n_total") = py::none(),
      "ELBO value and its gradient in the layout of DecoupledModel.parameters().");

  py::enum_<LikelihoodKind>(m, "LikelihoodKind")
      .value("gaussian", LikelihoodKind::gaussian)
      .value("monte_carlo", LikelihoodKind::monte_carlo);

  py::class_<TrainConfig>(m, "TrainConfig")
      .def(py::init<>())
      .def_readwrite("m_alpha_cap", &TrainConfig::m_alpha_cap)
      .def_readwrite("m_beta_cap", &TrainConfig::m_beta_cap)
      .def_readwrite("batch_size", &TrainConfig::batch_size)
      .def_readwrite("increment", &TrainConfig::increment)
      .def_readwrite("iterations", &TrainConfig::iterations)
      .def_readwrite("gamma0", &TrainConfig::gamma0)
      .def_readwrite("seed", &TrainConfig::seed)
      .def_readwrite("kl_column_samples", &TrainConfig::kl_column_samples)
      .def_readwrite("likelihood", &TrainConfig::likelihood)
      .def_readwrite("mc_samples", &TrainConfig::mc_samples)
      .def_readwrite("shared_basis", &TrainConfig::shared_basis)
      .def_readwrite("learn_hyper", &TrainConfig::learn_hyper)
      .def_readwrite("learn_bases", &TrainConfig::learn_bases);

  py::class_<TraceEntry>(m, "TraceEntry")
      .def_readonly("iteration", &TraceEntry::iteration)
      .def_readonly("elbo", &TraceEntry::elbo)
      .def_readonly("wall_ms", &TraceEntry::wall_ms)
      .def_readonly("rejected", &TraceEntry::rejected);

  py::class_<TrainResult>(m, "TrainResult")
      .def_readonly("model", &TrainResult::model)
      .def_readonly("trace", &TrainResult::trace)
      .def_readonly("rejected_steps", &TrainResult::rejected_steps);

  m.def(
      "train",
      [](const MatrixXd& X, const VectorXd& y, const TrainConfig& config) {
        const Dataset d = make_dataset(X, y);
        py::gil_scoped_release release;
        return train(d, config);
      },
      py::arg("X"), py::arg("y"), py::arg("config"));
  m.def(
      "init_hyper",
      [](const MatrixXd& X, const VectorXd& y, std::uint64_t seed) {
        std::mt19937_64 rng(seed);
        const HyperInit h = init_hyper(cols(X), y, rng);
        return py::make_tuple(h.hyper, h.log_noise);
      },
      py::arg("X"), py::arg("y"), py::arg("seed") = 0,
      "Median-heuristic hyperparameters; returns (KernelHyper, log_noise).");

  m.def(
      "evaluate",
      [](const DecoupledModel& model, const MatrixXd& X, const VectorXd& y) {
        const cli::Metrics met = cli::evaluate(model, make_dataset(X, y));
        py::dict d;
        d["nmse"] = met.nmse;
        d["test_vlb"] = met.test_vlb;
        return d;
      },
      py::arg("model"), py::arg("X"), py::arg("y"));
  m.def(
      "load_csv",
      [](const std::string& path, const std::string& target_column, bool normalize) {
        cli::CsvOptions opts;
        opts.target_column = target_column;
        opts.normalize_inputs = normalize;
        const Dataset d = cli::load_csv(path, opts);
        return py::make_tuple(MatrixXd(d.inputs.transpose()), d.targets);
      },
      py::arg("path"), py::arg("target_column") = "", py::arg("normalize") = false,
      "Returns (X, y) with X of shape (N, D).");
  m.def(
      "run_cli",
      [](const std::vector<std::string>& args) {
        std::vector<const char*> argv{"dgp"};
        for (const auto& a : args) argv.push_back(a.c_str());
        py::scoped_ostream_redirect out_redirect(std::cout, py::module_::import("sys").attr("stdout"));
        return cli::run_cli(static_cast<int>(argv.size()), argv.data(), std::cout, std::cerr);
      },
      py::arg("args"), "Runs the command-line driver; returns its exit code.");

  py::module_ oracles = m.def_submodule("oracles", "Dense reference computations");
  oracles.def(
      "exact_gpr",
      [](const MatrixXd& X, const VectorXd& y, const KernelHyper& hyper, double log_noise,
         const MatrixXd& Q) {
        return moments_dict(oracles::exact_gpr(cols(X), y, hyper, log_noise, cols(Q)));
      },
      py::arg("X"), py::arg("y"), py::arg("hyper"), py::arg("log_noise"), py::arg("queries"));
  oracles.def(
      "log_marginal",
      [](const MatrixXd& X, const VectorXd& y, const KernelHyper& hyper, double log_noise) {
        return oracles::log_marginal(cols(X), y, hyper, log_noise);
      },
      py::arg("X"), py::arg("y"), py::arg("hyper"), py::arg("log_noise"));
  oracles.def(
      "exact_posterior_model",
      [](const MatrixXd& X, const VectorXd& y, const KernelHyper& hyper, double log_noise) {
        return oracles::exact_posterior_model(cols(X), y, hyper, log_noise);
      },
      py::arg("X"), py::arg("y"), py::arg("hyper"), py::arg("log_noise"));
  oracles.def(
      "kernel_ridge",
      [](const MatrixXd& X, const VectorXd& y, const KernelHyper& hyper, double ridge) {
        return oracles::kernel_ridge(cols(X), y, hyper, ridge);
      },
      py::arg("X"), py::arg("y"), py::arg("hyper"), py::arg("ridge"));
  oracles.def("dense_gaussian_kl", &oracles::dense_gaussian_kl, py::arg("mu_q"),
              py::arg("sigma_q"), py::arg("mu_p"), py::arg("sigma_p"));
}
