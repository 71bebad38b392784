#include <pybind11/eigen.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include <sstream>

#include "reltraj/metrics.hpp"
#include "reltraj/ood_gmm.hpp"
#include "reltraj/pipeline.hpp"
#include "reltraj/predictor.hpp"
#include "reltraj/uncertainty.hpp"

namespace py = pybind11;
using namespace reltraj;

namespace {

MixturePrediction make_mixture(const Eigen::VectorXd& pi, const std::vector<Trajectory>& mu,
                               const Eigen::MatrixXd& sigma) {
  MixturePrediction p{pi, mu, sigma};
  p.validate();
  return p;
}

template <class Json>
py::object to_py(const Json& j) {
  return py::module_::import("json").attr("loads")(j.dump());
}

py::object written_report(const RunConfig& c) {
  return to_py(read_json_file(run_paths(c).reports() / "report.json"));
}

RunConfig resolve(const std::filesystem::path& path, std::optional<std::uint64_t> seed,
                  std::optional<std::filesystem::path> out) {
  RunConfig c = load_run_config(path);
  if (seed) c.seed = *seed;
  if (out) c.out_dir = *out;
  c.sync();
  c.validate();
  return c;
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "Trajectory prediction with latent-density OOD detection and error regression.";

  py::register_exception<CommandError>(m, "CommandError", PyExc_RuntimeError);

  // Displacement and likelihood metrics. Trajectories are (T, 2) arrays; a
  // mixture is (pi[K], list of K (T, 2) means, sigma[K, T]).
  m.def("ade", &ade, py::arg("gt"), py::arg("traj"));
  m.def("fde", &fde, py::arg("gt"), py::arg("traj"));
  m.def("wade", [](const Trajectory& gt, const Eigen::VectorXd& pi, const std::vector<Trajectory>& mu,
                   const Eigen::MatrixXd& sigma) { return wade(gt, make_mixture(pi, mu, sigma)); },
        py::arg("gt"), py::arg("pi"), py::arg("mu"), py::arg("sigma"));
  m.def("min_ade", [](const Trajectory& gt, const Eigen::VectorXd& pi, const std::vector<Trajectory>& mu,
                      const Eigen::MatrixXd& sigma) { return min_ade(gt, make_mixture(pi, mu, sigma)); },
        py::arg("gt"), py::arg("pi"), py::arg("mu"), py::arg("sigma"));
  m.def("mixture_nll", [](const Trajectory& gt, const Eigen::VectorXd& pi, const std::vector<Trajectory>& mu,
                          const Eigen::MatrixXd& sigma) { return mixture_nll(make_mixture(pi, mu, sigma), gt); },
        py::arg("gt"), py::arg("pi"), py::arg("mu"), py::arg("sigma"));
  m.def("cnll", [](const Trajectory& gt, const Eigen::VectorXd& pi, const std::vector<Trajectory>& mu,
                   const Eigen::MatrixXd& sigma) { return cnll(gt, make_mixture(pi, mu, sigma)); },
        py::arg("gt"), py::arg("pi"), py::arg("mu"), py::arg("sigma"));
  m.def("nll_proxy", [](const Eigen::VectorXd& pi, const std::vector<Trajectory>& mu,
                        const Eigen::MatrixXd& sigma) { return nll_proxy_uncertainty(make_mixture(pi, mu, sigma)); },
        py::arg("pi"), py::arg("mu"), py::arg("sigma"));

  m.def("auroc", [](const std::vector<double>& s, const std::vector<int>& l) { return auroc(s, l); },
        py::arg("scores"), py::arg("labels"));
  m.def("retention_curve",
        [](const std::vector<double>& e, const std::vector<double>& u) {
          std::vector<std::pair<double, double>> out;
          for (const auto& p : retention_curve(e, u).points) out.emplace_back(p.fraction, p.mean_error);
          return out;
        },
        py::arg("errors"), py::arg("uncertainties"),
        "List of (fraction, mean error) from fraction 1 down to 1/n.");
  m.def("r_auc",
        [](const std::vector<double>& e, const std::vector<double>& u) { return r_auc(retention_curve(e, u)); },
        py::arg("errors"), py::arg("uncertainties"));

  py::class_<GmmModel>(m, "GaussianMixture")
      .def_property_readonly("n_components", &GmmModel::size)
      .def_property_readonly("dim", &GmmModel::dim)
      .def_property_readonly("weights",
                             [](const GmmModel& g) {
                               std::vector<double> w;
                               for (const auto& c : g.components) w.push_back(c.weight);
                               return w;
                             })
      .def_property_readonly("means",
                             [](const GmmModel& g) {
                               std::vector<Eigen::VectorXd> out;
                               for (const auto& c : g.components) out.push_back(c.mean);
                               return out;
                             })
      .def_readonly("log_likelihood_trace", &GmmModel::log_likelihood_trace)
      .def("score", [](const GmmModel& g, const Eigen::MatrixXd& x) { return ood_scores(g, x); },
           py::arg("features"), "Negative log-density of each row; larger is more out-of-distribution.");
  m.def("fit_gmm",
        [](const Eigen::MatrixXd& x, int c, std::uint64_t seed, int max_iter, double tol) {
          EmOptions opt;
          opt.max_iter = max_iter;
          opt.tol = tol;
          return em_fit(x, c, seed, opt);
        },
        py::arg("features"), py::arg("n_components"), py::arg("seed") = 0, py::arg("max_iter") = 100,
        py::arg("tol") = 1e-6);

  // Pipeline commands; each takes a config path plus optional seed/out overrides.
  const auto run = [&m](const char* name, void (*fn)(const RunConfig&, std::ostream&)) {
    m.def(name,
          [fn](const std::filesystem::path& config, std::optional<std::uint64_t> seed,
               std::optional<std::filesystem::path> out) {
            std::ostringstream log;
            fn(resolve(config, seed, out), log);
            return log.str();
          },
          py::arg("config"), py::arg("seed") = py::none(), py::arg("out") = py::none());
  };
  run("generate", &cmd_generate);
  run("train", &cmd_train);
  run("fit_reliability", &cmd_fit_reliability);
  m.def("evaluate",
        [](const std::filesystem::path& config, std::optional<std::uint64_t> seed,
           std::optional<std::filesystem::path> out) {
          const RunConfig c = resolve(config, seed, out);
          std::ostringstream table, log;
          cmd_evaluate(c, table, log);
          return written_report(c);
        },
        py::arg("config"), py::arg("seed") = py::none(), py::arg("out") = py::none(),
        "Runs evaluation and returns the written report.json as a dict.");
  m.def("run_all",
        [](const std::filesystem::path& config, std::optional<std::uint64_t> seed,
           std::optional<std::filesystem::path> out) {
          const RunConfig c = resolve(config, seed, out);
          std::ostringstream table, log;
          cmd_all(c, table, log);
          return written_report(c);
        },
        py::arg("config"), py::arg("seed") = py::none(), py::arg("out") = py::none());
  m.def("run_dir",
        [](const std::filesystem::path& config, std::optional<std::uint64_t> seed,
           std::optional<std::filesystem::path> out) { return run_paths(resolve(config, seed, out)).root; },
        py::arg("config"), py::arg("seed") = py::none(), py::arg("out") = py::none());
  m.def("resolved_config",
        [](const std::filesystem::path& config, std::optional<std::uint64_t> seed,
           std::optional<std::filesystem::path> out) { return to_py(run_config_to_json(resolve(config, seed, out))); },
        py::arg("config"), py::arg("seed") = py::none(), py::arg("out") = py::none());
}
