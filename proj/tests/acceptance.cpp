// Acceptance harness: one PASS/FAIL line per criterion, non-zero exit on any
// failure.

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "oracles.hpp"
#include "reltraj/metrics.hpp"
#include "reltraj/nn.hpp"
#include "reltraj/ood_gmm.hpp"
#include "reltraj/pipeline.hpp"
#include "reltraj/predictor.hpp"
#include "reltraj/uncertainty.hpp"

using namespace reltraj;
namespace fs = std::filesystem;

namespace {

struct Outcome {
  bool pass = true;
  std::string detail;

  void require(bool ok, const std::string& what) {
    if (!ok && pass) detail = what;
    pass = pass && ok;
  }
};

std::string fmt(const char* spec, double v) {
  char buf[96];
  std::snprintf(buf, sizeof buf, spec, v);
  return buf;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::map<std::string, std::string> tree(const fs::path& root) {
  std::map<std::string, std::string> out;
  for (const auto& e : fs::recursive_directory_iterator(root)) {
    if (e.is_regular_file()) out[fs::relative(e.path(), root).string()] = slurp(e.path());
  }
  return out;
}

// ---------------------------------------------------------------------------

Outcome gradients() {
  Outcome o;
  Rng rng(101);
  int instances = 0;
  double worst = 0.0;
  const auto track = [&](double analytic, double numeric) {
    const double scale = std::max({std::abs(analytic), std::abs(numeric), 1e-2});
    worst = std::max(worst, std::abs(analytic - numeric) / scale);
    return oracle::close_rel(analytic, numeric, 1e-4);
  };

  // Mixture NLL with respect to the raw head outputs.
  for (int trial = 0; trial < 30; ++trial) {
    const int k = 1 + static_cast<int>(rng.index(5));
    const int t = 1 + static_cast<int>(rng.index(6));
    HeadOutputs raw;
    raw.logits.resize(k);
    raw.displacements.resize(k * t * 2);
    raw.pre_scale.resize(k * t);
    for (auto* v : {&raw.logits, &raw.displacements, &raw.pre_scale}) {
      for (Eigen::Index i = 0; i < v->size(); ++i) (*v)(i) = rng.uniform(-1.5, 1.5);
    }
    const Trajectory gt = oracle::random_trajectory(rng, t, 3.0);
    const auto g = mixture_nll_grad(to_mixture(raw, k, t), gt);
    const std::pair<Eigen::VectorXd HeadOutputs::*, const Eigen::VectorXd*> fields[] = {
        {&HeadOutputs::logits, &g.logits},
        {&HeadOutputs::displacements, &g.displacements},
        {&HeadOutputs::pre_scale, &g.pre_scale}};
    for (const auto& [field, analytic] : fields) {
      HeadOutputs h = raw;
      for (Eigen::Index i = 0; i < (raw.*field).size(); ++i) {
        const double num = oracle::central_difference(
            [&](double v) {
              (h.*field)(i) = v;
              return mixture_nll(to_mixture(h, k, t), gt);
            },
            (raw.*field)(i));
        (h.*field)(i) = (raw.*field)(i);
        o.require(track((*analytic)(i), num), "mixture NLL gradient mismatch");
      }
    }
    ++instances;
  }

  // Regressor MSE with respect to every weight, bias and input.
  int regressors = 0;
  while (regressors < 20) {
    const int h = 2 + static_cast<int>(rng.index(6));
    ErrorRegressor reg = ErrorRegressor::create(h, rng, 3 + static_cast<int>(rng.index(6)),
                                                2 + static_cast<int>(rng.index(5)));
    for (auto& l : reg.net.layers()) {
      for (Eigen::Index i = 0; i < l.bias.size(); ++i) l.bias(i) = rng.uniform(-0.5, 0.5);
    }
    Eigen::MatrixXd x(h, 4);
    for (Eigen::Index i = 0; i < x.size(); ++i) x.data()[i] = rng.normal();
    Eigen::RowVectorXd y(4);
    for (int j = 0; j < 4; ++j) y(j) = rng.normal();
    const ForwardCache cache = reg.net.forward_cached(x);
    double min_pre = 1e300;
    for (std::size_t l = 0; l + 1 < cache.preactivations.size(); ++l) {
      min_pre = std::min(min_pre, cache.preactivations[l].cwiseAbs().minCoeff());
    }
    if (min_pre < 1e-3) continue;  // relu kink within reach of the stencil
    const auto loss = [&](const Eigen::MatrixXd& in) {
      return (reg.net.forward_batch(in).row(0) - y).squaredNorm() / 4.0;
    };
    const Eigen::MatrixXd upstream = (cache.output.row(0) - y) * (2.0 / 4.0);
    const NetGradient g = reg.net.backward(cache, upstream);
    for (std::size_t li = 0; li < reg.net.layers().size(); ++li) {
      auto& layer = reg.net.layers()[li];
      for (auto [values, analytic] : {std::pair{layer.weight.data(), g.layers[li].weight.data()},
                                      std::pair{layer.bias.data(), g.layers[li].bias.data()}}) {
        const Eigen::Index count = values == layer.weight.data() ? layer.weight.size() : layer.bias.size();
        for (Eigen::Index i = 0; i < count; ++i) {
          const double saved = values[i];
          const double num = oracle::central_difference(
              [&](double v) {
                values[i] = v;
                return loss(x);
              },
              saved);
          values[i] = saved;
          o.require(track(analytic[i], num), "regressor parameter gradient mismatch");
        }
      }
    }
    Eigen::MatrixXd xp = x;
    for (Eigen::Index i = 0; i < x.size(); ++i) {
      const double num = oracle::central_difference(
          [&](double v) {
            xp.data()[i] = v;
            return loss(xp);
          },
          x.data()[i]);
      xp.data()[i] = x.data()[i];
      o.require(track(g.input.data()[i], num), "regressor input gradient mismatch");
    }
    ++regressors;
    ++instances;
  }
  o.require(instances >= 50, "fewer than 50 instances");
  if (o.pass) o.detail = std::to_string(instances) + " instances, worst rel err " + fmt("%.2e", worst);
  return o;
}

Outcome em_monotone() {
  Outcome o;
  Rng rng(202);
  int fits = 0;
  double worst_drop = 0.0;
  for (int d = 0; d < 20; ++d) {
    const int h = d % 2 ? 8 : 2;
    const int blobs = 1 + static_cast<int>(rng.index(4));
    Eigen::MatrixXd centers(blobs, h);
    for (Eigen::Index i = 0; i < centers.size(); ++i) centers.data()[i] = rng.uniform(-5, 5);
    Eigen::MatrixXd x(500, h);
    for (int i = 0; i < 500; ++i) {
      const auto b = static_cast<Eigen::Index>(rng.index(static_cast<std::size_t>(blobs)));
      for (int k = 0; k < h; ++k) x(i, k) = centers(b, k) + rng.uniform(0.3, 1.5) * rng.normal();
    }
    for (int c : {1, 2, 4}) {
      const GmmModel m = em_fit(x, c, 1000 + static_cast<std::uint64_t>(d));
      const auto& tr = m.log_likelihood_trace;
      for (std::size_t i = 1; i < tr.size(); ++i) {
        worst_drop = std::max(worst_drop, tr[i - 1] - tr[i]);
        o.require(tr[i] >= tr[i - 1] - 1e-9, "log-likelihood decreased");
      }
      ++fits;
    }
  }
  if (o.pass) o.detail = std::to_string(fits) + " fits, largest drop " + fmt("%.2e", worst_drop);
  return o;
}

Outcome density_sanity() {
  Outcome o;
  Rng rng(303);
  Eigen::MatrixXd x(1500, 2);
  for (int i = 0; i < 1500; ++i) {
    const int b = i % 3;
    x(i, 0) = 4.0 * b + (0.5 + 0.5 * b) * rng.normal();
    x(i, 1) = -2.0 * b + 0.8 * rng.normal() + 0.3 * x(i, 0);
  }
  const GmmModel m = em_fit(x, 3, 17);
  Eigen::Vector2d lo = Eigen::Vector2d::Constant(1e300), hi = Eigen::Vector2d::Constant(-1e300);
  for (const auto& c : m.components) {
    for (int d = 0; d < 2; ++d) {
      const double s = std::sqrt(c.covariance(d, d));
      lo(d) = std::min(lo(d), c.mean(d) - 6.0 * s);
      hi(d) = std::max(hi(d), c.mean(d) + 6.0 * s);
    }
  }
  const int n = 1000000;
  Eigen::MatrixXd u(n, 2);
  for (int i = 0; i < n; ++i) {
    u(i, 0) = rng.uniform(lo(0), hi(0));
    u(i, 1) = rng.uniform(lo(1), hi(1));
  }
  const Eigen::VectorXd s = ood_scores(m, u);
  const double integral = (-s.array()).exp().mean() * (hi - lo).prod();
  o.require(std::abs(integral - 1.0) <= 0.05, "integral " + fmt("%.4f", integral));
  if (o.pass) o.detail = "integral " + fmt("%.4f", integral) + " over 1e6 samples";
  return o;
}

Outcome metric_oracles() {
  Outcome o;
  Rng rng(404);
  const auto rel = [](double a, double b) { return std::abs(a - b) <= 1e-10 * std::max(std::abs(b), 1e-300); };
  for (int trial = 0; trial < 200; ++trial) {
    const int k = 1 + static_cast<int>(rng.index(5));
    const int t = 1 + static_cast<int>(rng.index(25));
    const auto p = oracle::random_mixture(rng, k, t, 0.5, 2.0, 1.5);
    const Trajectory gt = oracle::random_trajectory(rng, t, 1.5);
    o.require(rel(wade(gt, p), oracle::wade(gt, p)), "wADE");
    o.require(rel(min_ade(gt, p), oracle::min_ade(gt, p)), "minADE");
    o.require(rel(wfde(gt, p), oracle::wfde(gt, p)), "wFDE");
    o.require(rel(min_fde(gt, p), oracle::min_fde(gt, p)), "minFDE");
    o.require(rel(nll_metric(gt, p), oracle::nll(p, gt)), "NLL");
    o.require(cnll(gt, p) == nll_metric(gt, p) - t * oracle::kLog2Pi, "cNLL identity");
  }
  std::vector<double> scores;
  std::vector<int> labels;
  for (int i = 0; i < 200; ++i) {
    labels.push_back(i % 3 == 0);
    scores.push_back(std::round((rng.normal() + 0.8 * labels.back()) * 5.0) / 5.0);
  }
  o.require(std::abs(auroc(scores, labels) - oracle::pair_auroc(scores, labels)) <= 1e-12, "AUROC");
  const std::vector<double> e = {4, 3, 2, 1};
  const double ra = r_auc(retention_curve(e, e));
  o.require(std::abs(ra - 1.75) <= 1e-15, "retention example gave " + fmt("%.17g", ra));
  if (o.pass) o.detail = "200 random mixtures, n=200 AUROC, retention example 1.75";
  return o;
}

Outcome anchors() {
  Outcome o;
  GmmModel m;
  m.components.push_back({1.0, Eigen::Vector2d::Zero(), Eigen::Matrix2d::Identity()});
  const double a = ood_score(m, Eigen::Vector2d::Zero());
  o.require(std::abs(a - 1.837877066409345) <= 1e-12, "OOD score at the mean " + fmt("%.17g", a));
  o.require(std::abs(ood_score(m, Eigen::Vector2d(3, 4)) - (oracle::kLog2Pi + 12.5)) <= 1e-12, "OOD score at (3,4)");
  const Trajectory gt = Trajectory::Constant(25, 2, 1.25);
  MixturePrediction p;
  p.pi = Eigen::VectorXd::Ones(1);
  p.mu = {gt};
  p.sigma = Eigen::MatrixXd::Ones(1, 25);
  const double nll = nll_metric(gt, p);
  o.require(std::abs(nll - 25 * oracle::kLog2Pi) <= 1e-12, "exact-hit NLL " + fmt("%.17g", nll));
  o.require(std::abs(cnll(gt, p)) <= 1e-12, "exact-hit cNLL");
  if (o.pass) o.detail = "alpha=" + fmt("%.9f", a) + " NLL=" + fmt("%.6f", nll) + " cNLL=" + fmt("%.1e", cnll(gt, p));
  return o;
}

struct EndToEnd {
  RunConfig config;
  EvalReport report;
  double seconds = 0.0;
  bool ran = false;
  std::string error;
};

EndToEnd run_default(const fs::path& config_path, const fs::path& work) {
  EndToEnd r;
  try {
    r.config = load_run_config(config_path);
    r.config.out_dir = work / "default";
    r.config.sync();
    r.config.validate();
    fs::remove_all(r.config.out_dir);
    std::ostringstream out, log;
    const auto t0 = std::chrono::steady_clock::now();
    r.report = cmd_all(r.config, out, log);
    r.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    r.ran = true;
    std::fputs(out.str().c_str(), stdout);
  } catch (const std::exception& e) {
    r.error = e.what();
  }
  return r;
}

Outcome end_to_end(const EndToEnd& run) {
  Outcome o;
  if (!run.ran) {
    o.require(false, "pipeline failed: " + run.error);
    return o;
  }
  const auto& d = run.config.dataset;
  o.require(d.n_train == 2000 && d.n_dev == 500 && d.n_eval == 500 && d.ood_fraction_eval == 0.4,
            "default config is not 2000/500/500 with 40% eval OOD");
  const auto& rep = run.report;
  const double auroc_gmm = rep.auroc.at("lGMM").value_or(0.0);
  o.require(auroc_gmm >= 0.8, "lGMM AUROC " + fmt("%.4f", auroc_gmm));
  for (const char* split : {"ID", "Full"}) {
    const double ereg = rep.find_retention("E_reg", split)->r_auc;
    const double rnd = rep.find_retention("Random", split)->r_auc;
    const double orc = rep.find_retention("Oracle", split)->r_auc;
    o.require(ereg <= 0.85 * rnd, std::string(split) + " E_reg R-AUC not 15% below Random");
    o.require(ereg >= orc, std::string(split) + " E_reg R-AUC below Oracle");
  }
  const double corr = rep.uncertainty_correlation_id.value_or(-1.0);
  o.require(corr >= 0.5, "Pearson " + fmt("%.4f", corr));
  o.require(rep.ood && rep.id && rep.ood->wade >= rep.id->wade, "OOD wADE below ID wADE");
  o.require(run.seconds < 900.0, "runtime " + fmt("%.0f s", run.seconds));
  if (o.pass) {
    const double ereg = rep.find_retention("E_reg", "ID")->r_auc;
    const double rnd = rep.find_retention("Random", "ID")->r_auc;
    o.detail = "AUROC " + fmt("%.3f", auroc_gmm) + ", ID R-AUC E_reg " + fmt("%.3f", ereg) + " vs Random " +
               fmt("%.3f", rnd) + ", Pearson " + fmt("%.3f", corr) + ", wADE ID/OOD " +
               fmt("%.2f", rep.id->wade) + "/" + fmt("%.2f", rep.ood->wade) + ", " + fmt("%.0f s", run.seconds);
  }
  return o;
}

Outcome freeze(const EndToEnd& run) {
  Outcome o;
  if (!run.ran) {
    o.require(false, "pipeline did not run");
    return o;
  }
  const auto j = read_json_file(run_paths(run.config).reports() / "freeze_check.json");
  o.require(j.at("unchanged").get<bool>(), "freeze check reports a change");
  o.require(j.at("encoder_before") == j.at("encoder_after"), "encoder hash changed");
  o.require(j.at("predictor_before") == j.at("predictor_after"), "predictor hash changed");
  // Independently re-hash the stored checkpoints.
  const auto paths = run_paths(run.config);
  const auto enc = encoder_from_json(read_json_file(paths.encoder()));
  const auto pred = predictor_from_json(read_json_file(paths.predictor()));
  std::ostringstream hex;
  char buf[32];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(parameter_hash(enc)));
  o.require(j.at("encoder_after").get<std::string>() == buf, "stored encoder differs from phase-2 hash");
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(parameter_hash(pred)));
  o.require(j.at("predictor_after").get<std::string>() == buf, "stored predictor differs from phase-2 hash");
  if (o.pass) o.detail = "encoder " + j.at("encoder_after").get<std::string>() + ", predictor " +
                         j.at("predictor_after").get<std::string>();
  return o;
}

Outcome grid_table(const EndToEnd& run) {
  Outcome o;
  if (!run.ran) {
    o.require(false, "pipeline did not run");
    return o;
  }
  const std::vector<int> expected = {1, 2, 3, 4, 6, 8, 12, 16};
  o.require(run.config.gmm.grid == expected, "grid is not {1,2,3,4,6,8,12,16}");
  std::istringstream in(slurp(run_paths(run.config).reports() / "gmm_selection.csv"));
  std::string line;
  std::getline(in, line);
  o.require(line == "components,auroc,selected,note", "unexpected header");
  std::vector<int> cs;
  double best = -1.0;
  int best_c = -1, selected = -1;
  while (std::getline(in, line)) {
    std::stringstream ls(line);
    std::string c, a, s;
    std::getline(ls, c, ',');
    std::getline(ls, a, ',');
    std::getline(ls, s, ',');
    cs.push_back(std::stoi(c));
    const double v = std::stod(a);
    if (v > best) {
      best = v;
      best_c = cs.back();
    }
    if (s == "1") selected = cs.back();
  }
  o.require(cs == expected, "table rows do not cover the grid");
  o.require(selected == best_c, "selected C=" + std::to_string(selected) + ", argmax C=" + std::to_string(best_c));
  o.require(read_json_file(run_paths(run.config).gmm()).at("components").get<int>() == selected,
            "stored GMM has a different C");
  if (o.pass) o.detail = std::to_string(cs.size()) + " rows, selected C=" + std::to_string(selected) +
                         " (dev AUROC " + fmt("%.4f", best) + ")";
  return o;
}

Outcome determinism(const fs::path& config_path, const fs::path& work) {
  Outcome o;
  try {
    RunConfig a = load_run_config(config_path);
    a.sync();
    a.validate();
    RunConfig b = a;
    a.out_dir = work / "det_a";
    b.out_dir = work / "det_b";
    fs::remove_all(a.out_dir);
    fs::remove_all(b.out_dir);
    std::ostringstream out, log;
    const std::vector<std::pair<std::string, std::function<void(const RunConfig&)>>> steps = {
        {"generate", [&](const RunConfig& c) { cmd_generate(c, log); }},
        {"train", [&](const RunConfig& c) { cmd_train(c, log); }},
        {"fit-reliability", [&](const RunConfig& c) { cmd_fit_reliability(c, log); }},
        {"evaluate", [&](const RunConfig& c) { cmd_evaluate(c, out, log); }}};
    const auto compare = [&](const std::map<std::string, std::string>& x,
                             const std::map<std::string, std::string>& y, const std::string& what) {
      o.require(x.size() == y.size(), what + ": different file sets");
      for (const auto& [name, bytes] : x) {
        if (name == "config.json") continue;  // records out_dir
        o.require(y.count(name) && y.at(name) == bytes, what + ": " + name + " differs");
      }
    };
    for (const auto& [name, step] : steps) {
      step(a);
      step(b);
      compare(tree(run_paths(a).root), tree(run_paths(b).root), "after " + name);
    }
    // Rerunning every command in place must not change anything either.
    const auto before = tree(run_paths(a).root);
    for (const auto& [name, step] : steps) step(a);
    compare(before, tree(run_paths(a).root), "in-place rerun");
    if (o.pass) o.detail = std::to_string(before.size()) + " files identical across runs";
  } catch (const std::exception& e) {
    o.require(false, e.what());
  }
  return o;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"reltraj acceptance checks"};
  fs::path default_config, small_config, work = "acceptance_runs";
  app.add_option("--default-config", default_config, "config for the end-to-end run")->required()->check(CLI::ExistingFile);
  app.add_option("--small-config", small_config, "config for the determinism check")->required()->check(CLI::ExistingFile);
  app.add_option("--work", work, "scratch directory");
  CLI11_PARSE(app, argc, argv);

  std::vector<std::pair<std::string, Outcome>> results;
  const auto timed = [&](const std::string& name, const std::function<Outcome()>& f) {
    const auto t0 = std::chrono::steady_clock::now();
    Outcome o = f();
    const double s = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    o.detail += " [" + fmt("%.1f s", s) + "]";
    results.emplace_back(name, o);
  };

  timed("gradient correctness", gradients);
  timed("EM monotonicity", em_monotone);
  timed("density sanity", density_sanity);
  timed("metric oracles", metric_oracles);
  timed("closed-form anchors", anchors);
  const EndToEnd run = run_default(default_config, work);
  timed("end-to-end synthetic shift", [&] { return end_to_end(run); });
  timed("two-phase freeze", [&] { return freeze(run); });
  timed("component-selection table", [&] { return grid_table(run); });
  timed("determinism", [&] { return determinism(small_config, work); });

  bool all = true;
  std::printf("\n");
  for (std::size_t i = 0; i < results.size(); ++i) {
    const auto& [name, o] = results[i];
    std::printf("criterion %zu: %s  %s: %s\n", i + 1, o.pass ? "PASS" : "FAIL", name.c_str(), o.detail.c_str());
    all = all && o.pass;
  }
  return all ? 0 : 1;
}
