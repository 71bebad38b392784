#include "reltraj/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <numeric>
#include <stdexcept>

#include "reltraj/random.hpp"

namespace reltraj {

namespace {

constexpr double kLog2Pi = 1.8378770664093454836;

void check_lengths(const Trajectory& gt, const Trajectory& traj) {
  if (gt.rows() != traj.rows()) {
    throw std::invalid_argument("trajectory lengths differ: " + std::to_string(gt.rows()) + " vs " +
                                std::to_string(traj.rows()));
  }
  if (gt.rows() == 0) throw std::invalid_argument("empty trajectory");
}

}  // namespace

double ade(const Trajectory& gt, const Trajectory& traj) {
  check_lengths(gt, traj);
  return (gt - traj).rowwise().norm().mean();
}

double fde(const Trajectory& gt, const Trajectory& traj) {
  check_lengths(gt, traj);
  const auto last = gt.rows() - 1;
  return (gt.row(last) - traj.row(last)).norm();
}

double wade(const Trajectory& gt, const MixturePrediction& pred) {
  double acc = 0.0;
  for (int k = 0; k < pred.modes(); ++k) acc += pred.pi(k) * ade(gt, pred.mu[static_cast<std::size_t>(k)]);
  return acc;
}

double wfde(const Trajectory& gt, const MixturePrediction& pred) {
  double acc = 0.0;
  for (int k = 0; k < pred.modes(); ++k) acc += pred.pi(k) * fde(gt, pred.mu[static_cast<std::size_t>(k)]);
  return acc;
}

double min_ade(const Trajectory& gt, const MixturePrediction& pred) {
  double best = std::numeric_limits<double>::infinity();
  for (const auto& m : pred.mu) best = std::min(best, ade(gt, m));
  return best;
}

double min_fde(const Trajectory& gt, const MixturePrediction& pred) {
  double best = std::numeric_limits<double>::infinity();
  for (const auto& m : pred.mu) best = std::min(best, fde(gt, m));
  return best;
}

double nll_metric(const Trajectory& gt, const MixturePrediction& pred) { return mixture_nll(pred, gt); }

double cnll(const Trajectory& gt, const MixturePrediction& pred) {
  return nll_metric(gt, pred) - static_cast<double>(gt.rows()) * kLog2Pi;
}

double auroc(std::span<const double> scores, std::span<const int> labels) {
  if (scores.size() != labels.size()) throw std::invalid_argument("auroc: scores/labels size mismatch");
  std::size_t n_pos = 0;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] != 0 && labels[i] != 1) throw std::invalid_argument("auroc: labels must be 0/1");
    if (std::isnan(scores[i])) throw std::invalid_argument("auroc: NaN score");
    n_pos += static_cast<std::size_t>(labels[i]);
  }
  const std::size_t n_neg = labels.size() - n_pos;
  if (n_pos == 0 || n_neg == 0) throw std::invalid_argument("auroc: both classes must be present");

  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });
  double rank_sum = 0.0;
  for (std::size_t i = 0; i < order.size();) {
    std::size_t j = i;
    while (j + 1 < order.size() && scores[order[j + 1]] == scores[order[i]]) ++j;
    const double avg_rank = 0.5 * static_cast<double>(i + j) + 1.0;  // 1-based ranks i+1..j+1
    for (std::size_t k = i; k <= j; ++k) {
      if (labels[order[k]] == 1) rank_sum += avg_rank;
    }
    i = j + 1;
  }
  const double np = static_cast<double>(n_pos);
  return (rank_sum - np * (np + 1.0) / 2.0) / (np * static_cast<double>(n_neg));
}

RetentionCurve retention_curve(std::span<const double> errors, std::span<const double> uncertainties) {
  const std::size_t n = errors.size();
  if (n == 0) throw std::invalid_argument("retention_curve: no samples");
  if (uncertainties.size() != n) throw std::invalid_argument("retention_curve: length mismatch");

  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return uncertainties[a] > uncertainties[b];
  });

  // suffix[m] = sum of the m lowest-uncertainty errors
  std::vector<double> suffix(n + 1, 0.0);
  for (std::size_t m = 1; m <= n; ++m) suffix[m] = suffix[m - 1] + errors[order[n - m]];

  RetentionCurve curve;
  curve.points.reserve(n);
  double total = 0.0;
  for (double e : errors) total += e;
  curve.points.push_back({1.0, total / static_cast<double>(n)});
  for (std::size_t m = n - 1; m >= 1; --m) {
    curve.points.push_back({static_cast<double>(m) / static_cast<double>(n),
                            suffix[m] / static_cast<double>(m)});
  }
  return curve;
}

RetentionCurve oracle_curve(std::span<const double> errors) { return retention_curve(errors, errors); }

double r_auc(const RetentionCurve& curve) {
  const auto& p = curve.points;
  if (p.empty()) throw std::invalid_argument("r_auc: empty curve");
  if (p.size() == 1) return p.front().mean_error;
  double area = 0.0;
  for (std::size_t i = 0; i + 1 < p.size(); ++i) {
    area += (p[i].fraction - p[i + 1].fraction) * 0.5 * (p[i].mean_error + p[i + 1].mean_error);
  }
  return area / (p.front().fraction - p.back().fraction);
}

std::vector<double> random_uncertainties(std::size_t n, std::uint64_t seed) {
  Rng rng(seed);
  std::vector<double> out(n);
  for (auto& v : out) v = rng.uniform();
  return out;
}

double pearson_correlation(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size() || a.size() < 2) {
    throw std::invalid_argument("pearson_correlation: need two equal-length series of >= 2 values");
  }
  const double n = static_cast<double>(a.size());
  const double ma = std::accumulate(a.begin(), a.end(), 0.0) / n;
  const double mb = std::accumulate(b.begin(), b.end(), 0.0) / n;
  double sab = 0.0, saa = 0.0, sbb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    sab += (a[i] - ma) * (b[i] - mb);
    saa += (a[i] - ma) * (a[i] - ma);
    sbb += (b[i] - mb) * (b[i] - mb);
  }
  if (saa == 0.0 || sbb == 0.0) return 0.0;
  return sab / std::sqrt(saa * sbb);
}

// ---------------------------------------------------------------------------

SplitMetrics split_metrics(std::span<const EvalSample> samples) {
  SplitMetrics m;
  m.count = samples.size();
  if (samples.empty()) return m;
  for (const auto& s : samples) {
    m.wade += wade(s.gt, s.pred);
    m.min_ade += min_ade(s.gt, s.pred);
    m.wfde += wfde(s.gt, s.pred);
    m.min_fde += min_fde(s.gt, s.pred);
    m.nll += nll_metric(s.gt, s.pred);
    m.cnll += cnll(s.gt, s.pred);
  }
  const double n = static_cast<double>(samples.size());
  m.wade /= n;
  m.min_ade /= n;
  m.wfde /= n;
  m.min_fde /= n;
  m.nll /= n;
  m.cnll /= n;
  return m;
}

const RetentionResult* EvalReport::find_retention(const std::string& estimator,
                                                  const std::string& split) const {
  for (const auto& r : retention) {
    if (r.estimator == estimator && r.split == split) return &r;
  }
  return nullptr;
}

EvalReport evaluate(std::span<const EvalSample> samples, const EvalOptions& options) {
  if (samples.empty()) throw std::invalid_argument("evaluate: no samples");
  const std::size_t n = samples.size();

  std::vector<EvalSample> id_set, ood_set;
  for (const auto& s : samples) (s.ood == 1 ? ood_set : id_set).push_back(s);

  EvalReport report;
  report.full = split_metrics(samples);
  if (!id_set.empty()) report.id = split_metrics(id_set);
  if (!ood_set.empty()) report.ood = split_metrics(ood_set);

  std::vector<double> errors(n), alpha(n), e_hat(n), proxy(n);
  std::vector<int> labels(n);
  for (std::size_t i = 0; i < n; ++i) {
    errors[i] = wade(samples[i].gt, samples[i].pred);
    alpha[i] = samples[i].alpha_hat;
    e_hat[i] = samples[i].e_hat;
    proxy[i] = samples[i].nll_proxy;
    labels[i] = samples[i].ood;
  }
  const std::vector<double> noise = random_uncertainties(n, options.random_seed);

  const bool two_classes = !id_set.empty() && !ood_set.empty();
  for (const auto& [name, scores] : {std::pair<std::string, const std::vector<double>*>{"lGMM", &alpha},
                                     {"E_reg", &e_hat},
                                     {"NLL-proxy", &proxy}}) {
    report.auroc[name] = two_classes ? std::optional<double>(auroc(*scores, labels)) : std::nullopt;
  }

  const std::pair<std::string, const std::vector<double>*> estimators[] = {
      {"E_reg", &e_hat}, {"NLL-proxy", &proxy}, {"lGMM", &alpha}, {"Random", &noise}, {"Oracle", &errors}};
  for (const auto& [split, wanted] : {std::pair<std::string, int>{"ID", 0}, {"OOD", 1}, {"Full", -1}}) {
    std::vector<std::size_t> idx;
    for (std::size_t i = 0; i < n; ++i) {
      if (wanted < 0 || labels[i] == wanted) idx.push_back(i);
    }
    if (idx.empty()) continue;
    std::vector<double> err_sub;
    for (auto i : idx) err_sub.push_back(errors[i]);
    for (const auto& [name, values] : estimators) {
      std::vector<double> unc_sub;
      for (auto i : idx) unc_sub.push_back((*values)[i]);
      RetentionResult r;
      r.estimator = name;
      r.split = split;
      r.curve = retention_curve(err_sub, unc_sub);
      r.r_auc = r_auc(r.curve);
      report.retention.push_back(std::move(r));
    }
  }

  if (id_set.size() >= 2) {
    std::vector<double> pred_id, true_id;
    for (const auto& s : id_set) {
      pred_id.push_back(s.e_hat);
      true_id.push_back(std::log(std::max(wade(s.gt, s.pred), 1e-6)));
    }
    report.uncertainty_correlation_id = pearson_correlation(pred_id, true_id);
  }
  return report;
}

namespace {

nlohmann::ordered_json split_json(const std::optional<SplitMetrics>& m) {
  if (!m) return nullptr;
  nlohmann::ordered_json j;
  j["count"] = m->count;
  j["wADE"] = m->wade;
  j["minADE"] = m->min_ade;
  j["wFDE"] = m->wfde;
  j["minFDE"] = m->min_fde;
  j["NLL"] = m->nll;
  j["cNLL"] = m->cnll;
  return j;
}

std::string fmt(const char* spec, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, spec, v);
  return buf;
}

}  // namespace

nlohmann::ordered_json report_to_json(const EvalReport& report) {
  nlohmann::ordered_json j;
  j["metrics"]["ID"] = split_json(report.id);
  j["metrics"]["OOD"] = split_json(report.ood);
  j["metrics"]["Full"] = split_json(report.full);
  for (const auto& [name, value] : report.auroc) {
    j["auroc"][name] = value ? nlohmann::ordered_json(*value) : nlohmann::ordered_json(nullptr);
  }
  for (const char* est : kRetentionEstimators) {
    for (const char* split : {"ID", "OOD", "Full"}) {
      const auto* r = report.find_retention(est, split);
      j["r_auc"][est][split] = r ? nlohmann::ordered_json(r->r_auc) : nlohmann::ordered_json(nullptr);
    }
  }
  j["uncertainty_correlation_id"] = report.uncertainty_correlation_id
                                        ? nlohmann::ordered_json(*report.uncertainty_correlation_id)
                                        : nlohmann::ordered_json(nullptr);
  return j;
}

std::string format_report_table(const EvalReport& report) {
  std::string out;
  auto cell = [](const std::optional<SplitMetrics>& m, double SplitMetrics::*field) {
    return m ? fmt("%12.4f", (*m).*field) : std::string("           -");
  };
  out += "Trajectory prediction         ID         OOD        Full\n";
  const std::pair<const char*, double SplitMetrics::*> rows[] = {
      {"wADE", &SplitMetrics::wade},     {"minADE", &SplitMetrics::min_ade},
      {"wFDE", &SplitMetrics::wfde},     {"minFDE", &SplitMetrics::min_fde},
      {"NLL", &SplitMetrics::nll},       {"cNLL", &SplitMetrics::cnll}};
  for (const auto& [name, field] : rows) {
    char label[32];
    std::snprintf(label, sizeof label, "  %-18s", name);
    out += label + cell(report.id, field) + cell(report.ood, field) + cell(report.full, field) + "\n";
  }
  out += "  samples           ";
  for (const auto* m : {&report.id, &report.ood, &report.full}) {
    out += *m ? fmt("%12.0f", static_cast<double>((*m)->count)) : std::string("           -");
  }
  out += "\n\nOOD detection AUROC\n";
  for (const auto& [name, value] : report.auroc) {
    char label[32];
    std::snprintf(label, sizeof label, "  %-18s", name.c_str());
    out += label + (value ? fmt("%12.4f", *value) : std::string("           -")) + "\n";
  }
  out += "\nwADE R-AUC                    ID         OOD        Full\n";
  for (const char* est : kRetentionEstimators) {
    char label[32];
    std::snprintf(label, sizeof label, "  %-18s", est);
    out += label;
    for (const char* split : {"ID", "OOD", "Full"}) {
      const auto* r = report.find_retention(est, split);
      out += r ? fmt("%12.4f", r->r_auc) : std::string("           -");
    }
    out += "\n";
  }
  if (report.uncertainty_correlation_id) {
    out += "\nPearson(e_hat, log wADE) on ID: " + fmt("%.4f", *report.uncertainty_correlation_id) + "\n";
  }
  return out;
}

std::string retention_csv(const EvalReport& report, const std::string& split) {
  std::string out = "estimator,fraction,mean_error\n";
  for (const char* est : kRetentionEstimators) {
    const auto* r = report.find_retention(est, split);
    if (!r) continue;
    for (const auto& p : r->curve.points) {
      out += std::string(est) + "," + fmt("%.17g", p.fraction) + "," + fmt("%.17g", p.mean_error) + "\n";
    }
  }
  return out;
}

}  // namespace reltraj
