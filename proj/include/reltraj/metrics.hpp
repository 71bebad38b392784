#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"
#include "reltraj/predictor.hpp"

namespace reltraj {

// Displacement errors. Both trajectories must have the same length.
double ade(const Trajectory& gt, const Trajectory& traj);
double fde(const Trajectory& gt, const Trajectory& traj);

// Mixture-weighted and best-mode displacement errors.
double wade(const Trajectory& gt, const MixturePrediction& pred);
double wfde(const Trajectory& gt, const MixturePrediction& pred);
double min_ade(const Trajectory& gt, const MixturePrediction& pred);
double min_fde(const Trajectory& gt, const MixturePrediction& pred);

double nll_metric(const Trajectory& gt, const MixturePrediction& pred);
/// NLL shifted by T_f log(2 pi) so a unit-variance exact hit scores zero.
double cnll(const Trajectory& gt, const MixturePrediction& pred);

/// Mann-Whitney AUROC with average ranks for ties; label 1 is the positive
/// (OOD) class and higher scores mean more OOD.
double auroc(std::span<const double> scores, std::span<const int> labels);

struct RetentionPoint {
  double fraction = 1.0;
  double mean_error = 0.0;
};

/// Points ordered from fraction 1 down to 1/n.
struct RetentionCurve {
  std::vector<RetentionPoint> points;
};

/// Discards the highest-uncertainty samples one at a time (ties broken by
/// ascending index) and averages the errors that remain.
RetentionCurve retention_curve(std::span<const double> errors, std::span<const double> uncertainties);
RetentionCurve oracle_curve(std::span<const double> errors);
/// Trapezoidal area over [1/n, 1], divided by the span of the fractions.
double r_auc(const RetentionCurve& curve);

/// Seeded uniform noise used as the Random retention baseline.
std::vector<double> random_uncertainties(std::size_t n, std::uint64_t seed);

double pearson_correlation(std::span<const double> a, std::span<const double> b);

// ---------------------------------------------------------------------------
// Evaluation battery

/// One evaluated (scene, target agent) pair with every estimator's output.
struct EvalSample {
  std::int64_t scene_id = 0;
  std::int64_t agent_id = 0;
  int ood = 0;
  MixturePrediction pred;
  Trajectory gt;             // agent-relative frame
  double alpha_hat = 0.0;    // lGMM OOD score
  double e_hat = 0.0;        // error-regression uncertainty (log-wADE scale)
  double nll_proxy = 0.0;    // mixture entropy bound
};

struct SplitMetrics {
  std::size_t count = 0;
  double wade = 0.0;
  double min_ade = 0.0;
  double wfde = 0.0;
  double min_fde = 0.0;
  double nll = 0.0;
  double cnll = 0.0;
};

struct RetentionResult {
  std::string estimator;
  std::string split;
  double r_auc = 0.0;
  RetentionCurve curve;
};

struct EvalReport {
  std::optional<SplitMetrics> id;
  std::optional<SplitMetrics> ood;
  std::optional<SplitMetrics> full;
  // Keyed by OOD-score estimator ("lGMM", "E_reg", "NLL-proxy"); absent when
  // the evaluated set has a single class.
  std::map<std::string, std::optional<double>> auroc;
  std::vector<RetentionResult> retention;
  // Pearson(e_hat, log wADE) on ID samples, absent without ID samples.
  std::optional<double> uncertainty_correlation_id;

  const RetentionResult* find_retention(const std::string& estimator, const std::string& split) const;
};

inline const char* const kRetentionEstimators[] = {"E_reg", "NLL-proxy", "lGMM", "Random", "Oracle"};

struct EvalOptions {
  std::uint64_t random_seed = 7;
};

SplitMetrics split_metrics(std::span<const EvalSample> samples);
EvalReport evaluate(std::span<const EvalSample> samples, const EvalOptions& options = {});

nlohmann::ordered_json report_to_json(const EvalReport& report);
std::string format_report_table(const EvalReport& report);
/// CSV with header "estimator,fraction,mean_error" for one split.
std::string retention_csv(const EvalReport& report, const std::string& split);

}  // namespace reltraj
