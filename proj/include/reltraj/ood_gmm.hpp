#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"

namespace reltraj {

// Latent Gaussian mixture OOD detector. Feature matrices hold one sample per
// row (n x H). The OOD score of h is -log q(h) under the fitted mixture.

struct GaussianComponent {
  double weight = 1.0;
  Eigen::VectorXd mean;
  Eigen::MatrixXd covariance;
};

struct GmmModel {
  std::vector<GaussianComponent> components;
  std::vector<double> log_likelihood_trace;  // mean log-likelihood per EM iteration
  // Optional per-dimension standardization applied before the mixture; the
  // score includes the Jacobian so it stays a density over raw features.
  std::optional<Eigen::VectorXd> shift;
  std::optional<Eigen::VectorXd> scale;

  int size() const { return static_cast<int>(components.size()); }
  int dim() const { return components.empty() ? 0 : static_cast<int>(components.front().mean.size()); }

  // Weights sum to 1, covariances symmetric with a Cholesky factor.
  void validate() const;
};

struct KMeansResult {
  Eigen::MatrixXd centers;              // C x H
  std::vector<int> assignment;          // cluster of each sample
  int iterations = 0;
};

inline constexpr int kKMeansMaxIter = 50;
inline constexpr double kKMeansTol = 1e-6;

/// k-means++ seeding followed by Lloyd iterations. Needs at least C distinct rows.
KMeansResult kmeans(const Eigen::MatrixXd& features, int clusters, std::uint64_t seed);

/// Mixture initialised from k-means: means = centers, weights = cluster
/// fractions, covariances = per-cluster sample covariance + ridge.
GmmModel kmeans_init(const Eigen::MatrixXd& features, int clusters, std::uint64_t seed);

struct EmOptions {
  int max_iter = 100;
  double tol = 1e-6;
  bool standardize = false;
};

/// Ridge added to a covariance estimate: 1e-6 * max(1, trace / H).
double covariance_ridge(const Eigen::MatrixXd& covariance);

GmmModel em_fit(const Eigen::MatrixXd& features, int clusters, std::uint64_t seed,
                const EmOptions& options = {});

/// Posterior component probabilities, n x C.
Eigen::MatrixXd responsibilities(const GmmModel& model, const Eigen::MatrixXd& features);

/// Mean log-likelihood of the rows under the mixture.
double mean_log_likelihood(const GmmModel& model, const Eigen::MatrixXd& features);

double ood_score(const GmmModel& model, const Eigen::VectorXd& h);
Eigen::VectorXd ood_scores(const GmmModel& model, const Eigen::MatrixXd& features);

struct SelectionRow {
  int components = 0;
  double auroc = 0.5;
  std::string note;
};

struct ComponentSelection {
  int best_components = 0;
  std::vector<SelectionRow> table;
  GmmModel best_model;
};

inline constexpr int kDefaultComponentGrid[] = {1, 2, 3, 4, 6, 8, 12, 16};

/// Fits one mixture per grid value on `train`, scores `dev`, and picks the
/// highest dev AUROC (ties go to the smaller C).
ComponentSelection select_components(const Eigen::MatrixXd& train, const Eigen::MatrixXd& dev,
                                     std::span<const int> dev_labels, std::span<const int> grid,
                                     std::uint64_t seed, const EmOptions& options = {});

nlohmann::json gmm_to_json(const GmmModel& model);
GmmModel gmm_from_json(const nlohmann::json& j);

}  // namespace reltraj
