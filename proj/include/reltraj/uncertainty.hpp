#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"
#include "reltraj/nn.hpp"
#include "reltraj/predictor.hpp"

namespace reltraj {

inline constexpr double kErrorFloor = 1e-6;  // meters, applied before the log

/// Regression target: log(max(wADE(gt, pred), 1e-6)).
double regression_target(const MixturePrediction& pred, const Trajectory& gt);

/// Error-regression head: a three-layer MLP on the latent feature that
/// predicts the log-wADE of the frozen predictor.
struct ErrorRegressor {
  DenseNet net;
  FeatureNorm input_norm;
  std::string target_transform = "log-wADE";
  double train_loss = 0.0;
  std::optional<double> validation_loss;

  static ErrorRegressor create(int latent_dim, Rng& rng, int hidden1 = 64, int hidden2 = 32);
};

struct RegressorTrainConfig {
  int epochs = 100;
  double learning_rate = 1e-3;
  int batch_size = 256;
  double weight_decay = 1e-4;
  std::uint64_t seed = 11;
  bool fit_input_norm = true;
};

/// Mean over samples of (e - e_hat)^2.
double regression_loss(const Eigen::VectorXd& targets, const Eigen::VectorXd& predictions);

/// Features are rows (n x H). `epoch_losses`, when given, receives the mean
/// training loss of every epoch.
ErrorRegressor train_error_regressor(const Eigen::MatrixXd& features, const Eigen::VectorXd& targets,
                                     const RegressorTrainConfig& config,
                                     const Eigen::MatrixXd* validation_features = nullptr,
                                     const Eigen::VectorXd* validation_targets = nullptr,
                                     std::vector<double>* epoch_losses = nullptr);

double estimate_uncertainty(const ErrorRegressor& regressor, const Eigen::VectorXd& h);
Eigen::VectorXd estimate_uncertainties(const ErrorRegressor& regressor, const Eigen::MatrixXd& features);

/// Upper bound on the mixture entropy:
/// sum_k pi_k [ sum_t (log 2pi + 2 log sigma_kt + 1) - log pi_k ].
double nll_proxy_uncertainty(const MixturePrediction& pred);

nlohmann::json regressor_to_json(const ErrorRegressor& regressor);
ErrorRegressor regressor_from_json(const nlohmann::json& j);

}  // namespace reltraj
