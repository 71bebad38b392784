#include "reltraj/uncertainty.hpp"

#include <cmath>
#include <numeric>

#include "reltraj/metrics.hpp"

namespace reltraj {

namespace {
constexpr double kLog2Pi = 1.8378770664093454836;
}

double regression_target(const MixturePrediction& pred, const Trajectory& gt) {
  return std::log(std::max(wade(gt, pred), kErrorFloor));
}

ErrorRegressor ErrorRegressor::create(int latent_dim, Rng& rng, int hidden1, int hidden2) {
  const int dims[] = {latent_dim, hidden1, hidden2, 1};
  ErrorRegressor r;
  r.net = DenseNet::create(dims, Activation::kRelu, Activation::kIdentity, rng);
  r.input_norm = FeatureNorm::identity(latent_dim);
  return r;
}

double regression_loss(const Eigen::VectorXd& targets, const Eigen::VectorXd& predictions) {
  if (targets.size() != predictions.size() || targets.size() == 0) {
    throw std::invalid_argument("regression_loss: size mismatch or empty");
  }
  return (targets - predictions).squaredNorm() / static_cast<double>(targets.size());
}

Eigen::VectorXd estimate_uncertainties(const ErrorRegressor& regressor, const Eigen::MatrixXd& features) {
  const Eigen::MatrixXd x = regressor.input_norm.apply(Eigen::MatrixXd(features.transpose()));
  return regressor.net.forward_batch(x).row(0).transpose();
}

double estimate_uncertainty(const ErrorRegressor& regressor, const Eigen::VectorXd& h) {
  return regressor.net.forward(regressor.input_norm.apply(h))(0);
}

ErrorRegressor train_error_regressor(const Eigen::MatrixXd& features, const Eigen::VectorXd& targets,
                                     const RegressorTrainConfig& config,
                                     const Eigen::MatrixXd* validation_features,
                                     const Eigen::VectorXd* validation_targets,
                                     std::vector<double>* epoch_losses) {
  const auto n = features.rows();
  if (n == 0 || targets.size() != n) {
    throw std::invalid_argument("train_error_regressor: need one target per feature row");
  }
  if (config.epochs < 1 || config.batch_size < 1) {
    throw std::invalid_argument("train_error_regressor: epochs and batch size must be >= 1");
  }
  if (!features.allFinite() || !targets.allFinite()) {
    throw std::invalid_argument("train_error_regressor: non-finite training data");
  }
  Rng rng(config.seed);
  ErrorRegressor reg = ErrorRegressor::create(static_cast<int>(features.cols()), rng);
  const Eigen::MatrixXd x_all_raw = features.transpose();
  if (config.fit_input_norm) reg.input_norm = FeatureNorm::fit(x_all_raw);
  const Eigen::MatrixXd x_all = reg.input_norm.apply(x_all_raw);

  const auto batches_per_epoch = (n + config.batch_size - 1) / config.batch_size;
  AdamWConfig opt_cfg;
  opt_cfg.learning_rate = config.learning_rate;
  opt_cfg.weight_decay = config.weight_decay;
  opt_cfg.total_steps = static_cast<std::int64_t>(config.epochs) * batches_per_epoch;
  AdamW optimizer(opt_cfg, param_block_sizes(reg.net));

  std::vector<Eigen::Index> order(static_cast<std::size_t>(n));
  std::iota(order.begin(), order.end(), Eigen::Index{0});
  for (int epoch = 0; epoch < config.epochs; ++epoch) {
    rng.shuffle(order);
    double epoch_loss = 0.0;
    for (Eigen::Index start = 0; start < n; start += config.batch_size) {
      const auto b = std::min<Eigen::Index>(config.batch_size, n - start);
      Eigen::MatrixXd xb(x_all.rows(), b);
      Eigen::RowVectorXd yb(b);
      for (Eigen::Index j = 0; j < b; ++j) {
        const auto i = order[static_cast<std::size_t>(start + j)];
        xb.col(j) = x_all.col(i);
        yb(j) = targets(i);
      }
      const ForwardCache cache = reg.net.forward_cached(xb);
      const Eigen::RowVectorXd residual = cache.output.row(0) - yb;
      epoch_loss += residual.squaredNorm();
      const Eigen::MatrixXd upstream = residual * (2.0 / static_cast<double>(b));
      const NetGradient grad = reg.net.backward(cache, upstream);
      std::vector<ParamBlock> blocks;
      append_param_blocks(reg.net, grad, blocks);
      optimizer.step(blocks);
    }
    epoch_loss /= static_cast<double>(n);
    if (!std::isfinite(epoch_loss)) {
      throw NonFiniteError("train_error_regressor: non-finite loss in epoch " + std::to_string(epoch));
    }
    if (epoch_losses) epoch_losses->push_back(epoch_loss);
  }
  reg.train_loss = regression_loss(targets, estimate_uncertainties(reg, features));
  if (validation_features && validation_targets && validation_features->rows() > 0) {
    reg.validation_loss =
        regression_loss(*validation_targets, estimate_uncertainties(reg, *validation_features));
  }
  return reg;
}

double nll_proxy_uncertainty(const MixturePrediction& pred) {
  double total = 0.0;
  for (int k = 0; k < pred.modes(); ++k) {
    const double w = pred.pi(k);
    if (w <= 0.0) continue;  // 0 log 0 = 0
    double mode = 0.0;
    for (int t = 0; t < pred.horizon(); ++t) mode += kLog2Pi + 2.0 * std::log(pred.sigma(k, t)) + 1.0;
    total += w * (mode - std::log(w));
  }
  return total;
}

nlohmann::json regressor_to_json(const ErrorRegressor& r) {
  nlohmann::json j{{"kind", "error_regressor"},
                   {"schema", 1},
                   {"target_transform", r.target_transform},
                   {"net", net_to_json(r.net)},
                   {"input_norm", norm_to_json(r.input_norm)},
                   {"train_loss", r.train_loss}};
  j["validation_loss"] = r.validation_loss ? nlohmann::json(*r.validation_loss) : nlohmann::json(nullptr);
  return j;
}

ErrorRegressor regressor_from_json(const nlohmann::json& j) {
  try {
    if (j.at("kind").get<std::string>() != "error_regressor" || j.at("schema").get<int>() != 1) {
      throw std::runtime_error("checkpoint schema error: not an error-regressor checkpoint (schema 1)");
    }
    ErrorRegressor r;
    r.target_transform = j.at("target_transform").get<std::string>();
    r.net = net_from_json(j.at("net"));
    r.input_norm = norm_from_json(j.at("input_norm"));
    r.train_loss = j.at("train_loss").get<double>();
    if (!j.at("validation_loss").is_null()) r.validation_loss = j.at("validation_loss").get<double>();
    if (r.net.output_dim() != 1 || r.input_norm.mean.size() != r.net.input_dim()) {
      throw std::runtime_error("checkpoint schema error: error regressor dimensions are inconsistent");
    }
    return r;
  } catch (const nlohmann::json::exception& e) {
    throw std::runtime_error(std::string("checkpoint schema error: ") + e.what());
  }
}

}  // namespace reltraj
