#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"
#include "reltraj/nn.hpp"

namespace reltraj {

/// T x 2 positions, one row per future step.
using Trajectory = Eigen::Matrix<double, Eigen::Dynamic, 2, Eigen::RowMajor>;

inline constexpr double kSigmaMin = 1e-3;
inline constexpr double kMixtureWeightFloor = 1e-12;

/// K-mode Gaussian mixture over a future trajectory. Mode k has weight pi(k),
/// mean trajectory mu[k] and isotropic per-step standard deviation sigma(k, t).
struct MixturePrediction {
  Eigen::VectorXd pi;           // K
  std::vector<Trajectory> mu;   // K of T_f x 2
  Eigen::MatrixXd sigma;        // K x T_f

  int modes() const { return static_cast<int>(pi.size()); }
  int horizon() const { return static_cast<int>(sigma.cols()); }

  // Throws std::invalid_argument when shapes disagree or entries are invalid.
  void validate() const;
};

/// Unconstrained head outputs for one agent.
struct HeadOutputs {
  Eigen::VectorXd logits;         // K
  Eigen::VectorXd displacements;  // K * T_f * 2, ordered (k, t, xy)
  Eigen::VectorXd pre_scale;      // K * T_f, ordered (k, t)
};

/// Softmax weights, cumulative-sum means and sigma = sigma_min + softplus(pre).
MixturePrediction to_mixture(const HeadOutputs& raw, int modes, int horizon,
                             double sigma_min = kSigmaMin);

struct PredictorConfig {
  int latent_dim = 32;
  int modes = 5;
  int t_f = 25;
  int hidden_dim = 64;
  double sigma_min = kSigmaMin;
};

/// Three heads on the latent feature: a three-layer weight MLP and two
/// two-layer MLPs for the mean displacements and the scales.
struct PredictorModel {
  PredictorConfig config;
  DenseNet weight_head;
  DenseNet mean_head;
  DenseNet scale_head;

  static PredictorModel create(const PredictorConfig& config, Rng& rng);
};

HeadOutputs run_heads(const PredictorModel& model, const Eigen::VectorXd& h);
MixturePrediction decode(const PredictorModel& model, const Eigen::VectorXd& h);

/// -log sum_k pi_k prod_t N(y_t | mu_kt, sigma_kt^2 I), in log space.
double mixture_nll(const MixturePrediction& pred, const Trajectory& gt);

/// Per-mode log-likelihoods sum_t log N(y_t | mu_kt, sigma_kt^2 I).
Eigen::VectorXd mode_log_likelihoods(const MixturePrediction& pred, const Trajectory& gt);

struct MixtureNllGradient {
  double loss = 0.0;
  Eigen::VectorXd posterior;       // responsibility of each mode for gt
  Eigen::VectorXd logits;          // d loss / d logits
  std::vector<Trajectory> mu;      // d loss / d mu
  Eigen::VectorXd displacements;   // d loss / d displacement outputs (head order)
  Eigen::MatrixXd sigma;           // d loss / d sigma
  Eigen::VectorXd pre_scale;       // d loss / d pre-scale outputs (head order)
};

MixtureNllGradient mixture_nll_grad(const MixturePrediction& pred, const Trajectory& gt,
                                    double sigma_min = kSigmaMin);

// Batched training path; columns are samples.
struct PredictorCache {
  ForwardCache weight;
  ForwardCache mean;
  ForwardCache scale;
};

std::vector<MixturePrediction> decode_batch(const PredictorModel& model, const Eigen::MatrixXd& h,
                                            PredictorCache* cache = nullptr);

struct PredictorGradient {
  NetGradient weight;
  NetGradient mean;
  NetGradient scale;
  Eigen::MatrixXd latent;  // d loss / d h
};

/// Backpropagates per-sample mixture NLL gradients (scaled by `loss_scale`)
/// through the three heads.
PredictorGradient predictor_backward(const PredictorModel& model, const PredictorCache& cache,
                                     std::span<const MixtureNllGradient> sample_grads,
                                     double loss_scale);

void append_param_blocks(PredictorModel& model, const PredictorGradient& grad,
                         std::vector<ParamBlock>& out);
std::vector<std::size_t> param_block_sizes(const PredictorModel& model);
std::uint64_t parameter_hash(const PredictorModel& model);

nlohmann::json predictor_to_json(const PredictorModel& model);
PredictorModel predictor_from_json(const nlohmann::json& j);

/// One line of the prediction interchange dump.
struct PredictionRecord {
  std::int64_t scene_id = 0;
  std::int64_t agent_id = 0;
  int ood = 0;
  MixturePrediction pred;
  Trajectory gt;
};

std::string prediction_record_to_line(const PredictionRecord& record);
PredictionRecord prediction_record_from_line(const std::string& line);

}  // namespace reltraj
