#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "json.hpp"
#include "reltraj/random.hpp"

namespace reltraj {

enum class Activation { kRelu, kIdentity };

struct DenseLayer {
  Eigen::MatrixXd weight;  // out x in
  Eigen::VectorXd bias;    // out
  Activation activation = Activation::kIdentity;
};

/// Intermediate values of a batched forward pass, kept for backward().
/// Column j of every matrix belongs to sample j.
struct ForwardCache {
  std::vector<Eigen::MatrixXd> inputs;          // input to each layer
  std::vector<Eigen::MatrixXd> preactivations;  // W a + b of each layer
  Eigen::MatrixXd output;
};

struct LayerGradient {
  Eigen::MatrixXd weight;
  Eigen::VectorXd bias;
};

struct NetGradient {
  std::vector<LayerGradient> layers;
  Eigen::MatrixXd input;  // d loss / d input, same shape as the batch
};

class NonFiniteError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Fully connected feed-forward network with hand-derived gradients.
class DenseNet {
 public:
  DenseNet() = default;
  explicit DenseNet(std::vector<DenseLayer> layers);

  // Glorot-uniform weights, zero biases. `dims` = {in, hidden..., out};
  // hidden layers use `hidden`, the last layer `output`.
  static DenseNet create(std::span<const int> dims, Activation hidden, Activation output, Rng& rng);

  int input_dim() const;
  int output_dim() const;
  std::size_t parameter_count() const;
  const std::vector<DenseLayer>& layers() const { return layers_; }
  std::vector<DenseLayer>& layers() { return layers_; }

  Eigen::VectorXd forward(const Eigen::VectorXd& input) const;
  Eigen::MatrixXd forward_batch(const Eigen::MatrixXd& batch) const;
  ForwardCache forward_cached(const Eigen::MatrixXd& batch) const;

  // `upstream` is d loss / d output with the shape of cache.output.
  NetGradient backward(const ForwardCache& cache, const Eigen::MatrixXd& upstream) const;

  NetGradient zero_gradient() const;

 private:
  std::vector<DenseLayer> layers_;
};

/// A contiguous parameter array and its gradient, as seen by the optimizer.
struct ParamBlock {
  std::span<double> value;
  std::span<const double> grad;
};

void append_param_blocks(DenseNet& net, const NetGradient& grad, std::vector<ParamBlock>& out);
std::vector<std::size_t> param_block_sizes(const DenseNet& net);

struct AdamWConfig {
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  double weight_decay = 1e-4;
  std::int64_t total_steps = 1;
};

/// AdamW (decoupled weight decay) with a cosine-annealed learning rate that
/// falls from the base rate to zero over `total_steps`.
class AdamW {
 public:
  AdamW(AdamWConfig config, std::vector<std::size_t> block_sizes);

  double learning_rate_at(std::int64_t step) const;
  double current_learning_rate() const { return learning_rate_at(step_); }
  std::int64_t step_count() const { return step_; }
  const AdamWConfig& config() const { return config_; }

  // Throws NonFiniteError on a non-finite gradient (parameters untouched),
  // std::logic_error once the schedule is exhausted or on a shape mismatch.
  void step(std::span<const ParamBlock> blocks);

 private:
  AdamWConfig config_;
  std::vector<std::vector<double>> first_moment_;
  std::vector<std::vector<double>> second_moment_;
  std::int64_t step_ = 0;
};

// Checkpoint helpers. Throws std::runtime_error on schema violations.
nlohmann::json net_to_json(const DenseNet& net);
DenseNet net_from_json(const nlohmann::json& j);

/// 64-bit FNV-1a over the bit patterns of all parameters.
std::uint64_t parameter_hash(const DenseNet& net, std::uint64_t seed = 14695981039346656037ull);

/// Per-dimension affine input normalization: (x - mean) / scale.
struct FeatureNorm {
  Eigen::VectorXd mean;
  Eigen::VectorXd scale;

  static FeatureNorm identity(int dim);
  // Columns are samples. Dimensions with spread below `min_scale` keep scale 1.
  static FeatureNorm fit(const Eigen::MatrixXd& samples, double min_scale = 1e-6);

  Eigen::MatrixXd apply(const Eigen::MatrixXd& samples) const;
  Eigen::VectorXd apply(const Eigen::VectorXd& x) const;
};

nlohmann::json norm_to_json(const FeatureNorm& norm);
FeatureNorm norm_from_json(const nlohmann::json& j);

}  // namespace reltraj
