#include "reltraj/nn.hpp"

#include <cmath>
#include <cstring>
#include <numbers>

namespace reltraj {

DenseNet::DenseNet(std::vector<DenseLayer> layers) : layers_(std::move(layers)) {
  if (layers_.empty()) throw std::invalid_argument("DenseNet needs at least one layer");
  for (std::size_t i = 0; i < layers_.size(); ++i) {
    const auto& l = layers_[i];
    if (l.bias.size() != l.weight.rows()) {
      throw std::invalid_argument("layer " + std::to_string(i) + ": bias size != output dim");
    }
    if (i > 0 && l.weight.cols() != layers_[i - 1].weight.rows()) {
      throw std::invalid_argument("layer " + std::to_string(i) + ": input dim " +
                                  std::to_string(l.weight.cols()) + " != previous output dim " +
                                  std::to_string(layers_[i - 1].weight.rows()));
    }
  }
}

DenseNet DenseNet::create(std::span<const int> dims, Activation hidden, Activation output,
                          Rng& rng) {
  if (dims.size() < 2) throw std::invalid_argument("DenseNet::create needs at least two dims");
  std::vector<DenseLayer> layers;
  for (std::size_t i = 0; i + 1 < dims.size(); ++i) {
    const int in = dims[i];
    const int out = dims[i + 1];
    if (in < 1 || out < 1) throw std::invalid_argument("layer dims must be positive");
    const double limit = std::sqrt(6.0 / (in + out));
    DenseLayer layer;
    layer.weight.resize(out, in);
    for (int c = 0; c < in; ++c)
      for (int r = 0; r < out; ++r) layer.weight(r, c) = rng.uniform(-limit, limit);
    layer.bias = Eigen::VectorXd::Zero(out);
    layer.activation = (i + 2 == dims.size()) ? output : hidden;
    layers.push_back(std::move(layer));
  }
  return DenseNet(std::move(layers));
}

int DenseNet::input_dim() const {
  return layers_.empty() ? 0 : static_cast<int>(layers_.front().weight.cols());
}

int DenseNet::output_dim() const {
  return layers_.empty() ? 0 : static_cast<int>(layers_.back().weight.rows());
}

std::size_t DenseNet::parameter_count() const {
  std::size_t n = 0;
  for (const auto& l : layers_) n += static_cast<std::size_t>(l.weight.size() + l.bias.size());
  return n;
}

namespace {

void apply_activation(Activation act, Eigen::MatrixXd& m) {
  if (act == Activation::kRelu) m = m.cwiseMax(0.0);
}

}  // namespace

Eigen::MatrixXd DenseNet::forward_batch(const Eigen::MatrixXd& batch) const {
  if (batch.rows() != input_dim()) {
    throw std::invalid_argument("DenseNet input dim " + std::to_string(batch.rows()) +
                                " != expected " + std::to_string(input_dim()));
  }
  Eigen::MatrixXd a = batch;
  for (const auto& l : layers_) {
    Eigen::MatrixXd z = l.weight * a;
    z.colwise() += l.bias;
    apply_activation(l.activation, z);
    a = std::move(z);
  }
  return a;
}

Eigen::VectorXd DenseNet::forward(const Eigen::VectorXd& input) const {
  return forward_batch(Eigen::MatrixXd(input)).col(0);
}

ForwardCache DenseNet::forward_cached(const Eigen::MatrixXd& batch) const {
  if (batch.rows() != input_dim()) {
    throw std::invalid_argument("DenseNet input dim " + std::to_string(batch.rows()) +
                                " != expected " + std::to_string(input_dim()));
  }
  ForwardCache cache;
  cache.inputs.reserve(layers_.size());
  cache.preactivations.reserve(layers_.size());
  Eigen::MatrixXd a = batch;
  for (const auto& l : layers_) {
    Eigen::MatrixXd z = l.weight * a;
    z.colwise() += l.bias;
    cache.inputs.push_back(std::move(a));
    a = z;
    apply_activation(l.activation, a);
    cache.preactivations.push_back(std::move(z));
  }
  cache.output = std::move(a);
  return cache;
}

NetGradient DenseNet::backward(const ForwardCache& cache, const Eigen::MatrixXd& upstream) const {
  if (cache.inputs.size() != layers_.size() || upstream.rows() != cache.output.rows() ||
      upstream.cols() != cache.output.cols()) {
    throw std::invalid_argument("DenseNet::backward: gradient shape does not match forward pass");
  }
  NetGradient grad;
  grad.layers.resize(layers_.size());
  Eigen::MatrixXd delta = upstream;
  for (std::size_t i = layers_.size(); i-- > 0;) {
    const auto& l = layers_[i];
    if (l.activation == Activation::kRelu) {
      delta = delta.cwiseProduct((cache.preactivations[i].array() > 0.0).cast<double>().matrix());
    }
    grad.layers[i].weight = delta * cache.inputs[i].transpose();
    grad.layers[i].bias = delta.rowwise().sum();
    delta = l.weight.transpose() * delta;
  }
  grad.input = std::move(delta);
  return grad;
}

NetGradient DenseNet::zero_gradient() const {
  NetGradient g;
  for (const auto& l : layers_) {
    g.layers.push_back({Eigen::MatrixXd::Zero(l.weight.rows(), l.weight.cols()),
                        Eigen::VectorXd::Zero(l.bias.size())});
  }
  return g;
}

void append_param_blocks(DenseNet& net, const NetGradient& grad, std::vector<ParamBlock>& out) {
  auto& layers = net.layers();
  if (grad.layers.size() != layers.size()) {
    throw std::invalid_argument("gradient layer count does not match network");
  }
  for (std::size_t i = 0; i < layers.size(); ++i) {
    auto& l = layers[i];
    const auto& g = grad.layers[i];
    if (g.weight.size() != l.weight.size() || g.bias.size() != l.bias.size()) {
      throw std::invalid_argument("gradient shape does not match layer " + std::to_string(i));
    }
    out.push_back({{l.weight.data(), static_cast<std::size_t>(l.weight.size())},
                   {g.weight.data(), static_cast<std::size_t>(g.weight.size())}});
    out.push_back({{l.bias.data(), static_cast<std::size_t>(l.bias.size())},
                   {g.bias.data(), static_cast<std::size_t>(g.bias.size())}});
  }
}

std::vector<std::size_t> param_block_sizes(const DenseNet& net) {
  std::vector<std::size_t> sizes;
  for (const auto& l : net.layers()) {
    sizes.push_back(static_cast<std::size_t>(l.weight.size()));
    sizes.push_back(static_cast<std::size_t>(l.bias.size()));
  }
  return sizes;
}

// ---------------------------------------------------------------------------

AdamW::AdamW(AdamWConfig config, std::vector<std::size_t> block_sizes) : config_(config) {
  if (config_.total_steps < 1) throw std::invalid_argument("AdamW: total_steps must be >= 1");
  if (!(config_.learning_rate > 0.0)) throw std::invalid_argument("AdamW: learning rate must be > 0");
  for (auto n : block_sizes) {
    first_moment_.emplace_back(n, 0.0);
    second_moment_.emplace_back(n, 0.0);
  }
}

double AdamW::learning_rate_at(std::int64_t step) const {
  const double progress =
      static_cast<double>(std::min(step, config_.total_steps)) / static_cast<double>(config_.total_steps);
  return config_.learning_rate * 0.5 * (1.0 + std::cos(std::numbers::pi * progress));
}

void AdamW::step(std::span<const ParamBlock> blocks) {
  if (step_ >= config_.total_steps) {
    throw std::logic_error("AdamW: step " + std::to_string(step_) + " exceeds scheduled " +
                           std::to_string(config_.total_steps));
  }
  if (blocks.size() != first_moment_.size()) {
    throw std::logic_error("AdamW: block count changed between steps");
  }
  for (std::size_t b = 0; b < blocks.size(); ++b) {
    if (blocks[b].value.size() != first_moment_[b].size() ||
        blocks[b].grad.size() != first_moment_[b].size()) {
      throw std::logic_error("AdamW: block " + std::to_string(b) + " changed shape");
    }
    for (double g : blocks[b].grad) {
      if (!std::isfinite(g)) {
        throw NonFiniteError("AdamW: non-finite gradient in parameter block " + std::to_string(b) +
                             " at step " + std::to_string(step_));
      }
    }
  }

  const double lr = learning_rate_at(step_);
  ++step_;
  const double bias1 = 1.0 - std::pow(config_.beta1, static_cast<double>(step_));
  const double bias2 = 1.0 - std::pow(config_.beta2, static_cast<double>(step_));
  const double decay = 1.0 - lr * config_.weight_decay;
  for (std::size_t b = 0; b < blocks.size(); ++b) {
    auto value = blocks[b].value;
    auto grad = blocks[b].grad;
    auto& m = first_moment_[b];
    auto& v = second_moment_[b];
    for (std::size_t i = 0; i < value.size(); ++i) {
      m[i] = config_.beta1 * m[i] + (1.0 - config_.beta1) * grad[i];
      v[i] = config_.beta2 * v[i] + (1.0 - config_.beta2) * grad[i] * grad[i];
      const double m_hat = m[i] / bias1;
      const double v_hat = v[i] / bias2;
      value[i] = value[i] * decay - lr * m_hat / (std::sqrt(v_hat) + config_.epsilon);
    }
  }
}

// ---------------------------------------------------------------------------

namespace {

const char* activation_name(Activation a) { return a == Activation::kRelu ? "relu" : "identity"; }

Activation parse_activation(const std::string& s) {
  if (s == "relu") return Activation::kRelu;
  if (s == "identity") return Activation::kIdentity;
  throw std::runtime_error("checkpoint: unknown activation '" + s + "'");
}

std::vector<double> flat(const Eigen::MatrixXd& m) {
  // Row-major on disk.
  std::vector<double> out;
  out.reserve(static_cast<std::size_t>(m.size()));
  for (Eigen::Index r = 0; r < m.rows(); ++r)
    for (Eigen::Index c = 0; c < m.cols(); ++c) out.push_back(m(r, c));
  return out;
}

}  // namespace

nlohmann::json net_to_json(const DenseNet& net) {
  nlohmann::json layers = nlohmann::json::array();
  for (const auto& l : net.layers()) {
    nlohmann::json jl;
    jl["in"] = l.weight.cols();
    jl["out"] = l.weight.rows();
    jl["activation"] = activation_name(l.activation);
    jl["weight"] = flat(l.weight);
    jl["bias"] = std::vector<double>(l.bias.data(), l.bias.data() + l.bias.size());
    layers.push_back(std::move(jl));
  }
  return nlohmann::json{{"layers", std::move(layers)}};
}

DenseNet net_from_json(const nlohmann::json& j) {
  try {
    std::vector<DenseLayer> layers;
    for (const auto& jl : j.at("layers")) {
      const int in = jl.at("in").get<int>();
      const int out = jl.at("out").get<int>();
      const auto w = jl.at("weight").get<std::vector<double>>();
      const auto b = jl.at("bias").get<std::vector<double>>();
      if (in < 1 || out < 1 || w.size() != static_cast<std::size_t>(in) * out ||
          b.size() != static_cast<std::size_t>(out)) {
        throw std::runtime_error("checkpoint schema error: layer shape does not match stored parameter counts");
      }
      DenseLayer layer;
      layer.weight.resize(out, in);
      for (int r = 0; r < out; ++r)
        for (int c = 0; c < in; ++c) layer.weight(r, c) = w[static_cast<std::size_t>(r) * in + c];
      layer.bias = Eigen::Map<const Eigen::VectorXd>(b.data(), out);
      layer.activation = parse_activation(jl.at("activation").get<std::string>());
      if (!layer.weight.allFinite() || !layer.bias.allFinite()) {
        throw std::runtime_error("checkpoint schema error: non-finite parameter");
      }
      layers.push_back(std::move(layer));
    }
    return DenseNet(std::move(layers));
  } catch (const nlohmann::json::exception& e) {
    throw std::runtime_error(std::string("checkpoint schema error: ") + e.what());
  } catch (const std::invalid_argument& e) {
    throw std::runtime_error(std::string("checkpoint schema error: ") + e.what());
  }
}

std::uint64_t parameter_hash(const DenseNet& net, std::uint64_t seed) {
  std::uint64_t h = seed;
  auto mix = [&h](const double* data, Eigen::Index n) {
    for (Eigen::Index i = 0; i < n; ++i) {
      std::uint64_t bits;
      std::memcpy(&bits, data + i, sizeof bits);
      for (int byte = 0; byte < 8; ++byte) {
        h ^= (bits >> (8 * byte)) & 0xffu;
        h *= 1099511628211ull;
      }
    }
  };
  for (const auto& l : net.layers()) {
    mix(l.weight.data(), l.weight.size());
    mix(l.bias.data(), l.bias.size());
  }
  return h;
}

// ---------------------------------------------------------------------------

FeatureNorm FeatureNorm::identity(int dim) {
  return {Eigen::VectorXd::Zero(dim), Eigen::VectorXd::Ones(dim)};
}

FeatureNorm FeatureNorm::fit(const Eigen::MatrixXd& samples, double min_scale) {
  const auto dim = samples.rows();
  FeatureNorm norm = identity(static_cast<int>(dim));
  if (samples.cols() == 0) return norm;
  norm.mean = samples.rowwise().mean();
  for (Eigen::Index r = 0; r < dim; ++r) {
    const double var = (samples.row(r).array() - norm.mean(r)).square().mean();
    const double sd = std::sqrt(var);
    norm.scale(r) = sd > min_scale ? sd : 1.0;
  }
  return norm;
}

Eigen::MatrixXd FeatureNorm::apply(const Eigen::MatrixXd& samples) const {
  if (samples.rows() != mean.size()) throw std::invalid_argument("FeatureNorm: dimension mismatch");
  return (samples.colwise() - mean).array().colwise() / scale.array();
}

Eigen::VectorXd FeatureNorm::apply(const Eigen::VectorXd& x) const {
  if (x.size() != mean.size()) throw std::invalid_argument("FeatureNorm: dimension mismatch");
  return (x - mean).cwiseQuotient(scale);
}

nlohmann::json norm_to_json(const FeatureNorm& norm) {
  return {{"mean", std::vector<double>(norm.mean.data(), norm.mean.data() + norm.mean.size())},
          {"scale", std::vector<double>(norm.scale.data(), norm.scale.data() + norm.scale.size())}};
}

FeatureNorm norm_from_json(const nlohmann::json& j) {
  try {
    const auto m = j.at("mean").get<std::vector<double>>();
    const auto s = j.at("scale").get<std::vector<double>>();
    if (m.size() != s.size()) throw std::runtime_error("mean/scale size mismatch");
    FeatureNorm norm;
    norm.mean = Eigen::Map<const Eigen::VectorXd>(m.data(), static_cast<Eigen::Index>(m.size()));
    norm.scale = Eigen::Map<const Eigen::VectorXd>(s.data(), static_cast<Eigen::Index>(s.size()));
    if ((norm.scale.array() <= 0.0).any()) throw std::runtime_error("non-positive scale");
    return norm;
  } catch (const nlohmann::json::exception& e) {
    throw std::runtime_error(std::string("checkpoint schema error: ") + e.what());
  }
}

}  // namespace reltraj
