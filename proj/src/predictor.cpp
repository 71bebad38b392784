#include "reltraj/predictor.hpp"

#include <cmath>
#include <numbers>

namespace reltraj {

namespace {

constexpr double kLog2Pi = 1.8378770664093454836;  // log(2 pi)

double softplus(double x) { return std::max(x, 0.0) + std::log1p(std::exp(-std::abs(x))); }

double log_sum_exp(const Eigen::VectorXd& a) {
  const double m = a.maxCoeff();
  if (!std::isfinite(m)) return m;
  return m + std::log((a.array() - m).exp().sum());
}

}  // namespace

void MixturePrediction::validate() const {
  const auto k = pi.size();
  if (k < 1) throw std::invalid_argument("mixture needs at least one mode");
  if (static_cast<Eigen::Index>(mu.size()) != k || sigma.rows() != k) {
    throw std::invalid_argument("mixture mode counts disagree");
  }
  const auto t = sigma.cols();
  if (t < 1) throw std::invalid_argument("mixture horizon must be >= 1");
  for (const auto& m : mu) {
    if (m.rows() != t) throw std::invalid_argument("mean trajectory length != horizon");
    if (!m.allFinite()) throw std::invalid_argument("non-finite mean");
  }
  if (!pi.allFinite() || (pi.array() < 0.0).any() || std::abs(pi.sum() - 1.0) > 1e-9) {
    throw std::invalid_argument("mixture weights must be non-negative and sum to 1");
  }
  if (!sigma.allFinite() || (sigma.array() <= 0.0).any()) {
    throw std::invalid_argument("mixture scales must be positive and finite");
  }
}

MixturePrediction to_mixture(const HeadOutputs& raw, int modes, int horizon, double sigma_min) {
  if (raw.logits.size() != modes || raw.displacements.size() != modes * horizon * 2 ||
      raw.pre_scale.size() != modes * horizon) {
    throw std::invalid_argument("head output sizes do not match K=" + std::to_string(modes) +
                                ", T_f=" + std::to_string(horizon));
  }
  MixturePrediction p;
  const double m = raw.logits.maxCoeff();
  p.pi = (raw.logits.array() - m).exp();
  p.pi /= p.pi.sum();
  p.mu.resize(static_cast<std::size_t>(modes));
  p.sigma.resize(modes, horizon);
  for (int k = 0; k < modes; ++k) {
    Trajectory traj(horizon, 2);
    double x = 0.0, y = 0.0;
    for (int t = 0; t < horizon; ++t) {
      const auto base = static_cast<Eigen::Index>((k * horizon + t) * 2);
      x += raw.displacements(base);
      y += raw.displacements(base + 1);
      traj(t, 0) = x;
      traj(t, 1) = y;
      p.sigma(k, t) = sigma_min + softplus(raw.pre_scale(k * horizon + t));
    }
    p.mu[static_cast<std::size_t>(k)] = std::move(traj);
  }
  return p;
}

PredictorModel PredictorModel::create(const PredictorConfig& config, Rng& rng) {
  if (config.latent_dim < 1 || config.modes < 1 || config.t_f < 1 || config.hidden_dim < 2 ||
      !(config.sigma_min > 0.0)) {
    throw std::invalid_argument("invalid predictor config");
  }
  PredictorModel m;
  m.config = config;
  const int h = config.hidden_dim;
  const int weight_dims[] = {config.latent_dim, h, h / 2, config.modes};
  const int mean_dims[] = {config.latent_dim, h, config.modes * config.t_f * 2};
  const int scale_dims[] = {config.latent_dim, h, config.modes * config.t_f};
  m.weight_head = DenseNet::create(weight_dims, Activation::kRelu, Activation::kIdentity, rng);
  m.mean_head = DenseNet::create(mean_dims, Activation::kRelu, Activation::kIdentity, rng);
  m.scale_head = DenseNet::create(scale_dims, Activation::kRelu, Activation::kIdentity, rng);
  return m;
}

HeadOutputs run_heads(const PredictorModel& model, const Eigen::VectorXd& h) {
  return {model.weight_head.forward(h), model.mean_head.forward(h), model.scale_head.forward(h)};
}

MixturePrediction decode(const PredictorModel& model, const Eigen::VectorXd& h) {
  return to_mixture(run_heads(model, h), model.config.modes, model.config.t_f,
                    model.config.sigma_min);
}

Eigen::VectorXd mode_log_likelihoods(const MixturePrediction& pred, const Trajectory& gt) {
  const int k_modes = pred.modes();
  const int horizon = pred.horizon();
  if (gt.rows() != horizon) {
    throw std::invalid_argument("ground truth length " + std::to_string(gt.rows()) +
                                " != horizon " + std::to_string(horizon));
  }
  Eigen::VectorXd ll(k_modes);
  for (int k = 0; k < k_modes; ++k) {
    const auto& mu = pred.mu[static_cast<std::size_t>(k)];
    double acc = 0.0;
    for (int t = 0; t < horizon; ++t) {
      const double s = pred.sigma(k, t);
      const double dx = gt(t, 0) - mu(t, 0);
      const double dy = gt(t, 1) - mu(t, 1);
      acc += -kLog2Pi - 2.0 * std::log(s) - (dx * dx + dy * dy) / (2.0 * s * s);
    }
    ll(k) = acc;
  }
  return ll;
}

namespace {

Eigen::VectorXd floored_log_weights(const Eigen::VectorXd& pi) {
  return pi.array().max(kMixtureWeightFloor).log();
}

}  // namespace

double mixture_nll(const MixturePrediction& pred, const Trajectory& gt) {
  if (!gt.allFinite() || !pred.pi.allFinite() || !pred.sigma.allFinite()) {
    throw std::invalid_argument("mixture_nll: non-finite input");
  }
  const Eigen::VectorXd a = floored_log_weights(pred.pi) + mode_log_likelihoods(pred, gt);
  return -log_sum_exp(a);
}

MixtureNllGradient mixture_nll_grad(const MixturePrediction& pred, const Trajectory& gt,
                                    double sigma_min) {
  const int k_modes = pred.modes();
  const int horizon = pred.horizon();
  const Eigen::VectorXd a = floored_log_weights(pred.pi) + mode_log_likelihoods(pred, gt);
  const double lse = log_sum_exp(a);

  MixtureNllGradient g;
  g.loss = -lse;
  if (!std::isfinite(g.loss)) throw NonFiniteError("mixture_nll_grad: non-finite loss");
  g.posterior = (a.array() - lse).exp();

  // d loss / d logit_j = -sum_{k unfloored} r_k (delta_kj - pi_j)
  double unfloored_mass = 0.0;
  for (int k = 0; k < k_modes; ++k) {
    if (pred.pi(k) > kMixtureWeightFloor) unfloored_mass += g.posterior(k);
  }
  g.logits.resize(k_modes);
  for (int j = 0; j < k_modes; ++j) {
    const double own = pred.pi(j) > kMixtureWeightFloor ? g.posterior(j) : 0.0;
    g.logits(j) = -own + pred.pi(j) * unfloored_mass;
  }

  g.mu.resize(static_cast<std::size_t>(k_modes));
  g.sigma.resize(k_modes, horizon);
  g.displacements.resize(k_modes * horizon * 2);
  g.pre_scale.resize(k_modes * horizon);
  for (int k = 0; k < k_modes; ++k) {
    const double r = g.posterior(k);
    const auto& mu = pred.mu[static_cast<std::size_t>(k)];
    Trajectory dmu(horizon, 2);
    for (int t = 0; t < horizon; ++t) {
      const double s = pred.sigma(k, t);
      const double dx = gt(t, 0) - mu(t, 0);
      const double dy = gt(t, 1) - mu(t, 1);
      const double s2 = s * s;
      dmu(t, 0) = -r * dx / s2;
      dmu(t, 1) = -r * dy / s2;
      g.sigma(k, t) = -r * (-2.0 / s + (dx * dx + dy * dy) / (s2 * s));
      // softplus'(pre) = sigmoid(pre) = 1 - exp(-(sigma - sigma_min))
      const double sig = -std::expm1(-(s - sigma_min));
      g.pre_scale(k * horizon + t) = g.sigma(k, t) * sig;
    }
    // mu_t = sum_{s<=t} d_s, so d loss / d d_s = sum_{t>=s} d loss / d mu_t.
    double cx = 0.0, cy = 0.0;
    for (int t = horizon - 1; t >= 0; --t) {
      cx += dmu(t, 0);
      cy += dmu(t, 1);
      const auto base = static_cast<Eigen::Index>((k * horizon + t) * 2);
      g.displacements(base) = cx;
      g.displacements(base + 1) = cy;
    }
    g.mu[static_cast<std::size_t>(k)] = std::move(dmu);
  }
  if (!g.logits.allFinite() || !g.displacements.allFinite() || !g.pre_scale.allFinite()) {
    throw NonFiniteError("mixture_nll_grad: non-finite gradient");
  }
  return g;
}

std::vector<MixturePrediction> decode_batch(const PredictorModel& model, const Eigen::MatrixXd& h,
                                            PredictorCache* cache) {
  Eigen::MatrixXd w, m, s;
  if (cache) {
    cache->weight = model.weight_head.forward_cached(h);
    cache->mean = model.mean_head.forward_cached(h);
    cache->scale = model.scale_head.forward_cached(h);
    w = cache->weight.output;
    m = cache->mean.output;
    s = cache->scale.output;
  } else {
    w = model.weight_head.forward_batch(h);
    m = model.mean_head.forward_batch(h);
    s = model.scale_head.forward_batch(h);
  }
  std::vector<MixturePrediction> out;
  out.reserve(static_cast<std::size_t>(h.cols()));
  for (Eigen::Index j = 0; j < h.cols(); ++j) {
    out.push_back(to_mixture({w.col(j), m.col(j), s.col(j)}, model.config.modes, model.config.t_f,
                             model.config.sigma_min));
  }
  return out;
}

PredictorGradient predictor_backward(const PredictorModel& model, const PredictorCache& cache,
                                     std::span<const MixtureNllGradient> sample_grads,
                                     double loss_scale) {
  const auto b = static_cast<Eigen::Index>(sample_grads.size());
  if (b != cache.weight.output.cols()) {
    throw std::invalid_argument("predictor_backward: batch size mismatch");
  }
  Eigen::MatrixXd dw(cache.weight.output.rows(), b);
  Eigen::MatrixXd dm(cache.mean.output.rows(), b);
  Eigen::MatrixXd ds(cache.scale.output.rows(), b);
  for (Eigen::Index j = 0; j < b; ++j) {
    const auto& g = sample_grads[static_cast<std::size_t>(j)];
    dw.col(j) = g.logits * loss_scale;
    dm.col(j) = g.displacements * loss_scale;
    ds.col(j) = g.pre_scale * loss_scale;
  }
  PredictorGradient out;
  out.weight = model.weight_head.backward(cache.weight, dw);
  out.mean = model.mean_head.backward(cache.mean, dm);
  out.scale = model.scale_head.backward(cache.scale, ds);
  out.latent = out.weight.input + out.mean.input + out.scale.input;
  return out;
}

void append_param_blocks(PredictorModel& model, const PredictorGradient& grad,
                         std::vector<ParamBlock>& out) {
  append_param_blocks(model.weight_head, grad.weight, out);
  append_param_blocks(model.mean_head, grad.mean, out);
  append_param_blocks(model.scale_head, grad.scale, out);
}

std::vector<std::size_t> param_block_sizes(const PredictorModel& model) {
  std::vector<std::size_t> sizes;
  for (const DenseNet* net : {&model.weight_head, &model.mean_head, &model.scale_head}) {
    const auto s = param_block_sizes(*net);
    sizes.insert(sizes.end(), s.begin(), s.end());
  }
  return sizes;
}

std::uint64_t parameter_hash(const PredictorModel& model) {
  return parameter_hash(model.scale_head,
                        parameter_hash(model.mean_head, parameter_hash(model.weight_head)));
}

nlohmann::json predictor_to_json(const PredictorModel& model) {
  return {{"kind", "predictor"},
          {"schema", 1},
          {"latent_dim", model.config.latent_dim},
          {"modes", model.config.modes},
          {"t_f", model.config.t_f},
          {"hidden_dim", model.config.hidden_dim},
          {"sigma_min", model.config.sigma_min},
          {"weight_head", net_to_json(model.weight_head)},
          {"mean_head", net_to_json(model.mean_head)},
          {"scale_head", net_to_json(model.scale_head)}};
}

PredictorModel predictor_from_json(const nlohmann::json& j) {
  try {
    if (j.at("kind").get<std::string>() != "predictor" || j.at("schema").get<int>() != 1) {
      throw std::runtime_error("checkpoint schema error: not a predictor checkpoint (schema 1)");
    }
    PredictorModel m;
    m.config.latent_dim = j.at("latent_dim").get<int>();
    m.config.modes = j.at("modes").get<int>();
    m.config.t_f = j.at("t_f").get<int>();
    m.config.hidden_dim = j.at("hidden_dim").get<int>();
    m.config.sigma_min = j.at("sigma_min").get<double>();
    m.weight_head = net_from_json(j.at("weight_head"));
    m.mean_head = net_from_json(j.at("mean_head"));
    m.scale_head = net_from_json(j.at("scale_head"));
    const int h = m.config.latent_dim;
    if (m.weight_head.input_dim() != h || m.mean_head.input_dim() != h ||
        m.scale_head.input_dim() != h || m.weight_head.output_dim() != m.config.modes ||
        m.mean_head.output_dim() != m.config.modes * m.config.t_f * 2 ||
        m.scale_head.output_dim() != m.config.modes * m.config.t_f) {
      throw std::runtime_error("checkpoint schema error: predictor dimensions are inconsistent");
    }
    return m;
  } catch (const nlohmann::json::exception& e) {
    throw std::runtime_error(std::string("checkpoint schema error: ") + e.what());
  }
}

std::string prediction_record_to_line(const PredictionRecord& r) {
  using ordered_json = nlohmann::ordered_json;
  ordered_json mu = ordered_json::array();
  for (const auto& traj : r.pred.mu) {
    ordered_json jt = ordered_json::array();
    for (Eigen::Index t = 0; t < traj.rows(); ++t) jt.push_back({traj(t, 0), traj(t, 1)});
    mu.push_back(std::move(jt));
  }
  ordered_json sigma = ordered_json::array();
  for (Eigen::Index k = 0; k < r.pred.sigma.rows(); ++k) {
    ordered_json row = ordered_json::array();
    for (Eigen::Index t = 0; t < r.pred.sigma.cols(); ++t) row.push_back(r.pred.sigma(k, t));
    sigma.push_back(std::move(row));
  }
  ordered_json gt = ordered_json::array();
  for (Eigen::Index t = 0; t < r.gt.rows(); ++t) gt.push_back({r.gt(t, 0), r.gt(t, 1)});
  ordered_json j;
  j["scene_id"] = r.scene_id;
  j["agent_id"] = r.agent_id;
  j["ood"] = r.ood;
  j["pi"] = std::vector<double>(r.pred.pi.data(), r.pred.pi.data() + r.pred.pi.size());
  j["mu"] = std::move(mu);
  j["sigma"] = std::move(sigma);
  j["gt"] = std::move(gt);
  return j.dump();
}

PredictionRecord prediction_record_from_line(const std::string& line) {
  const auto j = nlohmann::json::parse(line);
  PredictionRecord r;
  r.scene_id = j.at("scene_id").get<std::int64_t>();
  r.agent_id = j.at("agent_id").get<std::int64_t>();
  r.ood = j.at("ood").get<int>();
  const auto pi = j.at("pi").get<std::vector<double>>();
  const auto mu = j.at("mu").get<std::vector<std::vector<std::vector<double>>>>();
  const auto sigma = j.at("sigma").get<std::vector<std::vector<double>>>();
  const auto gt = j.at("gt").get<std::vector<std::vector<double>>>();
  const auto k = static_cast<Eigen::Index>(pi.size());
  const auto horizon = static_cast<Eigen::Index>(gt.size());
  r.pred.pi = Eigen::Map<const Eigen::VectorXd>(pi.data(), k);
  if (static_cast<Eigen::Index>(mu.size()) != k || static_cast<Eigen::Index>(sigma.size()) != k) {
    throw std::invalid_argument("prediction record: mode counts disagree");
  }
  auto to_traj = [horizon](const std::vector<std::vector<double>>& pts) {
    if (static_cast<Eigen::Index>(pts.size()) != horizon) {
      throw std::invalid_argument("prediction record: trajectory length != gt length");
    }
    Trajectory t(horizon, 2);
    for (Eigen::Index i = 0; i < horizon; ++i) {
      const auto& p = pts[static_cast<std::size_t>(i)];
      if (p.size() != 2) throw std::invalid_argument("prediction record: point needs 2 values");
      t(i, 0) = p[0];
      t(i, 1) = p[1];
    }
    return t;
  };
  r.gt = to_traj(gt);
  r.pred.sigma.resize(k, horizon);
  for (Eigen::Index m = 0; m < k; ++m) {
    r.pred.mu.push_back(to_traj(mu[static_cast<std::size_t>(m)]));
    const auto& row = sigma[static_cast<std::size_t>(m)];
    if (static_cast<Eigen::Index>(row.size()) != horizon) {
      throw std::invalid_argument("prediction record: sigma row length != gt length");
    }
    for (Eigen::Index t = 0; t < horizon; ++t) r.pred.sigma(m, t) = row[static_cast<std::size_t>(t)];
  }
  r.pred.validate();
  return r;
}

}  // namespace reltraj
