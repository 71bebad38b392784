#include "reltraj/encoder.hpp"

#include <cmath>
#include <string>

namespace reltraj {

int track_feature_dim(int t_h) { return (t_h - 1) * 2 + t_h * 5; }

int neighbor_feature_dim(int t_h) { return track_feature_dim(t_h) + 2; }

Eigen::VectorXd preprocess_track(const AgentTrack& track, int t_h) {
  if (t_h < 1) throw std::invalid_argument("t_h must be >= 1");
  if (static_cast<int>(track.history.size()) < t_h) {
    throw std::invalid_argument("history too short: " + std::to_string(track.history.size()) +
                                " states, need " + std::to_string(t_h));
  }
  if (static_cast<int>(track.history.size()) != t_h) {
    throw std::invalid_argument("history length " + std::to_string(track.history.size()) +
                                " != t_h " + std::to_string(t_h));
  }
  Eigen::VectorXd out(track_feature_dim(t_h));
  Eigen::Index k = 0;
  for (int t = 1; t < t_h; ++t) {
    const auto& prev = track.history[static_cast<std::size_t>(t - 1)];
    const auto& cur = track.history[static_cast<std::size_t>(t)];
    out(k++) = cur.x - prev.x;
    out(k++) = cur.y - prev.y;
  }
  for (const auto& s : track.history) {
    out(k++) = s.vx;
    out(k++) = s.vy;
    out(k++) = s.ax;
    out(k++) = s.ay;
    out(k++) = s.is_pedestrian ? 1.0 : 0.0;
  }
  return out;
}

std::vector<EncoderInput> scene_inputs(const Scene& scene, int t_h, double radius) {
  const auto n = scene.agents.size();
  std::vector<Eigen::VectorXd> tracks;
  tracks.reserve(n);
  for (const auto& agent : scene.agents) tracks.push_back(preprocess_track(agent, t_h));

  const int track_dim = track_feature_dim(t_h);
  std::vector<EncoderInput> out(n);
  for (std::size_t i = 0; i < n; ++i) {
    const auto& me = scene.agents[i].history.back();
    Eigen::VectorXd pooled = Eigen::VectorXd::Zero(neighbor_feature_dim(t_h));
    int count = 0;
    for (std::size_t j = 0; j < n; ++j) {
      if (j == i) continue;
      const auto& other = scene.agents[j].history.back();
      const double dx = other.x - me.x;
      const double dy = other.y - me.y;
      if (std::hypot(dx, dy) >= radius) continue;
      pooled.head(track_dim) += tracks[j];
      pooled(track_dim) += dx;
      pooled(track_dim + 1) += dy;
      ++count;
    }
    if (count > 0) pooled /= static_cast<double>(count);
    out[i] = {tracks[i], std::move(pooled), count > 0};
  }
  return out;
}

EncoderModel EncoderModel::create(const EncoderConfig& config, Rng& rng) {
  if (config.t_h < 1 || config.latent_dim < 1 || config.hidden_dim < 1 || !(config.radius >= 0.0)) {
    throw std::invalid_argument("invalid encoder config");
  }
  EncoderModel m;
  m.config = config;
  const int track_dims[] = {track_feature_dim(config.t_h), config.hidden_dim, config.latent_dim};
  const int nbr_dims[] = {neighbor_feature_dim(config.t_h), config.hidden_dim, config.latent_dim};
  m.track_net = DenseNet::create(track_dims, Activation::kRelu, Activation::kIdentity, rng);
  m.neighbor_net = DenseNet::create(nbr_dims, Activation::kRelu, Activation::kIdentity, rng);
  m.track_norm = FeatureNorm::identity(track_dims[0]);
  m.neighbor_norm = FeatureNorm::identity(nbr_dims[0]);
  return m;
}

void EncoderModel::fit_normalization(std::span<const EncoderInput> inputs) {
  const int td = track_feature_dim(config.t_h);
  const int nd = neighbor_feature_dim(config.t_h);
  Eigen::MatrixXd tracks(td, static_cast<Eigen::Index>(inputs.size()));
  std::size_t n_with = 0;
  for (const auto& in : inputs) n_with += in.has_neighbors ? 1 : 0;
  Eigen::MatrixXd nbrs(nd, static_cast<Eigen::Index>(n_with));
  Eigen::Index c = 0, cn = 0;
  for (const auto& in : inputs) {
    tracks.col(c++) = in.track;
    if (in.has_neighbors) nbrs.col(cn++) = in.neighbors;
  }
  track_norm = FeatureNorm::fit(tracks);
  neighbor_norm = FeatureNorm::fit(nbrs);
}

EncoderBatch make_encoder_batch(const EncoderModel& model,
                                std::span<const EncoderInput* const> inputs) {
  const auto b = static_cast<Eigen::Index>(inputs.size());
  const int td = model.track_net.input_dim();
  const int nd = model.neighbor_net.input_dim();
  EncoderBatch batch;
  batch.track.resize(td, b);
  batch.neighbors.resize(nd, b);
  batch.mask.resize(b);
  for (Eigen::Index j = 0; j < b; ++j) {
    const auto& in = *inputs[static_cast<std::size_t>(j)];
    if (in.track.size() != td || in.neighbors.size() != nd) {
      throw std::invalid_argument("encoder input dimension does not match model");
    }
    batch.track.col(j) = in.track;
    batch.neighbors.col(j) = in.neighbors;
    batch.mask(j) = in.has_neighbors ? 1.0 : 0.0;
  }
  batch.track = model.track_norm.apply(batch.track);
  batch.neighbors = model.neighbor_norm.apply(batch.neighbors);
  return batch;
}

Eigen::MatrixXd encode_batch(const EncoderModel& model, const EncoderBatch& batch,
                             EncoderCache* cache) {
  Eigen::MatrixXd h;
  Eigen::MatrixXd nbr;
  if (cache) {
    cache->track = model.track_net.forward_cached(batch.track);
    cache->neighbor = model.neighbor_net.forward_cached(batch.neighbors);
    cache->mask = batch.mask;
    h = cache->track.output;
    nbr = cache->neighbor.output;
  } else {
    h = model.track_net.forward_batch(batch.track);
    nbr = model.neighbor_net.forward_batch(batch.neighbors);
  }
  for (Eigen::Index j = 0; j < h.cols(); ++j) {
    if (batch.mask(j) != 0.0) h.col(j) += nbr.col(j);
  }
  return h;
}

Eigen::VectorXd encode_input(const EncoderModel& model, const EncoderInput& input) {
  const EncoderInput* ptr = &input;
  const EncoderBatch batch = make_encoder_batch(model, std::span<const EncoderInput* const>(&ptr, 1));
  return encode_batch(model, batch).col(0);
}

std::vector<LatentFeature> encode_scene(const EncoderModel& model, const Scene& scene) {
  const auto inputs = scene_inputs(scene, model.config.t_h, model.config.radius);
  std::vector<const EncoderInput*> ptrs;
  for (const auto& in : inputs) ptrs.push_back(&in);
  const Eigen::MatrixXd h = encode_batch(model, make_encoder_batch(model, ptrs));
  std::vector<LatentFeature> out;
  for (std::size_t i = 0; i < inputs.size(); ++i) {
    out.push_back({h.col(static_cast<Eigen::Index>(i)), scene.agents[i].agent_id, scene.scene_id});
  }
  return out;
}

EncoderGradient encoder_backward(const EncoderModel& model, const EncoderCache& cache,
                                 const Eigen::MatrixXd& latent_grad) {
  EncoderGradient g;
  g.track = model.track_net.backward(cache.track, latent_grad);
  Eigen::MatrixXd masked = latent_grad;
  for (Eigen::Index j = 0; j < masked.cols(); ++j) {
    if (cache.mask(j) == 0.0) masked.col(j).setZero();
  }
  g.neighbor = model.neighbor_net.backward(cache.neighbor, masked);
  return g;
}

void append_param_blocks(EncoderModel& model, const EncoderGradient& grad,
                         std::vector<ParamBlock>& out) {
  append_param_blocks(model.track_net, grad.track, out);
  append_param_blocks(model.neighbor_net, grad.neighbor, out);
}

std::vector<std::size_t> param_block_sizes(const EncoderModel& model) {
  auto sizes = param_block_sizes(model.track_net);
  const auto more = param_block_sizes(model.neighbor_net);
  sizes.insert(sizes.end(), more.begin(), more.end());
  return sizes;
}

std::uint64_t parameter_hash(const EncoderModel& model) {
  return parameter_hash(model.neighbor_net, parameter_hash(model.track_net));
}

nlohmann::json encoder_to_json(const EncoderModel& model) {
  return {{"kind", "encoder"},
          {"schema", 1},
          {"t_h", model.config.t_h},
          {"latent_dim", model.config.latent_dim},
          {"hidden_dim", model.config.hidden_dim},
          {"radius", model.config.radius},
          {"track_net", net_to_json(model.track_net)},
          {"neighbor_net", net_to_json(model.neighbor_net)},
          {"track_norm", norm_to_json(model.track_norm)},
          {"neighbor_norm", norm_to_json(model.neighbor_norm)}};
}

EncoderModel encoder_from_json(const nlohmann::json& j) {
  try {
    if (j.at("kind").get<std::string>() != "encoder" || j.at("schema").get<int>() != 1) {
      throw std::runtime_error("checkpoint schema error: not an encoder checkpoint (schema 1)");
    }
    EncoderModel m;
    m.config.t_h = j.at("t_h").get<int>();
    m.config.latent_dim = j.at("latent_dim").get<int>();
    m.config.hidden_dim = j.at("hidden_dim").get<int>();
    m.config.radius = j.at("radius").get<double>();
    m.track_net = net_from_json(j.at("track_net"));
    m.neighbor_net = net_from_json(j.at("neighbor_net"));
    m.track_norm = norm_from_json(j.at("track_norm"));
    m.neighbor_norm = norm_from_json(j.at("neighbor_norm"));
    if (m.track_net.input_dim() != track_feature_dim(m.config.t_h) ||
        m.neighbor_net.input_dim() != neighbor_feature_dim(m.config.t_h) ||
        m.track_net.output_dim() != m.config.latent_dim ||
        m.neighbor_net.output_dim() != m.config.latent_dim ||
        m.track_norm.mean.size() != m.track_net.input_dim() ||
        m.neighbor_norm.mean.size() != m.neighbor_net.input_dim()) {
      throw std::runtime_error("checkpoint schema error: encoder dimensions are inconsistent");
    }
    return m;
  } catch (const nlohmann::json::exception& e) {
    throw std::runtime_error(std::string("checkpoint schema error: ") + e.what());
  }
}

}  // namespace reltraj
