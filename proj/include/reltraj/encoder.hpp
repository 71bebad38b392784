#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <span>
#include <vector>

#include "json.hpp"
#include "reltraj/dataset.hpp"
#include "reltraj/nn.hpp"

namespace reltraj {

// Translation-invariant agent encoder: an MLP over the displacement history
// of the agent, summed with an MLP over the mean-pooled histories of the
// agents within `radius` of it.

struct EncoderConfig {
  int t_h = 25;
  int latent_dim = 32;
  int hidden_dim = 64;
  double radius = 50.0;  // meters
};

/// Length of preprocess_track() output: (t_h - 1) displacements of 2 values
/// followed by t_h blocks of (vx, vy, ax, ay, is_pedestrian).
int track_feature_dim(int t_h);
/// track_feature_dim plus the neighbor's offset relative to the target.
int neighbor_feature_dim(int t_h);

Eigen::VectorXd preprocess_track(const AgentTrack& track, int t_h);

/// Raw (unnormalized) encoder input for one agent of a scene.
struct EncoderInput {
  Eigen::VectorXd track;
  Eigen::VectorXd neighbors;  // mean over neighbors; zero when there are none
  bool has_neighbors = false;
};

/// Inputs for every agent of `scene`, in agent order. A neighbor is any other
/// agent whose last observed position is strictly closer than `radius`.
std::vector<EncoderInput> scene_inputs(const Scene& scene, int t_h, double radius);

struct LatentFeature {
  Eigen::VectorXd h;
  std::int64_t agent_id = 0;
  std::int64_t scene_id = 0;
};

struct EncoderModel {
  EncoderConfig config;
  DenseNet track_net;
  DenseNet neighbor_net;
  FeatureNorm track_norm;
  FeatureNorm neighbor_norm;

  static EncoderModel create(const EncoderConfig& config, Rng& rng);

  // Fits both input normalizations; neighbor statistics use only inputs
  // that have neighbors.
  void fit_normalization(std::span<const EncoderInput> inputs);
};

std::vector<LatentFeature> encode_scene(const EncoderModel& model, const Scene& scene);
Eigen::VectorXd encode_input(const EncoderModel& model, const EncoderInput& input);

// Batched path used by training; column j is sample j.
struct EncoderBatch {
  Eigen::MatrixXd track;
  Eigen::MatrixXd neighbors;
  Eigen::RowVectorXd mask;  // 1 where the sample has neighbors
};

EncoderBatch make_encoder_batch(const EncoderModel& model,
                                std::span<const EncoderInput* const> inputs);

struct EncoderCache {
  ForwardCache track;
  ForwardCache neighbor;
  Eigen::RowVectorXd mask;
};

Eigen::MatrixXd encode_batch(const EncoderModel& model, const EncoderBatch& batch,
                             EncoderCache* cache = nullptr);

struct EncoderGradient {
  NetGradient track;
  NetGradient neighbor;
};

EncoderGradient encoder_backward(const EncoderModel& model, const EncoderCache& cache,
                                 const Eigen::MatrixXd& latent_grad);

void append_param_blocks(EncoderModel& model, const EncoderGradient& grad,
                         std::vector<ParamBlock>& out);
std::vector<std::size_t> param_block_sizes(const EncoderModel& model);
std::uint64_t parameter_hash(const EncoderModel& model);

nlohmann::json encoder_to_json(const EncoderModel& model);
EncoderModel encoder_from_json(const nlohmann::json& j);

}  // namespace reltraj
