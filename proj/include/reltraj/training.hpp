#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <functional>
#include <vector>

#include "reltraj/dataset.hpp"
#include "reltraj/encoder.hpp"
#include "reltraj/predictor.hpp"

namespace reltraj {

/// One (scene, target agent) pair: the encoder input and the ground-truth
/// future expressed relative to the agent's last observed position.
struct TargetSample {
  std::int64_t scene_id = 0;
  std::int64_t agent_id = 0;
  int ood = 0;
  EncoderInput input;
  Trajectory gt;
  Point2 anchor;
};

/// Every vehicle agent of every scene is a target; pedestrians only appear
/// as neighbors.
std::vector<TargetSample> collect_targets(const std::vector<Scene>& scenes, int t_h, int t_f,
                                          double radius);

struct Phase1Config {
  int epochs = 40;
  double learning_rate = 1e-4;
  int batch_size = 32;
  double weight_decay = 1e-4;
  std::uint64_t seed = 3;
};

class NonFiniteLossError : public NonFiniteError {
 public:
  NonFiniteLossError(const std::string& what, std::int64_t batch_id)
      : NonFiniteError(what), batch_id_(batch_id) {}
  std::int64_t batch_id() const { return batch_id_; }

 private:
  std::int64_t batch_id_;
};

struct EpochLog {
  int epoch = 0;
  double loss = 0.0;
  double learning_rate = 0.0;  // at the start of the epoch
};

/// Trains encoder and predictor end to end on the mixture NLL. Fits the
/// encoder input normalization on `samples` first. Throws NonFiniteLossError
/// naming the global batch index when a batch loss is not finite.
std::vector<EpochLog> train_prediction_model(EncoderModel& encoder, PredictorModel& predictor,
                                             const std::vector<TargetSample>& samples,
                                             const Phase1Config& config,
                                             const std::function<void(const EpochLog&)>& on_epoch = {});

/// Latent features of the targets, one row per sample.
Eigen::MatrixXd encode_targets(const EncoderModel& encoder, const std::vector<TargetSample>& samples);

std::vector<MixturePrediction> predict_from_latent(const PredictorModel& predictor,
                                                   const Eigen::MatrixXd& latent_rows);

}  // namespace reltraj
