#include "reltraj/training.hpp"

#include <cmath>
#include <numeric>

namespace reltraj {

std::vector<TargetSample> collect_targets(const std::vector<Scene>& scenes, int t_h, int t_f,
                                          double radius) {
  std::vector<TargetSample> out;
  for (const auto& scene : scenes) {
    auto inputs = scene_inputs(scene, t_h, radius);
    for (std::size_t i = 0; i < scene.agents.size(); ++i) {
      const auto& agent = scene.agents[i];
      if (agent.is_pedestrian()) continue;
      if (static_cast<int>(agent.future.size()) != t_f) {
        throw std::invalid_argument("agent future length != t_f in scene " +
                                    std::to_string(scene.scene_id));
      }
      TargetSample s;
      s.scene_id = scene.scene_id;
      s.agent_id = agent.agent_id;
      s.ood = scene.ood_label;
      s.anchor = {agent.history.back().x, agent.history.back().y};
      s.gt.resize(t_f, 2);
      for (int t = 0; t < t_f; ++t) {
        s.gt(t, 0) = agent.future[static_cast<std::size_t>(t)].x - s.anchor.x;
        s.gt(t, 1) = agent.future[static_cast<std::size_t>(t)].y - s.anchor.y;
      }
      s.input = std::move(inputs[i]);
      out.push_back(std::move(s));
    }
  }
  return out;
}

std::vector<EpochLog> train_prediction_model(EncoderModel& encoder, PredictorModel& predictor,
                                             const std::vector<TargetSample>& samples,
                                             const Phase1Config& config,
                                             const std::function<void(const EpochLog&)>& on_epoch) {
  if (samples.empty()) throw std::invalid_argument("train_prediction_model: no training samples");
  if (config.epochs < 1 || config.batch_size < 1) {
    throw std::invalid_argument("train_prediction_model: epochs and batch size must be >= 1");
  }
  if (encoder.config.latent_dim != predictor.config.latent_dim) {
    throw std::invalid_argument("encoder latent dim != predictor latent dim");
  }

  std::vector<EncoderInput> inputs;
  inputs.reserve(samples.size());
  for (const auto& s : samples) inputs.push_back(s.input);
  encoder.fit_normalization(inputs);

  const auto n = static_cast<std::int64_t>(samples.size());
  const std::int64_t batches_per_epoch = (n + config.batch_size - 1) / config.batch_size;
  AdamWConfig opt_cfg;
  opt_cfg.learning_rate = config.learning_rate;
  opt_cfg.weight_decay = config.weight_decay;
  opt_cfg.total_steps = config.epochs * batches_per_epoch;
  auto sizes = param_block_sizes(encoder);
  const auto more = param_block_sizes(predictor);
  sizes.insert(sizes.end(), more.begin(), more.end());
  AdamW optimizer(opt_cfg, sizes);

  Rng rng(config.seed);
  std::vector<std::size_t> order(samples.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::vector<EpochLog> log;
  std::int64_t batch_id = 0;
  for (int epoch = 0; epoch < config.epochs; ++epoch) {
    rng.shuffle(order);
    EpochLog entry{epoch, 0.0, optimizer.current_learning_rate()};
    for (std::int64_t start = 0; start < n; start += config.batch_size, ++batch_id) {
      const auto b = std::min<std::int64_t>(config.batch_size, n - start);
      std::vector<const EncoderInput*> batch_inputs;
      for (std::int64_t j = 0; j < b; ++j) {
        batch_inputs.push_back(&samples[order[static_cast<std::size_t>(start + j)]].input);
      }
      EncoderCache enc_cache;
      const Eigen::MatrixXd latent =
          encode_batch(encoder, make_encoder_batch(encoder, batch_inputs), &enc_cache);
      PredictorCache pred_cache;
      const auto preds = decode_batch(predictor, latent, &pred_cache);

      std::vector<MixtureNllGradient> grads;
      grads.reserve(static_cast<std::size_t>(b));
      double batch_loss = 0.0;
      try {
        for (std::int64_t j = 0; j < b; ++j) {
          const auto& sample = samples[order[static_cast<std::size_t>(start + j)]];
          grads.push_back(mixture_nll_grad(preds[static_cast<std::size_t>(j)], sample.gt,
                                           predictor.config.sigma_min));
          batch_loss += grads.back().loss;
        }
      } catch (const NonFiniteError& e) {
        throw NonFiniteLossError("non-finite loss in batch " + std::to_string(batch_id) + " (epoch " +
                                     std::to_string(epoch) + "): " + e.what(),
                                 batch_id);
      }
      if (!std::isfinite(batch_loss)) {
        throw NonFiniteLossError("non-finite loss in batch " + std::to_string(batch_id) + " (epoch " +
                                     std::to_string(epoch) + ")",
                                 batch_id);
      }
      entry.loss += batch_loss;

      const PredictorGradient pred_grad =
          predictor_backward(predictor, pred_cache, grads, 1.0 / static_cast<double>(b));
      const EncoderGradient enc_grad = encoder_backward(encoder, enc_cache, pred_grad.latent);
      std::vector<ParamBlock> blocks;
      append_param_blocks(encoder, enc_grad, blocks);
      append_param_blocks(predictor, pred_grad, blocks);
      try {
        optimizer.step(blocks);
      } catch (const NonFiniteError& e) {
        throw NonFiniteLossError("batch " + std::to_string(batch_id) + ": " + e.what(), batch_id);
      }
    }
    entry.loss /= static_cast<double>(n);
    log.push_back(entry);
    if (on_epoch) on_epoch(entry);
  }
  return log;
}

Eigen::MatrixXd encode_targets(const EncoderModel& encoder, const std::vector<TargetSample>& samples) {
  Eigen::MatrixXd out(static_cast<Eigen::Index>(samples.size()), encoder.config.latent_dim);
  constexpr std::size_t kChunk = 512;
  for (std::size_t start = 0; start < samples.size(); start += kChunk) {
    const std::size_t end = std::min(samples.size(), start + kChunk);
    std::vector<const EncoderInput*> ptrs;
    for (std::size_t i = start; i < end; ++i) ptrs.push_back(&samples[i].input);
    const Eigen::MatrixXd h = encode_batch(encoder, make_encoder_batch(encoder, ptrs));
    out.middleRows(static_cast<Eigen::Index>(start), h.cols()) = h.transpose();
  }
  return out;
}

std::vector<MixturePrediction> predict_from_latent(const PredictorModel& predictor,
                                                   const Eigen::MatrixXd& latent_rows) {
  return decode_batch(predictor, latent_rows.transpose());
}

}  // namespace reltraj
