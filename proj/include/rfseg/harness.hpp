#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <optional>
#include <string>

#include "rfseg/adam.hpp"
#include "rfseg/inference.hpp"
#include "rfseg/losses.hpp"
#include "rfseg/metrics.hpp"
#include "rfseg/network.hpp"
#include "rfseg/synthdata.hpp"

#include <json.hpp>

namespace rfseg {

struct ExperimentConfig {
  // data generation
  Index scenes = 240;
  Index points = 512;
  Index min_fg = 100;

  // episode shape
  int n_way = 2;
  int k_shot = 5;
  int queries_per_way = 1;
  NoiseConfig noise;

  // network
  NetDims dims;  // classes filled from the split at pretrain time

  // objectives
  LossConfig<float> loss;

  // schedules
  int pretrain_epochs = 100;
  float pretrain_lr = 1e-3f;
  double holdout_fraction = 0.1;
  int train_episodes = 2000;
  float train_lr_backbone = 1e-4f;
  float train_lr_projection = 1e-3f;

  // inference
  PropagationConfig propagation;
  MdnsConfig mdns;
  bool use_mdns = false;
  InferenceHead head = InferenceHead::label_propagation;
  FeatureSpace feature_space = FeatureSpace::projection;
  int eval_episodes = 100;

  std::uint64_t seed = 7;

  void validate() const;
  nlohmann::json to_json() const;
};

/// Applies `key = value` entries onto the defaults; unknown keys raise.
ExperimentConfig config_from_kv(const std::map<std::string, std::string>& kv);

using LogFn = std::function<void(const std::string&)>;

/// Pretraining: per-point cross-entropy over base classes + background via
/// the classifier head, one Adam step per scene, holdout scenes excluded.
/// A non-finite loss checkpoints the last finite parameters to
/// `diverged_path` (when given) and raises NumericError.
void pretrain(EmbeddingNet<float>& net, const Dataset& data, const ExperimentConfig& cfg,
              const LogFn& log = {}, const std::optional<std::filesystem::path>& diverged_path = {});

/// Per-point accuracy of the classifier head over the holdout scenes.
double pretrain_accuracy(const EmbeddingNet<float>& net, const Dataset& data,
                         const ExperimentConfig& cfg);

/// Episodic fine-tuning on the base split with injected training noise
/// (ratio drawn per episode from {0, 0.2, 0.4}).
void episodic_train(EmbeddingNet<float>& net, const Dataset& data, const ExperimentConfig& cfg,
                    const LogFn& log = {});

/// Same loop with an explicit training-noise ratio mix (ablation axis).
/// `loss_history`, when given, records the per-episode combined loss.
void episodic_train_with_mix(EmbeddingNet<float>& net, const Dataset& data,
                             const ExperimentConfig& cfg, const std::vector<double>& ratio_mix,
                             const LogFn& log = {}, std::vector<float>* loss_history = nullptr);

/// Meta-testing over seeded novel-class episodes. The episode stream
/// depends only on (dataset, config shape, seed), so different model or
/// filter variants see identical (paired) episodes.
MetricsReport meta_test(const EmbeddingNet<float>& net, const Dataset& data,
                        const ExperimentConfig& cfg, const LogFn& log = {});

/// The loss used by one episodic training step; exposed for the
/// finite-difference gradient oracle.
template <typename Scalar>
EpisodeLossResult<Scalar> training_step_loss(const EmbeddingNet<Scalar>& net,
                                             const Episode& episode,
                                             const LossConfig<Scalar>& loss_cfg, int n_proto,
                                             EmbeddingNet<Scalar>* grads,
                                             const EpisodePlan* frozen = nullptr,
                                             EpisodePlan* plan_out = nullptr) {
  return episode_loss(net, episode, loss_cfg, n_proto, grads, frozen, plan_out);
}

}  // namespace rfseg
