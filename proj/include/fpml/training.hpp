#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "fpml/backbone.hpp"
#include "fpml/episodes.hpp"
#include "fpml/freq.hpp"
#include "fpml/losses.hpp"
#include "fpml/model.hpp"
#include "fpml/optim.hpp"

namespace fpml {

struct TrainConfig {
  ArchSpec arch;
  int image_size = 84;

  int pretrain_epochs = 400;
  int pretrain_batch_size = 64;
  double pretrain_learning_rate = 1e-3;

  int meta_epochs = 50;
  int episodes_per_epoch = 100;
  int n_way = 5;
  int k_shot = 5;
  int m_query = 15;
  double learning_rate = 1e-3;
  OptimizerKind optimizer = OptimizerKind::adam;
  double m1 = 0.997;
  double m2 = 0.999;

  freq::DecompositionSettings decomposition;
  Distance distance = Distance::euclidean;
  LossWeights weights;
  AugmentPolicy augment;
  double divergence_threshold = 1e4;
  std::uint64_t seed = 0;

  // Throws ConfigError naming the offending field.
  void validate() const;
  int latent_dim() const { return std::max(1, arch.feature_dim() / 2); }
};

struct StepRecord {
  std::int64_t step = 0;
  int epoch = 0;
  LossBreakdown loss;
  double wall_clock = 0.0;  // seconds since the run started
};

struct TrainState {
  BranchSet branches;
  Optimizer optimizer;
  std::int64_t step = 0;
  int epoch = 0;  // completed epochs
  std::vector<StepRecord> history;
};

struct PretrainResult {
  EmbeddingParams backbone;
  std::vector<double> epoch_losses;  // mean training cross-entropy per epoch
  int head_classes = 0;
};

// Supervised batch classification on the source domain with a linear head;
// only the backbone is returned.
PretrainResult pretrain(const Dataset& dataset, const TrainConfig& config,
                        const std::function<void(int, double)>& on_epoch = {});

// theta = phi = varphi = pretrained; eta freshly initialized (d -> d/2).
BranchSet init_branches(const EmbeddingParams& pretrained, const TrainConfig& config);

TrainState make_train_state(BranchSet branches, const TrainConfig& config);

// Loss and gradients of one episode for theta and eta; no parameter changes.
struct EpisodeGradients {
  LossBreakdown loss;
  ParamGrads theta;
  ProjectorGrads eta;
  // Per-query predictions from each branch.
  std::vector<PredictionScores> main, low, high;
};

EpisodeGradients episode_gradients(const BranchSet& branches, const Episode& episode,
                                   const TrainConfig& config);

// One full meta-training iteration: decompose, three-branch forward, losses,
// optimizer step on theta and eta, then EMA of phi (m1) and varphi (m2).
LossBreakdown meta_train_step(TrainState& state, const Episode& episode, const TrainConfig& config);

// Prototype + cross-entropy only on theta (no decomposition, no EMA).
LossBreakdown meta_baseline_step(TrainState& state, const Episode& episode,
                                 const TrainConfig& config);

struct MetaTrainOptions {
  bool baseline = false;
  std::function<void(const TrainState&)> on_epoch_end;
  std::function<void(const StepRecord&)> on_step;
};

// Runs epochs [state.epoch, meta_epochs). Episode composition and
// augmentation derive from (seed, epoch, episode), so resuming from a
// checkpointed state reproduces an uninterrupted run.
void meta_train(TrainState& state, const Dataset& dataset, const TrainConfig& config,
                const MetaTrainOptions& options = {});

// Convenience wrapper: init_branches + meta_train from scratch.
TrainState meta_train(const Dataset& dataset, const EmbeddingParams& pretrained,
                      const TrainConfig& config, const MetaTrainOptions& options = {});

Episode sample_training_episode(const Dataset& dataset, const TrainConfig& config, int epoch,
                                int index);

}  // namespace fpml
