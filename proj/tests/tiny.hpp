#pragma once

#include "fpml/episodes.hpp"
#include "fpml/training.hpp"

namespace fpml::testing {

// Small enough for finite differences over every parameter.
inline TrainConfig tiny_config(std::uint64_t seed = 3) {
  TrainConfig c;
  c.arch.kind = ArchKind::conv4;
  c.arch.width = 4;
  c.arch.blocks = 2;
  c.image_size = 8;
  c.pretrain_epochs = 2;
  c.pretrain_batch_size = 8;
  c.meta_epochs = 2;
  c.episodes_per_epoch = 3;
  c.n_way = 3;
  c.k_shot = 2;
  c.m_query = 2;
  c.decomposition.cutoff = 0.3;
  c.seed = seed;
  return c;
}

inline Dataset tiny_dataset(std::uint64_t seed = 5, int classes = 4) {
  SyntheticSpec s;
  s.num_classes = classes;
  s.samples_per_class = 8;
  s.image_size = 12;
  return make_synthetic(s, seed);
}

// Branches whose slow copies differ from theta so every loss term is active.
inline BranchSet tiny_branches(const TrainConfig& c, std::uint64_t seed = 7) {
  Rng rng(seed);
  const EmbeddingParams base = init_embedding(c.arch, rng);
  BranchSet b = init_branches(base, c);
  for (auto* p : {&b.phi, &b.varphi}) {
    for (auto& param : p->params) {
      for (auto& v : param.values) v += 0.2 * standard_normal(rng);
    }
  }
  return b;
}

inline Episode tiny_episode(const Dataset& ds, const TrainConfig& c, int index = 0) {
  return sample_training_episode(ds, c, 0, index);
}

}  // namespace fpml::testing
