#include <gtest/gtest.h>

#include <cmath>

#include "fpml/errors.hpp"
#include "fpml/training.hpp"
#include "tiny.hpp"

using namespace fpml;
using namespace fpml::testing;

namespace {

bool same_values(const EmbeddingParams& a, const EmbeddingParams& b) {
  if (!a.same_layout(b)) return false;
  for (std::size_t i = 0; i < a.params.size(); ++i) {
    if (a.params[i].values != b.params[i].values) return false;
  }
  return true;
}

}  // namespace

TEST(Pretrain, LossDecreasesAndIsDeterministic) {
  TrainConfig c = tiny_config();
  c.pretrain_epochs = 6;
  c.pretrain_learning_rate = 0.01;
  const Dataset ds = tiny_dataset();
  int calls = 0;
  const auto a = pretrain(ds, c, [&](int, double) { ++calls; });
  const auto b = pretrain(ds, c);
  EXPECT_EQ(calls, 6);
  EXPECT_LT(a.epoch_losses.back(), a.epoch_losses.front());
  EXPECT_EQ(param_hash(a.backbone), param_hash(b.backbone));
  EXPECT_EQ(a.head_classes, 4);
}

TEST(Pretrain, SingleClassIsDegenerate) {
  const Dataset ds = tiny_dataset(5, 1);
  EXPECT_THROW(pretrain(ds, tiny_config()), DegenerateTaskError);
}

TEST(InitBranches, CopiesThetaAndHalvesLatent) {
  const TrainConfig c = tiny_config();
  Rng rng(1);
  const EmbeddingParams p = init_embedding(c.arch, rng);
  const BranchSet b = init_branches(p, c);
  EXPECT_TRUE(same_values(b.theta, p));
  EXPECT_TRUE(same_values(b.phi, p));
  EXPECT_TRUE(same_values(b.varphi, p));
  EXPECT_EQ(b.eta.in_dim, 4);
  EXPECT_EQ(b.eta.out_dim, 2);
  EXPECT_EQ(b.m1, c.m1);
  EXPECT_EQ(b.m2, c.m2);
}

TEST(MetaStep, TotalIsSumOfComponents) {
  const TrainConfig c = tiny_config();
  const Dataset ds = tiny_dataset();
  TrainState s = make_train_state(tiny_branches(c), c);
  const auto loss = meta_train_step(s, tiny_episode(ds, c), c);
  EXPECT_NEAR(loss.total, loss.ce + loss.align + loss.recon, 1e-12);
  EXPECT_GT(loss.align, 0.0);
  EXPECT_GT(loss.recon, 0.0);
  EXPECT_EQ(s.step, 1);
  ASSERT_EQ(s.history.size(), 1u);
  EXPECT_EQ(s.history[0].loss.total, loss.total);
}

TEST(MetaStep, SlowBranchesFollowExponentialAverage) {
  TrainConfig c = tiny_config();
  c.m1 = 0.9;
  c.m2 = 0.6;
  const Dataset ds = tiny_dataset();
  TrainState s = make_train_state(tiny_branches(c), c);
  for (int step = 0; step < 3; ++step) {
    const BranchSet before = s.branches;
    meta_train_step(s, tiny_episode(ds, c, step), c);
    EXPECT_FALSE(same_values(before.theta, s.branches.theta));
    for (std::size_t i = 0; i < before.phi.params.size(); ++i) {
      const auto& th = s.branches.theta.params[i].values;
      for (std::size_t j = 0; j < th.size(); ++j) {
        const double phi = 0.9 * before.phi.params[i].values[j] + (1 - 0.9) * th[j];
        const double var = 0.6 * before.varphi.params[i].values[j] + (1 - 0.6) * th[j];
        EXPECT_EQ(s.branches.phi.params[i].values[j], phi);
        EXPECT_EQ(s.branches.varphi.params[i].values[j], var);
      }
    }
  }
}

TEST(MetaStep, ZeroAuxiliaryWeightsReproduceBaselineExactly) {
  TrainConfig c = tiny_config();
  c.weights = LossWeights{1.0, 0.0, 0.0};
  const Dataset ds = tiny_dataset();
  TrainState full = make_train_state(tiny_branches(c), c);
  TrainState base = full;
  for (int step = 0; step < 3; ++step) {
    const Episode ep = tiny_episode(ds, c, step);
    const auto lf = meta_train_step(full, ep, c);
    const auto lb = meta_baseline_step(base, ep, c);
    EXPECT_EQ(lf.ce, lb.ce);
    EXPECT_EQ(lf.total, lb.total);
    EXPECT_TRUE(same_values(full.branches.theta, base.branches.theta));
    EXPECT_EQ(full.branches.eta.weight, base.branches.eta.weight);
    EXPECT_EQ(full.branches.eta.bias, base.branches.eta.bias);
  }
}

TEST(MetaStep, GradientMatchesFiniteDifferencesOnSample) {
  const TrainConfig c = tiny_config();
  const Dataset ds = tiny_dataset();
  BranchSet b = tiny_branches(c);
  const Episode ep = tiny_episode(ds, c);
  const auto g = episode_gradients(b, ep, c);
  constexpr double h = 1e-6;
  auto total = [&] { return episode_gradients(b, ep, c).loss.total; };
  double worst = 0;
  for (std::size_t i = 0; i < b.theta.params.size(); ++i) {
    auto& v = b.theta.params[i].values;
    for (std::size_t j = 0; j < v.size(); j += 7) {
      const double keep = v[j];
      v[j] = keep + h;
      const double up = total();
      v[j] = keep - h;
      const double dn = total();
      v[j] = keep;
      const double fd = (up - dn) / (2 * h);
      worst = std::max(worst, std::abs(fd - g.theta[i][j]) /
                                  std::max(1e-4, std::abs(fd) + std::abs(g.theta[i][j])));
    }
  }
  for (std::size_t j = 0; j < b.eta.weight.size(); ++j) {
    const double keep = b.eta.weight[j];
    b.eta.weight[j] = keep + h;
    const double up = total();
    b.eta.weight[j] = keep - h;
    const double dn = total();
    b.eta.weight[j] = keep;
    const double fd = (up - dn) / (2 * h);
    worst = std::max(worst, std::abs(fd - g.eta.weight[j]) /
                                std::max(1e-4, std::abs(fd) + std::abs(g.eta.weight[j])));
  }
  EXPECT_LT(worst, 1e-4);
}

TEST(MetaTrain, ResumingMatchesUninterruptedRun) {
  const TrainConfig c = tiny_config();
  const Dataset ds = tiny_dataset();
  TrainState straight = make_train_state(tiny_branches(c), c);
  meta_train(straight, ds, c);

  TrainConfig first = c;
  first.meta_epochs = 1;
  TrainState resumed = make_train_state(tiny_branches(c), c);
  meta_train(resumed, ds, first);
  EXPECT_EQ(resumed.epoch, 1);
  TrainState copy = resumed;
  meta_train(copy, ds, c);

  EXPECT_EQ(copy.step, straight.step);
  EXPECT_TRUE(same_values(copy.branches.theta, straight.branches.theta));
  EXPECT_TRUE(same_values(copy.branches.phi, straight.branches.phi));
  EXPECT_TRUE(same_values(copy.branches.varphi, straight.branches.varphi));
  EXPECT_EQ(copy.branches.eta.weight, straight.branches.eta.weight);
  ASSERT_EQ(copy.history.size(), straight.history.size());
  for (std::size_t i = 0; i < copy.history.size(); ++i) {
    EXPECT_EQ(copy.history[i].loss.total, straight.history[i].loss.total);
  }
}

TEST(MetaTrain, DivergenceGuardReportsDiagnostics) {
  TrainConfig c = tiny_config();
  c.divergence_threshold = 1e-9;
  const Dataset ds = tiny_dataset();
  TrainState s = make_train_state(tiny_branches(c), c);
  const auto before = param_hash(s.branches.theta);
  try {
    meta_train_step(s, tiny_episode(ds, c), c);
    FAIL() << "expected DivergenceError";
  } catch (const DivergenceError& e) {
    const std::string msg = e.what();
    EXPECT_NE(msg.find("step 1"), std::string::npos);
    EXPECT_NE(msg.find("align="), std::string::npos);
  }
  EXPECT_EQ(param_hash(s.branches.theta), before);
  EXPECT_EQ(s.step, 0);
}

TEST(MetaTrain, EpisodeMismatchAndConfigErrors) {
  const TrainConfig c = tiny_config();
  const Dataset ds = tiny_dataset();
  TrainConfig other = c;
  other.k_shot = 1;
  TrainState s = make_train_state(tiny_branches(c), c);
  EXPECT_THROW(meta_train_step(s, tiny_episode(ds, other), c), ShapeError);
  other = c;
  other.n_way = 0;
  try {
    other.validate();
    FAIL();
  } catch (const ConfigError& e) {
    EXPECT_EQ(std::string(e.what()).rfind("meta.n_way", 0), 0u);
  }
  other = c;
  other.m1 = 1.5;
  EXPECT_THROW(other.validate(), ConfigError);
}
