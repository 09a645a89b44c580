#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <memory>
#include <set>

#include "fpml/errors.hpp"
#include "fpml/evaluation.hpp"

using namespace fpml;
namespace fs = std::filesystem;

namespace {

constexpr int kClasses = 8;

// Every image of class c is the constant (c + 1) / 10.
Dataset flat_dataset() {
  Dataset ds;
  ds.name = "flat";
  ds.domain = "T";
  for (int c = 0; c < kClasses; ++c) {
    ds.classes.push_back("c" + std::to_string(c));
    std::vector<Image> imgs;
    for (int i = 0; i < 25; ++i) {
      Image im(3, 8, 8);
      std::fill(im.pixels.begin(), im.pixels.end(), (c + 1) / 10.0);
      imgs.push_back(im);
    }
    ds.samples.push_back(std::move(imgs));
  }
  return ds;
}

Embedder one_hot_embedder() {
  return [](const std::vector<const Image*>& imgs) {
    Tensor t = Tensor::matrix(static_cast<int>(imgs.size()), kClasses);
    for (std::size_t i = 0; i < imgs.size(); ++i) {
      const int c = static_cast<int>(std::lround(imgs[i]->pixels[0] * 10)) - 1;
      t(static_cast<int>(i), c) = 1.0;
    }
    return t;
  };
}

Embedder noise_embedder(std::uint64_t seed) {
  auto rng = std::make_shared<Rng>(seed);
  return [rng](const std::vector<const Image*>& imgs) {
    Tensor t = Tensor::matrix(static_cast<int>(imgs.size()), 6);
    for (auto& v : t.data) v = standard_normal(*rng);
    return t;
  };
}

// Class identity plus a per-image jitter so confidences differ between queries.
Embedder noisy_class_embedder() {
  return [](const std::vector<const Image*>& imgs) {
    Tensor t = Tensor::matrix(static_cast<int>(imgs.size()), kClasses);
    Rng rng(imgs.size());
    for (std::size_t i = 0; i < imgs.size(); ++i) {
      const int c = static_cast<int>(std::lround(imgs[i]->pixels[0] * 10)) - 1;
      for (int j = 0; j < kClasses; ++j) t(static_cast<int>(i), j) = 0.6 * standard_normal(rng);
      t(static_cast<int>(i), c) += 1.0;
    }
    return t;
  };
}

EvalConfig small_eval() {
  EvalConfig c;
  c.tasks = 40;
  c.n_way = 5;
  c.k_shot = 2;
  c.m_query = 6;
  c.image_size = 8;
  c.seed = 11;
  return c;
}

}  // namespace

TEST(Evaluate, SeparableEmbeddingIsPerfect) {
  const Dataset ds = flat_dataset();
  const EvalReport r = evaluate(one_hot_embedder(), ds, small_eval(), EvalMode::inductive);
  ASSERT_EQ(r.per_task_accuracy.size(), 40u);
  EXPECT_DOUBLE_EQ(r.mean, 1.0);
  EXPECT_DOUBLE_EQ(r.ci95, 0.0);
}

TEST(Evaluate, NoiseEmbeddingSitsAtChance) {
  const Dataset ds = flat_dataset();
  EvalConfig c = small_eval();
  c.tasks = 300;
  const EvalReport r = evaluate(noise_embedder(4), ds, c, EvalMode::inductive);
  EXPECT_LE(std::abs(r.mean - 0.2), r.ci95);
}

TEST(Evaluate, SummaryMatchesDirectComputation) {
  const Dataset ds = flat_dataset();
  const EvalReport r = evaluate(noise_embedder(9), ds, small_eval(), EvalMode::inductive);
  double s = 0, ss = 0;
  for (double a : r.per_task_accuracy) s += a;
  const double n = static_cast<double>(r.per_task_accuracy.size());
  const double mean = s / n;
  for (double a : r.per_task_accuracy) ss += (a - mean) * (a - mean);
  EXPECT_NEAR(r.mean, mean, 1e-12);
  EXPECT_NEAR(r.ci95, 1.96 * std::sqrt(ss / n) / std::sqrt(n), 1e-12);
  double m = 0, ci = 0;
  const std::vector<double> two = {0.0, 1.0};
  summarize(two, m, ci);
  EXPECT_DOUBLE_EQ(m, 0.5);
  EXPECT_NEAR(ci, 1.96 * 0.5 / std::sqrt(2.0), 1e-15);
  EXPECT_THROW(summarize(std::vector<double>{}, m, ci), InvalidInputError);
}

TEST(Evaluate, TasksAreIndependentOfOrder) {
  const Dataset ds = flat_dataset();
  const EvalConfig c = small_eval();
  const EvalReport r = evaluate(noisy_class_embedder(), ds, c, EvalMode::inductive);
  for (int i : {31, 7, 0}) {
    EXPECT_EQ(run_task(noisy_class_embedder(), ds, c, i, EvalMode::inductive), r.per_task_accuracy[i]);
  }
}

TEST(Transductive, SupportGrowsWithoutDuplicates) {
  const Dataset ds = flat_dataset();
  EvalConfig c = small_eval();
  std::vector<Expansion> ex;
  const EvalReport r = evaluate(noisy_class_embedder(), ds, c, EvalMode::transductive, &ex);
  ASSERT_EQ(ex.size(), 40u);
  EXPECT_EQ(r.mode, EvalMode::transductive);
  for (const auto& e : ex) {
    std::set<std::pair<int, int>> orig, all;
    for (const auto& s : e.original_support) orig.insert({s.cls, s.index});
    for (const auto& s : e.expanded_support) EXPECT_TRUE(all.insert({s.cls, s.index}).second);
    for (const auto& o : orig) EXPECT_TRUE(all.count(o));
    EXPECT_EQ(e.expanded_support.size(), e.original_support.size() + e.selected_queries.size());
    EXPECT_LE(e.selected_queries.size(), static_cast<std::size_t>(c.n_way * c.k_shot));
    EXPECT_EQ(std::set<int>(e.selected_queries.begin(), e.selected_queries.end()).size(),
              e.selected_queries.size());
  }
}

TEST(Transductive, UnreachableThresholdFallsBackToInductive) {
  const Dataset ds = flat_dataset();
  EvalConfig c = small_eval();
  c.min_confidence = 1.0;
  std::vector<Expansion> ex;
  const EvalReport t = evaluate(noisy_class_embedder(), ds, c, EvalMode::transductive, &ex);
  const EvalReport i = evaluate(noisy_class_embedder(), ds, c, EvalMode::inductive);
  for (const auto& e : ex) EXPECT_TRUE(e.selected_queries.empty());
  EXPECT_EQ(t.per_task_accuracy, i.per_task_accuracy);
  c.min_confidence = 1.5;
  EXPECT_THROW(c.validate(), ConfigError);
}

TEST(DomainGap, DistanceBetweenMeans) {
  Tensor a = Tensor::matrix(2, 2);
  a.data = {1, 1, -1, -1};
  Tensor b = Tensor::matrix(3, 2);
  b.data = {3, 4, 2, 5, 4, 3};
  EXPECT_NEAR(domain_gap(a, b), 5.0, 1e-15);
  EXPECT_DOUBLE_EQ(domain_gap(b, b), 0.0);
  EXPECT_THROW(domain_gap(Tensor::matrix(0, 2), b), InvalidInputError);
  EXPECT_THROW(domain_gap(a, Tensor::matrix(2, 3)), ShapeError);
}

TEST(FeatureHighlight, ShapeAndRange) {
  ArchSpec arch;
  arch.width = 4;
  arch.blocks = 2;
  Rng rng(2);
  const EmbeddingParams p = init_embedding(arch, rng);
  Image img(3, 20, 16);
  for (auto& v : img.pixels) v = uniform01(rng);
  const Image h = feature_highlight(p, img);
  EXPECT_EQ(h.channels, 1);
  EXPECT_EQ(h.height, 20);
  EXPECT_EQ(h.width, 16);
  double mx = 0;
  for (double v : h.pixels) {
    EXPECT_GE(v, -1e-12);
    EXPECT_LE(v, 1.0 + 1e-12);
    mx = std::max(mx, v);
  }
  EXPECT_GT(mx, 0.5);
}

TEST(Report, RoundTrip) {
  const Dataset ds = flat_dataset();
  EvalReport r = evaluate(noise_embedder(3), ds, small_eval(), EvalMode::inductive);
  r.domain = "T";
  const fs::path path = fs::temp_directory_path() / "fpml_eval_report.txt";
  write_report(r, path);
  const EvalReport back = read_report(path);
  EXPECT_EQ(back.per_task_accuracy, r.per_task_accuracy);
  EXPECT_DOUBLE_EQ(back.mean, r.mean);
  EXPECT_DOUBLE_EQ(back.ci95, r.ci95);
  EXPECT_EQ(back.n_way, 5);
  EXPECT_EQ(back.k_shot, 2);
}
