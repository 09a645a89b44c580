#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "fpml/backbone.hpp"
#include "fpml/episodes.hpp"
#include "fpml/model.hpp"
#include "fpml/tensor.hpp"

namespace fpml {

enum class EvalMode { inductive, transductive };
std::string to_string(EvalMode m);

struct EvalConfig {
  int tasks = 600;
  int n_way = 5;
  int k_shot = 5;
  int m_query = 15;
  int image_size = 84;
  std::uint64_t seed = 0;
  LogisticOptions head;
  // Transductive expansion: top `pseudo_top` queries per pseudo-class
  // (<= 0 means k_shot), optionally only those with confidence >= min_confidence.
  int pseudo_top = 0;
  double min_confidence = 0.0;

  void validate() const;
  int selected_per_class() const { return pseudo_top > 0 ? pseudo_top : k_shot; }
};

struct EvalReport {
  std::vector<double> per_task_accuracy;
  double mean = 0.0;
  double ci95 = 0.0;  // half-width, 1.96 * population stddev / sqrt(tasks)
  int n_way = 0;
  int k_shot = 0;
  int m_query = 0;
  std::string domain;
  EvalMode mode = EvalMode::inductive;
  std::vector<double> wall_clock_per_task;  // seconds; not part of the report file
};

// Maps a batch of images to a (B x d) feature matrix.
using Embedder = std::function<Tensor(const std::vector<const Image*>&)>;
Embedder backbone_embedder(const EmbeddingParams& theta);

// What transductive expansion did on one task.
struct Expansion {
  std::vector<SampleRef> original_support;
  std::vector<SampleRef> expanded_support;
  std::vector<int> selected_queries;  // indices into the episode query list
  std::vector<int> pseudo_labels;
  std::vector<int> true_labels;
};

// Samples task `index` from (seed, index) alone, so tasks can run in any order.
Episode sample_eval_episode(const Dataset& dataset, const EvalConfig& config, int index);

double run_task(const Embedder& embed, const Dataset& dataset, const EvalConfig& config, int index,
                EvalMode mode, Expansion* expansion = nullptr);

EvalReport evaluate(const Embedder& embed, const Dataset& dataset, const EvalConfig& config,
                    EvalMode mode, std::vector<Expansion>* expansions = nullptr);

// Embeds with theta only; no decomposition and no parameter updates.
EvalReport meta_test(const EmbeddingParams& theta, const Dataset& dataset, const EvalConfig& config);
EvalReport transductive_meta_test(const EmbeddingParams& theta, const Dataset& dataset,
                                  const EvalConfig& config,
                                  std::vector<Expansion>* expansions = nullptr);

// Mean and 1.96 * sigma / sqrt(n) half-width, sigma with divisor n.
void summarize(std::span<const double> accuracies, double& mean, double& ci95);

// || mean(a) - mean(b) ||_2 over rows.
double domain_gap(const Tensor& features_a, const Tensor& features_b);

// Channel mean of the last spatial map, min-max normalized, bilinearly
// upsampled to the image size. Constant maps give all zeros.
Image feature_highlight(const EmbeddingParams& theta, const Image& image);

void write_report(const EvalReport& report, const std::filesystem::path& path);
EvalReport read_report(const std::filesystem::path& path);

}  // namespace fpml
