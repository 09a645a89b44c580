#pragma once

#include <span>
#include <string>
#include <vector>

#include "fpml/backbone.hpp"
#include "fpml/rng.hpp"
#include "fpml/tensor.hpp"

namespace fpml {

enum class Distance { euclidean, squared_euclidean };
Distance parse_distance(const std::string& s);
std::string to_string(Distance d);

// Single fully connected map d -> d_latent shared by all three branches.
struct Projector {
  int in_dim = 0;
  int out_dim = 0;
  std::vector<double> weight;  // out_dim x in_dim, row-major
  std::vector<double> bias;    // out_dim

  static Projector identity(int dim);
  // Uniform(-1/sqrt(in), 1/sqrt(in)) weights and biases.
  static Projector random(int in_dim, int out_dim, Rng& rng);
  std::size_t count() const { return weight.size() + bias.size(); }
};

struct ProjectorGrads {
  std::vector<double> weight;
  std::vector<double> bias;
  static ProjectorGrads zeros(const Projector& p) {
    return {std::vector<double>(p.weight.size(), 0.0), std::vector<double>(p.bias.size(), 0.0)};
  }
};

// (B x d) -> (B x d_latent)
Tensor project(const Projector& eta, const Tensor& features);

// Accumulates weight/bias gradients; returns d(loss)/d(features) when asked.
Tensor project_backward(const Projector& eta, const Tensor& features, const Tensor& dlatents,
                        ProjectorGrads& grads, bool need_dfeatures);

// Probability simplex over the N way of an episode.
struct PredictionScores {
  std::vector<double> probs;

  // Lowest index wins exact ties.
  int argmax() const;
};

struct Prototypes {
  int n_way = 0;
  int dim = 0;
  Tensor vectors;  // n_way x dim
};

// Per-class mean of support features. Every label in [0, n_way) must occur the
// same number of times.
Prototypes compute_prototypes(const Tensor& support_features, std::span<const int> labels,
                              int n_way);

std::vector<double> prototype_distances(std::span<const double> query, const Prototypes& protos,
                                        Distance metric);

// softmax(-distance) over the prototypes.
PredictionScores proto_predict(std::span<const double> query, const Prototypes& protos,
                               Distance metric = Distance::euclidean);

// branch <- m * branch + (1 - m) * main, elementwise over every tensor.
void ema_update(EmbeddingParams& branch, const EmbeddingParams& main, double momentum);

struct LogisticOptions {
  double l2 = 1.0;              // penalty 0.5 * l2 * ||W||^2, bias unpenalized
  bool normalize_features = true;
  int max_iterations = 500;
  double tolerance = 1e-7;      // on the gradient infinity norm
};

// Multinomial logistic regression fitted by L-BFGS on the support set.
class LogisticHead {
 public:
  void fit(const Tensor& features, std::span<const int> labels, int num_classes,
           const LogisticOptions& options = {});
  PredictionScores predict(std::span<const double> feature) const;
  std::vector<PredictionScores> predict(const Tensor& features) const;

  int num_classes() const { return classes_; }
  int iterations() const { return iterations_; }

 private:
  int classes_ = 0;
  int dim_ = 0;
  bool normalize_ = true;
  int iterations_ = 0;
  std::vector<double> weights_;  // classes x dim followed by classes biases
};

// The three embedding networks plus projector and EMA momenta.
struct BranchSet {
  EmbeddingParams theta;   // main
  EmbeddingParams phi;     // low-frequency, EMA with m1
  EmbeddingParams varphi;  // high-frequency, EMA with m2
  Projector eta;
  double m1 = 0.997;
  double m2 = 0.999;

  void validate() const;
};

// L2 distance between flattened parameter sets.
double param_distance(const EmbeddingParams& a, const EmbeddingParams& b);

// FNV-1a over the raw bytes of every parameter value.
std::uint64_t param_hash(const EmbeddingParams& p);

}  // namespace fpml
