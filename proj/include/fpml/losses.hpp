#pragma once

#include <span>
#include <vector>

#include "fpml/episodes.hpp"
#include "fpml/model.hpp"

namespace fpml {

inline constexpr double kProbEpsilon = 1e-12;

struct LossWeights {
  double ce = 1.0;
  double align = 1.0;
  double recon = 1.0;
};

// Component means over an episode; total is the weighted sum (plain sum under
// unit weights).
struct LossBreakdown {
  double ce = 0.0;
  double align = 0.0;
  double recon = 0.0;
  double total = 0.0;
};

// -log(max(p[label], eps))
double ce_loss(const PredictionScores& scores, int label);
std::vector<double> ce_loss_grad(const PredictionScores& scores, int label);

// D_KL(q || p) with 0 ln 0 = 0 and p clamped to eps.
double kl_divergence(std::span<const double> q, std::span<const double> p);

// D_KL(low || main) + D_KL(high || main). Only `main` carries gradient.
double kl_align(const PredictionScores& low, const PredictionScores& high,
                const PredictionScores& main);
std::vector<double> kl_align_grad(const PredictionScores& low, const PredictionScores& high,
                                  const PredictionScores& main);

// mean((z_low + z_high - z_main)^2) over latent dims.
double recon_loss(std::span<const double> z_main, std::span<const double> z_low,
                  std::span<const double> z_high);

struct ReconGrads {
  std::vector<double> main;
  std::vector<double> low;
  std::vector<double> high;
};
ReconGrads recon_loss_grad(std::span<const double> z_main, std::span<const double> z_low,
                           std::span<const double> z_high);

// Backpropagates d(loss)/d(probs) through softmax to the logits.
std::vector<double> softmax_backward(const PredictionScores& scores, std::span<const double> dprobs);

struct PerSampleTerms {
  std::vector<double> ce;     // one per query
  std::vector<double> align;  // one per query
  std::vector<double> recon;  // one per episode image (support then query)
};

LossBreakdown episode_loss(const PerSampleTerms& terms, const Episode& episode,
                           const LossWeights& weights = {});

}  // namespace fpml
