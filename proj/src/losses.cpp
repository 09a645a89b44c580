#include "fpml/losses.hpp"

#include <cmath>
#include <numeric>

#include "fpml/errors.hpp"

namespace fpml {

namespace {

void check_label(const PredictionScores& s, int label) {
  if (label < 0 || static_cast<std::size_t>(label) >= s.probs.size()) {
    throw RangeError("ce_loss: label " + std::to_string(label) + " outside [0, " +
                     std::to_string(s.probs.size()) + ")");
  }
}

void check_same_length(std::size_t a, std::size_t b, const char* what) {
  if (a != b) {
    throw ShapeError(std::string(what) + ": length " + std::to_string(a) + " vs " +
                     std::to_string(b));
  }
}

double mean(const std::vector<double>& v) {
  if (v.empty()) return 0.0;
  return std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
}

}  // namespace

double ce_loss(const PredictionScores& scores, int label) {
  check_label(scores, label);
  return -std::log(std::max(scores.probs[label], kProbEpsilon));
}

std::vector<double> ce_loss_grad(const PredictionScores& scores, int label) {
  check_label(scores, label);
  std::vector<double> g(scores.probs.size(), 0.0);
  const double p = scores.probs[label];
  if (p > kProbEpsilon) g[label] = -1.0 / p;
  return g;
}

double kl_divergence(std::span<const double> q, std::span<const double> p) {
  check_same_length(q.size(), p.size(), "kl_divergence");
  double s = 0.0;
  for (std::size_t n = 0; n < q.size(); ++n) {
    if (q[n] > 0.0) s += q[n] * std::log(q[n] / std::max(p[n], kProbEpsilon));
  }
  return s;
}

double kl_align(const PredictionScores& low, const PredictionScores& high,
                const PredictionScores& main) {
  check_same_length(low.probs.size(), main.probs.size(), "kl_align");
  check_same_length(high.probs.size(), main.probs.size(), "kl_align");
  return kl_divergence(low.probs, main.probs) + kl_divergence(high.probs, main.probs);
}

std::vector<double> kl_align_grad(const PredictionScores& low, const PredictionScores& high,
                                  const PredictionScores& main) {
  check_same_length(low.probs.size(), main.probs.size(), "kl_align");
  check_same_length(high.probs.size(), main.probs.size(), "kl_align");
  std::vector<double> g(main.probs.size(), 0.0);
  for (std::size_t n = 0; n < g.size(); ++n) {
    const double p = main.probs[n];
    if (p > kProbEpsilon) g[n] = -(low.probs[n] + high.probs[n]) / p;
  }
  return g;
}

double recon_loss(std::span<const double> z_main, std::span<const double> z_low,
                  std::span<const double> z_high) {
  check_same_length(z_low.size(), z_main.size(), "recon_loss");
  check_same_length(z_high.size(), z_main.size(), "recon_loss");
  if (z_main.empty()) throw ShapeError("recon_loss: empty latents");
  double s = 0.0;
  for (std::size_t j = 0; j < z_main.size(); ++j) {
    const double r = z_low[j] + z_high[j] - z_main[j];
    s += r * r;
  }
  return s / static_cast<double>(z_main.size());
}

ReconGrads recon_loss_grad(std::span<const double> z_main, std::span<const double> z_low,
                           std::span<const double> z_high) {
  check_same_length(z_low.size(), z_main.size(), "recon_loss");
  check_same_length(z_high.size(), z_main.size(), "recon_loss");
  const std::size_t d = z_main.size();
  ReconGrads g{std::vector<double>(d), std::vector<double>(d), std::vector<double>(d)};
  const double scale = 2.0 / static_cast<double>(d);
  for (std::size_t j = 0; j < d; ++j) {
    const double r = scale * (z_low[j] + z_high[j] - z_main[j]);
    g.main[j] = -r;
    g.low[j] = r;
    g.high[j] = r;
  }
  return g;
}

std::vector<double> softmax_backward(const PredictionScores& scores, std::span<const double> dprobs) {
  check_same_length(scores.probs.size(), dprobs.size(), "softmax_backward");
  double inner = 0.0;
  for (std::size_t n = 0; n < dprobs.size(); ++n) inner += dprobs[n] * scores.probs[n];
  std::vector<double> dlogits(dprobs.size());
  for (std::size_t n = 0; n < dprobs.size(); ++n) dlogits[n] = scores.probs[n] * (dprobs[n] - inner);
  return dlogits;
}

LossBreakdown episode_loss(const PerSampleTerms& terms, const Episode& episode,
                           const LossWeights& weights) {
  const std::size_t queries = episode.query.size();
  if (terms.ce.size() != queries || terms.align.size() != queries) {
    throw ShapeError("episode_loss: expected " + std::to_string(queries) +
                     " query terms, got ce=" + std::to_string(terms.ce.size()) +
                     " align=" + std::to_string(terms.align.size()));
  }
  if (terms.recon.size() != episode.size()) {
    throw ShapeError("episode_loss: expected " + std::to_string(episode.size()) +
                     " recon terms, got " + std::to_string(terms.recon.size()));
  }
  LossBreakdown b;
  b.ce = mean(terms.ce);
  b.align = mean(terms.align);
  b.recon = mean(terms.recon);
  b.total = weights.ce * b.ce + weights.align * b.align + weights.recon * b.recon;
  return b;
}

}  // namespace fpml
