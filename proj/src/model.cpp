#include "fpml/model.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <deque>
#include <limits>
#include <numeric>

#include "fpml/errors.hpp"

namespace fpml {

Distance parse_distance(const std::string& s) {
  if (s == "euclidean") return Distance::euclidean;
  if (s == "squared_euclidean" || s == "squared-euclidean") return Distance::squared_euclidean;
  throw ConfigError("unknown distance '" + s + "' (expected euclidean|squared_euclidean)");
}

std::string to_string(Distance d) {
  return d == Distance::euclidean ? "euclidean" : "squared_euclidean";
}

Projector Projector::identity(int dim) {
  Projector p;
  p.in_dim = p.out_dim = dim;
  p.weight.assign(static_cast<std::size_t>(dim) * dim, 0.0);
  for (int i = 0; i < dim; ++i) p.weight[static_cast<std::size_t>(i) * dim + i] = 1.0;
  p.bias.assign(dim, 0.0);
  return p;
}

Projector Projector::random(int in_dim, int out_dim, Rng& rng) {
  if (in_dim < 1 || out_dim < 1) throw ConfigError("projector dimensions must be >= 1");
  Projector p;
  p.in_dim = in_dim;
  p.out_dim = out_dim;
  const double bound = 1.0 / std::sqrt(static_cast<double>(in_dim));
  p.weight.resize(static_cast<std::size_t>(in_dim) * out_dim);
  for (auto& w : p.weight) w = uniform(rng, -bound, bound);
  p.bias.resize(out_dim);
  for (auto& b : p.bias) b = uniform(rng, -bound, bound);
  return p;
}

Tensor project(const Projector& eta, const Tensor& features) {
  if (features.cols() != eta.in_dim) {
    throw ShapeError("project: features have " + std::to_string(features.cols()) +
                     " columns, projector expects " + std::to_string(eta.in_dim));
  }
  Tensor z = Tensor::matrix(features.rows(), eta.out_dim);
  kernels::gemm(features.data, eta.weight, z.data, features.rows(), eta.out_dim, eta.in_dim, false,
                true, false);
  for (int r = 0; r < z.rows(); ++r) {
    for (int j = 0; j < eta.out_dim; ++j) z(r, j) += eta.bias[j];
  }
  return z;
}

Tensor project_backward(const Projector& eta, const Tensor& features, const Tensor& dlatents,
                        ProjectorGrads& grads, bool need_dfeatures) {
  if (dlatents.rows() != features.rows() || dlatents.cols() != eta.out_dim ||
      features.cols() != eta.in_dim) {
    throw ShapeError("project_backward: dimension mismatch");
  }
  kernels::gemm(dlatents.data, features.data, grads.weight, eta.out_dim, eta.in_dim,
                features.rows(), true, false, true);
  for (int r = 0; r < dlatents.rows(); ++r) {
    for (int j = 0; j < eta.out_dim; ++j) grads.bias[j] += dlatents(r, j);
  }
  if (!need_dfeatures) return {};
  Tensor df = Tensor::matrix(features.rows(), eta.in_dim);
  kernels::gemm(dlatents.data, eta.weight, df.data, features.rows(), eta.in_dim, eta.out_dim,
                false, false, false);
  return df;
}

int PredictionScores::argmax() const {
  int best = 0;
  for (std::size_t i = 1; i < probs.size(); ++i) {
    if (probs[i] > probs[best]) best = static_cast<int>(i);
  }
  return best;
}

Prototypes compute_prototypes(const Tensor& support_features, std::span<const int> labels,
                              int n_way) {
  if (n_way < 1) throw ShapeError("prototypes: n_way must be >= 1");
  if (labels.size() != static_cast<std::size_t>(support_features.rows())) {
    throw ShapeError("prototypes: " + std::to_string(labels.size()) + " labels for " +
                     std::to_string(support_features.rows()) + " features");
  }
  std::vector<int> counts(n_way, 0);
  for (int l : labels) {
    if (l < 0 || l >= n_way) throw ShapeError("prototypes: label " + std::to_string(l) + " out of range");
    ++counts[l];
  }
  for (int c : counts) {
    if (c == 0 || c != counts.front()) {
      throw ShapeError("prototypes: every class needs the same nonzero number of support samples");
    }
  }
  Prototypes p;
  p.n_way = n_way;
  p.dim = support_features.cols();
  p.vectors = Tensor::matrix(n_way, p.dim);
  for (std::size_t i = 0; i < labels.size(); ++i) {
    auto row = support_features.row(static_cast<int>(i));
    for (int j = 0; j < p.dim; ++j) p.vectors(labels[i], j) += row[j];
  }
  const double inv = 1.0 / counts.front();
  for (auto& v : p.vectors.data) v *= inv;
  return p;
}

std::vector<double> prototype_distances(std::span<const double> query, const Prototypes& protos,
                                        Distance metric) {
  if (protos.n_way < 1) throw InvalidInputError("proto_predict: no prototypes");
  if (query.size() != static_cast<std::size_t>(protos.dim)) {
    throw ShapeError("proto_predict: query dim " + std::to_string(query.size()) +
                     " vs prototype dim " + std::to_string(protos.dim));
  }
  std::vector<double> d(protos.n_way);
  for (int n = 0; n < protos.n_way; ++n) {
    double s = 0.0;
    auto c = protos.vectors.row(n);
    for (int j = 0; j < protos.dim; ++j) {
      const double diff = query[j] - c[j];
      s += diff * diff;
    }
    d[n] = metric == Distance::euclidean ? std::sqrt(s) : s;
  }
  return d;
}

PredictionScores proto_predict(std::span<const double> query, const Prototypes& protos,
                               Distance metric) {
  const auto d = prototype_distances(query, protos, metric);
  const double dmin = *std::min_element(d.begin(), d.end());
  PredictionScores out;
  out.probs.resize(d.size());
  double z = 0.0;
  for (std::size_t n = 0; n < d.size(); ++n) {
    out.probs[n] = std::exp(-(d[n] - dmin));
    z += out.probs[n];
  }
  for (auto& p : out.probs) p /= z;
  return out;
}

void ema_update(EmbeddingParams& branch, const EmbeddingParams& main, double momentum) {
  if (!(momentum >= 0.0 && momentum <= 1.0)) {
    throw RangeError("ema_update: momentum " + std::to_string(momentum) + " outside [0,1]");
  }
  if (!branch.same_layout(main)) throw ShapeError("ema_update: parameter layouts differ");
  const double keep = 1.0 - momentum;
  for (std::size_t i = 0; i < branch.params.size(); ++i) {
    auto& b = branch.params[i].values;
    const auto& m = main.params[i].values;
    for (std::size_t j = 0; j < b.size(); ++j) b[j] = momentum * b[j] + keep * m[j];
  }
}

namespace {

std::vector<double> maybe_normalize(std::span<const double> f, bool normalize) {
  std::vector<double> v(f.begin(), f.end());
  if (!normalize) return v;
  double n = 0.0;
  for (double x : v) n += x * x;
  n = std::sqrt(n);
  if (n > 0.0) {
    for (auto& x : v) x /= n;
  }
  return v;
}

void softmax_inplace(std::vector<double>& logits) {
  const double mx = *std::max_element(logits.begin(), logits.end());
  double z = 0.0;
  for (auto& l : logits) {
    l = std::exp(l - mx);
    z += l;
  }
  for (auto& l : logits) l /= z;
}

double dot(const std::vector<double>& a, const std::vector<double>& b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

}  // namespace

void LogisticHead::fit(const Tensor& features, std::span<const int> labels, int num_classes,
                       const LogisticOptions& options) {
  const int n = features.rows();
  const int d = features.cols();
  if (labels.size() != static_cast<std::size_t>(n) || n == 0) {
    throw ShapeError("logistic head: label count does not match feature rows");
  }
  if (num_classes < 2) throw DegenerateTaskError("logistic head: need at least two classes");
  std::vector<int> counts(num_classes, 0);
  for (int l : labels) {
    if (l < 0 || l >= num_classes) throw ShapeError("logistic head: label out of range");
    ++counts[l];
  }
  if (std::count_if(counts.begin(), counts.end(), [](int c) { return c > 0; }) < 2) {
    throw DegenerateTaskError("logistic head: support contains a single class");
  }
  for (int c = 0; c < num_classes; ++c) {
    if (counts[c] == 0) {
      throw DegenerateTaskError("logistic head: class " + std::to_string(c) + " has no samples");
    }
  }

  classes_ = num_classes;
  dim_ = d;
  normalize_ = options.normalize_features;
  std::vector<std::vector<double>> xs(n);
  for (int i = 0; i < n; ++i) xs[i] = maybe_normalize(features.row(i), normalize_);

  const std::size_t nw = static_cast<std::size_t>(classes_) * dim_;
  const std::size_t np = nw + classes_;
  auto objective = [&](const std::vector<double>& w, std::vector<double>& g) {
    std::fill(g.begin(), g.end(), 0.0);
    double f = 0.0;
    std::vector<double> logits(classes_);
    for (int i = 0; i < n; ++i) {
      for (int c = 0; c < classes_; ++c) {
        double s = w[nw + c];
        const double* wc = w.data() + static_cast<std::size_t>(c) * dim_;
        for (int j = 0; j < dim_; ++j) s += wc[j] * xs[i][j];
        logits[c] = s;
      }
      const double mx = *std::max_element(logits.begin(), logits.end());
      double z = 0.0;
      for (double l : logits) z += std::exp(l - mx);
      f += std::log(z) + mx - logits[labels[i]];
      for (int c = 0; c < classes_; ++c) {
        const double p = std::exp(logits[c] - mx) / z;
        const double r = p - (c == labels[i] ? 1.0 : 0.0);
        double* gc = g.data() + static_cast<std::size_t>(c) * dim_;
        for (int j = 0; j < dim_; ++j) gc[j] += r * xs[i][j];
        g[nw + c] += r;
      }
    }
    for (std::size_t k = 0; k < nw; ++k) {
      f += 0.5 * options.l2 * w[k] * w[k];
      g[k] += options.l2 * w[k];
    }
    return f;
  };

  std::vector<double> w(np, 0.0), g(np), g_new(np), w_new(np), dir(np);
  double f = objective(w, g);
  std::deque<std::vector<double>> s_hist, y_hist;
  std::deque<double> rho_hist;
  constexpr std::size_t kMemory = 10;
  iterations_ = 0;
  for (int it = 0; it < options.max_iterations; ++it) {
    double gmax = 0.0;
    for (double v : g) gmax = std::max(gmax, std::abs(v));
    if (gmax < options.tolerance) break;
    ++iterations_;

    // Two-loop recursion.
    dir = g;
    std::vector<double> alpha(s_hist.size());
    for (std::size_t k = s_hist.size(); k-- > 0;) {
      alpha[k] = rho_hist[k] * dot(s_hist[k], dir);
      for (std::size_t j = 0; j < np; ++j) dir[j] -= alpha[k] * y_hist[k][j];
    }
    double gamma = 1.0;
    if (!s_hist.empty()) gamma = dot(s_hist.back(), y_hist.back()) / dot(y_hist.back(), y_hist.back());
    for (auto& v : dir) v *= gamma;
    for (std::size_t k = 0; k < s_hist.size(); ++k) {
      const double beta = rho_hist[k] * dot(y_hist[k], dir);
      for (std::size_t j = 0; j < np; ++j) dir[j] += s_hist[k][j] * (alpha[k] - beta);
    }
    for (auto& v : dir) v = -v;
    double slope = dot(g, dir);
    if (slope >= 0.0) {
      // Not a descent direction; restart from steepest descent.
      s_hist.clear();
      y_hist.clear();
      rho_hist.clear();
      for (std::size_t j = 0; j < np; ++j) dir[j] = -g[j];
      slope = dot(g, dir);
    }

    double step = 1.0;
    double f_new = f;
    bool accepted = false;
    for (int ls = 0; ls < 50; ++ls) {
      for (std::size_t j = 0; j < np; ++j) w_new[j] = w[j] + step * dir[j];
      f_new = objective(w_new, g_new);
      if (f_new <= f + 1e-4 * step * slope) {
        accepted = true;
        break;
      }
      step *= 0.5;
    }
    if (!accepted) break;

    std::vector<double> s(np), y(np);
    for (std::size_t j = 0; j < np; ++j) {
      s[j] = w_new[j] - w[j];
      y[j] = g_new[j] - g[j];
    }
    const double sy = dot(s, y);
    if (sy > 1e-12) {
      s_hist.push_back(std::move(s));
      y_hist.push_back(std::move(y));
      rho_hist.push_back(1.0 / sy);
      if (s_hist.size() > kMemory) {
        s_hist.pop_front();
        y_hist.pop_front();
        rho_hist.pop_front();
      }
    }
    w.swap(w_new);
    g.swap(g_new);
    f = f_new;
  }
  weights_ = std::move(w);
}

PredictionScores LogisticHead::predict(std::span<const double> feature) const {
  if (classes_ == 0) throw InvalidInputError("logistic head: predict before fit");
  if (feature.size() != static_cast<std::size_t>(dim_)) {
    throw ShapeError("logistic head: feature dim mismatch");
  }
  const auto x = maybe_normalize(feature, normalize_);
  const std::size_t nw = static_cast<std::size_t>(classes_) * dim_;
  PredictionScores out;
  out.probs.resize(classes_);
  for (int c = 0; c < classes_; ++c) {
    double s = weights_[nw + c];
    const double* wc = weights_.data() + static_cast<std::size_t>(c) * dim_;
    for (int j = 0; j < dim_; ++j) s += wc[j] * x[j];
    out.probs[c] = s;
  }
  softmax_inplace(out.probs);
  return out;
}

std::vector<PredictionScores> LogisticHead::predict(const Tensor& features) const {
  std::vector<PredictionScores> out;
  out.reserve(features.rows());
  for (int i = 0; i < features.rows(); ++i) out.push_back(predict(features.row(i)));
  return out;
}

void BranchSet::validate() const {
  if (!theta.same_layout(phi) || !theta.same_layout(varphi)) {
    throw ShapeError("branch set: embedding networks must share one architecture");
  }
  if (!(m1 >= 0 && m1 <= 1 && m2 >= 0 && m2 <= 1)) throw RangeError("branch set: momenta outside [0,1]");
  if (eta.in_dim != theta.arch.feature_dim()) {
    throw ShapeError("branch set: projector input does not match feature dim");
  }
}

double param_distance(const EmbeddingParams& a, const EmbeddingParams& b) {
  if (!a.same_layout(b)) throw ShapeError("param_distance: layouts differ");
  double s = 0.0;
  for (std::size_t i = 0; i < a.params.size(); ++i) {
    for (std::size_t j = 0; j < a.params[i].values.size(); ++j) {
      const double d = a.params[i].values[j] - b.params[i].values[j];
      s += d * d;
    }
  }
  return std::sqrt(s);
}

std::uint64_t param_hash(const EmbeddingParams& p) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (const auto& param : p.params) {
    const auto* bytes = reinterpret_cast<const unsigned char*>(param.values.data());
    for (std::size_t i = 0; i < param.values.size() * sizeof(double); ++i) {
      h ^= bytes[i];
      h *= 0x100000001b3ULL;
    }
  }
  return h;
}

}  // namespace fpml
