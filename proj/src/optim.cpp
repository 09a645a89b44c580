#include "fpml/optim.hpp"

#include <cmath>

#include "fpml/errors.hpp"

namespace fpml {

OptimizerKind parse_optimizer(const std::string& s) {
  if (s == "adam") return OptimizerKind::adam;
  if (s == "sgd") return OptimizerKind::sgd;
  throw ConfigError("unknown optimizer '" + s + "' (expected adam|sgd)");
}

std::string to_string(OptimizerKind k) { return k == OptimizerKind::adam ? "adam" : "sgd"; }

void Optimizer::step(const std::vector<std::vector<double>*>& params,
                     const std::vector<const std::vector<double>*>& grads) {
  if (params.size() != grads.size()) throw ShapeError("optimizer: params/grads count mismatch");
  if (m_.empty()) {
    for (const auto* p : params) {
      m_.emplace_back(p->size(), 0.0);
      if (kind_ == OptimizerKind::adam) v_.emplace_back(p->size(), 0.0);
    }
  }
  if (m_.size() != params.size()) throw ShapeError("optimizer: parameter list changed");
  ++t_;
  const double bc1 = 1.0 - std::pow(kBeta1, static_cast<double>(t_));
  const double bc2 = 1.0 - std::pow(kBeta2, static_cast<double>(t_));
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto& p = *params[i];
    const auto& g = *grads[i];
    if (p.size() != g.size() || p.size() != m_[i].size()) {
      throw ShapeError("optimizer: buffer " + std::to_string(i) + " size mismatch");
    }
    auto& m = m_[i];
    if (kind_ == OptimizerKind::adam) {
      auto& v = v_[i];
      for (std::size_t j = 0; j < p.size(); ++j) {
        m[j] = kBeta1 * m[j] + (1.0 - kBeta1) * g[j];
        v[j] = kBeta2 * v[j] + (1.0 - kBeta2) * g[j] * g[j];
        const double mhat = m[j] / bc1;
        const double vhat = v[j] / bc2;
        p[j] -= lr_ * mhat / (std::sqrt(vhat) + kEps);
      }
    } else {
      for (std::size_t j = 0; j < p.size(); ++j) {
        m[j] = kSgdMomentum * m[j] + g[j];
        p[j] -= lr_ * m[j];
      }
    }
  }
}

}  // namespace fpml
