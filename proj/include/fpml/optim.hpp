#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace fpml {

enum class OptimizerKind { adam, sgd };
OptimizerKind parse_optimizer(const std::string& s);
std::string to_string(OptimizerKind k);

// First-order optimizer over an ordered list of parameter buffers. The buffer
// list must keep the same order and sizes across calls; moment buffers are
// sized on the first step.
class Optimizer {
 public:
  Optimizer() = default;
  Optimizer(OptimizerKind kind, double learning_rate) : kind_(kind), lr_(learning_rate) {}

  void step(const std::vector<std::vector<double>*>& params,
            const std::vector<const std::vector<double>*>& grads);

  OptimizerKind kind() const { return kind_; }
  double learning_rate() const { return lr_; }
  std::int64_t steps() const { return t_; }

  // Serialized moment state (empty before the first step).
  std::vector<std::vector<double>>& first_moments() { return m_; }
  std::vector<std::vector<double>>& second_moments() { return v_; }
  const std::vector<std::vector<double>>& first_moments() const { return m_; }
  const std::vector<std::vector<double>>& second_moments() const { return v_; }
  void set_steps(std::int64_t t) { t_ = t; }

  bool operator==(const Optimizer&) const = default;

  static constexpr double kBeta1 = 0.9;
  static constexpr double kBeta2 = 0.999;
  static constexpr double kEps = 1e-8;
  static constexpr double kSgdMomentum = 0.9;

 private:
  OptimizerKind kind_ = OptimizerKind::adam;
  double lr_ = 1e-3;
  std::int64_t t_ = 0;
  std::vector<std::vector<double>> m_;
  std::vector<std::vector<double>> v_;
};

}  // namespace fpml
