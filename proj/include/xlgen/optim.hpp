#pragma once

#include <cmath>
#include <memory>
#include <string>

#include "xlgen/errors.hpp"
#include "xlgen/params.hpp"

namespace xlgen {

/// Stateful optimizer applied to the unfrozen subset of a ParameterSet.
/// Frozen tensors are skipped wholesale, so they stay bitwise unchanged no
/// matter how many steps run.
class OuterOptimizer {
 public:
  virtual ~OuterOptimizer() = default;
  virtual void step(ParameterSet& params, const ParameterSet& grads, const FreezeMask& mask) = 0;
};

class SgdOptimizer : public OuterOptimizer {
 public:
  explicit SgdOptimizer(double lr) : lr_(lr) {}

  void step(ParameterSet& params, const ParameterSet& grads, const FreezeMask& mask) override {
    for (auto& [name, t] : params.tensors) {
      if (mask.matches(name)) continue;
      const Tensor& g = grads.at(name);
      for (std::size_t i = 0; i < t.size(); ++i) t.v[i] -= lr_ * g.v[i];
    }
  }

 private:
  double lr_;
};

class AdamWOptimizer : public OuterOptimizer {
 public:
  AdamWOptimizer(double lr, double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8,
                 double weight_decay = 0.0)
      : lr_(lr), beta1_(beta1), beta2_(beta2), eps_(eps), weight_decay_(weight_decay) {}

  void step(ParameterSet& params, const ParameterSet& grads, const FreezeMask& mask) override {
    if (m_.tensors.empty()) {
      m_ = zeros_like(params);
      v_ = zeros_like(params);
    }
    ++t_;
    const double bc1 = 1.0 - std::pow(beta1_, t_);
    const double bc2 = 1.0 - std::pow(beta2_, t_);
    for (auto& [name, p] : params.tensors) {
      if (mask.matches(name)) continue;
      const Tensor& g = grads.at(name);
      Tensor& m = m_.at(name);
      Tensor& v = v_.at(name);
      for (std::size_t i = 0; i < p.size(); ++i) {
        m.v[i] = beta1_ * m.v[i] + (1.0 - beta1_) * g.v[i];
        v.v[i] = beta2_ * v.v[i] + (1.0 - beta2_) * g.v[i] * g.v[i];
        const double mhat = m.v[i] / bc1;
        const double vhat = v.v[i] / bc2;
        p.v[i] -= lr_ * (mhat / (std::sqrt(vhat) + eps_) + weight_decay_ * p.v[i]);
      }
    }
  }

 private:
  double lr_, beta1_, beta2_, eps_, weight_decay_;
  ParameterSet m_, v_;
  long t_ = 0;
};

inline std::unique_ptr<OuterOptimizer> make_optimizer(const std::string& kind, double lr,
                                                      double weight_decay = 0.0) {
  if (kind == "sgd") return std::make_unique<SgdOptimizer>(lr);
  if (kind == "adamw") return std::make_unique<AdamWOptimizer>(lr, 0.9, 0.999, 1e-8, weight_decay);
  throw ConfigError("unknown optimizer: " + kind);
}

}  // namespace xlgen
