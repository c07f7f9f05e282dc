#pragma once

#include <memory>
#include <vector>

#include "xlgen/corpus.hpp"
#include "xlgen/model_forward.hpp"

namespace xlgen {

/// A differentiable scalar objective over a ParameterSet. The meta-learning
/// engine only sees this interface, which is what lets closed-form test
/// objectives stand in for the transformer.
struct Objective {
  virtual ~Objective() = default;

  virtual double value(const ParameterSet& p) const = 0;

  /// Returns the loss and fills `grad` (same shapes as p).
  virtual double value_and_grad(const ParameterSet& p, ParameterSet& grad) const = 0;

  /// Returns the loss and fills both the gradient and hvp = H(p) * dir.
  virtual double value_grad_hvp(const ParameterSet& p, const ParameterSet& dir,
                                ParameterSet& grad, ParameterSet& hvp) const = 0;
};

/// Mean label-smoothed cross entropy of the transformer over a fixed batch.
class SeqBatchObjective : public Objective {
 public:
  SeqBatchObjective(const ModelConfig& cfg, std::vector<TokenPair> batch, double smoothing)
      : cfg_(cfg), batch_(std::move(batch)), smoothing_(smoothing) {
    if (smoothing_ < 0.0 || smoothing_ >= 1.0) throw ConfigError("smoothing must be in [0,1)");
  }

  static SeqBatchObjective from_examples(const ModelConfig& cfg, const Tokenizer& tok,
                                         const std::vector<Example>& examples, double smoothing,
                                         int max_src_len = 512) {
    std::vector<TokenPair> batch;
    for (const auto& ex : examples) {
      auto [input, target] = tag_example(ex, tok, max_src_len);
      batch.push_back({std::move(input.tokens), std::move(target)});
    }
    return SeqBatchObjective(cfg, std::move(batch), smoothing);
  }

  double value(const ParameterSet& p) const override {
    Graph<double> g;
    auto staged = stage_params(g, p);
    auto loss = build_batch_loss(g, cfg_, staged, batch_, smoothing_);
    return g.val(loss).v[0];
  }

  double value_and_grad(const ParameterSet& p, ParameterSet& grad) const override {
    Graph<double> g;
    auto staged = stage_params(g, p);
    auto loss = build_batch_loss(g, cfg_, staged, batch_, smoothing_);
    g.backward(loss);
    grad = zeros_like(p);
    for (const auto& [name, id] : staged.ids) {
      const auto& gt = g.grad(id);
      if (!gt.empty()) grad.tensors[name] = gt;
    }
    return g.val(loss).v[0];
  }

  double value_grad_hvp(const ParameterSet& p, const ParameterSet& dir, ParameterSet& grad,
                        ParameterSet& hvp) const override {
    Graph<Dual> g;
    auto staged = stage_params_dual(g, p, dir);
    auto loss = build_batch_loss(g, cfg_, staged, batch_, smoothing_);
    g.backward(loss);
    grad = zeros_like(p);
    hvp = zeros_like(p);
    for (const auto& [name, id] : staged.ids) {
      const auto& gt = g.grad(id);
      if (gt.empty()) continue;
      Tensor& gv = grad.tensors[name];
      Tensor& hv = hvp.tensors[name];
      for (std::size_t i = 0; i < gt.size(); ++i) {
        gv.v[i] = gt.v[i].a;
        hv.v[i] = gt.v[i].b;
      }
    }
    return g.val(loss).v[0].a;
  }

  std::size_t batch_size() const { return batch_.size(); }

 private:
  ModelConfig cfg_;
  std::vector<TokenPair> batch_;
  double smoothing_;
};

/// Mean label-smoothed cross entropy for one example.
inline double loss(const Model& model, const TaggedSequence& input,
                   const std::vector<int>& target, double smoothing) {
  if (target.empty()) throw DataError("loss: empty target");
  SeqBatchObjective obj(model.config, {TokenPair{input.tokens, target}}, smoothing);
  return obj.value(model.params);
}

}  // namespace xlgen
