#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <map>
#include <memory>
#include <string>
#include <vector>

#include "xlgen/corpus.hpp"
#include "xlgen/errors.hpp"
#include "xlgen/objective.hpp"
#include "xlgen/optim.hpp"
#include "xlgen/params.hpp"
#include "xlgen/rng.hpp"
#include "xlgen/threading.hpp"

namespace xlgen {

struct MetaConfig {
  double alpha = 1e-4;  // inner-loop SGD learning rate
  double beta = 1e-5;   // outer-loop learning rate
  int m = 2;            // inner steps
  int batch_size = 8;
  int tasks_per_meta_batch = 4;
  double support_fraction = 0.5;
  int epochs = 10;
  std::string order = "second";          // second | first
  std::string outer_optimizer = "adamw";  // adamw | sgd
  double smoothing = 0.1;
  bool strict_serial = false;  // serialize per-task work regardless of threads
  int threads = 1;

  bool second_order() const { return order == "second"; }

  void validate() const {
    if (alpha <= 0.0 || beta <= 0.0) throw ConfigError("meta config: alpha and beta must be > 0");
    if (m < 1) throw ConfigError("meta config: m must be >= 1");
    if (batch_size < 2) throw ConfigError("meta config: batch_size must be >= 2");
    if (tasks_per_meta_batch < 1) throw ConfigError("meta config: tasks_per_meta_batch >= 1");
    if (!(support_fraction > 0.0 && support_fraction < 1.0)) {
      throw ConfigError("meta config: support_fraction in (0,1)");
    }
    if (epochs < 0) throw ConfigError("meta config: epochs must be >= 0");
    if (order != "second" && order != "first") throw ConfigError("meta config: bad order");
    if (outer_optimizer != "adamw" && outer_optimizer != "sgd") {
      throw ConfigError("meta config: bad outer optimizer");
    }
  }
};

/// Task-adapted parameters produced by the inner loop. The originating
/// iterates are kept when the outer gradient must flow through the
/// adaptation.
struct AdaptedParams {
  ParameterSet tensors;
  std::uint64_t lineage = 0;  // hash of the originating parameters
  int steps_taken = 0;
  std::vector<ParameterSet> iterates;  // theta_0 .. theta_{m-1} when tracked
};

/// m plain-SGD steps on the support objective, computed functionally: theta
/// itself is never mutated. Frozen parameters are carried through unchanged.
inline AdaptedParams inner_adapt(const ParameterSet& theta, const Objective& support,
                                 double alpha, int m, const FreezeMask& mask,
                                 bool track_higher_order) {
  if (m < 1) throw ConfigError("inner_adapt: m must be >= 1");
  AdaptedParams out;
  out.lineage = params_hash(theta);
  ParameterSet cur = theta;
  ParameterSet grad;
  for (int step = 0; step < m; ++step) {
    if (track_higher_order) out.iterates.push_back(cur);
    const double l = support.value_and_grad(cur, grad);
    if (!std::isfinite(l)) {
      throw DivergenceError("inner_adapt: non-finite loss at step " + std::to_string(step));
    }
    mask.zero_frozen(grad);
    axpy(-alpha, grad, cur);
  }
  out.tensors = std::move(cur);
  out.steps_taken = m;
  return out;
}

/// Meta-gradient of the query loss with respect to the original theta.
///
/// Second order backpropagates through the inner SGD trajectory: with
/// update theta_{j+1} = theta_j - alpha * M * g(theta_j) (M the unfrozen
/// mask), the transposed Jacobian applied to a vector v is
/// v - alpha * H(theta_j) * (M v), evaluated by one Hessian-vector product
/// per inner step. First order treats the adapted parameters as constants.
inline std::pair<ParameterSet, double> meta_task_gradient(const ParameterSet& theta,
                                                          const Objective& support,
                                                          const Objective& query, double alpha,
                                                          int m, bool second_order,
                                                          const FreezeMask& mask) {
  AdaptedParams adapted = inner_adapt(theta, support, alpha, m, mask, second_order);
  ParameterSet v;
  const double qloss = query.value_and_grad(adapted.tensors, v);
  if (!std::isfinite(qloss)) throw DivergenceError("meta gradient: non-finite query loss");
  if (second_order) {
    ParameterSet grad, hvp;
    for (int j = m - 1; j >= 0; --j) {
      ParameterSet masked_v = v;
      mask.zero_frozen(masked_v);
      support.value_grad_hvp(adapted.iterates[j], masked_v, grad, hvp);
      axpy(-alpha, hvp, v);
    }
  }
  return {std::move(v), qloss};
}

struct MetaTask {
  const Objective* support = nullptr;
  const Objective* query = nullptr;
};

/// One MetaUpdate over a batch of tasks: per-task meta-gradients (mean over
/// tasks), one outer-optimizer step on the unfrozen parameters. Returns the
/// pre-update mean query loss.
inline double meta_step(ParameterSet& theta, const std::vector<MetaTask>& tasks,
                        const MetaConfig& cfg, const FreezeMask& mask, OuterOptimizer& opt) {
  cfg.validate();
  if (tasks.empty()) throw DataError("meta_step: empty task list");
  const int n = static_cast<int>(tasks.size());
  std::vector<ParameterSet> grads(n);
  std::vector<double> losses(n);
  std::vector<std::string> errors(n);
  const int threads = cfg.strict_serial ? 1 : cfg.threads;
  parallel_for(n, threads, [&](int i) {
    try {
      auto [g, l] = meta_task_gradient(theta, *tasks[i].support, *tasks[i].query, cfg.alpha,
                                       cfg.m, cfg.second_order(), mask);
      grads[i] = std::move(g);
      losses[i] = l;
    } catch (const std::exception& e) {
      errors[i] = e.what();
    }
  });
  for (const auto& e : errors) {
    if (!e.empty()) throw DivergenceError(e);
  }
  ParameterSet mean_grad = zeros_like(theta);
  double mean_loss = 0.0;
  for (int i = 0; i < n; ++i) {
    axpy(1.0 / n, grads[i], mean_grad);
    mean_loss += losses[i] / n;
  }
  mask.zero_frozen(mean_grad);
  opt.step(theta, mean_grad, mask);
  return mean_loss;
}

struct MetaStepInfo {
  int step = 0;
  int epoch = 0;
  std::map<std::string, int> lang_counts;
  double meta_loss = 0.0;
};

struct MetaCallbacks {
  std::function<void(const MetaStepInfo&)> on_step;
  std::function<void(const Model&, int step)> on_checkpoint;
  int checkpoint_every = 0;
};

/// Full meta-training loop: each iteration samples tasks_per_meta_batch task
/// batches uniformly across the meta-training languages and applies one
/// MetaUpdate. An epoch is one nominal pass over the pooled examples.
inline Model meta_train(const Model& model, const std::map<std::string, Dataset>& meta_sets,
                        const MetaConfig& cfg, const FreezeMask& mask, Rng& rng,
                        const MetaCallbacks& callbacks = {}, int max_src_len = 512) {
  cfg.validate();
  mask.validate(model.params);
  if (meta_sets.empty()) throw DataError("meta_train: no meta-training sets");
  Model out = model;
  std::size_t total_examples = 0;
  for (const auto& [lang, ds] : meta_sets) {
    if (static_cast<int>(ds.examples.size()) < cfg.batch_size) {
      throw DataError("meta_train: dataset for " + lang + " smaller than batch size");
    }
    total_examples += ds.examples.size();
  }
  const int per_step = cfg.tasks_per_meta_batch * cfg.batch_size;
  const int steps_per_epoch =
      std::max<int>(1, static_cast<int>(total_examples / static_cast<std::size_t>(per_step)));
  auto opt = make_optimizer(cfg.outer_optimizer, cfg.beta);
  int step = 0;
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    for (int s = 0; s < steps_per_epoch; ++s) {
      std::vector<SeqBatchObjective> objectives;
      objectives.reserve(2 * cfg.tasks_per_meta_batch);
      std::vector<MetaTask> tasks;
      MetaStepInfo info;
      info.step = step;
      info.epoch = epoch;
      for (int t = 0; t < cfg.tasks_per_meta_batch; ++t) {
        TaskBatch tb = sample_task_batch(meta_sets, cfg.batch_size, cfg.support_fraction, rng);
        info.lang_counts[tb.lang] += 1;
        objectives.push_back(SeqBatchObjective::from_examples(out.config, out.tokenizer,
                                                              tb.support, cfg.smoothing,
                                                              max_src_len));
        objectives.push_back(SeqBatchObjective::from_examples(out.config, out.tokenizer, tb.query,
                                                              cfg.smoothing, max_src_len));
      }
      for (int t = 0; t < cfg.tasks_per_meta_batch; ++t) {
        tasks.push_back({&objectives[2 * t], &objectives[2 * t + 1]});
      }
      info.meta_loss = meta_step(out.params, tasks, cfg, mask, *opt);
      ++step;
      if (callbacks.on_step) callbacks.on_step(info);
      if (callbacks.on_checkpoint && callbacks.checkpoint_every > 0 &&
          step % callbacks.checkpoint_every == 0) {
        callbacks.on_checkpoint(out, step);
      }
    }
  }
  return out;
}

/// Plain supervised fine-tuning on a support set (the optional few-shot
/// extension of the zero-shot setting).
inline Model few_shot_adapt(const Model& model, const std::vector<Example>& support, int steps,
                            double lr, const FreezeMask& mask = {}, double smoothing = 0.1,
                            int max_src_len = 512) {
  if (support.empty()) throw DataError("few_shot_adapt: empty support set");
  Model out = model;
  auto obj = SeqBatchObjective::from_examples(out.config, out.tokenizer, support, smoothing,
                                              max_src_len);
  ParameterSet grad;
  for (int s = 0; s < steps; ++s) {
    const double l = obj.value_and_grad(out.params, grad);
    if (!std::isfinite(l)) {
      throw DivergenceError("few_shot_adapt: non-finite loss at step " + std::to_string(s));
    }
    mask.zero_frozen(grad);
    axpy(-lr, grad, out.params);
  }
  return out;
}

}  // namespace xlgen
