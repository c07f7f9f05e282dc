#pragma once

#include <cmath>
#include <functional>

#include "xlgen/metalearn.hpp"
#include "xlgen/objective.hpp"
#include "xlgen/optim.hpp"

namespace xlgen {

struct TrainConfig {
  int steps = 0;
  double lr = 1e-3;
  int batch_size = 8;
  double smoothing = 0.1;
  double weight_decay = 0.0;
  std::string optimizer = "adamw";

  void validate() const {
    if (steps < 0) throw ConfigError("train config: steps must be >= 0");
    if (lr < 0.0) throw ConfigError("train config: lr must be >= 0");
    if (batch_size < 1) throw ConfigError("train config: batch_size must be >= 1");
  }
};

struct TrainStepInfo {
  int step = 0;
  double loss = 0.0;
};

using BatchProvider = std::function<std::vector<TokenPair>(Rng&)>;

/// Standard supervised loop over a batch stream. Frozen tensors are never
/// touched; a non-finite loss aborts with a divergence error.
inline void supervised_train(Model& model, const BatchProvider& next_batch,
                             const TrainConfig& cfg, Rng& rng,
                             const std::function<void(const TrainStepInfo&)>& on_step = {}) {
  cfg.validate();
  model.freeze.validate(model.params);
  auto opt = make_optimizer(cfg.optimizer, cfg.lr, cfg.weight_decay);
  ParameterSet grad;
  for (int step = 0; step < cfg.steps; ++step) {
    SeqBatchObjective obj(model.config, next_batch(rng), cfg.smoothing);
    const double l = obj.value_and_grad(model.params, grad);
    if (!std::isfinite(l)) {
      throw DivergenceError("supervised_train: non-finite loss at step " + std::to_string(step));
    }
    model.freeze.zero_frozen(grad);
    opt->step(model.params, grad, model.freeze);
    if (on_step) on_step({step, l});
  }
}

/// Cycles through the dataset in shuffled epochs of tagged token pairs.
inline BatchProvider task_batch_provider(const std::vector<Example>& data, Tokenizer tok,
                                         int batch_size, int max_src_len = 512) {
  if (data.empty()) throw DataError("task_batch_provider: empty dataset");
  auto order = std::make_shared<std::vector<std::size_t>>();
  auto cursor = std::make_shared<std::size_t>(0);
  return [=](Rng& rng) {
    std::vector<TokenPair> batch;
    for (int i = 0; i < batch_size; ++i) {
      if (*cursor >= order->size()) {
        order->resize(data.size());
        std::iota(order->begin(), order->end(), std::size_t{0});
        rng.shuffle(*order);
        *cursor = 0;
      }
      const Example& ex = data[(*order)[(*cursor)++]];
      auto [input, target] = tag_example(ex, tok, max_src_len);
      batch.push_back({std::move(input.tokens), std::move(target)});
    }
    return batch;
  };
}

/// Denoising batches: fresh span corruption every time an example is drawn.
inline BatchProvider denoising_batch_provider(const std::vector<Example>& data,
                                              Tokenizer tok, int batch_size,
                                              double corruption_rate, double mean_span,
                                              int max_src_len = 512) {
  if (data.empty()) throw DataError("denoising_batch_provider: empty dataset");
  auto order = std::make_shared<std::vector<std::size_t>>();
  auto cursor = std::make_shared<std::size_t>(0);
  return [=](Rng& rng) {
    std::vector<TokenPair> batch;
    for (int i = 0; i < batch_size; ++i) {
      if (*cursor >= order->size()) {
        order->resize(data.size());
        std::iota(order->begin(), order->end(), std::size_t{0});
        rng.shuffle(*order);
        *cursor = 0;
      }
      const Example& ex = data[(*order)[(*cursor)++]];
      std::vector<int> tokens = tok.encode(ex.source);
      if (static_cast<int>(tokens.size()) > max_src_len) tokens.resize(max_src_len);
      auto [corrupted, spans] = span_corrupt(tok, tokens, corruption_rate, mean_span, rng);
      TokenPair pair;
      pair.input.push_back(tok.source_tag_id(ex.lang));
      pair.input.push_back(tok.target_tag_id(ex.lang));
      pair.input.insert(pair.input.end(), corrupted.begin(), corrupted.end());
      pair.target = std::move(spans);
      pair.target.push_back(Tokenizer::kEos);
      batch.push_back(std::move(pair));
    }
    return batch;
  };
}

}  // namespace xlgen
