#pragma once

#include <map>
#include <string>
#include <vector>

#include "xlgen/autodiff.hpp"
#include "xlgen/model.hpp"
#include "xlgen/params.hpp"
#include "xlgen/rng.hpp"

namespace xlgen {

/// Graph-side handle to a staged ParameterSet: one graph node per tensor.
template <typename S>
struct StagedParams {
  std::map<std::string, typename Graph<S>::Id> ids;

  typename Graph<S>::Id at(const std::string& name) const { return ids.at(name); }
};

template <typename S>
StagedParams<S> stage_params(Graph<S>& g, const ParameterSet& params) {
  StagedParams<S> staged;
  for (const auto& [name, t] : params.tensors) {
    staged.ids.emplace(name, g.input(tensor_cast<S>(t), true));
  }
  return staged;
}

/// Stages value + tangent pairs for Hessian-vector products.
inline StagedParams<Dual> stage_params_dual(Graph<Dual>& g, const ParameterSet& params,
                                            const ParameterSet& tangent) {
  StagedParams<Dual> staged;
  for (const auto& [name, t] : params.tensors) {
    const Tensor& dt = tangent.at(name);
    TensorT<Dual> dual(t.rows, t.cols);
    for (std::size_t i = 0; i < t.size(); ++i) dual.v[i] = Dual(t.v[i], dt.v[i]);
    staged.ids.emplace(name, g.input(std::move(dual), true));
  }
  return staged;
}

namespace detail {

inline Tensor causal_mask(int n) {
  Tensor m(n, n);
  for (int i = 0; i < n; ++i) {
    for (int j = i + 1; j < n; ++j) m.at(i, j) = -1e9;
  }
  return m;
}

inline Tensor dropout_mask(int rows, int cols, double rate, Rng& rng) {
  Tensor m(rows, cols);
  const double keep = 1.0 - rate;
  for (auto& x : m.v) x = rng.uniform() < keep ? 1.0 / keep : 0.0;
  return m;
}

template <typename S>
class ForwardBuilder {
 public:
  using Id = typename Graph<S>::Id;

  ForwardBuilder(Graph<S>& g, const ModelConfig& cfg, const StagedParams<S>& p,
                 Rng* dropout_rng = nullptr)
      : g_(g), cfg_(cfg), p_(p), dropout_rng_(dropout_rng),
        positions_(sinusoidal_positions(cfg.max_positions, cfg.d_model)) {}

  /// Encoder stack over one sequence; returns the T x d memory.
  Id encode(const std::vector<int>& tokens) {
    Id x = embed(tokens, "encoder.embed_norm.gain");
    for (int i = 0; i < cfg_.n_layers; ++i) {
      const std::string prefix = names::enc_layer(i);
      x = attention_block(x, x, prefix + "attn", prefix + "attn_norm.gain", nullptr);
      x = ffn_block(x, prefix);
    }
    return g_.rmsnorm(x, p_.at("encoder.final_norm.gain"));
  }

  /// Teacher-forced decoder; returns T x vocab logits (tied embeddings).
  Id decode(const std::vector<int>& decoder_input, Id memory) {
    const Tensor mask = causal_mask(static_cast<int>(decoder_input.size()));
    Id x = embed(decoder_input, "decoder.embed_norm.gain");
    for (int i = 0; i < cfg_.n_layers; ++i) {
      const std::string prefix = names::dec_layer(i);
      x = attention_block(x, x, prefix + "self_attn", prefix + "self_attn_norm.gain", &mask);
      x = attention_block(x, memory, prefix + "cross_attn", prefix + "cross_attn_norm.gain",
                          nullptr);
      x = ffn_block(x, prefix);
    }
    x = g_.rmsnorm(x, p_.at("decoder.final_norm.gain"));
    return g_.matmul_nt(x, p_.at("token_embeddings"));
  }

 private:
  Graph<S>& g_;
  const ModelConfig& cfg_;
  const StagedParams<S>& p_;
  Rng* dropout_rng_;
  Tensor positions_;

  Id embed(const std::vector<int>& tokens, const std::string& norm_name) {
    const int n = static_cast<int>(tokens.size());
    if (n > cfg_.max_positions) throw DataError("sequence longer than max_positions");
    Id x = g_.gather_rows(p_.at("token_embeddings"), tokens);
    Tensor pos(n, cfg_.d_model);
    for (int r = 0; r < n; ++r) {
      std::copy(positions_.row(r), positions_.row(r) + cfg_.d_model, pos.row(r));
    }
    x = g_.add_const(x, pos);
    if (cfg_.extra_embed_norm) x = g_.rmsnorm(x, p_.at(norm_name));
    return x;
  }

  Id maybe_dropout(Id x) {
    if (dropout_rng_ == nullptr || cfg_.dropout <= 0.0) return x;
    const auto& shape = g_.val(x);
    return g_.mul_const(x, dropout_mask(shape.rows, shape.cols, cfg_.dropout, *dropout_rng_));
  }

  /// Pre-norm multi-head attention with residual. `mask` is an additive
  /// causal mask for decoder self-attention.
  Id attention_block(Id x, Id kv_source, const std::string& w_prefix,
                     const std::string& norm_name, const Tensor* mask) {
    const int dh = cfg_.head_dim();
    Id xn = g_.rmsnorm(x, p_.at(norm_name));
    Id kvn = kv_source == x ? xn : kv_source;  // memory is already normalized
    Id q = g_.matmul(xn, p_.at(w_prefix + ".wq"));
    Id k = g_.matmul(kvn, p_.at(w_prefix + ".wk"));
    Id v = g_.matmul(kvn, p_.at(w_prefix + ".wv"));
    std::vector<Id> heads;
    for (int h = 0; h < cfg_.n_heads; ++h) {
      Id qh = g_.slice_cols(q, h * dh, dh);
      Id kh = g_.slice_cols(k, h * dh, dh);
      Id vh = g_.slice_cols(v, h * dh, dh);
      Id scores = g_.scale(g_.matmul_nt(qh, kh), 1.0 / std::sqrt(double(dh)));
      if (mask != nullptr) scores = g_.add_const(scores, *mask);
      heads.push_back(g_.matmul(g_.softmax_rows(scores), vh));
    }
    Id out = g_.matmul(g_.concat_cols(heads), p_.at(w_prefix + ".wo"));
    return g_.add(x, maybe_dropout(out));
  }

  Id ffn_block(Id x, const std::string& prefix) {
    Id xn = g_.rmsnorm(x, p_.at(prefix + "ffn_norm.gain"));
    Id h = g_.gelu(g_.matmul(xn, p_.at(prefix + "ffn.w1")));
    Id out = g_.matmul(h, p_.at(prefix + "ffn.w2"));
    return g_.add(x, maybe_dropout(out));
  }
};

}  // namespace detail

/// One training pair: tagged input tokens and target tokens ending in EOS.
struct TokenPair {
  std::vector<int> input;
  std::vector<int> target;
};

inline std::vector<int> decoder_input_for(const std::vector<int>& target) {
  std::vector<int> in;
  in.reserve(target.size());
  in.push_back(Tokenizer::kPad);  // decoder start token
  in.insert(in.end(), target.begin(), target.end() - 1);
  return in;
}

/// Teacher-forced logits for one sequence pair, via the differentiable path.
inline Tensor forward_logits(const ModelConfig& cfg, const ParameterSet& params,
                             const std::vector<int>& input,
                             const std::vector<int>& decoder_input) {
  Graph<double> g;
  auto staged = stage_params(g, params);
  detail::ForwardBuilder<double> fb(g, cfg, staged);
  return g.val(fb.decode(decoder_input, fb.encode(input)));
}

/// Encoder output via the differentiable path.
inline Tensor forward_encode(const ModelConfig& cfg, const ParameterSet& params,
                             const std::vector<int>& tokens) {
  Graph<double> g;
  auto staged = stage_params(g, params);
  detail::ForwardBuilder<double> fb(g, cfg, staged);
  return g.val(fb.encode(tokens));
}

/// Builds the mean label-smoothed cross-entropy over a batch, one sub-graph
/// per example (no padding; the mean is over all target tokens in the batch).
template <typename S>
typename Graph<S>::Id build_batch_loss(Graph<S>& g, const ModelConfig& cfg,
                                       const StagedParams<S>& params,
                                       const std::vector<TokenPair>& batch, double smoothing,
                                       Rng* dropout_rng = nullptr) {
  if (batch.empty()) throw DataError("loss: empty batch");
  detail::ForwardBuilder<S> fb(g, cfg, params, dropout_rng);
  std::vector<typename Graph<S>::Id> losses;
  std::size_t total_tokens = 0;
  for (const auto& pair : batch) {
    if (pair.target.empty()) throw DataError("loss: empty target");
    auto memory = fb.encode(pair.input);
    auto logits = fb.decode(decoder_input_for(pair.target), memory);
    losses.push_back(g.ce_label_smooth(logits, pair.target, smoothing));
    total_tokens += pair.target.size();
  }
  return g.scale(g.sum_scalars(losses), 1.0 / double(total_tokens));
}

}  // namespace xlgen
