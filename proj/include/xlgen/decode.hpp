#pragma once

#include <algorithm>
#include <cmath>
#include <vector>

#include "xlgen/corpus.hpp"
#include "xlgen/model.hpp"
#include "xlgen/params.hpp"

namespace xlgen {
namespace plain {

// Inference-only forward path in plain double arithmetic with incremental
// key/value caching. Consistency with the differentiable graph path is
// pinned by tests.

inline void rmsnorm_rows(const Tensor& x, const Tensor& gain, Tensor& out, double eps = 1e-6) {
  const int d = x.cols;
  out = Tensor(x.rows, d);
  for (int r = 0; r < x.rows; ++r) {
    const double* xr = x.row(r);
    double ms = 0.0;
    for (int c = 0; c < d; ++c) ms += xr[c] * xr[c];
    const double inv = 1.0 / std::sqrt(ms / d + eps);
    double* o = out.row(r);
    for (int c = 0; c < d; ++c) o[c] = xr[c] * inv * gain.v[c];
  }
}

inline void softmax_row_inplace(double* x, int n) {
  double mx = x[0];
  for (int i = 1; i < n; ++i) mx = std::max(mx, x[i]);
  double denom = 0.0;
  for (int i = 0; i < n; ++i) {
    x[i] = std::exp(x[i] - mx);
    denom += x[i];
  }
  for (int i = 0; i < n; ++i) x[i] /= denom;
}

inline double gelu(double x) {
  const double u = 0.7978845608028654 * (x + 0.044715 * x * x * x);
  return 0.5 * x * (1.0 + std::tanh(u));
}

inline void append_row(Tensor& t, const double* row, int d) {
  if (t.cols == 0) t.cols = d;
  t.v.insert(t.v.end(), row, row + d);
  t.rows += 1;
}

/// Multi-head attention of query rows against fixed keys/values.
inline Tensor attend(const Tensor& q, const Tensor& k, const Tensor& v, int n_heads) {
  const int dh = q.cols / n_heads;
  Tensor out(q.rows, q.cols);
  std::vector<double> scores(k.rows);
  const double scale = 1.0 / std::sqrt(double(dh));
  for (int h = 0; h < n_heads; ++h) {
    const int off = h * dh;
    for (int i = 0; i < q.rows; ++i) {
      const double* qi = q.row(i) + off;
      for (int j = 0; j < k.rows; ++j) {
        const double* kj = k.row(j) + off;
        double acc = 0.0;
        for (int c = 0; c < dh; ++c) acc += qi[c] * kj[c];
        scores[j] = acc * scale;
      }
      softmax_row_inplace(scores.data(), k.rows);
      double* oi = out.row(i) + off;
      for (int j = 0; j < k.rows; ++j) {
        const double* vj = v.row(j) + off;
        for (int c = 0; c < dh; ++c) oi[c] += scores[j] * vj[c];
      }
    }
  }
  return out;
}

}  // namespace plain

/// Encoder forward (plain double); returns the T x d memory.
inline Tensor encode_source(const ModelConfig& cfg, const ParameterSet& params,
                            const std::vector<int>& tokens) {
  const int n = static_cast<int>(tokens.size());
  if (n > cfg.max_positions) throw DataError("sequence longer than max_positions");
  const Tensor positions = sinusoidal_positions(cfg.max_positions, cfg.d_model);
  const Tensor& emb = params.at("token_embeddings");
  Tensor x(n, cfg.d_model);
  for (int r = 0; r < n; ++r) {
    const double* e = emb.row(tokens[r]);
    const double* p = positions.row(r);
    for (int c = 0; c < cfg.d_model; ++c) x.at(r, c) = e[c] + p[c];
  }
  Tensor tmp;
  if (cfg.extra_embed_norm) {
    plain::rmsnorm_rows(x, params.at("encoder.embed_norm.gain"), tmp);
    x = tmp;
  }
  for (int i = 0; i < cfg.n_layers; ++i) {
    const std::string prefix = names::enc_layer(i);
    plain::rmsnorm_rows(x, params.at(prefix + "attn_norm.gain"), tmp);
    Tensor q = matmul(tmp, params.at(prefix + "attn.wq"));
    Tensor k = matmul(tmp, params.at(prefix + "attn.wk"));
    Tensor v = matmul(tmp, params.at(prefix + "attn.wv"));
    Tensor ctx = plain::attend(q, k, v, cfg.n_heads);
    Tensor attn_out = matmul(ctx, params.at(prefix + "attn.wo"));
    for (std::size_t j = 0; j < x.size(); ++j) x.v[j] += attn_out.v[j];
    plain::rmsnorm_rows(x, params.at(prefix + "ffn_norm.gain"), tmp);
    Tensor h = matmul(tmp, params.at(prefix + "ffn.w1"));
    for (auto& val : h.v) val = plain::gelu(val);
    Tensor ffn_out = matmul(h, params.at(prefix + "ffn.w2"));
    for (std::size_t j = 0; j < x.size(); ++j) x.v[j] += ffn_out.v[j];
  }
  plain::rmsnorm_rows(x, params.at("encoder.final_norm.gain"), tmp);
  return tmp;
}

/// Incremental decoder state: cached self-attention keys/values per layer
/// plus the projected encoder memory for cross-attention.
struct DecoderCache {
  struct Layer {
    Tensor self_k, self_v;
    Tensor cross_k, cross_v;
  };
  std::vector<Layer> layers;
  int len = 0;
};

inline DecoderCache make_decoder_cache(const ModelConfig& cfg, const ParameterSet& params,
                                       const Tensor& memory) {
  DecoderCache cache;
  cache.layers.resize(cfg.n_layers);
  for (int i = 0; i < cfg.n_layers; ++i) {
    const std::string prefix = names::dec_layer(i);
    cache.layers[i].cross_k = matmul(memory, params.at(prefix + "cross_attn.wk"));
    cache.layers[i].cross_v = matmul(memory, params.at(prefix + "cross_attn.wv"));
  }
  return cache;
}

/// Feeds one decoder token, advances the cache, returns next-token logits.
inline std::vector<double> decode_step(const ModelConfig& cfg, const ParameterSet& params,
                                       DecoderCache& cache, int token) {
  if (cache.len >= cfg.max_positions) throw DataError("decoder exceeded max_positions");
  const int d = cfg.d_model;
  static thread_local Tensor positions;
  if (positions.rows < cfg.max_positions || positions.cols != d) {
    positions = sinusoidal_positions(cfg.max_positions, d);
  }
  Tensor x(1, d);
  {
    const double* e = params.at("token_embeddings").row(token);
    const double* p = positions.row(cache.len);
    for (int c = 0; c < d; ++c) x.v[c] = e[c] + p[c];
  }
  Tensor tmp;
  if (cfg.extra_embed_norm) {
    plain::rmsnorm_rows(x, params.at("decoder.embed_norm.gain"), tmp);
    x = tmp;
  }
  for (int i = 0; i < cfg.n_layers; ++i) {
    const std::string prefix = names::dec_layer(i);
    auto& layer = cache.layers[i];
    plain::rmsnorm_rows(x, params.at(prefix + "self_attn_norm.gain"), tmp);
    Tensor q = matmul(tmp, params.at(prefix + "self_attn.wq"));
    Tensor k = matmul(tmp, params.at(prefix + "self_attn.wk"));
    Tensor v = matmul(tmp, params.at(prefix + "self_attn.wv"));
    plain::append_row(layer.self_k, k.v.data(), d);
    plain::append_row(layer.self_v, v.v.data(), d);
    Tensor ctx = plain::attend(q, layer.self_k, layer.self_v, cfg.n_heads);
    Tensor attn_out = matmul(ctx, params.at(prefix + "self_attn.wo"));
    for (int c = 0; c < d; ++c) x.v[c] += attn_out.v[c];

    plain::rmsnorm_rows(x, params.at(prefix + "cross_attn_norm.gain"), tmp);
    Tensor qc = matmul(tmp, params.at(prefix + "cross_attn.wq"));
    Tensor cctx = plain::attend(qc, layer.cross_k, layer.cross_v, cfg.n_heads);
    Tensor cross_out = matmul(cctx, params.at(prefix + "cross_attn.wo"));
    for (int c = 0; c < d; ++c) x.v[c] += cross_out.v[c];

    plain::rmsnorm_rows(x, params.at(prefix + "ffn_norm.gain"), tmp);
    Tensor h = matmul(tmp, params.at(prefix + "ffn.w1"));
    for (auto& val : h.v) val = plain::gelu(val);
    Tensor ffn_out = matmul(h, params.at(prefix + "ffn.w2"));
    for (int c = 0; c < d; ++c) x.v[c] += ffn_out.v[c];
  }
  plain::rmsnorm_rows(x, params.at("decoder.final_norm.gain"), tmp);
  Tensor logits = matmul_nt(tmp, params.at("token_embeddings"));
  cache.len += 1;
  return logits.v;
}

namespace detail {

inline std::vector<double> log_softmax(std::vector<double> logits) {
  double mx = logits[0];
  for (double x : logits) mx = std::max(mx, x);
  double denom = 0.0;
  for (double x : logits) denom += std::exp(x - mx);
  const double lse = mx + std::log(denom);
  for (auto& x : logits) x -= lse;
  return logits;
}

}  // namespace detail

/// Beam search over the incremental decoder. Pure summed log-probability
/// scoring, EOS suppressed before min_len, output capped at max_len tokens.
inline std::vector<int> generate(const Model& model, const TaggedSequence& input,
                                 const DecodeConfig& cfg) {
  cfg.validate();
  const Tensor memory = encode_source(model.config, model.params, input.tokens);

  struct Beam {
    std::vector<int> out;
    double logp = 0.0;
    int last = Tokenizer::kPad;
    DecoderCache cache;
  };
  struct Finished {
    std::vector<int> out;
    double logp = -std::numeric_limits<double>::infinity();
  };

  std::vector<Beam> beams(1);
  beams[0].cache = make_decoder_cache(model.config, model.params, memory);
  Finished best;
  const int max_len = std::min(cfg.max_len, model.config.max_positions - 1);

  for (int step = 0; step < max_len + 1; ++step) {
    struct Cand {
      int parent;
      int token;
      double logp;
    };
    std::vector<Cand> cands;
    for (int b = 0; b < static_cast<int>(beams.size()); ++b) {
      auto& beam = beams[b];
      auto lp = detail::log_softmax(decode_step(model.config, model.params, beam.cache, beam.last));
      lp[Tokenizer::kPad] = -std::numeric_limits<double>::infinity();
      if (static_cast<int>(beam.out.size()) < cfg.min_len) {
        lp[Tokenizer::kEos] = -std::numeric_limits<double>::infinity();
      }
      for (int t = 0; t < static_cast<int>(lp.size()); ++t) {
        if (std::isfinite(lp[t])) cands.push_back({b, t, beam.logp + lp[t]});
      }
    }
    std::sort(cands.begin(), cands.end(), [](const Cand& a, const Cand& b) {
      if (a.logp != b.logp) return a.logp > b.logp;
      if (a.token != b.token) return a.token < b.token;
      return a.parent < b.parent;
    });
    std::vector<Beam> next;
    for (const auto& c : cands) {
      if (c.token == Tokenizer::kEos) {
        if (c.logp > best.logp) best = {beams[c.parent].out, c.logp};
        continue;
      }
      if (static_cast<int>(next.size()) < cfg.beam_size) {
        Beam nb;
        nb.out = beams[c.parent].out;
        nb.out.push_back(c.token);
        nb.logp = c.logp;
        nb.last = c.token;
        nb.cache = beams[c.parent].cache;
        next.push_back(std::move(nb));
      }
      if (static_cast<int>(next.size()) == cfg.beam_size) break;
    }
    beams = std::move(next);
    if (beams.empty()) break;
    if (static_cast<int>(beams[0].out.size()) >= max_len) break;
    // log-probabilities only decrease; nothing can overtake a finished beam
    if (best.logp >= beams[0].logp) break;
  }
  if (std::isfinite(best.logp)) {
    double best_open = beams.empty() ? -std::numeric_limits<double>::infinity() : beams[0].logp;
    if (best.logp >= best_open) return best.out;
  }
  if (!beams.empty()) return beams[0].out;
  return best.out;
}

/// Mean encoder representation of the two language-tag positions, averaged
/// over probe inputs.
inline std::vector<double> language_tag_representation(const Model& model, const std::string& lang,
                                                       const std::vector<TaggedSequence>& probes) {
  if (probes.empty()) throw DataError("language_tag_representation: empty probe set");
  const int d = model.config.d_model;
  std::vector<double> rep(d, 0.0);
  for (const auto& probe : probes) {
    if (probe.lang != lang) {
      throw DataError("language_tag_representation: probe language mismatch");
    }
    const Tensor h = encode_source(model.config, model.params, probe.tokens);
    if (h.rows < 2) throw DataError("language_tag_representation: probe too short");
    for (int c = 0; c < d; ++c) rep[c] += 0.5 * (h.at(0, c) + h.at(1, c));
  }
  for (auto& x : rep) x /= double(probes.size());
  return rep;
}

}  // namespace xlgen
