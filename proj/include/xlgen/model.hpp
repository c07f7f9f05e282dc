#pragma once

#include <cmath>
#include <string>
#include <vector>

#include <json.hpp>

#include "xlgen/errors.hpp"
#include "xlgen/params.hpp"
#include "xlgen/rng.hpp"
#include "xlgen/tokenizer.hpp"

namespace xlgen {

/// Encoder-decoder transformer dimensions. Pre-norm RMSNorm blocks, GELU
/// feed-forward, sinusoidal positions, tied input/output embeddings, no
/// biases.
struct ModelConfig {
  int vocab_size = 0;
  int d_model = 64;
  int n_layers = 2;  // encoder and decoder each
  int n_heads = 4;
  int d_ff = 128;
  int max_positions = 64;
  double dropout = 0.0;
  bool extra_embed_norm = false;  // extra normalization after the embedding

  int head_dim() const { return d_model / n_heads; }

  void validate() const {
    if (vocab_size <= 0 || d_model <= 0 || n_layers <= 0 || n_heads <= 0 || d_ff <= 0 ||
        max_positions <= 0) {
      throw ConfigError("model config: all dimensions must be positive");
    }
    if (d_model % n_heads != 0) {
      throw ConfigError("model config: d_model must be divisible by n_heads");
    }
    if (dropout < 0.0 || dropout >= 1.0) {
      throw ConfigError("model config: dropout must be in [0,1)");
    }
  }

  nlohmann::json to_json() const {
    return nlohmann::json{{"vocab_size", vocab_size}, {"d_model", d_model},
                          {"n_layers", n_layers},     {"n_heads", n_heads},
                          {"d_ff", d_ff},             {"max_positions", max_positions},
                          {"dropout", dropout},       {"extra_embed_norm", extra_embed_norm}};
  }

  static ModelConfig from_json(const nlohmann::json& j) {
    ModelConfig c;
    c.vocab_size = j.at("vocab_size").get<int>();
    c.d_model = j.at("d_model").get<int>();
    c.n_layers = j.at("n_layers").get<int>();
    c.n_heads = j.at("n_heads").get<int>();
    c.d_ff = j.at("d_ff").get<int>();
    c.max_positions = j.at("max_positions").get<int>();
    c.dropout = j.value("dropout", 0.0);
    c.extra_embed_norm = j.value("extra_embed_norm", false);
    return c;
  }
};

struct DecodeConfig {
  int beam_size = 4;
  int max_len = 100;
  int min_len = 1;

  void validate() const {
    if (beam_size < 1) throw ConfigError("decode config: beam_size must be >= 1");
    if (min_len < 1 || min_len > max_len) {
      throw ConfigError("decode config: need 1 <= min_len <= max_len");
    }
  }

  nlohmann::json to_json() const {
    return nlohmann::json{{"beam_size", beam_size}, {"max_len", max_len}, {"min_len", min_len}};
  }

  static DecodeConfig from_json(const nlohmann::json& j) {
    DecodeConfig c;
    c.beam_size = j.value("beam_size", 4);
    c.max_len = j.value("max_len", 100);
    c.min_len = j.value("min_len", 1);
    return c;
  }
};

struct Model {
  ModelConfig config;
  Tokenizer tokenizer;
  ParameterSet params;
  FreezeMask freeze;  // active mask honored by the training stages
};

/// Validates the mask against the model's parameters and installs it;
/// training entry points exclude the matched tensors from every update.
inline Model apply_freeze(Model model, FreezeMask mask) {
  mask.validate(model.params);
  model.freeze = std::move(mask);
  return model;
}

namespace names {

inline std::string enc_layer(int i) { return "encoder.layers." + std::to_string(i) + "."; }
inline std::string dec_layer(int i) { return "decoder.layers." + std::to_string(i) + "."; }

}  // namespace names

/// All parameter tensors with their shapes, in the canonical naming scheme.
inline std::vector<std::pair<std::string, std::pair<int, int>>> parameter_shapes(
    const ModelConfig& cfg) {
  std::vector<std::pair<std::string, std::pair<int, int>>> out;
  const int d = cfg.d_model;
  out.push_back({"token_embeddings", {cfg.vocab_size, d}});
  if (cfg.extra_embed_norm) {
    out.push_back({"encoder.embed_norm.gain", {1, d}});
    out.push_back({"decoder.embed_norm.gain", {1, d}});
  }
  for (int i = 0; i < cfg.n_layers; ++i) {
    const std::string p = names::enc_layer(i);
    out.push_back({p + "attn_norm.gain", {1, d}});
    for (const char* w : {"attn.wq", "attn.wk", "attn.wv", "attn.wo"}) {
      out.push_back({p + w, {d, d}});
    }
    out.push_back({p + "ffn_norm.gain", {1, d}});
    out.push_back({p + "ffn.w1", {d, cfg.d_ff}});
    out.push_back({p + "ffn.w2", {cfg.d_ff, d}});
  }
  out.push_back({"encoder.final_norm.gain", {1, d}});
  for (int i = 0; i < cfg.n_layers; ++i) {
    const std::string p = names::dec_layer(i);
    out.push_back({p + "self_attn_norm.gain", {1, d}});
    for (const char* w : {"self_attn.wq", "self_attn.wk", "self_attn.wv", "self_attn.wo"}) {
      out.push_back({p + w, {d, d}});
    }
    out.push_back({p + "cross_attn_norm.gain", {1, d}});
    for (const char* w : {"cross_attn.wq", "cross_attn.wk", "cross_attn.wv", "cross_attn.wo"}) {
      out.push_back({p + w, {d, d}});
    }
    out.push_back({p + "ffn_norm.gain", {1, d}});
    out.push_back({p + "ffn.w1", {d, cfg.d_ff}});
    out.push_back({p + "ffn.w2", {cfg.d_ff, d}});
  }
  out.push_back({"decoder.final_norm.gain", {1, d}});
  return out;
}

/// Closed-form parameter count for the architecture.
inline std::size_t expected_parameter_count(const ModelConfig& cfg) {
  const std::size_t d = cfg.d_model;
  const std::size_t ff = cfg.d_ff;
  const std::size_t enc_layer = d + 4 * d * d + d + 2 * d * ff;
  const std::size_t dec_layer = d + 4 * d * d + d + 4 * d * d + d + 2 * d * ff;
  std::size_t total = static_cast<std::size_t>(cfg.vocab_size) * d;
  total += cfg.n_layers * (enc_layer + dec_layer);
  total += 2 * d;  // final norms
  if (cfg.extra_embed_norm) total += 2 * d;
  return total;
}

/// Deterministic initialization: gains at one, embeddings and projections
/// Gaussian with 1/sqrt(fan_in) scale, filled in sorted name order.
inline Model init_model(const ModelConfig& cfg, const Tokenizer& tokenizer, std::uint64_t seed) {
  cfg.validate();
  if (cfg.vocab_size != tokenizer.vocab_size()) {
    throw ConfigError("model config vocab_size does not match tokenizer");
  }
  Model m;
  m.config = cfg;
  m.tokenizer = tokenizer;
  for (const auto& [name, shape] : parameter_shapes(cfg)) {
    m.params.tensors.emplace(name, Tensor(shape.first, shape.second));
  }
  Rng rng(seed);
  for (auto& [name, t] : m.params.tensors) {  // sorted by name
    if (name.find("norm.gain") != std::string::npos) {
      t.fill(1.0);
      continue;
    }
    const double scale =
        name == "token_embeddings" ? 1.0 / std::sqrt(double(cfg.d_model)) : 1.0 / std::sqrt(double(t.rows));
    for (auto& x : t.v) x = scale * rng.gaussian();
  }
  return m;
}

/// Fixed sinusoidal position table, rows 0..n_positions-1.
inline Tensor sinusoidal_positions(int n_positions, int d_model) {
  Tensor pe(n_positions, d_model);
  for (int p = 0; p < n_positions; ++p) {
    for (int i = 0; i < d_model; i += 2) {
      const double freq = std::pow(10000.0, -double(i) / d_model);
      pe.at(p, i) = std::sin(p * freq);
      if (i + 1 < d_model) pe.at(p, i + 1) = std::cos(p * freq);
    }
  }
  return pe;
}

}  // namespace xlgen
