#pragma once

#include <array>
#include <cstdint>
#include <cstring>
#include <set>
#include <fstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "xlgen/errors.hpp"
#include "xlgen/model.hpp"

namespace xlgen {

namespace detail {

inline const char* kB64 = "ABCDEFGHIJKLMNOPQRSTUVWXYZabcdefghijklmnopqrstuvwxyz0123456789+/";

inline std::string base64_encode(const unsigned char* data, std::size_t n) {
  std::string out;
  out.reserve((n + 2) / 3 * 4);
  for (std::size_t i = 0; i < n; i += 3) {
    std::uint32_t word = data[i] << 16;
    if (i + 1 < n) word |= data[i + 1] << 8;
    if (i + 2 < n) word |= data[i + 2];
    out += kB64[(word >> 18) & 63];
    out += kB64[(word >> 12) & 63];
    out += i + 1 < n ? kB64[(word >> 6) & 63] : '=';
    out += i + 2 < n ? kB64[word & 63] : '=';
  }
  return out;
}

inline std::vector<unsigned char> base64_decode(const std::string& text) {
  std::array<int, 256> lut;
  lut.fill(-1);
  for (int i = 0; i < 64; ++i) lut[static_cast<unsigned char>(kB64[i])] = i;
  std::vector<unsigned char> out;
  std::uint32_t word = 0;
  int bits = 0;
  for (char c : text) {
    if (c == '=') break;
    const int v = lut[static_cast<unsigned char>(c)];
    if (v < 0) throw ParseError("invalid base64 character");
    word = (word << 6) | static_cast<std::uint32_t>(v);
    bits += 6;
    if (bits >= 8) {
      bits -= 8;
      out.push_back(static_cast<unsigned char>((word >> bits) & 0xFF));
    }
  }
  return out;
}

}  // namespace detail

/// One completed pipeline stage: what ran, over which languages, and the
/// parameter hash after it finished.
struct StageRecord {
  std::string stage;  // adaptive_pretrain | english_finetune | meta_train | baseline_ft
  std::vector<std::string> languages;
  std::uint64_t params_hash = 0;
  nlohmann::json info;  // stage-specific settings worth keeping

  nlohmann::json to_json() const {
    return nlohmann::json{{"stage", stage},
                          {"languages", languages},
                          {"params_hash", params_hash},
                          {"info", info.is_null() ? nlohmann::json::object() : info}};
  }

  static StageRecord from_json(const nlohmann::json& j) {
    StageRecord r;
    r.stage = j.at("stage").get<std::string>();
    r.languages = j.at("languages").get<std::vector<std::string>>();
    r.params_hash = j.at("params_hash").get<std::uint64_t>();
    r.info = j.value("info", nlohmann::json::object());
    return r;
  }
};

/// Self-describing checkpoint: model config, tokenizer spec, named tensors
/// (bit-exact via base64-encoded little-endian doubles) and the ordered
/// stage provenance.
struct Checkpoint {
  Model model;
  std::vector<StageRecord> provenance;

  bool has_stage(const std::string& stage) const {
    for (const auto& r : provenance) {
      if (r.stage == stage) return true;
    }
    return false;
  }

  /// Languages that contributed supervised training signal.
  std::set<std::string> training_languages() const {
    std::set<std::string> out;
    for (const auto& r : provenance) {
      if (r.stage == "adaptive_pretrain") continue;  // unsupervised
      out.insert(r.languages.begin(), r.languages.end());
    }
    return out;
  }

  std::string provenance_string() const {
    std::string out;
    for (const auto& r : provenance) {
      if (!out.empty()) out += " -> ";
      out += r.stage;
    }
    return out;
  }
};

inline void save_checkpoint(const Checkpoint& ckpt, const std::string& path) {
  nlohmann::json tensors;
  for (const auto& [name, t] : ckpt.model.params.tensors) {
    tensors[name] = nlohmann::json{
        {"rows", t.rows},
        {"cols", t.cols},
        {"data", detail::base64_encode(reinterpret_cast<const unsigned char*>(t.v.data()),
                                       t.size() * sizeof(double))}};
  }
  nlohmann::json prov = nlohmann::json::array();
  for (const auto& r : ckpt.provenance) prov.push_back(r.to_json());
  nlohmann::json j{{"format", "xlgen-checkpoint-v1"},
                   {"model_config", ckpt.model.config.to_json()},
                   {"tokenizer", ckpt.model.tokenizer.to_json()},
                   {"freeze", ckpt.model.freeze.patterns},
                   {"provenance", prov},
                   {"tensors", tensors}};
  std::ofstream out(path);
  if (!out) throw DataError("cannot write checkpoint: " + path);
  out << j.dump();
  out << "\n";
  if (!out) throw DataError("checkpoint write failed: " + path);
}

inline Checkpoint load_checkpoint(const std::string& path, bool verify_hash = true) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open checkpoint: " + path);
  nlohmann::json j;
  try {
    in >> j;
  } catch (const std::exception& e) {
    throw ParseError("checkpoint " + path + ": " + e.what());
  }
  if (j.value("format", "") != "xlgen-checkpoint-v1") {
    throw DataError("unrecognized checkpoint format: " + path);
  }
  Checkpoint ckpt;
  ckpt.model.config = ModelConfig::from_json(j.at("model_config"));
  ckpt.model.tokenizer = Tokenizer::from_json(j.at("tokenizer"));
  ckpt.model.freeze.patterns = j.value("freeze", std::vector<std::string>{});
  for (const auto& r : j.at("provenance")) ckpt.provenance.push_back(StageRecord::from_json(r));
  for (const auto& [name, jt] : j.at("tensors").items()) {
    Tensor t(jt.at("rows").get<int>(), jt.at("cols").get<int>());
    const auto bytes = detail::base64_decode(jt.at("data").get<std::string>());
    if (bytes.size() != t.size() * sizeof(double)) {
      throw ParseError("checkpoint tensor size mismatch for " + name);
    }
    std::memcpy(t.v.data(), bytes.data(), bytes.size());
    ckpt.model.params.tensors.emplace(name, std::move(t));
  }
  if (verify_hash && !ckpt.provenance.empty()) {
    const std::uint64_t expect = ckpt.provenance.back().params_hash;
    if (expect != 0 && expect != params_hash(ckpt.model.params)) {
      throw DataError("checkpoint hash mismatch (corrupted or edited): " + path);
    }
  }
  return ckpt;
}

}  // namespace xlgen
