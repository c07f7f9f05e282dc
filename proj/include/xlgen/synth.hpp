#pragma once

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <map>
#include <numeric>
#include <string>
#include <vector>

#include <json.hpp>

#include "xlgen/errors.hpp"
#include "xlgen/rng.hpp"

namespace xlgen {

/// Synthetic cross-lingual benchmark. Each "language" is a bijective
/// relabeling (permutation) of a shared letter alphabet; every task example
/// is a string transformation defined in the hidden base alphabet, rendered
/// through the language's surface letters. Languages in the same cluster
/// share their permutation up to a couple of transpositions, so zero-shot
/// difficulty tracks permutation distance.
struct SynthConfig {
  std::uint64_t seed = 0;
  std::string out_dir;
  int alphabet_size = 16;
  int n_clusters = 3;
  int langs_per_cluster = 2;
  std::string base_task = "sort";  // copy | reverse | sort | shift
  int min_len = 4;
  int max_len = 9;
  int en_train = 2000;
  int en_valid = 200;
  int valid_per_lang = 200;  // meta-training pool
  int test_per_lang = 80;
  int mono_per_lang = 400;
  int swaps_per_lang = 1;  // transpositions away from the cluster base

  void validate() const {
    if (alphabet_size < 4 || alphabet_size > 26) {
      throw ConfigError("synth: alphabet_size must be in [4,26]");
    }
    if (n_clusters < 1 || langs_per_cluster < 1) throw ConfigError("synth: bad cluster shape");
    if (min_len < 1 || max_len < min_len) throw ConfigError("synth: bad length range");
    if (base_task != "copy" && base_task != "reverse" && base_task != "sort" &&
        base_task != "shift") {
      throw ConfigError("synth: unknown base task " + base_task);
    }
    if (out_dir.empty()) throw ConfigError("synth: out_dir required");
  }

  static SynthConfig from_json(const nlohmann::json& j) {
    SynthConfig c;
    c.seed = j.value("seed", std::uint64_t{0});
    c.out_dir = j.value("out_dir", std::string{});
    c.alphabet_size = j.value("alphabet_size", 16);
    c.n_clusters = j.value("n_clusters", 3);
    c.langs_per_cluster = j.value("langs_per_cluster", 2);
    c.base_task = j.value("base_task", std::string{"sort"});
    c.min_len = j.value("min_len", 4);
    c.max_len = j.value("max_len", 9);
    c.en_train = j.value("en_train", 2000);
    c.en_valid = j.value("en_valid", 200);
    c.valid_per_lang = j.value("valid_per_lang", 200);
    c.test_per_lang = j.value("test_per_lang", 80);
    c.mono_per_lang = j.value("mono_per_lang", 400);
    c.swaps_per_lang = j.value("swaps_per_lang", 1);
    return c;
  }
};

namespace synth_detail {

using Perm = std::vector<int>;  // base letter index -> surface letter index

inline std::string lang_code(int cluster, int member) {
  return std::string(1, char('a' + cluster)) + std::string(1, char('a' + member));
}

inline std::string render(const std::vector<int>& base_letters, const Perm& perm) {
  std::string out;
  for (int b : base_letters) out += char('a' + perm[b]);
  return out;
}

inline std::vector<int> apply_base_task(const std::string& task, std::vector<int> s, int A) {
  if (task == "copy") return s;
  if (task == "reverse") {
    std::reverse(s.begin(), s.end());
    return s;
  }
  if (task == "sort") {
    std::stable_sort(s.begin(), s.end());
    return s;
  }
  // shift: successor letter in the base alphabet
  for (auto& x : s) x = (x + 1) % A;
  return s;
}

/// Skewed letter distribution: lower base indices are more frequent, which
/// gives monolingual text enough statistical signal to identify letters.
inline int sample_letter(Rng& rng, int A) {
  std::vector<double> w(A);
  double total = 0.0;
  for (int i = 0; i < A; ++i) {
    w[i] = 1.0 / (i + 2.0);
    total += w[i];
  }
  double u = rng.uniform() * total;
  for (int i = 0; i < A; ++i) {
    u -= w[i];
    if (u <= 0.0) return i;
  }
  return A - 1;
}

inline std::vector<int> sample_string(Rng& rng, const SynthConfig& cfg) {
  const int len = cfg.min_len + rng.below_int(cfg.max_len - cfg.min_len + 1);
  std::vector<int> s(len);
  for (auto& x : s) x = sample_letter(rng, cfg.alphabet_size);
  return s;
}

}  // namespace synth_detail

struct SynthOutput {
  std::vector<std::string> languages;                      // non-English, cluster order
  std::vector<std::vector<std::string>> clusters;          // ground-truth grouping
  std::map<std::string, std::vector<int>> permutations;    // includes "en"
  std::string manifest_path;
};

/// Writes vectors.csv, per-language task splits (summarization schema), mono
/// corpora, and a manifest tying it together.
inline SynthOutput generate_synthetic_benchmark(const SynthConfig& cfg) {
  using synth_detail::Perm;
  cfg.validate();
  std::filesystem::create_directories(cfg.out_dir);
  Rng root(cfg.seed);
  const int A = cfg.alphabet_size;

  SynthOutput out;
  Perm identity(A);
  std::iota(identity.begin(), identity.end(), 0);
  out.permutations["en"] = identity;

  // Cluster base permutations are independent uniform permutations; members
  // apply disjoint transpositions on top, so intra-cluster Hamming distance
  // is at most 2 * swaps_per_lang while inter-cluster distance is ~A.
  Rng perm_rng = root.fork(1);
  for (int c = 0; c < cfg.n_clusters; ++c) {
    Perm base(A);
    std::iota(base.begin(), base.end(), 0);
    perm_rng.shuffle(base);
    std::vector<int> positions(A);
    std::iota(positions.begin(), positions.end(), 0);
    perm_rng.shuffle(positions);
    std::vector<std::string> cluster_langs;
    for (int m = 0; m < cfg.langs_per_cluster; ++m) {
      Perm p = base;
      for (int s = 0; s < cfg.swaps_per_lang; ++s) {
        const int idx = (m * cfg.swaps_per_lang + s) * 2;
        if (idx + 1 < A) std::swap(p[positions[idx]], p[positions[idx + 1]]);
      }
      const std::string code = synth_detail::lang_code(c, m);
      out.permutations[code] = p;
      out.languages.push_back(code);
      cluster_langs.push_back(code);
    }
    out.clusters.push_back(cluster_langs);
  }

  // Language vectors: the flattened permutation matrix. Cosine distance
  // between two languages is 1 - (matching positions / A).
  {
    std::ofstream vec(std::filesystem::path(cfg.out_dir) / "vectors.csv");
    vec << "code";
    for (int i = 0; i < A * A; ++i) vec << ",v" << i;
    vec << "\n";
    for (const auto& lang : out.languages) {
      const Perm& p = out.permutations[lang];
      vec << lang;
      for (int b = 0; b < A; ++b) {
        for (int s = 0; s < A; ++s) vec << "," << (p[b] == s ? 1 : 0);
      }
      vec << "\n";
    }
  }

  auto write_task_split = [&](const std::string& lang, const std::string& split, int count,
                              Rng& rng) {
    const auto path =
        std::filesystem::path(cfg.out_dir) / (lang + "_" + split + ".jsonl");
    std::ofstream f(path);
    const Perm& p = out.permutations.at(lang);
    for (int i = 0; i < count; ++i) {
      const auto base = synth_detail::sample_string(rng, cfg);
      const auto result = synth_detail::apply_base_task(cfg.base_task, base, A);
      nlohmann::json j{{"document", synth_detail::render(base, p)},
                       {"summary", synth_detail::render(result, p)},
                       {"lang", lang}};
      f << j.dump() << "\n";
    }
    return path.string();
  };
  auto write_mono = [&](const std::string& lang, int count, Rng& rng) {
    const auto path = std::filesystem::path(cfg.out_dir) / (lang + "_mono.txt");
    std::ofstream f(path);
    const Perm& p = out.permutations.at(lang);
    for (int i = 0; i < count; ++i) {
      f << synth_detail::render(synth_detail::sample_string(rng, cfg), p) << "\n";
    }
    return path.string();
  };

  nlohmann::json datasets;
  nlohmann::json mono;
  {
    Rng rng = root.fork(2);
    datasets["en"] = {{"train", write_task_split("en", "train", cfg.en_train, rng)},
                      {"valid", write_task_split("en", "valid", cfg.en_valid, rng)}};
    mono["en"] = write_mono("en", cfg.mono_per_lang, rng);
  }
  int lang_tag = 3;
  for (const auto& lang : out.languages) {
    Rng rng = root.fork(lang_tag++);
    datasets[lang] = {{"valid", write_task_split(lang, "valid", cfg.valid_per_lang, rng)},
                      {"test", write_task_split(lang, "test", cfg.test_per_lang, rng)}};
    mono[lang] = write_mono(lang, cfg.mono_per_lang, rng);
  }

  nlohmann::json perms;
  for (const auto& [lang, p] : out.permutations) perms[lang] = p;
  nlohmann::json manifest{{"alphabet_size", A},
                          {"base_task", cfg.base_task},
                          {"seed", cfg.seed},
                          {"languages", out.languages},
                          {"clusters_ground_truth", out.clusters},
                          {"permutations", perms},
                          {"vectors", (std::filesystem::path(cfg.out_dir) / "vectors.csv").string()},
                          {"datasets", datasets},
                          {"mono", mono}};
  out.manifest_path = (std::filesystem::path(cfg.out_dir) / "manifest.json").string();
  std::ofstream mf(out.manifest_path);
  mf << manifest.dump(2) << "\n";
  return out;
}

}  // namespace xlgen
