#pragma once

#include <array>
#include <iomanip>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "xlgen/corpus.hpp"
#include "xlgen/decode.hpp"
#include "xlgen/langspace.hpp"
#include "xlgen/metrics.hpp"
#include "xlgen/model.hpp"
#include "xlgen/threading.hpp"

namespace xlgen {

struct MetricResult {
  std::string name;  // rouge_l | bleu | seq_acc
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
  double score = 0.0;  // primary value: F1 for rouge_l, [0,100] for bleu
  int n = 0;

  nlohmann::json to_json() const {
    nlohmann::json j{{"name", name}, {"score", score}, {"n", n}};
    if (name == "rouge_l") {
      j["precision"] = precision;
      j["recall"] = recall;
      j["f1"] = f1;
    }
    return j;
  }
};

struct GeneratedSample {
  std::string lang, source, reference, hypothesis;
};

struct EvalReport {
  std::string metric;
  std::map<std::string, MetricResult> per_lang;
  double average = 0.0;  // arithmetic mean of the per-language primary scores
  DecodeConfig decode;
  std::string model_provenance;

  nlohmann::json to_json() const {
    nlohmann::json langs;
    for (const auto& [lang, r] : per_lang) langs[lang] = r.to_json();
    return nlohmann::json{{"metric", metric},
                          {"per_lang", langs},
                          {"average", average},
                          {"decode", decode.to_json()},
                          {"model_provenance", model_provenance}};
  }

  /// One aligned row of per-language scores plus the average.
  std::string text_table() const {
    std::ostringstream head, row;
    head << std::left << std::setw(10) << "metric";
    row << std::left << std::setw(10) << metric;
    for (const auto& [lang, r] : per_lang) {
      head << std::right << std::setw(9) << lang;
      row << std::right << std::setw(9) << std::fixed << std::setprecision(3) << r.score;
    }
    head << std::right << std::setw(9) << "avg";
    row << std::right << std::setw(9) << std::fixed << std::setprecision(3) << average;
    return head.str() + "\n" + row.str() + "\n";
  }
};

/// Generates for every test example and scores per language. Generation is
/// read-only on the model; the contamination guard refuses test languages
/// that appeared in training unless explicitly overridden.
inline EvalReport zero_shot_evaluate(const Model& model,
                                     const std::map<std::string, Dataset>& test_sets,
                                     const DecodeConfig& decode_cfg, const std::string& metric,
                                     const std::set<std::string>& train_langs = {},
                                     bool allow_overlap = false,
                                     const MetricTokenizerRegistry& registry = {},
                                     int threads = 1, int max_src_len = 512,
                                     std::vector<GeneratedSample>* dump = nullptr,
                                     const std::string& provenance = "") {
  decode_cfg.validate();
  if (metric != "rouge_l" && metric != "bleu" && metric != "seq_acc") {
    throw ConfigError("unknown metric: " + metric);
  }
  if (test_sets.empty()) throw DataError("zero_shot_evaluate: no test sets");
  if (!allow_overlap) {
    for (const auto& [lang, ds] : test_sets) {
      if (train_langs.count(lang)) {
        throw ContaminationError("test language " + lang +
                                 " was used in training; pass --force to override");
      }
    }
  }
  EvalReport report;
  report.metric = metric;
  report.decode = decode_cfg;
  report.model_provenance = provenance;
  for (const auto& [lang, ds] : test_sets) {
    if (ds.examples.empty()) throw DataError("zero_shot_evaluate: empty test set for " + lang);
    const int n = static_cast<int>(ds.examples.size());
    std::vector<std::string> hyps(n), refs(n);
    parallel_for(n, threads, [&](int i) {
      const Example& ex = ds.examples[i];
      auto [input, target] = tag_example(ex, model.tokenizer, max_src_len);
      const auto out = generate(model, input, decode_cfg);
      hyps[i] = model.tokenizer.decode_clean(out);
      refs[i] = ex.target;
    });
    if (dump != nullptr) {
      for (int i = 0; i < n; ++i) {
        dump->push_back({lang, ds.examples[i].source, refs[i], hyps[i]});
      }
    }
    MetricResult r;
    r.name = metric;
    r.n = n;
    if (metric == "rouge_l") {
      for (int i = 0; i < n; ++i) {
        const RougeScore s = rouge_l(hyps[i], refs[i], lang, registry);
        r.precision += s.precision / n;
        r.recall += s.recall / n;
        r.f1 += s.f1 / n;
      }
      r.score = r.f1;
    } else if (metric == "bleu") {
      r.score = bleu(hyps, refs, lang, registry);
    } else {
      r.score = sequence_accuracy(hyps, refs);
    }
    report.per_lang.emplace(lang, std::move(r));
  }
  for (const auto& [lang, r] : report.per_lang) {
    report.average += r.score / static_cast<double>(report.per_lang.size());
  }
  return report;
}

/// Pairwise cosine distances between language-tag representations.
/// Symmetric with a zero diagonal by construction.
inline Tensor tag_distance_matrix(const Model& model, const std::vector<std::string>& langs,
                                  const std::map<std::string, std::vector<TaggedSequence>>& probes) {
  if (langs.size() < 2) throw DataError("tag_distance_matrix: need at least 2 languages");
  const int n = static_cast<int>(langs.size());
  std::vector<std::vector<double>> reps(n);
  for (int i = 0; i < n; ++i) {
    reps[i] = language_tag_representation(model, langs[i], probes.at(langs[i]));
  }
  Tensor m(n, n);
  for (int i = 0; i < n; ++i) {
    for (int j = i + 1; j < n; ++j) {
      m.at(i, j) = m.at(j, i) = cosine_distance(reps[i], reps[j]);
    }
  }
  return m;
}

inline double mean_off_diagonal(const Tensor& m) {
  double sum = 0.0;
  int count = 0;
  for (int i = 0; i < m.rows; ++i) {
    for (int j = 0; j < m.cols; ++j) {
      if (i != j) {
        sum += m.at(i, j);
        ++count;
      }
    }
  }
  return count > 0 ? sum / count : 0.0;
}

}  // namespace xlgen
