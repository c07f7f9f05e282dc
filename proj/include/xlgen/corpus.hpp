#pragma once

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "xlgen/errors.hpp"
#include "xlgen/rng.hpp"
#include "xlgen/tokenizer.hpp"

namespace xlgen {

enum class Task { summarization, question_generation, denoising };

inline Task task_from_string(const std::string& s) {
  if (s == "summarization") return Task::summarization;
  if (s == "question_generation") return Task::question_generation;
  if (s == "denoising") return Task::denoising;
  throw ConfigError("unknown task: " + s);
}

inline std::string task_to_string(Task t) {
  switch (t) {
    case Task::summarization: return "summarization";
    case Task::question_generation: return "question_generation";
    case Task::denoising: return "denoising";
  }
  return "?";
}

/// One (source, target) text pair in a given language.
struct Example {
  std::string source;
  std::string target;
  std::string lang;
  Task task = Task::summarization;
};

/// Examples sharing a task; lang is empty for mixed multilingual corpora.
struct Dataset {
  std::vector<Example> examples;
  std::string lang;
  std::string split;  // train | valid | test
};

/// One sampled meta-task: disjoint support and query sets of one language.
struct TaskBatch {
  std::string lang;
  std::vector<Example> support;
  std::vector<Example> query;
};

/// Token ids beginning with the <fxx> <2xx> tag pair of the language.
struct TaggedSequence {
  std::vector<int> tokens;
  std::string lang;
};

// ---------------------------------------------------------------------------
// Dataset loading

inline Dataset load_dataset(const std::string& path, Task task, const std::string& lang,
                            const std::string& split) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open dataset file: " + path);
  Dataset ds;
  ds.lang = lang;
  ds.split = split;
  std::string line;
  int lineno = 0;
  auto need = [&](const nlohmann::json& j, const char* field) -> std::string {
    if (!j.contains(field)) {
      throw ParseError(path + ":" + std::to_string(lineno) + ": missing field '" + field + "'");
    }
    return j[field].get<std::string>();
  };
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(line);
    } catch (const std::exception& e) {
      throw ParseError(path + ":" + std::to_string(lineno) + ": " + e.what());
    }
    Example ex;
    ex.task = task;
    ex.lang = need(j, "lang");
    if (ex.lang != lang) {
      throw DataError(path + ":" + std::to_string(lineno) + ": record language '" + ex.lang +
                      "' does not match declared '" + lang + "'");
    }
    switch (task) {
      case Task::summarization:
        ex.source = need(j, "document");
        ex.target = need(j, "summary");
        break;
      case Task::question_generation:
        // Answer and passage concatenated with the </s> delimiter.
        ex.source = need(j, "answer") + " </s> " + need(j, "passage");
        ex.target = need(j, "question");
        break;
      case Task::denoising:
        ex.source = need(j, "text");
        break;
    }
    if (ex.source.empty()) {
      throw ParseError(path + ":" + std::to_string(lineno) + ": empty source");
    }
    ds.examples.push_back(std::move(ex));
  }
  if (ds.examples.empty()) throw DataError("empty dataset file: " + path);
  return ds;
}

// ---------------------------------------------------------------------------
// Language tagging

/// Prefixes the language tag pair and tokenizes. Source text is truncated to
/// max_src_len tokens; the tags ride on top of that budget.
inline std::pair<TaggedSequence, std::vector<int>> tag_example(const Example& ex,
                                                               const Tokenizer& tok,
                                                               int max_src_len = 512) {
  TaggedSequence input;
  input.lang = ex.lang;
  input.tokens.push_back(tok.source_tag_id(ex.lang));
  input.tokens.push_back(tok.target_tag_id(ex.lang));
  std::vector<int> src = tok.encode(ex.source);
  if (static_cast<int>(src.size()) > max_src_len) src.resize(max_src_len);
  input.tokens.insert(input.tokens.end(), src.begin(), src.end());
  std::vector<int> target = tok.encode(ex.target);
  target.push_back(Tokenizer::kEos);
  return {std::move(input), std::move(target)};
}

// ---------------------------------------------------------------------------
// Multilingual monolingual corpus for denoising pre-training

struct SplitCounts {
  int train = 0;
  int valid = 0;
  int test = 0;
};

/// Samples per-language line budgets without replacement from each mono file
/// (one snippet per line), concatenates across languages, and shuffles the
/// train split.
inline std::map<std::string, Dataset> build_multimonolang(
    const std::map<std::string, std::string>& mono_paths, const SplitCounts& per_lang,
    std::uint64_t rng_seed) {
  Rng rng(rng_seed);
  std::map<std::string, Dataset> out;
  for (const char* split : {"train", "valid", "test"}) {
    out[split].split = split;
  }
  for (const auto& [lang, path] : mono_paths) {  // map iteration: sorted by lang
    std::ifstream in(path);
    if (!in) throw DataError("cannot open mono file for " + lang + ": " + path);
    std::vector<std::string> lines;
    std::string line;
    while (std::getline(in, line)) {
      if (!line.empty()) lines.push_back(line);
    }
    const int want = per_lang.train + per_lang.valid + per_lang.test;
    if (static_cast<int>(lines.size()) < want) {
      throw DataError("mono corpus shortfall for " + lang + ": have " +
                      std::to_string(lines.size()) + ", need " + std::to_string(want));
    }
    auto idx = rng.sample_without_replacement(lines.size(), want);
    auto take = [&](Dataset& ds, int offset, int count) {
      for (int i = 0; i < count; ++i) {
        Example ex;
        ex.source = lines[idx[offset + i]];
        ex.lang = lang;
        ex.task = Task::denoising;
        ds.examples.push_back(std::move(ex));
      }
    };
    take(out["train"], 0, per_lang.train);
    take(out["valid"], per_lang.train, per_lang.valid);
    take(out["test"], per_lang.train + per_lang.valid, per_lang.test);
  }
  rng.shuffle(out["train"].examples);
  return out;
}

// ---------------------------------------------------------------------------
// Span corruption

struct Span {
  int begin = 0;
  int end = 0;  // exclusive
};

/// Core corruption with explicit spans; spans must be sorted and disjoint.
inline std::pair<std::vector<int>, std::vector<int>> span_corrupt_with_spans(
    const Tokenizer& tok, const std::vector<int>& tokens, const std::vector<Span>& spans) {
  std::vector<int> input;
  std::vector<int> target;
  int pos = 0;
  for (std::size_t k = 0; k < spans.size(); ++k) {
    const Span& s = spans[k];
    if (s.begin < pos || s.end <= s.begin || s.end > static_cast<int>(tokens.size())) {
      throw DataError("span_corrupt: invalid span");
    }
    input.insert(input.end(), tokens.begin() + pos, tokens.begin() + s.begin);
    input.push_back(tok.sentinel_id(static_cast<int>(k)));
    target.push_back(tok.sentinel_id(static_cast<int>(k)));
    target.insert(target.end(), tokens.begin() + s.begin, tokens.begin() + s.end);
    pos = s.end;
  }
  input.insert(input.end(), tokens.begin() + pos, tokens.end());
  return {std::move(input), std::move(target)};
}

/// Denoising objective: contiguous spans totaling ~rate*len tokens are
/// replaced by sentinels in order; the target lists each sentinel followed by
/// the tokens it hides.
inline std::pair<std::vector<int>, std::vector<int>> span_corrupt(
    const Tokenizer& tok, const std::vector<int>& tokens, double corruption_rate,
    double mean_span, Rng& rng) {
  if (!(corruption_rate > 0.0 && corruption_rate < 1.0)) {
    throw ConfigError("span_corrupt: corruption_rate must be in (0,1)");
  }
  if (tokens.empty()) throw DataError("span_corrupt: empty token sequence");
  if (mean_span <= 0.0) throw ConfigError("span_corrupt: mean_span must be positive");
  const int n = static_cast<int>(tokens.size());
  int num_noise = static_cast<int>(std::lround(corruption_rate * n));
  num_noise = std::clamp(num_noise, 1, n);
  int num_spans = static_cast<int>(std::lround(num_noise / mean_span));
  num_spans = std::clamp(num_spans, 1, std::min(num_noise, tok.num_sentinels()));

  // Random positive composition of num_noise into num_spans parts.
  auto positive_parts = [&](int total, int parts) {
    std::vector<int> cuts = [&] {
      auto picks = rng.sample_without_replacement(total - 1, parts - 1);
      std::vector<int> c(picks.begin(), picks.end());
      for (auto& x : c) x += 1;
      std::sort(c.begin(), c.end());
      return c;
    }();
    std::vector<int> lens;
    int prev = 0;
    for (int c : cuts) {
      lens.push_back(c - prev);
      prev = c;
    }
    lens.push_back(total - prev);
    return lens;
  };
  // Random non-negative composition of total into parts.
  auto nonneg_parts = [&](int total, int parts) {
    auto picks = rng.sample_without_replacement(total + parts - 1, parts - 1);
    std::vector<int> c(picks.begin(), picks.end());
    for (auto& x : c) x += 1;
    std::sort(c.begin(), c.end());
    std::vector<int> lens;
    int prev = 0;
    for (int x : c) {
      lens.push_back(x - prev - 1);
      prev = x;
    }
    lens.push_back(total + parts - 1 - prev);
    return lens;
  };

  std::vector<int> span_lens =
      num_spans == 1 ? std::vector<int>{num_noise} : positive_parts(num_noise, num_spans);
  std::vector<int> gaps = nonneg_parts(n - num_noise, num_spans + 1);

  std::vector<Span> spans;
  int pos = 0;
  for (int k = 0; k < num_spans; ++k) {
    pos += gaps[k];
    spans.push_back({pos, pos + span_lens[k]});
    pos += span_lens[k];
  }
  return span_corrupt_with_spans(tok, tokens, spans);
}

/// Splices target spans back at sentinel positions; inverse of span_corrupt.
inline std::vector<int> splice_sentinels(const Tokenizer& tok, const std::vector<int>& input,
                                         const std::vector<int>& target) {
  // sentinel index -> hidden tokens
  std::map<int, std::vector<int>> spans;
  int current = -1;
  for (int id : target) {
    if (tok.is_sentinel(id)) {
      current = tok.sentinel_index(id);
      spans[current];
    } else if (current >= 0) {
      spans[current].push_back(id);
    }
  }
  std::vector<int> out;
  for (int id : input) {
    if (tok.is_sentinel(id)) {
      const auto& s = spans.at(tok.sentinel_index(id));
      out.insert(out.end(), s.begin(), s.end());
    } else {
      out.push_back(id);
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Meta-task sampling

/// Splits a batch into disjoint support/query sets. |support| is
/// round(fraction * n) clamped so that neither side is empty.
inline std::pair<std::vector<Example>, std::vector<Example>> split_support_query(
    const std::vector<Example>& batch, double support_fraction, Rng& rng) {
  const int n = static_cast<int>(batch.size());
  if (n < 2) throw DataError("split_support_query: need at least 2 examples");
  if (!(support_fraction > 0.0 && support_fraction < 1.0)) {
    throw ConfigError("split_support_query: fraction must be in (0,1)");
  }
  int ns = static_cast<int>(std::lround(support_fraction * n));
  ns = std::clamp(ns, 1, n - 1);
  std::vector<std::size_t> idx = rng.sample_without_replacement(n, n);
  std::pair<std::vector<Example>, std::vector<Example>> out;
  for (int i = 0; i < n; ++i) {
    (i < ns ? out.first : out.second).push_back(batch[idx[i]]);
  }
  return out;
}

/// Picks a language uniformly, then batch_size examples without replacement.
inline TaskBatch sample_task_batch(const std::map<std::string, Dataset>& meta_sets,
                                   int batch_size, double support_fraction, Rng& rng) {
  if (meta_sets.empty()) throw DataError("sample_task_batch: no meta-training sets");
  std::vector<const std::string*> langs;
  for (const auto& [lang, ds] : meta_sets) langs.push_back(&lang);
  const std::string& lang = *langs[rng.below(langs.size())];
  const Dataset& ds = meta_sets.at(lang);
  if (static_cast<int>(ds.examples.size()) < batch_size) {
    throw DataError("sample_task_batch: dataset for " + lang + " smaller than batch size");
  }
  auto idx = rng.sample_without_replacement(ds.examples.size(), batch_size);
  std::vector<Example> batch;
  for (auto i : idx) batch.push_back(ds.examples[i]);
  TaskBatch tb;
  tb.lang = lang;
  auto [support, query] = split_support_query(batch, support_fraction, rng);
  tb.support = std::move(support);
  tb.query = std::move(query);
  return tb;
}

}  // namespace xlgen
