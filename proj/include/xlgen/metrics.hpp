#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <functional>
#include <map>
#include <set>
#include <string>
#include <vector>

#include "xlgen/errors.hpp"

namespace xlgen {

using TextTokenizer = std::function<std::vector<std::string>(const std::string&)>;

namespace detail {

inline std::vector<std::string> utf8_codepoints(const std::string& text) {
  std::vector<std::string> out;
  std::size_t i = 0;
  while (i < text.size()) {
    const unsigned char b = text[i];
    std::size_t len = 1;
    if ((b & 0x80) == 0x00) len = 1;
    else if ((b & 0xE0) == 0xC0) len = 2;
    else if ((b & 0xF0) == 0xE0) len = 3;
    else if ((b & 0xF8) == 0xF0) len = 4;
    if (i + len > text.size()) len = 1;
    out.push_back(text.substr(i, len));
    i += len;
  }
  return out;
}

inline bool is_ascii_space(const std::string& cp) {
  return cp.size() == 1 && std::isspace(static_cast<unsigned char>(cp[0]));
}

inline bool is_ascii_punct(const std::string& cp) {
  return cp.size() == 1 && std::ispunct(static_cast<unsigned char>(cp[0]));
}

}  // namespace detail

/// Whitespace-delimited tokens with ASCII punctuation split off.
inline std::vector<std::string> word_tokenize(const std::string& text) {
  std::vector<std::string> out;
  std::string word;
  for (const auto& cp : detail::utf8_codepoints(text)) {
    if (detail::is_ascii_space(cp)) {
      if (!word.empty()) out.push_back(std::move(word));
      word.clear();
    } else if (detail::is_ascii_punct(cp)) {
      if (!word.empty()) out.push_back(std::move(word));
      word.clear();
      out.push_back(cp);
    } else {
      word += cp;
    }
  }
  if (!word.empty()) out.push_back(std::move(word));
  return out;
}

/// One token per codepoint, whitespace dropped.
inline std::vector<std::string> char_tokenize(const std::string& text) {
  std::vector<std::string> out;
  for (const auto& cp : detail::utf8_codepoints(text)) {
    if (!detail::is_ascii_space(cp)) out.push_back(cp);
  }
  return out;
}

/// Per-language tokenizer functions for the text metrics. Languages written
/// without word boundaries default to character tokenization; everything
/// else to word tokenization. An optional stemming hook applies per token.
class MetricTokenizerRegistry {
 public:
  MetricTokenizerRegistry() {
    for (const char* lang : {"zh", "th", "ja"}) char_level_.insert(lang);
  }

  void set_tokenizer(const std::string& lang, TextTokenizer fn) {
    custom_[lang] = std::move(fn);
  }

  void set_stemmer(std::function<std::string(const std::string&)> stem) {
    stemmer_ = std::move(stem);
  }

  std::vector<std::string> tokenize(const std::string& lang, const std::string& text) const {
    std::vector<std::string> tokens;
    auto it = custom_.find(lang);
    if (it != custom_.end()) {
      tokens = it->second(text);
    } else if (char_level_.count(lang)) {
      tokens = char_tokenize(text);
    } else {
      tokens = word_tokenize(text);
    }
    if (stemmer_) {
      for (auto& t : tokens) t = stemmer_(t);
    }
    return tokens;
  }

 private:
  std::map<std::string, TextTokenizer> custom_;
  std::set<std::string> char_level_;
  std::function<std::string(const std::string&)> stemmer_;
};

struct RougeScore {
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
};

inline std::size_t lcs_length(const std::vector<std::string>& a,
                              const std::vector<std::string>& b) {
  std::vector<std::size_t> prev(b.size() + 1, 0), cur(b.size() + 1, 0);
  for (std::size_t i = 1; i <= a.size(); ++i) {
    for (std::size_t j = 1; j <= b.size(); ++j) {
      cur[j] = a[i - 1] == b[j - 1] ? prev[j - 1] + 1 : std::max(prev[j], cur[j - 1]);
    }
    std::swap(prev, cur);
  }
  return prev[b.size()];
}

/// LCS-based precision/recall/F1 over language-tokenized text.
inline RougeScore rouge_l(const std::string& hypothesis, const std::string& reference,
                          const std::string& lang,
                          const MetricTokenizerRegistry& registry = {}) {
  const auto hyp = registry.tokenize(lang, hypothesis);
  const auto ref = registry.tokenize(lang, reference);
  if (ref.empty()) throw DataError("rouge_l: empty reference after tokenization");
  if (hyp.empty()) return {};
  const double l = static_cast<double>(lcs_length(hyp, ref));
  RougeScore s;
  s.precision = l / hyp.size();
  s.recall = l / ref.size();
  s.f1 = s.precision + s.recall > 0.0 ? 2.0 * s.precision * s.recall / (s.precision + s.recall)
                                      : 0.0;
  return s;
}

/// Corpus-level BLEU-4 with brevity penalty. Zero n-gram counts are handled
/// with mteval-style exponential smoothing (the count denominator doubles for
/// each empty order).
inline double bleu(const std::vector<std::string>& hypotheses,
                   const std::vector<std::string>& references, const std::string& lang,
                   const MetricTokenizerRegistry& registry = {}) {
  if (hypotheses.size() != references.size()) {
    throw DataError("bleu: hypothesis/reference length mismatch");
  }
  if (hypotheses.empty()) throw DataError("bleu: empty corpus");
  std::array<std::size_t, 4> correct{}, total{};
  std::size_t hyp_len = 0, ref_len = 0;
  for (std::size_t i = 0; i < hypotheses.size(); ++i) {
    const auto hyp = registry.tokenize(lang, hypotheses[i]);
    const auto ref = registry.tokenize(lang, references[i]);
    hyp_len += hyp.size();
    ref_len += ref.size();
    for (std::size_t n = 1; n <= 4; ++n) {
      if (ref.size() >= n) {
        std::map<std::vector<std::string>, std::size_t> ref_counts;
        for (std::size_t j = 0; j + n <= ref.size(); ++j) {
          ref_counts[std::vector<std::string>(ref.begin() + j, ref.begin() + j + n)] += 1;
        }
        std::map<std::vector<std::string>, std::size_t> used;
        for (std::size_t j = 0; hyp.size() >= n && j + n <= hyp.size(); ++j) {
          std::vector<std::string> gram(hyp.begin() + j, hyp.begin() + j + n);
          auto it = ref_counts.find(gram);
          if (it != ref_counts.end() && used[gram] < it->second) {
            used[gram] += 1;
            correct[n - 1] += 1;
          }
        }
      }
      if (hyp.size() >= n) total[n - 1] += hyp.size() - n + 1;
    }
  }
  double smooth = 1.0;
  double log_sum = 0.0;
  for (int n = 0; n < 4; ++n) {
    if (total[n] == 0) return 0.0;
    double p;
    if (correct[n] == 0) {
      smooth *= 2.0;
      p = 100.0 / (smooth * total[n]);
    } else {
      p = 100.0 * correct[n] / total[n];
    }
    log_sum += std::log(p);
  }
  if (hyp_len == 0) return 0.0;
  const double bp = hyp_len >= ref_len ? 1.0 : std::exp(1.0 - double(ref_len) / double(hyp_len));
  return bp * std::exp(log_sum / 4.0);
}

/// Exact-match rate over whole sequences.
inline double sequence_accuracy(const std::vector<std::string>& hypotheses,
                                const std::vector<std::string>& references) {
  if (hypotheses.size() != references.size()) {
    throw DataError("sequence_accuracy: length mismatch");
  }
  if (hypotheses.empty()) throw DataError("sequence_accuracy: empty corpus");
  std::size_t hits = 0;
  for (std::size_t i = 0; i < hypotheses.size(); ++i) {
    hits += hypotheses[i] == references[i] ? 1 : 0;
  }
  return static_cast<double>(hits) / hypotheses.size();
}

}  // namespace xlgen
