#pragma once

#include <algorithm>
#include <array>
#include <map>
#include <string>
#include <vector>

#include <json.hpp>

#include "xlgen/errors.hpp"

namespace xlgen {

/// Character-level tokenizer with reserved control tokens.
///
/// Vocabulary layout: <pad> <eos> <unk>, then a <fxx>/<2xx> tag pair per
/// language, then span-corruption sentinels, then one id per charset byte.
/// The default charset is all 256 byte values, which keeps the vocabulary
/// independent of the corpus; a restricted charset yields the tiny models the
/// gradient-check suites need.
class Tokenizer {
 public:
  static constexpr int kPad = 0;
  static constexpr int kEos = 1;
  static constexpr int kUnk = 2;

  Tokenizer() = default;

  Tokenizer(std::vector<std::string> languages, int n_sentinels,
            std::vector<unsigned char> charset)
      : languages_(std::move(languages)), n_sentinels_(n_sentinels), charset_(std::move(charset)) {
    std::sort(languages_.begin(), languages_.end());
    languages_.erase(std::unique(languages_.begin(), languages_.end()), languages_.end());
    if (n_sentinels_ < 0) throw ConfigError("tokenizer: negative sentinel count");
    byte_to_id_.fill(-1);
    for (std::size_t i = 0; i < charset_.size(); ++i) {
      byte_to_id_[charset_[i]] = chars_base() + static_cast<int>(i);
    }
    for (std::size_t i = 0; i < languages_.size(); ++i) {
      lang_index_[languages_[i]] = static_cast<int>(i);
    }
  }

  static Tokenizer bytes(std::vector<std::string> languages, int n_sentinels = 64) {
    std::vector<unsigned char> cs(256);
    for (int i = 0; i < 256; ++i) cs[i] = static_cast<unsigned char>(i);
    return Tokenizer(std::move(languages), n_sentinels, std::move(cs));
  }

  static Tokenizer charset(std::vector<std::string> languages, int n_sentinels,
                           const std::string& chars) {
    return Tokenizer(std::move(languages), n_sentinels,
                     std::vector<unsigned char>(chars.begin(), chars.end()));
  }

  int vocab_size() const { return chars_base() + static_cast<int>(charset_.size()); }
  int num_languages() const { return static_cast<int>(languages_.size()); }
  const std::vector<std::string>& languages() const { return languages_; }
  int num_sentinels() const { return n_sentinels_; }

  bool has_lang(const std::string& lang) const { return lang_index_.count(lang) > 0; }

  int source_tag_id(const std::string& lang) const { return 3 + 2 * lang_index_at(lang); }
  int target_tag_id(const std::string& lang) const { return 4 + 2 * lang_index_at(lang); }

  int sentinel_id(int k) const {
    if (k < 0 || k >= n_sentinels_) throw DataError("sentinel index out of range");
    return sentinel_base() + k;
  }
  bool is_sentinel(int id) const { return id >= sentinel_base() && id < chars_base(); }
  int sentinel_index(int id) const { return id - sentinel_base(); }

  std::vector<int> encode(const std::string& text) const {
    std::vector<int> ids;
    ids.reserve(text.size());
    for (unsigned char b : text) {
      const int id = byte_to_id_[b];
      ids.push_back(id < 0 ? kUnk : id);
    }
    return ids;
  }

  std::string decode(const std::vector<int>& ids) const {
    std::string out;
    for (int id : ids) {
      if (id == kPad) {
        out += "<pad>";
      } else if (id == kEos) {
        out += "<eos>";
      } else if (id == kUnk) {
        out += "<unk>";
      } else if (id >= 3 && id < sentinel_base()) {
        const int li = (id - 3) / 2;
        out += (id - 3) % 2 == 0 ? "<f" + languages_[li] + ">" : "<2" + languages_[li] + ">";
      } else if (is_sentinel(id)) {
        out += "<extra_id_" + std::to_string(sentinel_index(id)) + ">";
      } else if (id >= chars_base() && id < vocab_size()) {
        out += static_cast<char>(charset_[id - chars_base()]);
      } else {
        throw DataError("decode: token id out of range: " + std::to_string(id));
      }
    }
    return out;
  }

  /// Text content only: control tokens are dropped rather than rendered.
  std::string decode_clean(const std::vector<int>& ids) const {
    std::string out;
    for (int id : ids) {
      if (id >= chars_base() && id < vocab_size()) out += static_cast<char>(charset_[id - chars_base()]);
    }
    return out;
  }

  nlohmann::json to_json() const {
    return nlohmann::json{{"languages", languages_},
                          {"n_sentinels", n_sentinels_},
                          {"charset", std::vector<int>(charset_.begin(), charset_.end())}};
  }

  static Tokenizer from_json(const nlohmann::json& j) {
    std::vector<unsigned char> cs;
    for (int b : j.at("charset").get<std::vector<int>>()) cs.push_back(static_cast<unsigned char>(b));
    return Tokenizer(j.at("languages").get<std::vector<std::string>>(),
                     j.at("n_sentinels").get<int>(), std::move(cs));
  }

 private:
  std::vector<std::string> languages_;
  int n_sentinels_ = 0;
  std::vector<unsigned char> charset_;
  std::array<int, 256> byte_to_id_{};
  std::map<std::string, int> lang_index_;

  int sentinel_base() const { return 3 + 2 * static_cast<int>(languages_.size()); }
  int chars_base() const { return sentinel_base() + n_sentinels_; }

  int lang_index_at(const std::string& lang) const {
    auto it = lang_index_.find(lang);
    if (it == lang_index_.end()) throw DataError("unknown language tag token: " + lang);
    return it->second;
  }
};

}  // namespace xlgen
