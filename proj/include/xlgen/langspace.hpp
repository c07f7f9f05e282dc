#pragma once

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "xlgen/errors.hpp"

namespace xlgen {

/// Typological vector per language code; the clustering substrate.
struct LanguageSpace {
  std::map<std::string, std::vector<double>> vectors;
  int dimension = 0;

  bool has(const std::string& code) const { return vectors.count(code) > 0; }
};

inline double cosine_distance(const std::vector<double>& a, const std::vector<double>& b) {
  if (a.size() != b.size()) throw DataError("cosine_distance: dimension mismatch");
  double dot = 0.0, na = 0.0, nb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    dot += a[i] * b[i];
    na += a[i] * a[i];
    nb += b[i] * b[i];
  }
  if (na == 0.0 || nb == 0.0) throw DataError("cosine_distance: zero-norm vector");
  return 1.0 - dot / (std::sqrt(na) * std::sqrt(nb));
}

struct Cluster {
  std::vector<std::string> members;
  std::string centroid;                 // empty = unset
  std::set<std::string> unrepresented;  // members without vectors, never centroid-eligible
};

struct ClusterSet {
  std::vector<Cluster> clusters;
  int k = 0;
};

enum class Linkage { average, complete, single };

inline Linkage linkage_from_string(const std::string& s) {
  if (s == "average") return Linkage::average;
  if (s == "complete") return Linkage::complete;
  if (s == "single") return Linkage::single;
  throw ConfigError("unknown linkage: " + s);
}

namespace detail {

inline bool is_zero_vector(const std::vector<double>& v) {
  for (double x : v) {
    if (x != 0.0) return false;
  }
  return true;
}

inline void add_language(LanguageSpace& space, const std::string& code,
                         std::vector<double> vec, const std::string& where) {
  if (vec.empty()) throw ParseError(where + ": empty vector for " + code);
  if (space.dimension == 0) {
    space.dimension = static_cast<int>(vec.size());
  } else if (static_cast<int>(vec.size()) != space.dimension) {
    throw ParseError(where + ": dimension mismatch for " + code);
  }
  if (is_zero_vector(vec)) throw DataError(where + ": zero vector for " + code);
  if (!space.vectors.emplace(code, std::move(vec)).second) {
    throw DataError(where + ": duplicate language code " + code);
  }
}

}  // namespace detail

/// Reads `code,v0,...` CSV (with header) or JSONL {"code","vector"} records.
inline LanguageSpace load_language_vectors(const std::string& path, const std::string& format) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open language-vector file: " + path);
  LanguageSpace space;
  std::string line;
  int lineno = 0;
  if (format == "csv") {
    while (std::getline(in, line)) {
      ++lineno;
      if (line.empty()) continue;
      if (lineno == 1 && line.rfind("code", 0) == 0) continue;  // header
      std::stringstream ss(line);
      std::string cell;
      if (!std::getline(ss, cell, ',')) throw ParseError(path + ":" + std::to_string(lineno) + ": missing code");
      const std::string code = cell;
      std::vector<double> vec;
      while (std::getline(ss, cell, ',')) {
        try {
          std::size_t pos = 0;
          vec.push_back(std::stod(cell, &pos));
          if (pos != cell.size()) throw std::invalid_argument(cell);
        } catch (const std::exception&) {
          throw ParseError(path + ":" + std::to_string(lineno) + ": bad number '" + cell + "'");
        }
      }
      detail::add_language(space, code, std::move(vec), path + ":" + std::to_string(lineno));
    }
  } else if (format == "jsonl") {
    while (std::getline(in, line)) {
      ++lineno;
      if (line.empty()) continue;
      nlohmann::json j;
      try {
        j = nlohmann::json::parse(line);
      } catch (const std::exception& e) {
        throw ParseError(path + ":" + std::to_string(lineno) + ": " + e.what());
      }
      if (!j.contains("code") || !j.contains("vector")) {
        throw ParseError(path + ":" + std::to_string(lineno) + ": need fields code and vector");
      }
      detail::add_language(space, j["code"].get<std::string>(),
                           j["vector"].get<std::vector<double>>(),
                           path + ":" + std::to_string(lineno));
    }
  } else {
    throw ConfigError("unknown vector file format: " + format);
  }
  if (space.vectors.empty()) throw DataError("empty language-vector file: " + path);
  return space;
}

/// Agglomerative clustering under cosine distance, cut at exactly k clusters.
/// Deterministic: merge ties are broken by the lexicographically smallest
/// member codes of the candidate pair.
inline ClusterSet cluster_languages(const LanguageSpace& space, int k, Linkage linkage) {
  std::vector<std::string> codes;
  for (const auto& [code, vec] : space.vectors) codes.push_back(code);
  const int n = static_cast<int>(codes.size());
  if (n < 1) throw ConfigError("cluster_languages: no languages");
  if (k < 1 || k > n) throw ConfigError("cluster_languages: k must be in [1, " + std::to_string(n) + "]");

  struct Active {
    std::vector<std::string> members;  // sorted
    int size = 1;
  };
  std::vector<Active> act(n);
  for (int i = 0; i < n; ++i) act[i].members = {codes[i]};

  std::vector<std::vector<double>> d(n, std::vector<double>(n, 0.0));
  for (int i = 0; i < n; ++i) {
    for (int j = i + 1; j < n; ++j) {
      d[i][j] = d[j][i] = cosine_distance(space.vectors.at(codes[i]), space.vectors.at(codes[j]));
    }
  }
  std::vector<bool> alive(n, true);
  int remaining = n;
  while (remaining > k) {
    int bi = -1, bj = -1;
    double best = std::numeric_limits<double>::infinity();
    for (int i = 0; i < n; ++i) {
      if (!alive[i]) continue;
      for (int j = i + 1; j < n; ++j) {
        if (!alive[j]) continue;
        const std::string& a = act[i].members.front();
        const std::string& b = act[j].members.front();
        const std::string& lo = std::min(a, b);
        const std::string& hi = std::max(a, b);
        bool better = d[i][j] < best;
        if (!better && d[i][j] == best && bi >= 0) {
          const std::string& blo = std::min(act[bi].members.front(), act[bj].members.front());
          const std::string& bhi = std::max(act[bi].members.front(), act[bj].members.front());
          better = std::tie(lo, hi) < std::tie(blo, bhi);
        }
        if (better) {
          best = d[i][j];
          bi = i;
          bj = j;
        }
      }
    }
    // Merge bj into bi; Lance-Williams update of the distance matrix.
    for (int t = 0; t < n; ++t) {
      if (!alive[t] || t == bi || t == bj) continue;
      double nd = 0.0;
      switch (linkage) {
        case Linkage::average:
          nd = (act[bi].size * d[bi][t] + act[bj].size * d[bj][t]) / (act[bi].size + act[bj].size);
          break;
        case Linkage::complete:
          nd = std::max(d[bi][t], d[bj][t]);
          break;
        case Linkage::single:
          nd = std::min(d[bi][t], d[bj][t]);
          break;
      }
      d[bi][t] = d[t][bi] = nd;
    }
    std::vector<std::string> merged;
    std::merge(act[bi].members.begin(), act[bi].members.end(),
               act[bj].members.begin(), act[bj].members.end(), std::back_inserter(merged));
    act[bi].members = std::move(merged);
    act[bi].size += act[bj].size;
    alive[bj] = false;
    --remaining;
  }

  ClusterSet out;
  out.k = k;
  for (int i = 0; i < n; ++i) {
    if (!alive[i]) continue;
    Cluster c;
    c.members = act[i].members;
    out.clusters.push_back(std::move(c));
  }
  std::sort(out.clusters.begin(), out.clusters.end(),
            [](const Cluster& a, const Cluster& b) { return a.members.front() < b.members.front(); });
  return out;
}

/// The member minimizing the summed cosine distance to all (represented)
/// members. Ties go to the lexicographically smallest code. Sets and returns
/// cluster.centroid.
inline std::string centroid(Cluster& cluster, const LanguageSpace& space) {
  if (cluster.members.empty()) throw DataError("centroid: empty cluster");
  std::vector<std::string> candidates;
  for (const auto& m : cluster.members) {
    if (cluster.unrepresented.count(m)) continue;
    if (!space.has(m)) throw DataError("centroid: no vector for member " + m);
    candidates.push_back(m);
  }
  if (candidates.empty()) throw DataError("centroid: cluster has no represented member");
  std::sort(candidates.begin(), candidates.end());
  std::string best;
  double best_sum = std::numeric_limits<double>::infinity();
  for (const auto& cand : candidates) {
    double sum = 0.0;
    for (const auto& other : candidates) {
      sum += cosine_distance(space.vectors.at(other), space.vectors.at(cand));
    }
    if (sum < best_sum) {
      best_sum = sum;
      best = cand;
    }
  }
  cluster.centroid = best;
  return best;
}

inline void compute_centroids(ClusterSet& set, const LanguageSpace& space) {
  for (auto& c : set.clusters) centroid(c, space);
}

/// Places a language that has no vector representation into a cluster by
/// hand. It joins the membership but is never eligible as centroid.
inline void assign_unrepresented(ClusterSet& set, const std::string& lang, int cluster_index) {
  if (cluster_index < 0 || cluster_index >= static_cast<int>(set.clusters.size())) {
    throw ConfigError("assign_unrepresented: cluster index out of range");
  }
  for (const auto& c : set.clusters) {
    if (std::find(c.members.begin(), c.members.end(), lang) != c.members.end()) {
      throw DataError("assign_unrepresented: " + lang + " already clustered");
    }
  }
  auto& c = set.clusters[cluster_index];
  c.members.push_back(lang);
  c.unrepresented.insert(lang);
}

inline nlohmann::json to_json(const ClusterSet& set) {
  nlohmann::json clusters = nlohmann::json::array();
  for (const auto& c : set.clusters) {
    nlohmann::json jc;
    jc["members"] = c.members;
    if (c.centroid.empty()) {
      jc["centroid"] = nullptr;
    } else {
      jc["centroid"] = c.centroid;
    }
    if (!c.unrepresented.empty()) {
      jc["unrepresented"] = std::vector<std::string>(c.unrepresented.begin(), c.unrepresented.end());
    }
    clusters.push_back(std::move(jc));
  }
  return nlohmann::json{{"k", set.k}, {"clusters", std::move(clusters)}};
}

inline ClusterSet cluster_set_from_json(const nlohmann::json& j) {
  ClusterSet set;
  set.k = j.at("k").get<int>();
  for (const auto& jc : j.at("clusters")) {
    Cluster c;
    c.members = jc.at("members").get<std::vector<std::string>>();
    if (jc.contains("centroid") && !jc["centroid"].is_null()) {
      c.centroid = jc["centroid"].get<std::string>();
    }
    if (jc.contains("unrepresented")) {
      for (const auto& u : jc["unrepresented"]) c.unrepresented.insert(u.get<std::string>());
    }
    set.clusters.push_back(std::move(c));
  }
  return set;
}

}  // namespace xlgen
