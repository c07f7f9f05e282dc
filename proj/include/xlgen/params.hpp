#pragma once

#include <cmath>
#include <cstring>
#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "xlgen/errors.hpp"
#include "xlgen/tensor.hpp"

namespace xlgen {

/// Named model parameters. std::map keeps iteration order deterministic,
/// which matters for seeding, hashing and reductions.
struct ParameterSet {
  std::map<std::string, Tensor> tensors;

  Tensor& at(const std::string& name) { return tensors.at(name); }
  const Tensor& at(const std::string& name) const { return tensors.at(name); }
  bool has(const std::string& name) const { return tensors.count(name) > 0; }

  std::size_t num_scalars() const {
    std::size_t n = 0;
    for (const auto& [name, t] : tensors) n += t.size();
    return n;
  }

  bool all_finite() const {
    for (const auto& [name, t] : tensors) {
      for (double x : t.v) {
        if (!std::isfinite(x)) return false;
      }
    }
    return true;
  }
};

inline ParameterSet zeros_like(const ParameterSet& p) {
  ParameterSet out;
  for (const auto& [name, t] : p.tensors) out.tensors.emplace(name, Tensor(t.rows, t.cols));
  return out;
}

// y += a * x
inline void axpy(double a, const ParameterSet& x, ParameterSet& y) {
  for (auto& [name, yt] : y.tensors) {
    const Tensor& xt = x.at(name);
    for (std::size_t i = 0; i < yt.size(); ++i) yt.v[i] += a * xt.v[i];
  }
}

inline void scale_params(ParameterSet& p, double a) {
  for (auto& [name, t] : p.tensors) {
    for (auto& x : t.v) x *= a;
  }
}

inline double dot(const ParameterSet& a, const ParameterSet& b) {
  double acc = 0.0;
  for (const auto& [name, at] : a.tensors) {
    const Tensor& bt = b.at(name);
    for (std::size_t i = 0; i < at.size(); ++i) acc += at.v[i] * bt.v[i];
  }
  return acc;
}

inline double max_abs(const ParameterSet& p) {
  double m = 0.0;
  for (const auto& [name, t] : p.tensors) {
    for (double x : t.v) m = std::max(m, std::fabs(x));
  }
  return m;
}

inline bool bitwise_equal(const Tensor& a, const Tensor& b) {
  if (a.rows != b.rows || a.cols != b.cols) return false;
  for (std::size_t i = 0; i < a.size(); ++i) {
    if (std::memcmp(&a.v[i], &b.v[i], sizeof(double)) != 0) return false;
  }
  return true;
}

/// FNV-1a over the raw tensor bytes in name order; used for checkpoint
/// provenance, not security.
inline std::uint64_t params_hash(const ParameterSet& p) {
  std::uint64_t h = 0xcbf29ce484222325ull;
  auto mix = [&h](const void* data, std::size_t n) {
    const auto* bytes = static_cast<const unsigned char*>(data);
    for (std::size_t i = 0; i < n; ++i) {
      h ^= bytes[i];
      h *= 0x100000001b3ull;
    }
  };
  for (const auto& [name, t] : p.tensors) {
    mix(name.data(), name.size());
    mix(t.v.data(), t.size() * sizeof(double));
  }
  return h;
}

/// Parameter names excluded from updates. A pattern is either an exact name
/// or a prefix ending in '*' (e.g. "decoder.*").
struct FreezeMask {
  std::vector<std::string> patterns;

  bool empty() const { return patterns.empty(); }

  bool matches(const std::string& name) const {
    for (const auto& pat : patterns) {
      if (!pat.empty() && pat.back() == '*') {
        if (name.rfind(pat.substr(0, pat.size() - 1), 0) == 0) return true;
      } else if (name == pat) {
        return true;
      }
    }
    return false;
  }

  /// Every pattern must match at least one parameter.
  void validate(const ParameterSet& params) const {
    for (const auto& pat : patterns) {
      bool hit = false;
      for (const auto& [name, t] : params.tensors) {
        FreezeMask one{{pat}};
        if (one.matches(name)) {
          hit = true;
          break;
        }
      }
      if (!hit) throw ConfigError("freeze pattern matches no parameter: " + pat);
    }
  }

  /// Zero the gradient entries of frozen parameters.
  void zero_frozen(ParameterSet& grads) const {
    if (patterns.empty()) return;
    for (auto& [name, g] : grads.tensors) {
      if (matches(name)) g.fill(0.0);
    }
  }
};

}  // namespace xlgen
