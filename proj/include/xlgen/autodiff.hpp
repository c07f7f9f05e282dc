#pragma once

#include <cassert>
#include <cmath>
#include <functional>
#include <utility>
#include <vector>

#include "xlgen/dual.hpp"
#include "xlgen/tensor.hpp"

namespace xlgen {

template <typename S>
TensorT<S> tensor_cast(const Tensor& t) {
  TensorT<S> out(t.rows, t.cols);
  for (std::size_t i = 0; i < t.size(); ++i) out.v[i] = S(t.v[i]);
  return out;
}

template <>
inline TensorT<double> tensor_cast<double>(const Tensor& t) {
  return t;
}

/// Reverse-mode tape over TensorT<S>. Nodes are created in topological order,
/// so backward() is a reverse sweep over creation order. Instantiating with
/// S = Dual turns one backward pass into an exact Hessian-vector product.
template <typename S>
class Graph {
 public:
  using Id = int;

  Id input(TensorT<S> value, bool needs_grad = false) {
    return push(std::move(value), needs_grad, nullptr);
  }

  Id constant(const Tensor& value) { return input(tensor_cast<S>(value), false); }

  const TensorT<S>& val(Id id) const { return nodes_[id].value; }

  /// Gradient of the loss w.r.t. node `id`; empty tensor means zero.
  const TensorT<S>& grad(Id id) const { return nodes_[id].grad; }

  std::size_t num_nodes() const { return nodes_.size(); }

  // ---- ops ----

  /// Rows of `table` selected by token ids; backward scatter-adds.
  Id gather_rows(Id table, std::vector<int> ids) {
    const auto& tbl = nodes_[table].value;
    TensorT<S> out(static_cast<int>(ids.size()), tbl.cols);
    for (std::size_t r = 0; r < ids.size(); ++r) {
      assert(ids[r] >= 0 && ids[r] < tbl.rows);
      const S* src = tbl.row(ids[r]);
      std::copy(src, src + tbl.cols, out.row(static_cast<int>(r)));
    }
    return push(std::move(out), nodes_[table].needs_grad,
                [this, table, ids = std::move(ids)](Id self) {
                  auto& tg = grad_ref(table);
                  const auto& g = nodes_[self].grad;
                  for (std::size_t r = 0; r < ids.size(); ++r) {
                    S* dst = tg.row(ids[r]);
                    const S* src = g.row(static_cast<int>(r));
                    for (int c = 0; c < g.cols; ++c) dst[c] += src[c];
                  }
                });
  }

  Id add(Id a, Id b) {
    const auto& av = nodes_[a].value;
    const auto& bv = nodes_[b].value;
    assert(av.same_shape(bv));
    TensorT<S> out = av;
    for (std::size_t i = 0; i < out.size(); ++i) out.v[i] += bv.v[i];
    return push(std::move(out), nodes_[a].needs_grad || nodes_[b].needs_grad,
                [this, a, b](Id self) {
                  const auto& g = nodes_[self].grad;
                  accumulate(a, g);
                  accumulate(b, g);
                });
  }

  /// x + c where c is a constant (positional table, additive attention mask).
  Id add_const(Id a, const Tensor& c) {
    const auto& av = nodes_[a].value;
    assert(av.rows == c.rows && av.cols == c.cols);
    TensorT<S> out = av;
    for (std::size_t i = 0; i < out.size(); ++i) out.v[i] += S(c.v[i]);
    return push(std::move(out), nodes_[a].needs_grad,
                [this, a](Id self) { accumulate(a, nodes_[self].grad); });
  }

  /// Elementwise multiply by a constant tensor (dropout masks).
  Id mul_const(Id a, Tensor c) {
    const auto& av = nodes_[a].value;
    assert(av.rows == c.rows && av.cols == c.cols);
    TensorT<S> out = av;
    for (std::size_t i = 0; i < out.size(); ++i) out.v[i] *= S(c.v[i]);
    return push(std::move(out), nodes_[a].needs_grad,
                [this, a, c = std::move(c)](Id self) {
                  if (!nodes_[a].needs_grad) return;
                  const auto& g = nodes_[self].grad;
                  auto& ag = grad_ref(a);
                  for (std::size_t i = 0; i < g.size(); ++i) ag.v[i] += g.v[i] * S(c.v[i]);
                });
  }

  Id scale(Id a, double c) {
    TensorT<S> out = nodes_[a].value;
    for (auto& x : out.v) x *= S(c);
    return push(std::move(out), nodes_[a].needs_grad, [this, a, c](Id self) {
      if (!nodes_[a].needs_grad) return;
      const auto& g = nodes_[self].grad;
      auto& ag = grad_ref(a);
      for (std::size_t i = 0; i < g.size(); ++i) ag.v[i] += g.v[i] * S(c);
    });
  }

  Id matmul(Id a, Id b) {
    TensorT<S> out = xlgen::matmul(nodes_[a].value, nodes_[b].value);
    return push(std::move(out), nodes_[a].needs_grad || nodes_[b].needs_grad,
                [this, a, b](Id self) {
                  const auto& g = nodes_[self].grad;
                  if (nodes_[a].needs_grad) matmul_nt_acc(g, nodes_[b].value, grad_ref(a));
                  if (nodes_[b].needs_grad) matmul_tn_acc(nodes_[a].value, g, grad_ref(b));
                });
  }

  // a * b^T
  Id matmul_nt(Id a, Id b) {
    TensorT<S> out = xlgen::matmul_nt(nodes_[a].value, nodes_[b].value);
    return push(std::move(out), nodes_[a].needs_grad || nodes_[b].needs_grad,
                [this, a, b](Id self) {
                  const auto& g = nodes_[self].grad;
                  if (nodes_[a].needs_grad) matmul_acc(g, nodes_[b].value, grad_ref(a));
                  if (nodes_[b].needs_grad) matmul_tn_acc(g, nodes_[a].value, grad_ref(b));
                });
  }

  Id slice_cols(Id a, int j0, int w) {
    const auto& av = nodes_[a].value;
    assert(j0 >= 0 && j0 + w <= av.cols);
    TensorT<S> out(av.rows, w);
    for (int r = 0; r < av.rows; ++r) {
      std::copy(av.row(r) + j0, av.row(r) + j0 + w, out.row(r));
    }
    return push(std::move(out), nodes_[a].needs_grad, [this, a, j0, w](Id self) {
      if (!nodes_[a].needs_grad) return;
      const auto& g = nodes_[self].grad;
      auto& ag = grad_ref(a);
      for (int r = 0; r < g.rows; ++r) {
        const S* src = g.row(r);
        S* dst = ag.row(r) + j0;
        for (int c = 0; c < w; ++c) dst[c] += src[c];
      }
    });
  }

  Id concat_cols(const std::vector<Id>& parts) {
    assert(!parts.empty());
    int rows = nodes_[parts[0]].value.rows;
    int cols = 0;
    bool needs = false;
    for (Id p : parts) {
      assert(nodes_[p].value.rows == rows);
      cols += nodes_[p].value.cols;
      needs = needs || nodes_[p].needs_grad;
    }
    TensorT<S> out(rows, cols);
    int off = 0;
    for (Id p : parts) {
      const auto& pv = nodes_[p].value;
      for (int r = 0; r < rows; ++r) {
        std::copy(pv.row(r), pv.row(r) + pv.cols, out.row(r) + off);
      }
      off += pv.cols;
    }
    return push(std::move(out), needs, [this, parts](Id self) {
      const auto& g = nodes_[self].grad;
      int off = 0;
      for (Id p : parts) {
        const int w = nodes_[p].value.cols;
        if (nodes_[p].needs_grad) {
          auto& pg = grad_ref(p);
          for (int r = 0; r < g.rows; ++r) {
            const S* src = g.row(r) + off;
            S* dst = pg.row(r);
            for (int c = 0; c < w; ++c) dst[c] += src[c];
          }
        }
        off += w;
      }
    });
  }

  /// RMS norm per row with a learned gain: y = x / sqrt(mean(x^2)+eps) * gain.
  Id rmsnorm(Id x, Id gain, double eps = 1e-6) {
    const auto& xv = nodes_[x].value;
    const auto& gv = nodes_[gain].value;
    assert(gv.rows == 1 && gv.cols == xv.cols);
    const int d = xv.cols;
    TensorT<S> out(xv.rows, d);
    for (int r = 0; r < xv.rows; ++r) {
      const S* xr = xv.row(r);
      S ms = S(0);
      for (int c = 0; c < d; ++c) ms += xr[c] * xr[c];
      const S inv = S(1) / sqrt_s(ms / S(double(d)) + S(eps));
      S* o = out.row(r);
      for (int c = 0; c < d; ++c) o[c] = xr[c] * inv * gv.v[c];
    }
    return push(std::move(out), nodes_[x].needs_grad || nodes_[gain].needs_grad,
                [this, x, gain, eps](Id self) {
                  const auto& g = nodes_[self].grad;
                  const auto& xv = nodes_[x].value;
                  const auto& gv = nodes_[gain].value;
                  const int d = xv.cols;
                  for (int r = 0; r < xv.rows; ++r) {
                    const S* xr = xv.row(r);
                    const S* gr = g.row(r);
                    S ms = S(0);
                    for (int c = 0; c < d; ++c) ms += xr[c] * xr[c];
                    const S inv = S(1) / sqrt_s(ms / S(double(d)) + S(eps));
                    if (nodes_[gain].needs_grad) {
                      auto& gg = grad_ref(gain);
                      for (int c = 0; c < d; ++c) gg.v[c] += gr[c] * xr[c] * inv;
                    }
                    if (nodes_[x].needs_grad) {
                      // dx = inv * (g.gain) - x * inv^3/d * sum((g.gain).x)
                      S dotgx = S(0);
                      for (int c = 0; c < d; ++c) dotgx += gr[c] * gv.v[c] * xr[c];
                      const S k = inv * inv * inv * dotgx / S(double(d));
                      auto& xg = grad_ref(x);
                      S* xgr = xg.row(r);
                      for (int c = 0; c < d; ++c) xgr[c] += gr[c] * gv.v[c] * inv - xr[c] * k;
                    }
                  }
                });
  }

  /// GELU with the tanh approximation (smooth, so finite differences behave).
  Id gelu(Id a) {
    const auto& av = nodes_[a].value;
    TensorT<S> out(av.rows, av.cols);
    for (std::size_t i = 0; i < av.size(); ++i) out.v[i] = gelu_fwd(av.v[i]);
    return push(std::move(out), nodes_[a].needs_grad, [this, a](Id self) {
      if (!nodes_[a].needs_grad) return;
      const auto& g = nodes_[self].grad;
      const auto& av = nodes_[a].value;
      auto& ag = grad_ref(a);
      for (std::size_t i = 0; i < g.size(); ++i) ag.v[i] += g.v[i] * gelu_deriv(av.v[i]);
    });
  }

  /// Row-wise softmax. Masking is expected upstream as an additive constant.
  Id softmax_rows(Id a) {
    const auto& av = nodes_[a].value;
    TensorT<S> out(av.rows, av.cols);
    for (int r = 0; r < av.rows; ++r) softmax_row(av.row(r), out.row(r), av.cols);
    return push(std::move(out), nodes_[a].needs_grad, [this, a](Id self) {
      if (!nodes_[a].needs_grad) return;
      const auto& g = nodes_[self].grad;
      const auto& pv = nodes_[self].value;
      auto& ag = grad_ref(a);
      for (int r = 0; r < g.rows; ++r) {
        const S* gr = g.row(r);
        const S* pr = pv.row(r);
        S dot = S(0);
        for (int c = 0; c < g.cols; ++c) dot += gr[c] * pr[c];
        S* ar = ag.row(r);
        for (int c = 0; c < g.cols; ++c) ar[c] += pr[c] * (gr[c] - dot);
      }
    });
  }

  /// Sum over rows of label-smoothed cross entropy. Row t is scored against
  /// targets[t]; smoothing mass eps is spread uniformly over the vocabulary.
  Id ce_label_smooth(Id logits, std::vector<int> targets, double eps) {
    const auto& lv = nodes_[logits].value;
    assert(static_cast<int>(targets.size()) == lv.rows);
    const int vocab = lv.cols;
    S total = S(0);
    for (int r = 0; r < lv.rows; ++r) {
      const S* l = lv.row(r);
      const S lse = row_logsumexp(l, vocab);
      S mean_l = S(0);
      for (int c = 0; c < vocab; ++c) mean_l += l[c];
      mean_l = mean_l / S(double(vocab));
      total += lse - S(1.0 - eps) * l[targets[r]] - S(eps) * mean_l;
    }
    TensorT<S> out(1, 1);
    out.v[0] = total;
    return push(std::move(out), nodes_[logits].needs_grad,
                [this, logits, targets = std::move(targets), eps](Id self) {
                  if (!nodes_[logits].needs_grad) return;
                  const S gs = nodes_[self].grad.v[0];
                  const auto& lv = nodes_[logits].value;
                  const int vocab = lv.cols;
                  auto& lg = grad_ref(logits);
                  std::vector<S> p(vocab);
                  for (int r = 0; r < lv.rows; ++r) {
                    softmax_row(lv.row(r), p.data(), vocab);
                    S* gr = lg.row(r);
                    const S unif = S(eps / double(vocab));
                    for (int c = 0; c < vocab; ++c) gr[c] += gs * (p[c] - unif);
                    gr[targets[r]] -= gs * S(1.0 - eps);
                  }
                });
  }

  /// Sum of squared entries, as a 1x1 node.
  Id sum_squares(Id a) {
    const auto& av = nodes_[a].value;
    S total = S(0);
    for (const auto& x : av.v) total += x * x;
    TensorT<S> out(1, 1);
    out.v[0] = total;
    return push(std::move(out), nodes_[a].needs_grad, [this, a](Id self) {
      if (!nodes_[a].needs_grad) return;
      const S g = nodes_[self].grad.v[0];
      const auto& av = nodes_[a].value;
      auto& ag = grad_ref(a);
      for (std::size_t i = 0; i < av.size(); ++i) ag.v[i] += S(2) * g * av.v[i];
    });
  }

  Id sum_scalars(const std::vector<Id>& parts) {
    S total = S(0);
    bool needs = false;
    for (Id p : parts) {
      assert(nodes_[p].value.size() == 1);
      total += nodes_[p].value.v[0];
      needs = needs || nodes_[p].needs_grad;
    }
    TensorT<S> out(1, 1);
    out.v[0] = total;
    return push(std::move(out), needs, [this, parts](Id self) {
      const S g = nodes_[self].grad.v[0];
      for (Id p : parts) {
        if (nodes_[p].needs_grad) grad_ref(p).v[0] += g;
      }
    });
  }

  /// Reverse sweep from a scalar node. Seeds d(loss)/d(loss) = 1.
  void backward(Id loss) {
    assert(nodes_[loss].value.size() == 1);
    grad_ref(loss).v[0] = S(1);
    for (Id id = loss; id >= 0; --id) {
      auto& n = nodes_[id];
      if (n.backward && !n.grad.empty()) n.backward(id);
    }
  }

 private:
  struct Node {
    TensorT<S> value;
    TensorT<S> grad;  // empty until touched
    bool needs_grad = false;
    std::function<void(Id)> backward;
  };

  std::vector<Node> nodes_;

  Id push(TensorT<S> value, bool needs_grad, std::function<void(Id)> bw) {
    Node n;
    n.value = std::move(value);
    n.needs_grad = needs_grad;
    if (needs_grad) n.backward = std::move(bw);
    nodes_.push_back(std::move(n));
    return static_cast<Id>(nodes_.size() - 1);
  }

  TensorT<S>& grad_ref(Id id) {
    auto& n = nodes_[id];
    if (n.grad.empty()) n.grad = TensorT<S>(n.value.rows, n.value.cols);
    return n.grad;
  }

  void accumulate(Id target, const TensorT<S>& g) {
    if (!nodes_[target].needs_grad) return;
    auto& tg = grad_ref(target);
    for (std::size_t i = 0; i < g.size(); ++i) tg.v[i] += g.v[i];
  }

  static S sqrt_s(const S& x) {
    using std::sqrt;
    return sqrt(x);
  }

  // Max-shifted softmax; the shift is a value-only constant, which leaves the
  // computed function (and hence its derivative) unchanged.
  static void softmax_row(const S* l, S* out, int n) {
    using std::exp;
    double mx = value_of(l[0]);
    for (int c = 1; c < n; ++c) mx = std::max(mx, value_of(l[c]));
    S denom = S(0);
    for (int c = 0; c < n; ++c) {
      out[c] = exp(l[c] - S(mx));
      denom += out[c];
    }
    const S inv = S(1) / denom;
    for (int c = 0; c < n; ++c) out[c] *= inv;
  }

  static S row_logsumexp(const S* l, int n) {
    using std::exp;
    using std::log;
    double mx = value_of(l[0]);
    for (int c = 1; c < n; ++c) mx = std::max(mx, value_of(l[c]));
    S acc = S(0);
    for (int c = 0; c < n; ++c) acc += exp(l[c] - S(mx));
    return S(mx) + log(acc);
  }

  static S gelu_fwd(const S& x) {
    using std::tanh;
    const S u = S(0.7978845608028654) * (x + S(0.044715) * x * x * x);
    return S(0.5) * x * (S(1) + tanh(u));
  }

  static S gelu_deriv(const S& x) {
    using std::tanh;
    const S u = S(0.7978845608028654) * (x + S(0.044715) * x * x * x);
    const S t = tanh(u);
    const S sech2 = S(1) - t * t;
    const S du = S(0.7978845608028654) * (S(1) + S(3.0 * 0.044715) * x * x);
    return S(0.5) * (S(1) + t) + S(0.5) * x * sech2 * du;
  }
};

}  // namespace xlgen
