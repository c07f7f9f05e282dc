#pragma once

#include <cassert>
#include <cstddef>
#include <vector>

namespace xlgen {

/// Dense row-major matrix over an arbitrary scalar type. Vectors are 1 x n.
/// The scalar parameter is what lets the same forward/backward code run in
/// plain double (gradients) and in dual numbers (Hessian-vector products).
template <typename S>
struct TensorT {
  int rows = 0;
  int cols = 0;
  std::vector<S> v;

  TensorT() = default;
  TensorT(int r, int c) : rows(r), cols(c), v(static_cast<std::size_t>(r) * c, S(0)) {}

  S& at(int r, int c) { return v[static_cast<std::size_t>(r) * cols + c]; }
  const S& at(int r, int c) const { return v[static_cast<std::size_t>(r) * cols + c]; }

  S* row(int r) { return v.data() + static_cast<std::size_t>(r) * cols; }
  const S* row(int r) const { return v.data() + static_cast<std::size_t>(r) * cols; }

  std::size_t size() const { return v.size(); }
  bool empty() const { return v.empty(); }
  bool same_shape(const TensorT& o) const { return rows == o.rows && cols == o.cols; }

  void fill(S x) { std::fill(v.begin(), v.end(), x); }
};

using Tensor = TensorT<double>;

// C += A * B
template <typename S>
void matmul_acc(const TensorT<S>& a, const TensorT<S>& b, TensorT<S>& c) {
  assert(a.cols == b.rows && c.rows == a.rows && c.cols == b.cols);
  for (int i = 0; i < a.rows; ++i) {
    S* crow = c.row(i);
    const S* arow = a.row(i);
    for (int p = 0; p < a.cols; ++p) {
      const S aval = arow[p];
      const S* brow = b.row(p);
      for (int j = 0; j < b.cols; ++j) crow[j] += aval * brow[j];
    }
  }
}

// C += A * B^T
template <typename S>
void matmul_nt_acc(const TensorT<S>& a, const TensorT<S>& b, TensorT<S>& c) {
  assert(a.cols == b.cols && c.rows == a.rows && c.cols == b.rows);
  for (int i = 0; i < a.rows; ++i) {
    const S* arow = a.row(i);
    S* crow = c.row(i);
    for (int j = 0; j < b.rows; ++j) {
      const S* brow = b.row(j);
      S acc = S(0);
      for (int p = 0; p < a.cols; ++p) acc += arow[p] * brow[p];
      crow[j] += acc;
    }
  }
}

// C += A^T * B
template <typename S>
void matmul_tn_acc(const TensorT<S>& a, const TensorT<S>& b, TensorT<S>& c) {
  assert(a.rows == b.rows && c.rows == a.cols && c.cols == b.cols);
  for (int i = 0; i < a.rows; ++i) {
    const S* arow = a.row(i);
    const S* brow = b.row(i);
    for (int p = 0; p < a.cols; ++p) {
      const S aval = arow[p];
      S* crow = c.row(p);
      for (int j = 0; j < b.cols; ++j) crow[j] += aval * brow[j];
    }
  }
}

template <typename S>
TensorT<S> matmul(const TensorT<S>& a, const TensorT<S>& b) {
  TensorT<S> c(a.rows, b.cols);
  matmul_acc(a, b, c);
  return c;
}

template <typename S>
TensorT<S> matmul_nt(const TensorT<S>& a, const TensorT<S>& b) {
  TensorT<S> c(a.rows, b.rows);
  matmul_nt_acc(a, b, c);
  return c;
}

}  // namespace xlgen
