#pragma once

#include <cstddef>
#include <vector>

namespace qdt::nn {

// Dense 2-D array of doubles, row-major. Scalars are [1 x 1], biases and
// other vectors are [1 x n]. Everything in the training stack is 64-bit.
struct Tensor {
  std::size_t n_rows = 0;
  std::size_t n_cols = 0;
  std::vector<double> v;

  Tensor() = default;
  Tensor(std::size_t rows, std::size_t cols)
      : n_rows(rows), n_cols(cols), v(rows * cols, 0.0) {}

  static Tensor scalar(double x) {
    Tensor t(1, 1);
    t.v[0] = x;
    return t;
  }
  static Tensor row(std::vector<double> values) {
    Tensor t;
    t.n_rows = 1;
    t.n_cols = values.size();
    t.v = std::move(values);
    return t;
  }
  static Tensor column(const std::vector<double>& values) {
    Tensor t(values.size(), 1);
    t.v = values;
    return t;
  }

  std::size_t numel() const { return n_rows * n_cols; }
  bool same_shape(const Tensor& o) const {
    return n_rows == o.n_rows && n_cols == o.n_cols;
  }

  double& at(std::size_t r, std::size_t c) { return v[r * n_cols + c]; }
  double at(std::size_t r, std::size_t c) const { return v[r * n_cols + c]; }
  double* row_ptr(std::size_t r) { return v.data() + r * n_cols; }
  const double* row_ptr(std::size_t r) const { return v.data() + r * n_cols; }

  void fill(double x) { std::fill(v.begin(), v.end(), x); }
};

// C[M,N] += A[M,K] * B[K,N]
void matmul_acc(const double* a, const double* b, double* c, std::size_t m,
                std::size_t k, std::size_t n);

// C[K,N] += A^T * D where A is [M,K], D is [M,N]
void matmul_at_acc(const double* a, const double* d, double* c, std::size_t m,
                   std::size_t k, std::size_t n);

// C[M,K] += D * B^T where D is [M,N], B is [K,N]
void matmul_bt_acc(const double* d, const double* b, double* c, std::size_t m,
                   std::size_t k, std::size_t n);

}  // namespace qdt::nn
