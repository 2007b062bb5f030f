#include "qdt/tensor.hpp"

namespace qdt::nn {

void matmul_acc(const double* a, const double* b, double* c, std::size_t m,
                std::size_t k, std::size_t n) {
  for (std::size_t i = 0; i < m; ++i) {
    const double* ai = a + i * k;
    double* ci = c + i * n;
    for (std::size_t p = 0; p < k; ++p) {
      const double av = ai[p];
      const double* bp = b + p * n;
      for (std::size_t j = 0; j < n; ++j) ci[j] += av * bp[j];
    }
  }
}

void matmul_at_acc(const double* a, const double* d, double* c, std::size_t m,
                   std::size_t k, std::size_t n) {
  for (std::size_t i = 0; i < m; ++i) {
    const double* ai = a + i * k;
    const double* di = d + i * n;
    for (std::size_t p = 0; p < k; ++p) {
      const double av = ai[p];
      double* cp = c + p * n;
      for (std::size_t j = 0; j < n; ++j) cp[j] += av * di[j];
    }
  }
}

void matmul_bt_acc(const double* d, const double* b, double* c, std::size_t m,
                   std::size_t k, std::size_t n) {
  // A dot-product formulation would serialize on the FP accumulator, so
  // transpose B into a scratch buffer and run the vectorizable ikj kernel.
  thread_local std::vector<double> scratch;
  scratch.resize(n * k);
  for (std::size_t p = 0; p < k; ++p) {
    for (std::size_t j = 0; j < n; ++j) scratch[j * k + p] = b[p * n + j];
  }
  matmul_acc(d, scratch.data(), c, m, n, k);
}

}  // namespace qdt::nn
