#include "hlan/kernels.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <vector>

#ifdef _OPENMP
#include <omp.h>
#endif

namespace hlan::kernels {

namespace {

bool go_parallel(Exec exec, std::size_t m, std::size_t k, std::size_t n) {
#ifdef _OPENMP
  return exec == Exec::parallel && m > 1 && m * k * n >= kParallelWork && !omp_in_parallel() &&
         omp_get_max_threads() > 1;
#else
  (void)exec, (void)m, (void)k, (void)n;
  return false;
#endif
}

inline void nn_row(const real* a_row, const real* b, real* c_row, std::size_t k, std::size_t n) {
  for (std::size_t p = 0; p < k; ++p) {
    const real av = a_row[p];
    const real* b_row = b + p * n;
    for (std::size_t j = 0; j < n; ++j) c_row[j] += av * b_row[j];
  }
}

}  // namespace

void gemm_nn(const real* a, const real* b, real* c, std::size_t m, std::size_t k, std::size_t n,
             bool accumulate, Exec exec) {
  if (!accumulate) std::fill(c, c + m * n, real{0});
  if (go_parallel(exec, m, k, n)) {
#pragma omp parallel for schedule(static)
    for (std::ptrdiff_t i = 0; i < static_cast<std::ptrdiff_t>(m); ++i)
      nn_row(a + i * k, b, c + i * n, k, n);
  } else {
    for (std::size_t i = 0; i < m; ++i) nn_row(a + i * k, b, c + i * n, k, n);
  }
}

void gemm_nt(const real* a, const real* b, real* c, std::size_t m, std::size_t k, std::size_t n,
             bool accumulate, Exec exec) {
  // Transpose B once so the inner loop runs over contiguous memory.
  std::vector<real> bt(k * n);
  for (std::size_t j = 0; j < n; ++j)
    for (std::size_t p = 0; p < k; ++p) bt[p * n + j] = b[j * k + p];
  gemm_nn(a, bt.data(), c, m, k, n, accumulate, exec);
}

void gemm_tn(const real* a, const real* b, real* c, std::size_t m, std::size_t k, std::size_t n,
             bool accumulate, Exec exec) {
  if (!accumulate) std::fill(c, c + m * n, real{0});
  auto body = [&](std::size_t i) {
    real* c_row = c + i * n;
    for (std::size_t p = 0; p < k; ++p) {
      const real av = a[p * m + i];
      if (av == real{0}) continue;
      const real* b_row = b + p * n;
      for (std::size_t j = 0; j < n; ++j) c_row[j] += av * b_row[j];
    }
  };
  if (go_parallel(exec, m, k, n)) {
#pragma omp parallel for schedule(static)
    for (std::ptrdiff_t i = 0; i < static_cast<std::ptrdiff_t>(m); ++i) body(i);
  } else {
    for (std::size_t i = 0; i < m; ++i) body(i);
  }
}

real dot(const real* a, const real* b, std::size_t n) {
  real s = 0;
  for (std::size_t i = 0; i < n; ++i) s += a[i] * b[i];
  return s;
}

void axpy(real alpha, const real* x, real* y, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) y[i] += alpha * x[i];
}

real sigmoid(real x) {
  if (x >= 0) return real{1} / (real{1} + std::exp(-x));
  const real e = std::exp(x);
  return e / (real{1} + e);
}

int max_threads() {
#ifdef _OPENMP
  return omp_get_max_threads();
#else
  return 1;
#endif
}

void set_threads(int n) {
#ifdef _OPENMP
  omp_set_num_threads(std::max(1, n));
#else
  (void)n;
#endif
}

bool in_parallel() {
#ifdef _OPENMP
  return omp_in_parallel();
#else
  return false;
#endif
}

}  // namespace hlan::kernels
