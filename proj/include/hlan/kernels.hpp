#pragma once

// Dense matrix kernels on contiguous row-major storage.
//
// Every kernel sums each output element over the inner dimension in ascending
// order, whether it runs serially or split across OpenMP threads by output row,
// so results are bit-identical for any thread count.

#include <cstddef>

#include "hlan/tensor.hpp"

namespace hlan::kernels {

enum class Exec { serial, parallel };

// Work (m*k*n) below which the parallel path stays serial.
inline constexpr std::size_t kParallelWork = std::size_t{1} << 18;

// C[m x n] (+)= A[m x k] * B[k x n]
void gemm_nn(const real* a, const real* b, real* c, std::size_t m, std::size_t k, std::size_t n,
             bool accumulate, Exec exec = Exec::parallel);
// C[m x n] (+)= A[m x k] * B[n x k]^T
void gemm_nt(const real* a, const real* b, real* c, std::size_t m, std::size_t k, std::size_t n,
             bool accumulate, Exec exec = Exec::parallel);
// C[m x n] (+)= A[k x m]^T * B[k x n]
void gemm_tn(const real* a, const real* b, real* c, std::size_t m, std::size_t k, std::size_t n,
             bool accumulate, Exec exec = Exec::parallel);

real dot(const real* a, const real* b, std::size_t n);
// y += alpha * x
void axpy(real alpha, const real* x, real* y, std::size_t n);

real sigmoid(real x);

// Number of threads the parallel paths will use.
int max_threads();
void set_threads(int n);
bool in_parallel();

}  // namespace hlan::kernels
