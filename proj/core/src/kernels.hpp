#pragma once

// Dense row-major GEMMs shared by the autodiff ops (Eigen-backed). Output rows
// are partitioned independently of the OpenMP thread count, so results are
// bit-identical for any thread count.

#include <cstddef>
#include <vector>

namespace safenet::kernels {

// C[m x n] += A[m x k] * B[k x n]; lda/ldb/ldc are row strides.
void gemm_nn(std::size_t m, std::size_t k, std::size_t n, const double* a, std::size_t lda,
             const double* b, std::size_t ldb, double* c, std::size_t ldc);

// C[k x n] += A[m x k]^T * B[m x n].
void gemm_tn(std::size_t m, std::size_t k, std::size_t n, const double* a, std::size_t lda,
             const double* b, std::size_t ldb, double* c, std::size_t ldc);

// C[m x k] += A[m x n] * B[k x n]^T.
void gemm_nt(std::size_t m, std::size_t n, std::size_t k, const double* a, std::size_t lda,
             const double* b, std::size_t ldb, double* c, std::size_t ldc);

// out[cols x rows] = in[rows x cols]^T.
void transpose(std::size_t rows, std::size_t cols, const double* in, double* out);

}  // namespace safenet::kernels
