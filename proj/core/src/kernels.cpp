#include "kernels.hpp"

#include <algorithm>

#define EIGEN_DONT_PARALLELIZE
#include <Eigen/Core>

namespace safenet::kernels {

namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using Stride = Eigen::OuterStride<>;
using ConstView = Eigen::Map<const RowMat, Eigen::Unaligned, Stride>;
using View = Eigen::Map<RowMat, Eigen::Unaligned, Stride>;

// Output rows are split into fixed-size chunks, so the partition (and with it
// every rounding step) does not depend on the thread count.
constexpr std::ptrdiff_t kChunkRows = 256;
// Below this many multiply-adds a parallel region costs more than it saves.
constexpr std::size_t kParallelWork = std::size_t{1} << 20;

template <typename Fn>
void for_chunks(std::size_t rows, std::size_t work, Fn&& fn) {
  const auto total = static_cast<std::ptrdiff_t>(rows);
  const std::ptrdiff_t chunks = (total + kChunkRows - 1) / kChunkRows;
#pragma omp parallel for schedule(static) if (work >= kParallelWork && chunks > 1)
  for (std::ptrdiff_t c = 0; c < chunks; ++c) {
    const std::ptrdiff_t r0 = c * kChunkRows;
    fn(r0, std::min(kChunkRows, total - r0));
  }
}

}  // namespace

void gemm_nn(std::size_t m, std::size_t k, std::size_t n, const double* a, std::size_t lda,
             const double* b, std::size_t ldb, double* c, std::size_t ldc) {
  if (m == 0 || n == 0 || k == 0) return;
  const auto K = static_cast<std::ptrdiff_t>(k);
  const auto N = static_cast<std::ptrdiff_t>(n);
  ConstView bm(b, K, N, Stride(static_cast<std::ptrdiff_t>(ldb)));
  for_chunks(m, m * k * n, [&](std::ptrdiff_t r0, std::ptrdiff_t rows) {
    ConstView am(a + r0 * static_cast<std::ptrdiff_t>(lda), rows, K, Stride(static_cast<std::ptrdiff_t>(lda)));
    View cm(c + r0 * static_cast<std::ptrdiff_t>(ldc), rows, N, Stride(static_cast<std::ptrdiff_t>(ldc)));
    cm.noalias() += am * bm;
  });
}

void gemm_tn(std::size_t m, std::size_t k, std::size_t n, const double* a, std::size_t lda,
             const double* b, std::size_t ldb, double* c, std::size_t ldc) {
  if (m == 0 || n == 0 || k == 0) return;
  const auto M = static_cast<std::ptrdiff_t>(m);
  const auto N = static_cast<std::ptrdiff_t>(n);
  ConstView bm(b, M, N, Stride(static_cast<std::ptrdiff_t>(ldb)));
  for_chunks(k, m * k * n, [&](std::ptrdiff_t r0, std::ptrdiff_t rows) {
    ConstView am(a + r0, M, rows, Stride(static_cast<std::ptrdiff_t>(lda)));
    View cm(c + r0 * static_cast<std::ptrdiff_t>(ldc), rows, N, Stride(static_cast<std::ptrdiff_t>(ldc)));
    cm.noalias() += am.transpose() * bm;
  });
}

void gemm_nt(std::size_t m, std::size_t n, std::size_t k, const double* a, std::size_t lda,
             const double* b, std::size_t ldb, double* c, std::size_t ldc) {
  if (m == 0 || n == 0 || k == 0) return;
  const auto N = static_cast<std::ptrdiff_t>(n);
  const auto K = static_cast<std::ptrdiff_t>(k);
  ConstView bm(b, K, N, Stride(static_cast<std::ptrdiff_t>(ldb)));
  for_chunks(m, m * k * n, [&](std::ptrdiff_t r0, std::ptrdiff_t rows) {
    ConstView am(a + r0 * static_cast<std::ptrdiff_t>(lda), rows, N, Stride(static_cast<std::ptrdiff_t>(lda)));
    View cm(c + r0 * static_cast<std::ptrdiff_t>(ldc), rows, K, Stride(static_cast<std::ptrdiff_t>(ldc)));
    cm.noalias() += am * bm.transpose();
  });
}

void transpose(std::size_t rows, std::size_t cols, const double* in, double* out) {
  for (std::size_t i = 0; i < rows; ++i) {
    for (std::size_t j = 0; j < cols; ++j) out[j * rows + i] = in[i * cols + j];
  }
}

}  // namespace safenet::kernels
