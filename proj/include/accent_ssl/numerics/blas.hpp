#pragma once

// Dense GEMM kernel. Row-major buffers are mapped into Eigen so the blocked
// product does the work; Eigen runs single-threaded here and its blocking is
// fixed for a given shape, so results are reproducible run to run.

#ifndef EIGEN_DONT_PARALLELIZE
#define EIGEN_DONT_PARALLELIZE
#endif
#include <Eigen/Core>

#include <cstddef>

namespace accent_ssl::blas {

enum class Trans { No, Yes };

template <class S>
using RowMat = Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <class S>
using MapC = Eigen::Map<const RowMat<S>>;
template <class S>
using Map = Eigen::Map<RowMat<S>>;

// c (m x n) = [c +] op(a) * op(b), where op(a) is m x k and op(b) is k x n.
template <class S>
void gemm(Trans ta, Trans tb, std::size_t m, std::size_t n, std::size_t k, const S* a, const S* b,
          S* c, bool accumulate) {
  const auto M = static_cast<Eigen::Index>(m);
  const auto N = static_cast<Eigen::Index>(n);
  const auto K = static_cast<Eigen::Index>(k);
  Map<S> C(c, M, N);
  if (!accumulate) C.setZero();
  if (m == 0 || n == 0 || k == 0) return;
  if (ta == Trans::No && tb == Trans::No) {
    C.noalias() += MapC<S>(a, M, K) * MapC<S>(b, K, N);
  } else if (ta == Trans::No && tb == Trans::Yes) {
    C.noalias() += MapC<S>(a, M, K) * MapC<S>(b, N, K).transpose();
  } else if (ta == Trans::Yes && tb == Trans::No) {
    C.noalias() += MapC<S>(a, K, M).transpose() * MapC<S>(b, K, N);
  } else {
    C.noalias() += MapC<S>(a, K, M).transpose() * MapC<S>(b, N, K).transpose();
  }
}

}  // namespace accent_ssl::blas
