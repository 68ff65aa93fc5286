#pragma once

// Differentiable primitives over rank-2 tensors. Every op computes its value
// eagerly and, when any input needs a gradient, records a backward closure
// that reads the node's finished gradient and accumulates into its inputs.

#include <cmath>
#include <cstdint>
#include <limits>
#include <numbers>
#include <random>
#include <string>
#include <vector>

#include "accent_ssl/numerics/blas.hpp"
#include "accent_ssl/numerics/tape.hpp"

namespace accent_ssl::ops {

namespace detail {

template <class S>
bool any_grad(std::initializer_list<Var<S>> vs) {
  for (const auto& v : vs)
    if (v.requires_grad()) return true;
  return false;
}

template <class S>
void require_rank2_match(const char* op, std::size_t a, std::size_t b, const Shape& sa,
                         const Shape& sb) {
  if (a != b)
    throw DimensionError(std::string(op) + ": dimension mismatch " + shape_str(sa) + " vs " +
                         shape_str(sb));
}

template <class S>
void require_finite(const Tensor<S>& t, const char* op) {
  for (std::size_t i = 0; i < t.size(); ++i)
    if (std::isnan(t[i]))
      throw NumericDomainError(std::string(op) + ": NaN input at flat index " + std::to_string(i));
}

}  // namespace detail

// a [m x k] * b [k x n]
template <class S>
Var<S> matmul(Var<S> a, Var<S> b) {
  const auto &A = a.value(), &B = b.value();
  detail::require_rank2_match<S>("matmul", A.cols(), B.rows(), A.shape(), B.shape());
  const std::size_t m = A.rows(), k = A.cols(), n = B.cols();
  Tensor<S> out = Tensor<S>::matrix(m, n);
  blas::gemm(blas::Trans::No, blas::Trans::No, m, n, k, A.data(), B.data(), out.data(), false);
  return a.tape->push(std::move(out), detail::any_grad({a, b}),
                      [a, b, m, n, k](Tape<S>& t, std::size_t self) {
                        const Tensor<S>& g = *t.grad(self);
                        if (t.requires_grad(a.id))
                          blas::gemm(blas::Trans::No, blas::Trans::Yes, m, k, n, g.data(),
                                     t.value(b.id).data(), t.grad_buffer(a.id).data(), true);
                        if (t.requires_grad(b.id))
                          blas::gemm(blas::Trans::Yes, blas::Trans::No, k, n, m,
                                     t.value(a.id).data(), g.data(), t.grad_buffer(b.id).data(),
                                     true);
                      });
}

// a [m x k] * b[n x k]^T
template <class S>
Var<S> matmul_nt(Var<S> a, Var<S> b) {
  const auto &A = a.value(), &B = b.value();
  detail::require_rank2_match<S>("matmul_nt", A.cols(), B.cols(), A.shape(), B.shape());
  const std::size_t m = A.rows(), k = A.cols(), n = B.rows();
  Tensor<S> out = Tensor<S>::matrix(m, n);
  blas::gemm(blas::Trans::No, blas::Trans::Yes, m, n, k, A.data(), B.data(), out.data(), false);
  return a.tape->push(std::move(out), detail::any_grad({a, b}),
                      [a, b, m, n, k](Tape<S>& t, std::size_t self) {
                        const Tensor<S>& g = *t.grad(self);
                        if (t.requires_grad(a.id))
                          blas::gemm(blas::Trans::No, blas::Trans::No, m, k, n, g.data(),
                                     t.value(b.id).data(), t.grad_buffer(a.id).data(), true);
                        if (t.requires_grad(b.id))
                          blas::gemm(blas::Trans::Yes, blas::Trans::No, n, k, m, g.data(),
                                     t.value(a.id).data(), t.grad_buffer(b.id).data(), true);
                      });
}

// x [T x in] * w [in x out] + bias [out]
template <class S>
Var<S> linear(Var<S> x, Var<S> w, Var<S> bias) {
  const auto &X = x.value(), &W = w.value(), &B = bias.value();
  detail::require_rank2_match<S>("linear", X.cols(), W.rows(), X.shape(), W.shape());
  detail::require_rank2_match<S>("linear(bias)", W.cols(), B.size(), W.shape(), B.shape());
  const std::size_t m = X.rows(), k = X.cols(), n = W.cols();
  Tensor<S> out = Tensor<S>::matrix(m, n);
  for (std::size_t r = 0; r < m; ++r)
    for (std::size_t c = 0; c < n; ++c) out.at(r, c) = B[c];
  blas::gemm(blas::Trans::No, blas::Trans::No, m, n, k, X.data(), W.data(), out.data(), true);
  return x.tape->push(std::move(out), detail::any_grad({x, w, bias}),
                      [x, w, bias, m, n, k](Tape<S>& t, std::size_t self) {
                        const Tensor<S>& g = *t.grad(self);
                        if (t.requires_grad(x.id))
                          blas::gemm(blas::Trans::No, blas::Trans::Yes, m, k, n, g.data(),
                                     t.value(w.id).data(), t.grad_buffer(x.id).data(), true);
                        if (t.requires_grad(w.id))
                          blas::gemm(blas::Trans::Yes, blas::Trans::No, k, n, m,
                                     t.value(x.id).data(), g.data(), t.grad_buffer(w.id).data(),
                                     true);
                        if (t.requires_grad(bias.id)) {
                          Tensor<S>& gb = t.grad_buffer(bias.id);
                          for (std::size_t r = 0; r < m; ++r)
                            for (std::size_t c = 0; c < n; ++c) gb[c] += g.at(r, c);
                        }
                      });
}

template <class S>
Var<S> transpose(Var<S> a) {
  const auto& A = a.value();
  const std::size_t m = A.rows(), n = A.cols();
  Tensor<S> out = Tensor<S>::matrix(n, m);
  for (std::size_t r = 0; r < m; ++r)
    for (std::size_t c = 0; c < n; ++c) out.at(c, r) = A.at(r, c);
  return a.tape->push(std::move(out), a.requires_grad(), [a, m, n](Tape<S>& t, std::size_t self) {
    const Tensor<S>& g = *t.grad(self);
    Tensor<S>& ga = t.grad_buffer(a.id);
    for (std::size_t r = 0; r < m; ++r)
      for (std::size_t c = 0; c < n; ++c) ga.at(r, c) += g.at(c, r);
  });
}

template <class S>
Var<S> add(Var<S> a, Var<S> b) {
  a.value().require_same_shape(b.value(), "add");
  Tensor<S> out = a.value();
  out += b.value();
  return a.tape->push(std::move(out), detail::any_grad({a, b}), [a, b](Tape<S>& t, std::size_t self) {
    const Tensor<S>& g = *t.grad(self);
    t.accumulate(a.id, g);
    t.accumulate(b.id, g);
  });
}

template <class S>
Var<S> sub(Var<S> a, Var<S> b) {
  a.value().require_same_shape(b.value(), "sub");
  Tensor<S> out = a.value();
  const auto& B = b.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] -= B[i];
  return a.tape->push(std::move(out), detail::any_grad({a, b}), [a, b](Tape<S>& t, std::size_t self) {
    const Tensor<S>& g = *t.grad(self);
    t.accumulate(a.id, g);
    if (t.requires_grad(b.id)) {
      Tensor<S>& gb = t.grad_buffer(b.id);
      for (std::size_t i = 0; i < g.size(); ++i) gb[i] -= g[i];
    }
  });
}

template <class S>
Var<S> mul(Var<S> a, Var<S> b) {
  a.value().require_same_shape(b.value(), "mul");
  Tensor<S> out = a.value();
  const auto& B = b.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] *= B[i];
  return a.tape->push(std::move(out), detail::any_grad({a, b}), [a, b](Tape<S>& t, std::size_t self) {
    const Tensor<S>& g = *t.grad(self);
    if (t.requires_grad(a.id)) {
      Tensor<S>& ga = t.grad_buffer(a.id);
      const auto& B = t.value(b.id);
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * B[i];
    }
    if (t.requires_grad(b.id)) {
      Tensor<S>& gb = t.grad_buffer(b.id);
      const auto& A = t.value(a.id);
      for (std::size_t i = 0; i < g.size(); ++i) gb[i] += g[i] * A[i];
    }
  });
}

template <class S>
Var<S> scale(Var<S> a, S s) {
  Tensor<S> out = a.value();
  for (auto& v : out.values()) v *= s;
  return a.tape->push(std::move(out), a.requires_grad(), [a, s](Tape<S>& t, std::size_t self) {
    const Tensor<S>& g = *t.grad(self);
    Tensor<S>& ga = t.grad_buffer(a.id);
    for (std::size_t i = 0; i < g.size(); ++i) ga[i] += s * g[i];
  });
}

// Adds a constant tensor (masks, positional tables) without recording it.
template <class S>
Var<S> add_constant(Var<S> a, const Tensor<S>& c) {
  a.value().require_same_shape(c, "add_constant");
  Tensor<S> out = a.value();
  out += c;
  return a.tape->push(std::move(out), a.requires_grad(), [a](Tape<S>& t, std::size_t self) {
    t.accumulate(a.id, *t.grad(self));
  });
}

template <class S>
Var<S> gelu(Var<S> a) {
  const auto& A = a.value();
  Tensor<S> out(A.shape());
  const S inv_sqrt2 = S{1} / std::numbers::sqrt2_v<S>;
  for (std::size_t i = 0; i < A.size(); ++i)
    out[i] = S{0.5} * A[i] * (S{1} + std::erf(A[i] * inv_sqrt2));
  return a.tape->push(std::move(out), a.requires_grad(), [a, inv_sqrt2](Tape<S>& t, std::size_t self) {
    const Tensor<S>& g = *t.grad(self);
    const auto& A = t.value(a.id);
    Tensor<S>& ga = t.grad_buffer(a.id);
    const S inv_sqrt_2pi = inv_sqrt2 * std::numbers::inv_sqrtpi_v<S>;
    for (std::size_t i = 0; i < g.size(); ++i) {
      const S x = A[i];
      const S cdf = S{0.5} * (S{1} + std::erf(x * inv_sqrt2));
      const S pdf = inv_sqrt_2pi * std::exp(S{-0.5} * x * x);
      ga[i] += g[i] * (cdf + x * pdf);
    }
  });
}

// Row-wise softmax with max subtraction.
template <class S>
Var<S> softmax_rows(Var<S> a) {
  const auto& A = a.value();
  detail::require_finite(A, "softmax");
  if (A.cols() == 0) throw DimensionError("softmax over an empty axis");
  Tensor<S> out(A.shape());
  for (std::size_t r = 0; r < A.rows(); ++r) {
    auto x = A.row(r);
    auto y = out.row(r);
    S mx = -std::numeric_limits<S>::infinity();
    for (S v : x) mx = std::max(mx, v);
    S sum{0};
    for (std::size_t c = 0; c < x.size(); ++c) {
      y[c] = (x[c] == -std::numeric_limits<S>::infinity()) ? S{0} : std::exp(x[c] - mx);
      sum += y[c];
    }
    for (auto& v : y) v /= sum;
  }
  return a.tape->push(std::move(out), a.requires_grad(), [a](Tape<S>& t, std::size_t self) {
    const Tensor<S>& g = *t.grad(self);
    const Tensor<S>& y = t.value(self);
    Tensor<S>& ga = t.grad_buffer(a.id);
    for (std::size_t r = 0; r < y.rows(); ++r) {
      auto yr = y.row(r);
      auto gr = g.row(r);
      S dot{0};
      for (std::size_t c = 0; c < yr.size(); ++c) dot += gr[c] * yr[c];
      auto gar = ga.row(r);
      for (std::size_t c = 0; c < yr.size(); ++c) gar[c] += yr[c] * (gr[c] - dot);
    }
  });
}

template <class S>
Var<S> log_softmax_rows(Var<S> a) {
  const auto& A = a.value();
  detail::require_finite(A, "log_softmax");
  if (A.cols() == 0) throw DimensionError("log_softmax over an empty axis");
  Tensor<S> out(A.shape());
  for (std::size_t r = 0; r < A.rows(); ++r) {
    auto x = A.row(r);
    auto y = out.row(r);
    S mx = -std::numeric_limits<S>::infinity();
    for (S v : x) mx = std::max(mx, v);
    S sum{0};
    for (S v : x) sum += std::exp(v - mx);
    const S lse = mx + std::log(sum);
    for (std::size_t c = 0; c < x.size(); ++c) y[c] = x[c] - lse;
  }
  return a.tape->push(std::move(out), a.requires_grad(), [a](Tape<S>& t, std::size_t self) {
    const Tensor<S>& g = *t.grad(self);
    const Tensor<S>& y = t.value(self);
    Tensor<S>& ga = t.grad_buffer(a.id);
    for (std::size_t r = 0; r < y.rows(); ++r) {
      auto yr = y.row(r);
      auto gr = g.row(r);
      S gsum{0};
      for (S v : gr) gsum += v;
      auto gar = ga.row(r);
      for (std::size_t c = 0; c < yr.size(); ++c) gar[c] += gr[c] - std::exp(yr[c]) * gsum;
    }
  });
}

// Per-row normalization to zero mean / unit variance followed by gain and bias.
template <class S>
Var<S> layer_norm(Var<S> x, Var<S> gain, Var<S> bias, S eps) {
  const auto &X = x.value(), &G = gain.value(), &B = bias.value();
  const std::size_t T = X.rows(), d = X.cols();
  if (G.size() != d || B.size() != d)
    throw DimensionError("layer_norm: gain/bias " + shape_str(G.shape()) + "/" + shape_str(B.shape()) +
                         " do not match width of " + shape_str(X.shape()));
  if (!(eps > S{0})) throw ConfigError("layer_norm: eps must be positive");
  Tensor<S> out(X.shape());
  Tensor<S> xhat(X.shape());
  std::vector<S> inv_std(T);
  for (std::size_t r = 0; r < T; ++r) {
    auto xr = X.row(r);
    S mean{0};
    for (S v : xr) mean += v;
    mean /= static_cast<S>(d);
    S var{0};
    for (S v : xr) var += (v - mean) * (v - mean);
    var /= static_cast<S>(d);
    inv_std[r] = S{1} / std::sqrt(var + eps);
    for (std::size_t c = 0; c < d; ++c) {
      xhat.at(r, c) = (xr[c] - mean) * inv_std[r];
      out.at(r, c) = xhat.at(r, c) * G[c] + B[c];
    }
  }
  return x.tape->push(
      std::move(out), detail::any_grad({x, gain, bias}),
      [x, gain, bias, xhat = std::move(xhat), inv_std = std::move(inv_std), T, d](Tape<S>& t,
                                                                                 std::size_t self) {
        const Tensor<S>& g = *t.grad(self);
        const auto& G = t.value(gain.id);
        if (t.requires_grad(gain.id)) {
          Tensor<S>& gg = t.grad_buffer(gain.id);
          for (std::size_t r = 0; r < T; ++r)
            for (std::size_t c = 0; c < d; ++c) gg[c] += g.at(r, c) * xhat.at(r, c);
        }
        if (t.requires_grad(bias.id)) {
          Tensor<S>& gb = t.grad_buffer(bias.id);
          for (std::size_t r = 0; r < T; ++r)
            for (std::size_t c = 0; c < d; ++c) gb[c] += g.at(r, c);
        }
        if (t.requires_grad(x.id)) {
          Tensor<S>& gx = t.grad_buffer(x.id);
          const S inv_d = S{1} / static_cast<S>(d);
          for (std::size_t r = 0; r < T; ++r) {
            S sum_dy{0}, sum_dy_xhat{0};
            for (std::size_t c = 0; c < d; ++c) {
              const S dy = g.at(r, c) * G[c];
              sum_dy += dy;
              sum_dy_xhat += dy * xhat.at(r, c);
            }
            for (std::size_t c = 0; c < d; ++c) {
              const S dy = g.at(r, c) * G[c];
              gx.at(r, c) += inv_std[r] * (dy - inv_d * sum_dy - xhat.at(r, c) * inv_d * sum_dy_xhat);
            }
          }
        }
      });
}

template <class S>
Var<S> slice_cols(Var<S> a, std::size_t c0, std::size_t n) {
  const auto& A = a.value();
  if (c0 + n > A.cols())
    throw DimensionError("slice_cols [" + std::to_string(c0) + "," + std::to_string(c0 + n) +
                         ") out of range for " + shape_str(A.shape()));
  const std::size_t m = A.rows();
  Tensor<S> out = Tensor<S>::matrix(m, n);
  for (std::size_t r = 0; r < m; ++r)
    for (std::size_t c = 0; c < n; ++c) out.at(r, c) = A.at(r, c0 + c);
  return a.tape->push(std::move(out), a.requires_grad(), [a, c0, n, m](Tape<S>& t, std::size_t self) {
    const Tensor<S>& g = *t.grad(self);
    Tensor<S>& ga = t.grad_buffer(a.id);
    for (std::size_t r = 0; r < m; ++r)
      for (std::size_t c = 0; c < n; ++c) ga.at(r, c0 + c) += g.at(r, c);
  });
}

template <class S>
Var<S> slice_rows(Var<S> a, std::size_t r0, std::size_t n) {
  const auto& A = a.value();
  if (r0 + n > A.rows())
    throw DimensionError("slice_rows [" + std::to_string(r0) + "," + std::to_string(r0 + n) +
                         ") out of range for " + shape_str(A.shape()));
  const std::size_t w = A.cols();
  Tensor<S> out = Tensor<S>::matrix(n, w);
  std::copy(A.data() + r0 * w, A.data() + (r0 + n) * w, out.data());
  return a.tape->push(std::move(out), a.requires_grad(), [a, r0, n, w](Tape<S>& t, std::size_t self) {
    const Tensor<S>& g = *t.grad(self);
    Tensor<S>& ga = t.grad_buffer(a.id);
    for (std::size_t i = 0; i < n * w; ++i) ga[r0 * w + i] += g[i];
  });
}

template <class S>
Var<S> concat_cols(const std::vector<Var<S>>& parts) {
  if (parts.empty()) throw DimensionError("concat_cols of nothing");
  const std::size_t m = parts[0].rows();
  std::size_t n = 0;
  bool rg = false;
  for (const auto& p : parts) {
    if (p.rows() != m) throw DimensionError("concat_cols: row count mismatch");
    n += p.cols();
    rg = rg || p.requires_grad();
  }
  Tensor<S> out = Tensor<S>::matrix(m, n);
  std::size_t off = 0;
  for (const auto& p : parts) {
    const auto& P = p.value();
    for (std::size_t r = 0; r < m; ++r)
      for (std::size_t c = 0; c < P.cols(); ++c) out.at(r, off + c) = P.at(r, c);
    off += P.cols();
  }
  return parts[0].tape->push(std::move(out), rg, [parts, m](Tape<S>& t, std::size_t self) {
    const Tensor<S>& g = *t.grad(self);
    std::size_t off = 0;
    for (const auto& p : parts) {
      const std::size_t w = t.value(p.id).cols();
      if (t.requires_grad(p.id)) {
        Tensor<S>& gp = t.grad_buffer(p.id);
        for (std::size_t r = 0; r < m; ++r)
          for (std::size_t c = 0; c < w; ++c) gp.at(r, c) += g.at(r, off + c);
      }
      off += w;
    }
  });
}

// Unfolds x [L x C] into frames [T x (kernel*C)] with
// T = floor((L - kernel) / stride) + 1. Row t holds x[t*stride .. t*stride+kernel).
template <class S>
Var<S> im2col(Var<S> x, std::size_t kernel, std::size_t stride) {
  const auto& X = x.value();
  const std::size_t L = X.rows(), C = X.cols();
  if (L < kernel)
    throw DimensionError("im2col: input length " + std::to_string(L) + " shorter than kernel " +
                         std::to_string(kernel));
  const std::size_t T = (L - kernel) / stride + 1;
  const std::size_t w = kernel * C;
  Tensor<S> out = Tensor<S>::matrix(T, w);
  for (std::size_t t = 0; t < T; ++t)
    std::copy(X.data() + t * stride * C, X.data() + t * stride * C + w, out.data() + t * w);
  return x.tape->push(std::move(out), x.requires_grad(),
                      [x, T, w, stride, C](Tape<S>& t, std::size_t self) {
                        const Tensor<S>& g = *t.grad(self);
                        Tensor<S>& gx = t.grad_buffer(x.id);
                        for (std::size_t f = 0; f < T; ++f)
                          for (std::size_t i = 0; i < w; ++i) gx[f * stride * C + i] += g[f * w + i];
                      });
}

template <class S>
Var<S> gather_rows(Var<S> table, const std::vector<std::size_t>& idx) {
  const auto& Tb = table.value();
  const std::size_t d = Tb.cols();
  Tensor<S> out = Tensor<S>::matrix(idx.size(), d);
  for (std::size_t i = 0; i < idx.size(); ++i) {
    if (idx[i] >= Tb.rows())
      throw DimensionError("gather_rows: index " + std::to_string(idx[i]) + " out of range for " +
                           shape_str(Tb.shape()));
    std::copy(Tb.data() + idx[i] * d, Tb.data() + (idx[i] + 1) * d, out.data() + i * d);
  }
  return table.tape->push(std::move(out), table.requires_grad(),
                          [table, idx, d](Tape<S>& t, std::size_t self) {
                            const Tensor<S>& g = *t.grad(self);
                            Tensor<S>& gt = t.grad_buffer(table.id);
                            for (std::size_t i = 0; i < idx.size(); ++i)
                              for (std::size_t c = 0; c < d; ++c) gt[idx[i] * d + c] += g[i * d + c];
                          });
}

// Rows flagged in `mask` are replaced by the single row `vec` [1 x d].
template <class S>
Var<S> replace_rows(Var<S> x, const std::vector<bool>& mask, Var<S> vec) {
  const auto &X = x.value(), &V = vec.value();
  if (mask.size() != X.rows()) throw DimensionError("replace_rows: mask length mismatch");
  if (V.size() != X.cols()) throw DimensionError("replace_rows: replacement width mismatch");
  Tensor<S> out = X;
  const std::size_t d = X.cols();
  for (std::size_t r = 0; r < X.rows(); ++r)
    if (mask[r]) std::copy(V.data(), V.data() + d, out.data() + r * d);
  return x.tape->push(std::move(out), detail::any_grad({x, vec}),
                      [x, vec, mask, d](Tape<S>& t, std::size_t self) {
                        const Tensor<S>& g = *t.grad(self);
                        const bool gx = t.requires_grad(x.id), gv = t.requires_grad(vec.id);
                        for (std::size_t r = 0; r < mask.size(); ++r) {
                          if (mask[r] && gv) {
                            Tensor<S>& b = t.grad_buffer(vec.id);
                            for (std::size_t c = 0; c < d; ++c) b[c] += g[r * d + c];
                          } else if (!mask[r] && gx) {
                            Tensor<S>& b = t.grad_buffer(x.id);
                            for (std::size_t c = 0; c < d; ++c) b[r * d + c] += g[r * d + c];
                          }
                        }
                      });
}

// out[i] = x[i, cols[i]] as a column vector [n x 1].
template <class S>
Var<S> pick(Var<S> x, const std::vector<std::size_t>& cols) {
  const auto& X = x.value();
  if (cols.size() != X.rows()) throw DimensionError("pick: one column index per row required");
  Tensor<S> out = Tensor<S>::matrix(cols.size(), 1);
  for (std::size_t r = 0; r < cols.size(); ++r) {
    if (cols[r] >= X.cols()) throw DimensionError("pick: column index out of range");
    out[r] = X.at(r, cols[r]);
  }
  return x.tape->push(std::move(out), x.requires_grad(), [x, cols](Tape<S>& t, std::size_t self) {
    const Tensor<S>& g = *t.grad(self);
    Tensor<S>& gx = t.grad_buffer(x.id);
    for (std::size_t r = 0; r < cols.size(); ++r) gx.at(r, cols[r]) += g[r];
  });
}

// Row means as a column vector [rows x 1].
template <class S>
Var<S> row_mean(Var<S> x) {
  const auto& X = x.value();
  const std::size_t m = X.rows(), n = X.cols();
  Tensor<S> out = Tensor<S>::matrix(m, 1);
  for (std::size_t r = 0; r < m; ++r) {
    S s{0};
    for (S v : X.row(r)) s += v;
    out[r] = s / static_cast<S>(n);
  }
  return x.tape->push(std::move(out), x.requires_grad(), [x, m, n](Tape<S>& t, std::size_t self) {
    const Tensor<S>& g = *t.grad(self);
    Tensor<S>& gx = t.grad_buffer(x.id);
    for (std::size_t r = 0; r < m; ++r)
      for (std::size_t c = 0; c < n; ++c) gx.at(r, c) += g[r] / static_cast<S>(n);
  });
}

template <class S>
Var<S> sum_all(Var<S> x) {
  S s{0};
  for (S v : x.value().values()) s += v;
  return x.tape->push(Tensor<S>({1, 1}, s), x.requires_grad(), [x](Tape<S>& t, std::size_t self) {
    const S g = (*t.grad(self))[0];
    Tensor<S>& gx = t.grad_buffer(x.id);
    for (auto& v : gx.values()) v += g;
  });
}

template <class S>
Var<S> mean_all(Var<S> x) {
  const std::size_t n = x.value().size();
  if (n == 0) throw DimensionError("mean_all of an empty tensor");
  return scale(sum_all(x), S{1} / static_cast<S>(n));
}

// Inverted dropout; identity when p == 0.
template <class S, class Rng>
Var<S> dropout(Var<S> x, S p, Rng& rng) {
  if (p <= S{0}) return x;
  if (p >= S{1}) throw ConfigError("dropout probability must be < 1");
  const auto& X = x.value();
  Tensor<S> keep(X.shape());
  const S s = S{1} / (S{1} - p);
  for (std::size_t i = 0; i < keep.size(); ++i) keep[i] = (rng.uniform() >= static_cast<double>(p)) ? s : S{0};
  Tensor<S> out = X;
  for (std::size_t i = 0; i < out.size(); ++i) out[i] *= keep[i];
  return x.tape->push(std::move(out), x.requires_grad(), [x, keep = std::move(keep)](Tape<S>& t, std::size_t self) {
    const Tensor<S>& g = *t.grad(self);
    Tensor<S>& gx = t.grad_buffer(x.id);
    for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i] * keep[i];
  });
}

}  // namespace accent_ssl::ops
