#pragma once

#include <array>
#include <cmath>
#include <cstddef>
#include <string>
#include <type_traits>
#include <vector>

#include "diffuma/tensor.hpp"

#if DIFFUMA_USE_CBLAS
#include <cblas.h>
#endif

// Differentiable operator set. Binary ops require identical shapes; broadcasting is explicit
// via broadcast_to(). Every backward closure captures exactly the forward values it reads.

namespace diffuma {

namespace detail {

// Row-major GEMM kernels, C[M,N] += op(A) * op(B). With DIFFUMA_USE_CBLAS they forward to
// the system BLAS; the loop versions below are the portable fallback. Either way results are
// deterministic for fixed shapes.
#if DIFFUMA_USE_CBLAS
template <typename T>
bool blas_gemm(CBLAS_TRANSPOSE ta, CBLAS_TRANSPOSE tb, std::size_t m, std::size_t n, std::size_t k,
               const T* a, std::size_t lda, const T* b, std::size_t ldb, T* c) {
  if (m == 0 || n == 0) return true;
  if (k == 0) return true;
  const auto M = static_cast<blasint>(m), N = static_cast<blasint>(n), K = static_cast<blasint>(k);
  if constexpr (std::is_same_v<T, float>) {
    cblas_sgemm(CblasRowMajor, ta, tb, M, N, K, 1.0f, a, static_cast<blasint>(lda), b,
                static_cast<blasint>(ldb), 1.0f, c, N);
    return true;
  } else if constexpr (std::is_same_v<T, double>) {
    cblas_dgemm(CblasRowMajor, ta, tb, M, N, K, 1.0, a, static_cast<blasint>(lda), b,
                static_cast<blasint>(ldb), 1.0, c, N);
    return true;
  }
  return false;
}
#endif

template <typename T>
void gemm_nn(std::size_t m, std::size_t n, std::size_t k, const T* a, const T* b, T* c) {
#if DIFFUMA_USE_CBLAS
  if (blas_gemm<T>(CblasNoTrans, CblasNoTrans, m, n, k, a, k, b, n, c)) return;
#endif
  for (std::size_t i = 0; i < m; ++i) {
    T* ci = c + i * n;
    const T* ai = a + i * k;
    for (std::size_t p = 0; p < k; ++p) {
      const T av = ai[p];
      if (av == T(0)) continue;
      const T* bp = b + p * n;
      for (std::size_t j = 0; j < n; ++j) ci[j] += av * bp[j];
    }
  }
}

// C[M,N] += A[M,K] * B[N,K]^T
template <typename T>
void gemm_nt(std::size_t m, std::size_t n, std::size_t k, const T* a, const T* b, T* c) {
#if DIFFUMA_USE_CBLAS
  if (blas_gemm<T>(CblasNoTrans, CblasTrans, m, n, k, a, k, b, k, c)) return;
#endif
  for (std::size_t i = 0; i < m; ++i) {
    const T* ai = a + i * k;
    for (std::size_t j = 0; j < n; ++j) {
      const T* bj = b + j * k;
      T acc = T(0);
      for (std::size_t p = 0; p < k; ++p) acc += ai[p] * bj[p];
      c[i * n + j] += acc;
    }
  }
}

// C[M,N] += A[K,M]^T * B[K,N]
template <typename T>
void gemm_tn(std::size_t m, std::size_t n, std::size_t k, const T* a, const T* b, T* c) {
#if DIFFUMA_USE_CBLAS
  if (blas_gemm<T>(CblasTrans, CblasNoTrans, m, n, k, a, m, b, n, c)) return;
#endif
  for (std::size_t p = 0; p < k; ++p) {
    const T* ap = a + p * m;
    const T* bp = b + p * n;
    for (std::size_t i = 0; i < m; ++i) {
      const T av = ap[i];
      if (av == T(0)) continue;
      T* ci = c + i * n;
      for (std::size_t j = 0; j < n; ++j) ci[j] += av * bp[j];
    }
  }
}

inline std::vector<std::size_t> strides_of(const Shape& shape) {
  std::vector<std::size_t> s(shape.size(), 1);
  for (std::size_t i = shape.size(); i-- > 1;) s[i - 1] = s[i] * shape[i];
  return s;
}

template <typename T>
void require_same_shape(const char* op, const Tensor<T>& a, const Tensor<T>& b) {
  if (a.shape() != b.shape()) {
    throw DimensionError(std::string(op) + ": shape mismatch " + to_string(a.shape()) + " vs " +
                         to_string(b.shape()));
  }
}

template <typename T, typename Fwd, typename Deriv>
Tensor<T> unary(const char* op, const Tensor<T>& x, Fwd fwd, Deriv deriv) {
  const auto& xv = x.values();
  std::vector<T> out(xv.size());
  for (std::size_t i = 0; i < xv.size(); ++i) out[i] = fwd(xv[i]);
  auto xn = x.node();
  return make_result<T>(op, x.shape(), std::move(out), {xn}, [xn, deriv](const std::vector<T>& g) {
    if (!xn->requires_grad) return;
    auto& gx = xn->grad_buffer();
    for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i] * deriv(xn->data[i]);
  });
}

template <typename T>
T sigmoid_scalar(T x) {
  if (x >= T(0)) return T(1) / (T(1) + std::exp(-x));
  const T e = std::exp(x);
  return e / (T(1) + e);
}

template <typename T>
void accumulate(const std::shared_ptr<Node<T>>& node, const std::vector<T>& g) {
  if (!node->requires_grad) return;
  auto& buf = node->grad_buffer();
  for (std::size_t i = 0; i < g.size(); ++i) buf[i] += g[i];
}

}  // namespace detail

// ---------------------------------------------------------------------------------------------
// Elementwise

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
  detail::require_same_shape("add", a, b);
  std::vector<T> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] + b[i];
  auto an = a.node(), bn = b.node();
  return detail::make_result<T>("add", a.shape(), std::move(out), {an, bn},
                                [an, bn](const std::vector<T>& g) {
                                  detail::accumulate(an, g);
                                  detail::accumulate(bn, g);
                                });
}

template <typename T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b) {
  detail::require_same_shape("sub", a, b);
  std::vector<T> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] - b[i];
  auto an = a.node(), bn = b.node();
  return detail::make_result<T>("sub", a.shape(), std::move(out), {an, bn},
                                [an, bn](const std::vector<T>& g) {
                                  detail::accumulate(an, g);
                                  if (!bn->requires_grad) return;
                                  auto& gb = bn->grad_buffer();
                                  for (std::size_t i = 0; i < g.size(); ++i) gb[i] -= g[i];
                                });
}

template <typename T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
  detail::require_same_shape("mul", a, b);
  std::vector<T> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] * b[i];
  auto an = a.node(), bn = b.node();
  return detail::make_result<T>("mul", a.shape(), std::move(out), {an, bn},
                                [an, bn](const std::vector<T>& g) {
                                  if (an->requires_grad) {
                                    auto& ga = an->grad_buffer();
                                    for (std::size_t i = 0; i < g.size(); ++i)
                                      ga[i] += g[i] * bn->data[i];
                                  }
                                  if (bn->requires_grad) {
                                    auto& gb = bn->grad_buffer();
                                    for (std::size_t i = 0; i < g.size(); ++i)
                                      gb[i] += g[i] * an->data[i];
                                  }
                                });
}

template <typename T>
Tensor<T> scale(const Tensor<T>& x, T s) {
  return detail::unary<T>("scale", x, [s](T v) { return v * s; }, [s](T) { return s; });
}

template <typename T>
Tensor<T> add_scalar(const Tensor<T>& x, T c) {
  return detail::unary<T>("add_scalar", x, [c](T v) { return v + c; }, [](T) { return T(1); });
}

template <typename T>
Tensor<T> neg(const Tensor<T>& x) {
  return scale(x, T(-1));
}

template <typename T>
Tensor<T> exp(const Tensor<T>& x) {
  return detail::unary<T>("exp", x, [](T v) { return std::exp(v); },
                          [](T v) { return std::exp(v); });
}

template <typename T>
Tensor<T> square(const Tensor<T>& x) {
  return detail::unary<T>("square", x, [](T v) { return v * v; }, [](T v) { return T(2) * v; });
}

/// |x| with subgradient 0 at the kink.
template <typename T>
Tensor<T> abs(const Tensor<T>& x) {
  return detail::unary<T>("abs", x, [](T v) { return std::abs(v); },
                          [](T v) { return v > T(0) ? T(1) : (v < T(0) ? T(-1) : T(0)); });
}

template <typename T>
Tensor<T> sigmoid(const Tensor<T>& x) {
  return detail::unary<T>("sigmoid", x, [](T v) { return detail::sigmoid_scalar(v); },
                          [](T v) {
                            const T s = detail::sigmoid_scalar(v);
                            return s * (T(1) - s);
                          });
}

template <typename T>
Tensor<T> silu(const Tensor<T>& x) {
  return detail::unary<T>("silu", x, [](T v) { return v * detail::sigmoid_scalar(v); },
                          [](T v) {
                            const T s = detail::sigmoid_scalar(v);
                            return s * (T(1) + v * (T(1) - s));
                          });
}

template <typename T>
Tensor<T> softplus(const Tensor<T>& x) {
  return detail::unary<T>(
      "softplus", x, [](T v) { return std::max(v, T(0)) + std::log1p(std::exp(-std::abs(v))); },
      [](T v) { return detail::sigmoid_scalar(v); });
}

// ---------------------------------------------------------------------------------------------
// Shape manipulation

template <typename T>
Tensor<T> reshape(const Tensor<T>& x, Shape shape) {
  if (numel(shape) != x.numel()) {
    throw DimensionError("reshape: cannot view " + to_string(x.shape()) + " as " +
                         to_string(shape));
  }
  auto xn = x.node();
  return detail::make_result<T>("reshape", std::move(shape), x.values(), {xn},
                                [xn](const std::vector<T>& g) { detail::accumulate(xn, g); });
}

/// Materialized axis permutation: out.shape[i] = x.shape[axes[i]].
template <typename T>
Tensor<T> permute(const Tensor<T>& x, const std::vector<std::size_t>& axes) {
  const auto nd = x.ndim();
  if (axes.size() != nd) throw DimensionError("permute: axes rank mismatch");
  std::vector<bool> used(nd, false);
  Shape out_shape(nd);
  for (std::size_t i = 0; i < nd; ++i) {
    if (axes[i] >= nd || used[axes[i]]) throw DimensionError("permute: invalid axes");
    used[axes[i]] = true;
    out_shape[i] = x.dim(axes[i]);
  }
  const auto in_strides = detail::strides_of(x.shape());
  std::vector<std::size_t> src_stride(nd);
  for (std::size_t i = 0; i < nd; ++i) src_stride[i] = in_strides[axes[i]];
  // map[out_index] = in_index
  const std::size_t n = x.numel();
  auto map = std::make_shared<std::vector<std::size_t>>(n);
  std::vector<std::size_t> idx(nd, 0);
  std::size_t src = 0;
  for (std::size_t o = 0; o < n; ++o) {
    (*map)[o] = src;
    for (std::size_t d = nd; d-- > 0;) {
      ++idx[d];
      src += src_stride[d];
      if (idx[d] < out_shape[d]) break;
      src -= src_stride[d] * idx[d];
      idx[d] = 0;
    }
  }
  std::vector<T> out(n);
  const auto& xv = x.values();
  for (std::size_t o = 0; o < n; ++o) out[o] = xv[(*map)[o]];
  auto xn = x.node();
  return detail::make_result<T>("permute", std::move(out_shape), std::move(out), {xn},
                                [xn, map](const std::vector<T>& g) {
                                  if (!xn->requires_grad) return;
                                  auto& gx = xn->grad_buffer();
                                  for (std::size_t o = 0; o < g.size(); ++o) gx[(*map)[o]] += g[o];
                                });
}

template <typename T>
Tensor<T> transpose(const Tensor<T>& x, std::size_t a, std::size_t b) {
  std::vector<std::size_t> axes(x.ndim());
  std::iota(axes.begin(), axes.end(), std::size_t{0});
  if (a >= axes.size() || b >= axes.size()) throw DimensionError("transpose: axis out of range");
  std::swap(axes[a], axes[b]);
  return permute(x, axes);
}

/// Reverses the order of elements along one axis.
template <typename T>
Tensor<T> flip(const Tensor<T>& x, std::size_t axis) {
  if (axis >= x.ndim()) throw DimensionError("flip: axis out of range");
  const auto& s = x.shape();
  std::size_t outer = 1, inner = 1;
  for (std::size_t i = 0; i < axis; ++i) outer *= s[i];
  for (std::size_t i = axis + 1; i < s.size(); ++i) inner *= s[i];
  const std::size_t len = s[axis];
  auto reverse_into = [outer, inner, len](const std::vector<T>& src, std::vector<T>& dst,
                                          bool add) {
    for (std::size_t o = 0; o < outer; ++o)
      for (std::size_t t = 0; t < len; ++t) {
        const T* sp = &src[(o * len + t) * inner];
        T* dp = &dst[(o * len + (len - 1 - t)) * inner];
        for (std::size_t i = 0; i < inner; ++i) dp[i] = add ? dp[i] + sp[i] : sp[i];
      }
  };
  std::vector<T> out(x.numel());
  if (!out.empty()) reverse_into(x.values(), out, false);
  auto xn = x.node();
  return detail::make_result<T>("flip", s, std::move(out), {xn},
                                [xn, reverse_into](const std::vector<T>& g) {
                                  if (!xn->requires_grad) return;
                                  reverse_into(g, xn->grad_buffer(), true);
                                });
}

/// Explicit broadcast: same rank, every source extent equals the target extent or is 1.
template <typename T>
Tensor<T> broadcast_to(const Tensor<T>& x, const Shape& shape) {
  if (x.ndim() != shape.size()) {
    throw DimensionError("broadcast_to: rank mismatch " + to_string(x.shape()) + " -> " +
                         to_string(shape));
  }
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (x.dim(i) != shape[i] && x.dim(i) != 1) {
      throw DimensionError("broadcast_to: cannot expand " + to_string(x.shape()) + " to " +
                           to_string(shape));
    }
  }
  const auto nd = shape.size();
  const auto in_strides = detail::strides_of(x.shape());
  std::vector<std::size_t> src_stride(nd);
  for (std::size_t i = 0; i < nd; ++i) src_stride[i] = x.dim(i) == 1 ? 0 : in_strides[i];
  const std::size_t n = numel(shape);
  auto map = std::make_shared<std::vector<std::size_t>>(n);
  std::vector<std::size_t> idx(nd, 0);
  std::size_t src = 0;
  for (std::size_t o = 0; o < n; ++o) {
    (*map)[o] = src;
    for (std::size_t d = nd; d-- > 0;) {
      ++idx[d];
      src += src_stride[d];
      if (idx[d] < shape[d]) break;
      src -= src_stride[d] * idx[d];
      idx[d] = 0;
    }
  }
  std::vector<T> out(n);
  const auto& xv = x.values();
  for (std::size_t o = 0; o < n; ++o) out[o] = xv[(*map)[o]];
  auto xn = x.node();
  return detail::make_result<T>("broadcast_to", shape, std::move(out), {xn},
                                [xn, map](const std::vector<T>& g) {
                                  if (!xn->requires_grad) return;
                                  auto& gx = xn->grad_buffer();
                                  for (std::size_t o = 0; o < g.size(); ++o) gx[(*map)[o]] += g[o];
                                });
}

template <typename T>
Tensor<T> concat(const std::vector<Tensor<T>>& parts, std::size_t axis) {
  if (parts.empty()) throw DimensionError("concat: no inputs");
  const auto& s0 = parts[0].shape();
  if (axis >= s0.size()) throw DimensionError("concat: axis out of range");
  Shape out_shape = s0;
  out_shape[axis] = 0;
  for (const auto& p : parts) {
    if (p.ndim() != s0.size()) throw DimensionError("concat: rank mismatch");
    for (std::size_t i = 0; i < s0.size(); ++i)
      if (i != axis && p.dim(i) != s0[i])
        throw DimensionError("concat: shape mismatch " + to_string(p.shape()) + " vs " +
                             to_string(s0));
    out_shape[axis] += p.dim(axis);
  }
  std::size_t outer = 1, inner = 1;
  for (std::size_t i = 0; i < axis; ++i) outer *= s0[i];
  for (std::size_t i = axis + 1; i < s0.size(); ++i) inner *= s0[i];
  const std::size_t total = out_shape[axis];
  std::vector<T> out(numel(out_shape));
  std::vector<std::size_t> offsets;
  std::size_t off = 0;
  for (const auto& p : parts) {
    offsets.push_back(off);
    const std::size_t len = p.dim(axis);
    const auto& pv = p.values();
    for (std::size_t o = 0; o < outer; ++o)
      std::copy_n(pv.begin() + static_cast<std::ptrdiff_t>(o * len * inner), len * inner,
                  out.begin() + static_cast<std::ptrdiff_t>((o * total + off) * inner));
    off += len;
  }
  std::vector<std::shared_ptr<Node<T>>> nodes;
  for (const auto& p : parts) nodes.push_back(p.node());
  return detail::make_result<T>(
      "concat", out_shape, std::move(out), nodes,
      [nodes, offsets, outer, inner, total, axis](const std::vector<T>& g) {
        for (std::size_t k = 0; k < nodes.size(); ++k) {
          if (!nodes[k]->requires_grad) continue;
          const std::size_t len = nodes[k]->shape[axis];
          auto& gp = nodes[k]->grad_buffer();
          for (std::size_t o = 0; o < outer; ++o)
            for (std::size_t i = 0; i < len * inner; ++i)
              gp[o * len * inner + i] += g[(o * total + offsets[k]) * inner + i];
        }
      });
}

/// Half-open range [begin, end) along one axis.
template <typename T>
Tensor<T> slice(const Tensor<T>& x, std::size_t axis, std::size_t begin, std::size_t end) {
  if (axis >= x.ndim()) throw DimensionError("slice: axis out of range");
  if (begin > end || end > x.dim(axis)) {
    throw DimensionError("slice: range [" + std::to_string(begin) + "," + std::to_string(end) +
                         ") invalid for extent " + std::to_string(x.dim(axis)));
  }
  const auto& s = x.shape();
  std::size_t outer = 1, inner = 1;
  for (std::size_t i = 0; i < axis; ++i) outer *= s[i];
  for (std::size_t i = axis + 1; i < s.size(); ++i) inner *= s[i];
  const std::size_t len = end - begin, full = s[axis];
  Shape out_shape = s;
  out_shape[axis] = len;
  std::vector<T> out(numel(out_shape));
  const auto& xv = x.values();
  for (std::size_t o = 0; o < outer; ++o)
    std::copy_n(xv.begin() + static_cast<std::ptrdiff_t>((o * full + begin) * inner), len * inner,
                out.begin() + static_cast<std::ptrdiff_t>(o * len * inner));
  auto xn = x.node();
  return detail::make_result<T>("slice", std::move(out_shape), std::move(out), {xn},
                                [xn, outer, inner, len, full, begin](const std::vector<T>& g) {
                                  if (!xn->requires_grad) return;
                                  auto& gx = xn->grad_buffer();
                                  for (std::size_t o = 0; o < outer; ++o)
                                    for (std::size_t i = 0; i < len * inner; ++i)
                                      gx[(o * full + begin) * inner + i] += g[o * len * inner + i];
                                });
}

// ---------------------------------------------------------------------------------------------
// Reductions

template <typename T>
Tensor<T> sum(const Tensor<T>& x) {
  T acc = T(0);
  for (const T v : x.values()) acc += v;
  auto xn = x.node();
  return detail::make_result<T>("sum", {}, {acc}, {xn}, [xn](const std::vector<T>& g) {
    if (!xn->requires_grad) return;
    auto& gx = xn->grad_buffer();
    for (auto& v : gx) v += g[0];
  });
}

template <typename T>
Tensor<T> mean(const Tensor<T>& x) {
  if (x.numel() == 0) throw DimensionError("mean of empty tensor");
  const T n = static_cast<T>(x.numel());
  T acc = T(0);
  for (const T v : x.values()) acc += v;
  auto xn = x.node();
  return detail::make_result<T>("mean", {}, {acc / n}, {xn}, [xn, n](const std::vector<T>& g) {
    if (!xn->requires_grad) return;
    auto& gx = xn->grad_buffer();
    const T d = g[0] / n;
    for (auto& v : gx) v += d;
  });
}

/// Sum over one axis; the axis is removed from the shape.
template <typename T>
Tensor<T> sum_axis(const Tensor<T>& x, std::size_t axis) {
  if (axis >= x.ndim()) throw DimensionError("sum_axis: axis out of range");
  const auto& s = x.shape();
  std::size_t outer = 1, inner = 1;
  for (std::size_t i = 0; i < axis; ++i) outer *= s[i];
  for (std::size_t i = axis + 1; i < s.size(); ++i) inner *= s[i];
  const std::size_t len = s[axis];
  Shape out_shape = s;
  out_shape.erase(out_shape.begin() + static_cast<std::ptrdiff_t>(axis));
  std::vector<T> out(outer * inner, T(0));
  const auto& xv = x.values();
  for (std::size_t o = 0; o < outer; ++o)
    for (std::size_t t = 0; t < len; ++t)
      for (std::size_t i = 0; i < inner; ++i) out[o * inner + i] += xv[(o * len + t) * inner + i];
  auto xn = x.node();
  return detail::make_result<T>("sum_axis", std::move(out_shape), std::move(out), {xn},
                                [xn, outer, inner, len](const std::vector<T>& g) {
                                  if (!xn->requires_grad) return;
                                  auto& gx = xn->grad_buffer();
                                  for (std::size_t o = 0; o < outer; ++o)
                                    for (std::size_t t = 0; t < len; ++t)
                                      for (std::size_t i = 0; i < inner; ++i)
                                        gx[(o * len + t) * inner + i] += g[o * inner + i];
                                });
}

template <typename T>
Tensor<T> mean_axis(const Tensor<T>& x, std::size_t axis) {
  if (axis >= x.ndim() || x.dim(axis) == 0) throw DimensionError("mean_axis: empty or bad axis");
  return scale(sum_axis(x, axis), T(1) / static_cast<T>(x.dim(axis)));
}

// ---------------------------------------------------------------------------------------------
// Linear algebra

/// [M,K]x[K,N] -> [M,N], or batched [G,M,K]x[G,K,N] -> [G,M,N].
template <typename T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b) {
  const bool batched = a.ndim() == 3;
  if (!((a.ndim() == 2 && b.ndim() == 2) || (a.ndim() == 3 && b.ndim() == 3))) {
    throw DimensionError("matmul: expected 2-D or 3-D operands, got " + to_string(a.shape()) +
                         " and " + to_string(b.shape()));
  }
  const std::size_t g = batched ? a.dim(0) : 1;
  const std::size_t m = a.dim(a.ndim() - 2), k = a.dim(a.ndim() - 1);
  const std::size_t kb = b.dim(b.ndim() - 2), n = b.dim(b.ndim() - 1);
  if (k != kb || (batched && b.dim(0) != g)) {
    throw DimensionError("matmul: inner dimensions differ " + to_string(a.shape()) + " x " +
                         to_string(b.shape()));
  }
  Shape out_shape = batched ? Shape{g, m, n} : Shape{m, n};
  std::vector<T> out(g * m * n, T(0));
  for (std::size_t q = 0; q < g; ++q)
    detail::gemm_nn(m, n, k, a.values().data() + q * m * k, b.values().data() + q * k * n,
                    out.data() + q * m * n);
  auto an = a.node(), bn = b.node();
  return detail::make_result<T>(
      "matmul", std::move(out_shape), std::move(out), {an, bn},
      [an, bn, g, m, n, k](const std::vector<T>& gout) {
        for (std::size_t q = 0; q < g; ++q) {
          const T* go = gout.data() + q * m * n;
          if (an->requires_grad)  // dA = dC * B^T
            detail::gemm_nt(m, k, n, go, bn->data.data() + q * k * n,
                            an->grad_buffer().data() + q * m * k);
          if (bn->requires_grad)  // dB = A^T * dC
            detail::gemm_tn(k, n, m, an->data.data() + q * m * k, go,
                            bn->grad_buffer().data() + q * k * n);
        }
      });
}

// ---------------------------------------------------------------------------------------------
// Normalization

/// Softmax over the last axis.
template <typename T>
Tensor<T> softmax(const Tensor<T>& x) {
  if (x.ndim() == 0) throw DimensionError("softmax: needs at least one axis");
  const std::size_t len = x.shape().back();
  const std::size_t rows = len == 0 ? 0 : x.numel() / len;
  std::vector<T> out(x.numel());
  const auto& xv = x.values();
  for (std::size_t r = 0; r < rows; ++r) {
    const T* xr = &xv[r * len];
    T* yr = &out[r * len];
    const T mx = *std::max_element(xr, xr + len);
    T z = T(0);
    for (std::size_t i = 0; i < len; ++i) z += (yr[i] = std::exp(xr[i] - mx));
    for (std::size_t i = 0; i < len; ++i) yr[i] /= z;
  }
  auto xn = x.node();
  auto saved = std::make_shared<std::vector<T>>(out);
  return detail::make_result<T>("softmax", x.shape(), std::move(out), {xn},
                                [xn, saved, rows, len](const std::vector<T>& g) {
                                  if (!xn->requires_grad) return;
                                  auto& gx = xn->grad_buffer();
                                  const auto& y = *saved;
                                  for (std::size_t r = 0; r < rows; ++r) {
                                    T dot = T(0);
                                    for (std::size_t i = 0; i < len; ++i)
                                      dot += g[r * len + i] * y[r * len + i];
                                    for (std::size_t i = 0; i < len; ++i)
                                      gx[r * len + i] += y[r * len + i] * (g[r * len + i] - dot);
                                  }
                                });
}

/// Layer norm over the last axis, optionally followed by a learnable affine (gamma, beta of
/// shape [F]). Pass undefined tensors to skip the affine.
template <typename T>
Tensor<T> layer_norm(const Tensor<T>& x, const Tensor<T>& gamma = {}, const Tensor<T>& beta = {},
                     T eps = T(1e-5)) {
  if (x.ndim() == 0) throw DimensionError("layer_norm: needs at least one axis");
  const std::size_t f = x.shape().back();
  const bool affine = gamma.defined();
  if (affine && (gamma.shape() != Shape{f} || !beta.defined() || beta.shape() != Shape{f})) {
    throw DimensionError("layer_norm: affine parameters must have shape [" + std::to_string(f) +
                         "]");
  }
  const std::size_t rows = f == 0 ? 0 : x.numel() / f;
  auto xhat = std::make_shared<std::vector<T>>(x.numel());
  auto rstd = std::make_shared<std::vector<T>>(rows);
  std::vector<T> out(x.numel());
  const auto& xv = x.values();
  for (std::size_t r = 0; r < rows; ++r) {
    const T* xr = &xv[r * f];
    T mu = T(0);
    for (std::size_t i = 0; i < f; ++i) mu += xr[i];
    mu /= static_cast<T>(f);
    T var = T(0);
    for (std::size_t i = 0; i < f; ++i) var += (xr[i] - mu) * (xr[i] - mu);
    var /= static_cast<T>(f);
    const T rs = T(1) / std::sqrt(var + eps);
    (*rstd)[r] = rs;
    for (std::size_t i = 0; i < f; ++i) {
      const T h = (xr[i] - mu) * rs;
      (*xhat)[r * f + i] = h;
      out[r * f + i] = affine ? h * gamma[i] + beta[i] : h;
    }
  }
  auto xn = x.node();
  std::vector<std::shared_ptr<Node<T>>> inputs{xn};
  std::shared_ptr<Node<T>> gn, bn;
  if (affine) {
    gn = gamma.node();
    bn = beta.node();
    inputs.push_back(gn);
    inputs.push_back(bn);
  }
  return detail::make_result<T>(
      "layer_norm", x.shape(), std::move(out), inputs,
      [xn, gn, bn, xhat, rstd, rows, f](const std::vector<T>& g) {
        const auto& h = *xhat;
        if (gn && gn->requires_grad) {
          auto& gg = gn->grad_buffer();
          for (std::size_t r = 0; r < rows; ++r)
            for (std::size_t i = 0; i < f; ++i) gg[i] += g[r * f + i] * h[r * f + i];
        }
        if (bn && bn->requires_grad) {
          auto& gb = bn->grad_buffer();
          for (std::size_t r = 0; r < rows; ++r)
            for (std::size_t i = 0; i < f; ++i) gb[i] += g[r * f + i];
        }
        if (!xn->requires_grad) return;
        auto& gx = xn->grad_buffer();
        std::vector<T> gh(f);
        for (std::size_t r = 0; r < rows; ++r) {
          T mean_gh = T(0), mean_ghh = T(0);
          for (std::size_t i = 0; i < f; ++i) {
            gh[i] = g[r * f + i] * (gn ? gn->data[i] : T(1));
            mean_gh += gh[i];
            mean_ghh += gh[i] * h[r * f + i];
          }
          mean_gh /= static_cast<T>(f);
          mean_ghh /= static_cast<T>(f);
          const T rs = (*rstd)[r];
          for (std::size_t i = 0; i < f; ++i)
            gx[r * f + i] += rs * (gh[i] - mean_gh - h[r * f + i] * mean_ghh);
        }
      });
}

// ---------------------------------------------------------------------------------------------
// Convolutions (cross-correlation convention: no kernel flip)

struct Conv2dGeometry {
  std::size_t batch, c_in, h, w, c_out, kh, kw, stride_h, stride_w, pad_h, pad_w, out_h, out_w;
};

namespace detail {

// cols[(c*kh+i)*kw+j, oy*ow+ox] = x[c, oy*s-p+i, ox*s-p+j] (zero outside)
template <typename T>
void im2col(const T* x, const Conv2dGeometry& g, T* cols) {
  const std::size_t area = g.out_h * g.out_w;
  for (std::size_t c = 0; c < g.c_in; ++c)
    for (std::size_t i = 0; i < g.kh; ++i)
      for (std::size_t j = 0; j < g.kw; ++j) {
        T* row = cols + ((c * g.kh + i) * g.kw + j) * area;
        for (std::size_t oy = 0; oy < g.out_h; ++oy) {
          const auto iy = static_cast<std::ptrdiff_t>(oy * g.stride_h + i) -
                          static_cast<std::ptrdiff_t>(g.pad_h);
          for (std::size_t ox = 0; ox < g.out_w; ++ox) {
            const auto ix = static_cast<std::ptrdiff_t>(ox * g.stride_w + j) -
                            static_cast<std::ptrdiff_t>(g.pad_w);
            const bool inside = iy >= 0 && ix >= 0 && iy < static_cast<std::ptrdiff_t>(g.h) &&
                                ix < static_cast<std::ptrdiff_t>(g.w);
            row[oy * g.out_w + ox] =
                inside ? x[(c * g.h + static_cast<std::size_t>(iy)) * g.w +
                           static_cast<std::size_t>(ix)]
                       : T(0);
          }
        }
      }
}

// Adjoint of im2col: scatters-adds columns back into an image.
template <typename T>
void col2im(const T* cols, const Conv2dGeometry& g, T* x) {
  const std::size_t area = g.out_h * g.out_w;
  for (std::size_t c = 0; c < g.c_in; ++c)
    for (std::size_t i = 0; i < g.kh; ++i)
      for (std::size_t j = 0; j < g.kw; ++j) {
        const T* row = cols + ((c * g.kh + i) * g.kw + j) * area;
        for (std::size_t oy = 0; oy < g.out_h; ++oy) {
          const auto iy = static_cast<std::ptrdiff_t>(oy * g.stride_h + i) -
                          static_cast<std::ptrdiff_t>(g.pad_h);
          if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(g.h)) continue;
          for (std::size_t ox = 0; ox < g.out_w; ++ox) {
            const auto ix = static_cast<std::ptrdiff_t>(ox * g.stride_w + j) -
                            static_cast<std::ptrdiff_t>(g.pad_w);
            if (ix < 0 || ix >= static_cast<std::ptrdiff_t>(g.w)) continue;
            x[(c * g.h + static_cast<std::size_t>(iy)) * g.w + static_cast<std::size_t>(ix)] +=
                row[oy * g.out_w + ox];
          }
        }
      }
}

// Geometry of the forward conv2d that maps an [h,w] image to [out_h,out_w].
inline Conv2dGeometry conv_geometry(const char* op, const Shape& input, const Shape& kernel,
                                    std::array<std::size_t, 2> stride,
                                    std::array<std::size_t, 2> pad) {
  if (input.size() != 4 || kernel.size() != 4) {
    throw DimensionError(std::string(op) + ": expected 4-D input and kernel, got " +
                         to_string(input) + " and " + to_string(kernel));
  }
  if (stride[0] == 0 || stride[1] == 0) throw DimensionError(std::string(op) + ": zero stride");
  Conv2dGeometry g{};
  g.batch = input[0];
  g.c_in = input[1];
  g.h = input[2];
  g.w = input[3];
  g.c_out = kernel[0];
  g.kh = kernel[2];
  g.kw = kernel[3];
  g.stride_h = stride[0];
  g.stride_w = stride[1];
  g.pad_h = pad[0];
  g.pad_w = pad[1];
  if (g.h == 0 || g.w == 0) {
    throw DimensionError(std::string(op) + ": zero-extent spatial dims in " + to_string(input));
  }
  if (kernel[1] != g.c_in) {
    throw DimensionError(std::string(op) + ": kernel expects " + std::to_string(kernel[1]) +
                         " input channels, input has " + std::to_string(g.c_in));
  }
  if (g.kh == 0 || g.kw == 0 || g.kh > g.h + 2 * g.pad_h || g.kw > g.w + 2 * g.pad_w) {
    throw DimensionError(std::string(op) + ": kernel " + to_string(kernel) +
                         " larger than padded input " + to_string(input));
  }
  g.out_h = (g.h + 2 * g.pad_h - g.kh) / g.stride_h + 1;
  g.out_w = (g.w + 2 * g.pad_w - g.kw) / g.stride_w + 1;
  return g;
}

}  // namespace detail

/// input [B,C_in,H,W], kernel [C_out,C_in,kh,kw] -> [B,C_out,H',W'].
template <typename T>
Tensor<T> conv2d(const Tensor<T>& input, const Tensor<T>& kernel,
                 std::array<std::size_t, 2> stride = {1, 1},
                 std::array<std::size_t, 2> padding = {0, 0}) {
  const auto g = detail::conv_geometry("conv2d", input.shape(), kernel.shape(), stride, padding);
  const std::size_t kdim = g.c_in * g.kh * g.kw, area = g.out_h * g.out_w;
  const std::size_t in_sz = g.c_in * g.h * g.w, out_sz = g.c_out * area;
  auto cols = std::make_shared<std::vector<T>>(g.batch * kdim * area);
  std::vector<T> out(g.batch * out_sz, T(0));
  for (std::size_t b = 0; b < g.batch; ++b) {
    T* cb = cols->data() + b * kdim * area;
    detail::im2col(input.values().data() + b * in_sz, g, cb);
    detail::gemm_nn(g.c_out, area, kdim, kernel.values().data(), cb, out.data() + b * out_sz);
  }
  auto xn = input.node(), kn = kernel.node();
  return detail::make_result<T>(
      "conv2d", {g.batch, g.c_out, g.out_h, g.out_w}, std::move(out), {xn, kn},
      [xn, kn, cols, g, kdim, area, in_sz, out_sz](const std::vector<T>& gout) {
        std::vector<T> gcols(kdim * area);
        for (std::size_t b = 0; b < g.batch; ++b) {
          const T* go = gout.data() + b * out_sz;
          if (kn->requires_grad)
            detail::gemm_nt(g.c_out, kdim, area, go, cols->data() + b * kdim * area,
                            kn->grad_buffer().data());
          if (xn->requires_grad) {
            std::fill(gcols.begin(), gcols.end(), T(0));
            detail::gemm_tn(kdim, area, g.c_out, kn->data.data(), go, gcols.data());
            detail::col2im(gcols.data(), g, xn->grad_buffer().data() + b * in_sz);
          }
        }
      });
}

/// Adjoint of conv2d. input [B,C_in,H,W], kernel [C_in,C_out,kh,kw] (the same tensor a conv2d
/// mapping C_out -> C_in would use) -> [B,C_out,(H-1)*s-2p+kh, (W-1)*s-2p+kw].
template <typename T>
Tensor<T> conv_transpose2d(const Tensor<T>& input, const Tensor<T>& kernel,
                           std::array<std::size_t, 2> stride = {1, 1},
                           std::array<std::size_t, 2> padding = {0, 0}) {
  if (input.ndim() != 4 || kernel.ndim() != 4) {
    throw DimensionError("conv_transpose2d: expected 4-D input and kernel, got " +
                         to_string(input.shape()) + " and " + to_string(kernel.shape()));
  }
  if (kernel.dim(0) != input.dim(1)) {
    throw DimensionError("conv_transpose2d: kernel expects " + std::to_string(kernel.dim(0)) +
                         " input channels, input has " + std::to_string(input.dim(1)));
  }
  if (input.dim(2) == 0 || input.dim(3) == 0) {
    throw DimensionError("conv_transpose2d: zero-extent spatial dims in " +
                         to_string(input.shape()));
  }
  if (stride[0] == 0 || stride[1] == 0) throw DimensionError("conv_transpose2d: zero stride");
  const auto full_h = (input.dim(2) - 1) * stride[0] + kernel.dim(2);
  const auto full_w = (input.dim(3) - 1) * stride[1] + kernel.dim(3);
  if (full_h <= 2 * padding[0] || full_w <= 2 * padding[1]) {
    throw DimensionError("conv_transpose2d: padding leaves an empty output");
  }
  // Geometry of the forward conv from the output image back to the input grid.
  Conv2dGeometry g{};
  g.batch = input.dim(0);
  g.c_in = kernel.dim(1);  // channels of the transposed output
  g.h = full_h - 2 * padding[0];
  g.w = full_w - 2 * padding[1];
  g.c_out = input.dim(1);
  g.kh = kernel.dim(2);
  g.kw = kernel.dim(3);
  g.stride_h = stride[0];
  g.stride_w = stride[1];
  g.pad_h = padding[0];
  g.pad_w = padding[1];
  g.out_h = input.dim(2);
  g.out_w = input.dim(3);
  const std::size_t kdim = g.c_in * g.kh * g.kw, area = g.out_h * g.out_w;
  const std::size_t img_sz = g.c_in * g.h * g.w, in_sz = g.c_out * area;
  std::vector<T> out(g.batch * img_sz, T(0));
  std::vector<T> cols(kdim * area);
  for (std::size_t b = 0; b < g.batch; ++b) {
    std::fill(cols.begin(), cols.end(), T(0));
    detail::gemm_tn(kdim, area, g.c_out, kernel.values().data(),
                    input.values().data() + b * in_sz, cols.data());
    detail::col2im(cols.data(), g, out.data() + b * img_sz);
  }
  auto xn = input.node(), kn = kernel.node();
  return detail::make_result<T>(
      "conv_transpose2d", {g.batch, g.c_in, g.h, g.w}, std::move(out), {xn, kn},
      [xn, kn, g, kdim, area, img_sz, in_sz](const std::vector<T>& gout) {
        std::vector<T> gcols(kdim * area);
        for (std::size_t b = 0; b < g.batch; ++b) {
          detail::im2col(gout.data() + b * img_sz, g, gcols.data());
          if (xn->requires_grad)
            detail::gemm_nn(g.c_out, area, kdim, kn->data.data(), gcols.data(),
                            xn->grad_buffer().data() + b * in_sz);
          if (kn->requires_grad)
            detail::gemm_nt(g.c_out, kdim, area, xn->data.data() + b * in_sz, gcols.data(),
                            kn->grad_buffer().data());
        }
      });
}

/// input [B,C_in,L], kernel [C_out, C_in/groups, k], stride 1, symmetric zero padding.
template <typename T>
Tensor<T> conv1d(const Tensor<T>& input, const Tensor<T>& kernel, std::size_t padding = 0,
                 std::size_t groups = 1) {
  if (input.ndim() != 3 || kernel.ndim() != 3) {
    throw DimensionError("conv1d: expected 3-D input and kernel, got " + to_string(input.shape()) +
                         " and " + to_string(kernel.shape()));
  }
  const std::size_t batch = input.dim(0), c_in = input.dim(1), len = input.dim(2);
  const std::size_t c_out = kernel.dim(0), kc = kernel.dim(1), k = kernel.dim(2);
  if (groups == 0 || c_in % groups != 0 || c_out % groups != 0 || kc != c_in / groups) {
    throw DimensionError("conv1d: channel/group mismatch for input " + to_string(input.shape()) +
                         " kernel " + to_string(kernel.shape()) + " groups " +
                         std::to_string(groups));
  }
  if (k == 0 || (len > 0 && k > len + 2 * padding)) {
    throw DimensionError("conv1d: kernel longer than padded input");
  }
  const std::size_t out_len = len == 0 ? 0 : len + 2 * padding - k + 1;
  const std::size_t out_per_group = c_out / groups;
  std::vector<T> out(batch * c_out * out_len, T(0));
  const auto& xv = input.values();
  const auto& kv = kernel.values();
  for (std::size_t b = 0; b < batch; ++b)
    for (std::size_t co = 0; co < c_out; ++co) {
      const std::size_t grp = co / out_per_group;
      T* yr = &out[(b * c_out + co) * out_len];
      for (std::size_t ci = 0; ci < kc; ++ci) {
        const T* xr = &xv[(b * c_in + grp * kc + ci) * len];
        const T* kr = &kv[(co * kc + ci) * k];
        for (std::size_t t = 0; t < out_len; ++t)
          for (std::size_t j = 0; j < k; ++j) {
            const auto src = static_cast<std::ptrdiff_t>(t + j) -
                             static_cast<std::ptrdiff_t>(padding);
            if (src >= 0 && src < static_cast<std::ptrdiff_t>(len))
              yr[t] += kr[j] * xr[static_cast<std::size_t>(src)];
          }
      }
    }
  auto xn = input.node(), kn = kernel.node();
  return detail::make_result<T>(
      "conv1d", {batch, c_out, out_len}, std::move(out), {xn, kn},
      [=](const std::vector<T>& g) {
        T* gx = xn->requires_grad ? xn->grad_buffer().data() : nullptr;
        T* gk = kn->requires_grad ? kn->grad_buffer().data() : nullptr;
        for (std::size_t b = 0; b < batch; ++b)
          for (std::size_t co = 0; co < c_out; ++co) {
            const std::size_t grp = co / out_per_group;
            const T* gr = &g[(b * c_out + co) * out_len];
            for (std::size_t ci = 0; ci < kc; ++ci) {
              const std::size_t xoff = (b * c_in + grp * kc + ci) * len;
              const std::size_t koff = (co * kc + ci) * k;
              for (std::size_t t = 0; t < out_len; ++t)
                for (std::size_t j = 0; j < k; ++j) {
                  const auto src = static_cast<std::ptrdiff_t>(t + j) -
                                   static_cast<std::ptrdiff_t>(padding);
                  if (src < 0 || src >= static_cast<std::ptrdiff_t>(len)) continue;
                  const auto s = static_cast<std::size_t>(src);
                  if (gx) gx[xoff + s] += gr[t] * kn->data[koff + j];
                  if (gk) gk[koff + j] += gr[t] * xn->data[xoff + s];
                }
            }
          }
      });
}

}  // namespace diffuma
