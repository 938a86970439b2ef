#pragma once

// Primitive operations with reverse-mode rules. Image tensors are NHWC.

#include <cmath>
#include <cstddef>
#include <limits>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "lfusion/diffcore/tensor.hpp"

namespace lfusion {

namespace detail {

template <class T>
using RowMajor = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <class T>
using ConstMap = Eigen::Map<const RowMajor<T>>;
template <class T>
using MutMap = Eigen::Map<RowMajor<T>>;

inline Eigen::Index idx(std::size_t n) { return static_cast<Eigen::Index>(n); }

// C[M,N] += A[M,K] * B[K,N]
template <class T>
void gemm_nn(std::size_t M, std::size_t N, std::size_t K, const T* A, const T* B, T* C) {
  MutMap<T>(C, idx(M), idx(N)).noalias() += ConstMap<T>(A, idx(M), idx(K)) * ConstMap<T>(B, idx(K), idx(N));
}

// C[M,N] += A[K,M]^T * B[K,N]
template <class T>
void gemm_tn(std::size_t M, std::size_t N, std::size_t K, const T* A, const T* B, T* C) {
  MutMap<T>(C, idx(M), idx(N)).noalias() +=
      ConstMap<T>(A, idx(K), idx(M)).transpose() * ConstMap<T>(B, idx(K), idx(N));
}

// C[M,N] += A[M,K] * B[N,K]^T
template <class T>
void gemm_nt(std::size_t M, std::size_t N, std::size_t K, const T* A, const T* B, T* C) {
  MutMap<T>(C, idx(M), idx(N)).noalias() +=
      ConstMap<T>(A, idx(M), idx(K)) * ConstMap<T>(B, idx(N), idx(K)).transpose();
}

inline std::size_t norm_axis(int axis, std::size_t rank, const char* op) {
  const int r = static_cast<int>(rank);
  if (axis < -r || axis >= r) {
    throw ShapeError(std::string(op) + ": axis " + std::to_string(axis) + " out of range for rank " +
                     std::to_string(rank));
  }
  return static_cast<std::size_t>(axis < 0 ? axis + r : axis);
}

struct AxisSplit {
  std::size_t outer, n, inner;
};

inline AxisSplit split_axis(const Shape& s, std::size_t axis) {
  AxisSplit r{1, s[axis], 1};
  for (std::size_t i = 0; i < axis; ++i) r.outer *= s[i];
  for (std::size_t i = axis + 1; i < s.size(); ++i) r.inner *= s[i];
  return r;
}

// True when `b` equals `a` or is a trailing suffix of it.
inline bool is_suffix_shape(const Shape& a, const Shape& b) {
  if (b.size() > a.size()) return false;
  return std::equal(b.rbegin(), b.rend(), a.rbegin());
}

template <class T>
using NodePtr = std::shared_ptr<Node<T>>;

}  // namespace detail

// ---------------------------------------------------------------------------
// Elementwise
// ---------------------------------------------------------------------------

/// a + b, where b has a's shape or a trailing suffix of it (broadcast).
template <class T>
BasicTensor<T> add(const BasicTensor<T>& a, const BasicTensor<T>& b, T b_scale = T(1)) {
  if (!detail::is_suffix_shape(a.shape(), b.shape())) throw_shape("add", a.shape(), b.shape());
  const std::size_t nb = b.numel();
  std::vector<T> out(a.data().begin(), a.data().end());
  auto bd = b.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += b_scale * bd[i % nb];
  const bool track = detail::any_requires_grad<T>({&a, &b});
  auto pa = a.node_ptr(), pb = b.node_ptr();
  return detail::make_result<T>("add", a.shape(), std::move(out), {pa, pb}, track,
                                [pa, pb, nb, b_scale](detail::Node<T>& self) {
                                  detail::accumulate<T>(*pa, self.grad);
                                  if (pb->requires_grad) {
                                    auto& g = pb->ensure_grad();
                                    for (std::size_t i = 0; i < self.grad.size(); ++i)
                                      g[i % nb] += b_scale * self.grad[i];
                                  }
                                });
}

template <class T>
BasicTensor<T> sub(const BasicTensor<T>& a, const BasicTensor<T>& b) {
  return add(a, b, T(-1));
}

/// Elementwise product with the same suffix broadcast rule as add().
template <class T>
BasicTensor<T> mul(const BasicTensor<T>& a, const BasicTensor<T>& b) {
  if (!detail::is_suffix_shape(a.shape(), b.shape())) throw_shape("mul", a.shape(), b.shape());
  const std::size_t nb = b.numel();
  auto ad = a.data(), bd = b.data();
  std::vector<T> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = ad[i] * bd[i % nb];
  const bool track = detail::any_requires_grad<T>({&a, &b});
  auto pa = a.node_ptr(), pb = b.node_ptr();
  return detail::make_result<T>("mul", a.shape(), std::move(out), {pa, pb}, track,
                                [pa, pb, nb](detail::Node<T>& self) {
                                  const auto& g = self.grad;
                                  if (pa->requires_grad) {
                                    auto& ga = pa->ensure_grad();
                                    for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * pb->data[i % nb];
                                  }
                                  if (pb->requires_grad) {
                                    auto& gb = pb->ensure_grad();
                                    for (std::size_t i = 0; i < g.size(); ++i) gb[i % nb] += g[i] * pa->data[i];
                                  }
                                });
}

template <class T>
BasicTensor<T> scale(const BasicTensor<T>& x, T s) {
  std::vector<T> out(x.data().begin(), x.data().end());
  for (auto& v : out) v *= s;
  const bool track = detail::any_requires_grad<T>({&x});
  auto px = x.node_ptr();
  return detail::make_result<T>("scale", x.shape(), std::move(out), {px}, track,
                                [px, s](detail::Node<T>& self) {
                                  auto& g = px->ensure_grad();
                                  for (std::size_t i = 0; i < g.size(); ++i) g[i] += s * self.grad[i];
                                });
}

namespace detail {

// Shared scaffolding for y = f(x) with dy/dx expressed through (x, y).
template <class T, class Fwd, class Deriv>
BasicTensor<T> unary(const char* op, const BasicTensor<T>& x, Fwd fwd, Deriv deriv) {
  auto xd = x.data();
  std::vector<T> out(x.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = fwd(xd[i]);
  const bool track = any_requires_grad<T>({&x});
  auto px = x.node_ptr();
  return make_result<T>(op, x.shape(), std::move(out), {px}, track, [px, deriv](Node<T>& self) {
    auto& g = px->ensure_grad();
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * deriv(px->data[i], self.data[i]);
  });
}

}  // namespace detail

template <class T>
BasicTensor<T> relu(const BasicTensor<T>& x) {
  return detail::unary<T>(
      "relu", x, [](T v) { return v > T(0) ? v : T(0); }, [](T v, T) { return v > T(0) ? T(1) : T(0); });
}

template <class T>
BasicTensor<T> sigmoid(const BasicTensor<T>& x) {
  return detail::unary<T>(
      "sigmoid", x,
      [](T v) {
        if (v >= T(0)) return T(1) / (T(1) + std::exp(-v));
        const T e = std::exp(v);
        return e / (T(1) + e);
      },
      [](T, T y) { return y * (T(1) - y); });
}

/// Elementwise smooth-L1 with transition at |x| = 1.
template <class T>
BasicTensor<T> smooth_l1(const BasicTensor<T>& x) {
  return detail::unary<T>(
      "smooth_l1", x,
      [](T v) {
        const T a = std::abs(v);
        return a < T(1) ? T(0.5) * v * v : a - T(0.5);
      },
      [](T v, T) { return std::abs(v) < T(1) ? v : (v > T(0) ? T(1) : T(-1)); });
}

template <class T>
BasicTensor<T> square(const BasicTensor<T>& x) {
  return detail::unary<T>(
      "square", x, [](T v) { return v * v; }, [](T v, T) { return T(2) * v; });
}

// ---------------------------------------------------------------------------
// Reductions
// ---------------------------------------------------------------------------

template <class T>
BasicTensor<T> sum(const BasicTensor<T>& x) {
  T acc = T(0);
  for (T v : x.data()) acc += v;
  const bool track = detail::any_requires_grad<T>({&x});
  auto px = x.node_ptr();
  return detail::make_result<T>("sum", {1}, {acc}, {px}, track, [px](detail::Node<T>& self) {
    auto& g = px->ensure_grad();
    for (auto& v : g) v += self.grad[0];
  });
}

template <class T>
BasicTensor<T> mean(const BasicTensor<T>& x) {
  return scale(sum(x), T(1) / static_cast<T>(x.numel()));
}

// ---------------------------------------------------------------------------
// Linear algebra
// ---------------------------------------------------------------------------

/// Batched matrix product. a: [..., M, K]; b: [..., K, N] with identical
/// leading dims, or b: [K, N] shared across a's batch.
template <class T>
BasicTensor<T> matmul(const BasicTensor<T>& a, const BasicTensor<T>& b) {
  const Shape& sa = a.shape();
  const Shape& sb = b.shape();
  if (sa.size() < 2 || sb.size() < 2) throw_shape("matmul", sa, sb, "rank < 2");
  const std::size_t M = sa[sa.size() - 2], K = sa.back();
  const std::size_t Kb = sb[sb.size() - 2], N = sb.back();
  if (K != Kb) throw_shape("matmul", sa, sb, "inner dimensions differ");
  const bool shared_b = sb.size() == 2;
  if (!shared_b && (sb.size() != sa.size() || !std::equal(sa.begin(), sa.end() - 2, sb.begin())))
    throw_shape("matmul", sa, sb, "batch dimensions differ");
  const std::size_t batch = a.numel() / (M * K);
  Shape so(sa.begin(), sa.end() - 2);
  so.push_back(M);
  so.push_back(N);
  std::vector<T> out(batch * M * N, T(0));
  const T* ad = a.data().data();
  const T* bd = b.data().data();
  if (shared_b) {
    detail::gemm_nn(batch * M, N, K, ad, bd, out.data());
  } else {
    for (std::size_t p = 0; p < batch; ++p)
      detail::gemm_nn(M, N, K, ad + p * M * K, bd + p * K * N, out.data() + p * M * N);
  }
  const bool track = detail::any_requires_grad<T>({&a, &b});
  auto pa = a.node_ptr(), pb = b.node_ptr();
  return detail::make_result<T>(
      "matmul", std::move(so), std::move(out), {pa, pb}, track,
      [pa, pb, batch, M, N, K, shared_b](detail::Node<T>& self) {
        const T* g = self.grad.data();
        if (pa->requires_grad) {
          T* ga = pa->ensure_grad().data();
          if (shared_b) {
            detail::gemm_nt(batch * M, K, N, g, pb->data.data(), ga);
          } else {
            for (std::size_t p = 0; p < batch; ++p)
              detail::gemm_nt(M, K, N, g + p * M * N, pb->data.data() + p * K * N, ga + p * M * K);
          }
        }
        if (pb->requires_grad) {
          T* gb = pb->ensure_grad().data();
          if (shared_b) {
            detail::gemm_tn(K, N, batch * M, pa->data.data(), g, gb);
          } else {
            for (std::size_t p = 0; p < batch; ++p)
              detail::gemm_tn(K, N, M, pa->data.data() + p * M * K, g + p * M * N, gb + p * K * N);
          }
        }
      });
}

// ---------------------------------------------------------------------------
// Convolution and pooling (NHWC)
// ---------------------------------------------------------------------------

struct Conv2dOptions {
  std::size_t stride = 1;
  std::size_t padding = 0;
};

/// x: [B,H,W,Cin]; weight: [kh,kw,Cin,Cout]; bias: [Cout] or undefined.
template <class T>
BasicTensor<T> conv2d(const BasicTensor<T>& x, const BasicTensor<T>& weight, const BasicTensor<T>& bias,
                      Conv2dOptions opt = {}) {
  const Shape& sx = x.shape();
  const Shape& sw = weight.shape();
  if (sx.size() != 4 || sw.size() != 4 || sx[3] != sw[2]) throw_shape("conv2d", sx, sw);
  if (bias.defined() && (bias.rank() != 1 || bias.dim(0) != sw[3]))
    throw_shape("conv2d", sw, bias.shape(), "bias");
  if (opt.stride == 0) throw ShapeError("conv2d: stride must be positive");
  const std::size_t B = sx[0], H = sx[1], W = sx[2], Cin = sx[3];
  const std::size_t KH = sw[0], KW = sw[1], Cout = sw[3];
  const std::size_t pad = opt.padding, st = opt.stride;
  if (H + 2 * pad < KH || W + 2 * pad < KW) throw_shape("conv2d", sx, sw, "kernel larger than padded input");
  const std::size_t OH = (H + 2 * pad - KH) / st + 1;
  const std::size_t OW = (W + 2 * pad - KW) / st + 1;
  const std::size_t Kdim = KH * KW * Cin;
  const std::size_t M = B * OH * OW;

  // im2col; a 1x1 stride-1 conv reads the input directly.
  const bool direct = KH == 1 && KW == 1 && st == 1 && pad == 0;
  auto cols = std::make_shared<std::vector<T>>();
  const T* xd = x.data().data();
  if (!direct) {
    cols->assign(M * Kdim, T(0));
    for (std::size_t b = 0; b < B; ++b)
      for (std::size_t oy = 0; oy < OH; ++oy)
        for (std::size_t ox = 0; ox < OW; ++ox) {
          T* row = cols->data() + ((b * OH + oy) * OW + ox) * Kdim;
          for (std::size_t ky = 0; ky < KH; ++ky) {
            const long iy = static_cast<long>(oy * st + ky) - static_cast<long>(pad);
            if (iy < 0 || iy >= static_cast<long>(H)) continue;
            for (std::size_t kx = 0; kx < KW; ++kx) {
              const long ix = static_cast<long>(ox * st + kx) - static_cast<long>(pad);
              if (ix < 0 || ix >= static_cast<long>(W)) continue;
              const T* src = xd + ((b * H + iy) * W + ix) * Cin;
              std::copy(src, src + Cin, row + (ky * KW + kx) * Cin);
            }
          }
        }
  }
  std::vector<T> out(M * Cout, T(0));
  if (bias.defined()) {
    auto bd = bias.data();
    for (std::size_t m = 0; m < M; ++m) std::copy(bd.begin(), bd.end(), out.begin() + m * Cout);
  }
  detail::gemm_nn(M, Cout, Kdim, direct ? xd : cols->data(), weight.data().data(), out.data());

  const bool track = detail::any_requires_grad<T>({&x, &weight, &bias});
  if (!track) cols.reset();
  auto px = x.node_ptr(), pw = weight.node_ptr(), pb = bias.node_ptr();
  std::vector<detail::NodePtr<T>> parents{px, pw};
  if (pb) parents.push_back(pb);
  return detail::make_result<T>(
      "conv2d", {B, OH, OW, Cout}, std::move(out), std::move(parents), track,
      [=](detail::Node<T>& self) {
        const T* g = self.grad.data();
        const T* colp = direct ? px->data.data() : cols->data();
        if (pw->requires_grad) detail::gemm_tn(Kdim, Cout, M, colp, g, pw->ensure_grad().data());
        if (pb && pb->requires_grad) {
          auto& gb = pb->ensure_grad();
          for (std::size_t m = 0; m < M; ++m)
            for (std::size_t c = 0; c < Cout; ++c) gb[c] += g[m * Cout + c];
        }
        if (px->requires_grad) {
          auto& gx = px->ensure_grad();
          if (direct) {
            detail::gemm_nt(M, Kdim, Cout, g, pw->data.data(), gx.data());
            return;
          }
          std::vector<T> dcol(M * Kdim, T(0));
          detail::gemm_nt(M, Kdim, Cout, g, pw->data.data(), dcol.data());
          for (std::size_t b = 0; b < B; ++b)
            for (std::size_t oy = 0; oy < OH; ++oy)
              for (std::size_t ox = 0; ox < OW; ++ox) {
                const T* row = dcol.data() + ((b * OH + oy) * OW + ox) * Kdim;
                for (std::size_t ky = 0; ky < KH; ++ky) {
                  const long iy = static_cast<long>(oy * st + ky) - static_cast<long>(pad);
                  if (iy < 0 || iy >= static_cast<long>(H)) continue;
                  for (std::size_t kx = 0; kx < KW; ++kx) {
                    const long ix = static_cast<long>(ox * st + kx) - static_cast<long>(pad);
                    if (ix < 0 || ix >= static_cast<long>(W)) continue;
                    T* dst = gx.data() + ((b * H + iy) * W + ix) * Cin;
                    const T* src = row + (ky * KW + kx) * Cin;
                    for (std::size_t c = 0; c < Cin; ++c) dst[c] += src[c];
                  }
                }
              }
        }
      });
}

template <class T>
BasicTensor<T> conv2d(const BasicTensor<T>& x, const BasicTensor<T>& weight, Conv2dOptions opt = {}) {
  return conv2d(x, weight, BasicTensor<T>{}, opt);
}

/// Adaptive average pooling of [B,H,W,C] to [B,oh,ow,C]. Bin i along an axis
/// of length n covers [floor(i*n/o), ceil((i+1)*n/o)).
template <class T>
BasicTensor<T> adaptive_avg_pool2d(const BasicTensor<T>& x, std::size_t oh, std::size_t ow) {
  const Shape& s = x.shape();
  if (s.size() != 4) throw_shape("adaptive_avg_pool2d", s, {oh, ow}, "expected NHWC");
  const std::size_t B = s[0], H = s[1], W = s[2], C = s[3];
  if (oh == 0 || ow == 0 || oh > H || ow > W)
    throw_shape("adaptive_avg_pool2d", s, {oh, ow}, "output larger than input");
  auto lo = [](std::size_t i, std::size_t n, std::size_t o) { return (i * n) / o; };
  auto hi = [](std::size_t i, std::size_t n, std::size_t o) { return ((i + 1) * n + o - 1) / o; };
  std::vector<T> out(B * oh * ow * C, T(0));
  const T* xd = x.data().data();
  for (std::size_t b = 0; b < B; ++b)
    for (std::size_t i = 0; i < oh; ++i)
      for (std::size_t j = 0; j < ow; ++j) {
        const std::size_t y0 = lo(i, H, oh), y1 = hi(i, H, oh), x0 = lo(j, W, ow), x1 = hi(j, W, ow);
        const T inv = T(1) / static_cast<T>((y1 - y0) * (x1 - x0));
        T* dst = out.data() + ((b * oh + i) * ow + j) * C;
        for (std::size_t y = y0; y < y1; ++y)
          for (std::size_t xx = x0; xx < x1; ++xx) {
            const T* src = xd + ((b * H + y) * W + xx) * C;
            for (std::size_t c = 0; c < C; ++c) dst[c] += src[c];
          }
        for (std::size_t c = 0; c < C; ++c) dst[c] *= inv;
      }
  const bool track = detail::any_requires_grad<T>({&x});
  auto px = x.node_ptr();
  return detail::make_result<T>(
      "adaptive_avg_pool2d", {B, oh, ow, C}, std::move(out), {px}, track, [=](detail::Node<T>& self) {
        auto& gx = px->ensure_grad();
        for (std::size_t b = 0; b < B; ++b)
          for (std::size_t i = 0; i < oh; ++i)
            for (std::size_t j = 0; j < ow; ++j) {
              const std::size_t y0 = lo(i, H, oh), y1 = hi(i, H, oh), x0 = lo(j, W, ow), x1 = hi(j, W, ow);
              const T inv = T(1) / static_cast<T>((y1 - y0) * (x1 - x0));
              const T* g = self.grad.data() + ((b * oh + i) * ow + j) * C;
              for (std::size_t y = y0; y < y1; ++y)
                for (std::size_t xx = x0; xx < x1; ++xx) {
                  T* dst = gx.data() + ((b * H + y) * W + xx) * C;
                  for (std::size_t c = 0; c < C; ++c) dst[c] += g[c] * inv;
                }
            }
      });
}

/// Non-overlapping average pooling with a kh x kw window (stride = window).
template <class T>
BasicTensor<T> avg_pool2d(const BasicTensor<T>& x, std::size_t kh, std::size_t kw) {
  const Shape& s = x.shape();
  if (s.size() != 4 || kh == 0 || kw == 0 || s[1] % kh != 0 || s[2] % kw != 0)
    throw_shape("avg_pool2d", s, {kh, kw}, "window must tile the input");
  return adaptive_avg_pool2d(x, s[1] / kh, s[2] / kw);
}

/// Non-overlapping k x k max pooling (stride = k).
template <class T>
BasicTensor<T> max_pool2d(const BasicTensor<T>& x, std::size_t k) {
  const Shape& s = x.shape();
  if (s.size() != 4 || k == 0 || s[1] % k != 0 || s[2] % k != 0)
    throw_shape("max_pool2d", s, {k, k}, "window must tile the input");
  const std::size_t B = s[0], H = s[1], W = s[2], C = s[3], OH = H / k, OW = W / k;
  std::vector<T> out(B * OH * OW * C);
  auto arg = std::make_shared<std::vector<std::size_t>>(out.size());
  const T* xd = x.data().data();
  for (std::size_t b = 0; b < B; ++b)
    for (std::size_t oy = 0; oy < OH; ++oy)
      for (std::size_t ox = 0; ox < OW; ++ox)
        for (std::size_t c = 0; c < C; ++c) {
          std::size_t best = ((b * H + oy * k) * W + ox * k) * C + c;
          for (std::size_t dy = 0; dy < k; ++dy)
            for (std::size_t dx = 0; dx < k; ++dx) {
              const std::size_t idx = ((b * H + oy * k + dy) * W + ox * k + dx) * C + c;
              if (xd[idx] > xd[best]) best = idx;
            }
          const std::size_t o = ((b * OH + oy) * OW + ox) * C + c;
          out[o] = xd[best];
          (*arg)[o] = best;
        }
  const bool track = detail::any_requires_grad<T>({&x});
  auto px = x.node_ptr();
  return detail::make_result<T>("max_pool2d", {B, OH, OW, C}, std::move(out), {px}, track,
                                [px, arg](detail::Node<T>& self) {
                                  auto& gx = px->ensure_grad();
                                  for (std::size_t o = 0; o < arg->size(); ++o) gx[(*arg)[o]] += self.grad[o];
                                });
}

namespace detail {

struct LerpTable {
  std::vector<std::size_t> i0, i1;
  std::vector<double> w1;
};

// Half-pixel-centre bilinear sampling positions with edge clamping.
inline LerpTable lerp_table(std::size_t in, std::size_t out) {
  LerpTable t;
  t.i0.resize(out);
  t.i1.resize(out);
  t.w1.resize(out);
  const double ratio = static_cast<double>(in) / static_cast<double>(out);
  for (std::size_t o = 0; o < out; ++o) {
    double src = (static_cast<double>(o) + 0.5) * ratio - 0.5;
    src = std::clamp(src, 0.0, static_cast<double>(in - 1));
    const auto lo = static_cast<std::size_t>(std::floor(src));
    t.i0[o] = lo;
    t.i1[o] = std::min(lo + 1, in - 1);
    t.w1[o] = src - static_cast<double>(lo);
  }
  return t;
}

}  // namespace detail

/// Bilinear resize of [B,H,W,C] to [B,oh,ow,C] (half-pixel centres).
template <class T>
BasicTensor<T> upsample2d_bilinear(const BasicTensor<T>& x, std::size_t oh, std::size_t ow) {
  const Shape& s = x.shape();
  if (s.size() != 4 || oh == 0 || ow == 0) throw_shape("upsample2d_bilinear", s, {oh, ow});
  const std::size_t B = s[0], H = s[1], W = s[2], C = s[3];
  auto ty = std::make_shared<detail::LerpTable>(detail::lerp_table(H, oh));
  auto tx = std::make_shared<detail::LerpTable>(detail::lerp_table(W, ow));
  std::vector<T> out(B * oh * ow * C);
  const T* xd = x.data().data();
  for (std::size_t b = 0; b < B; ++b)
    for (std::size_t i = 0; i < oh; ++i) {
      const T wy1 = static_cast<T>(ty->w1[i]), wy0 = T(1) - wy1;
      for (std::size_t j = 0; j < ow; ++j) {
        const T wx1 = static_cast<T>(tx->w1[j]), wx0 = T(1) - wx1;
        const T* p00 = xd + ((b * H + ty->i0[i]) * W + tx->i0[j]) * C;
        const T* p01 = xd + ((b * H + ty->i0[i]) * W + tx->i1[j]) * C;
        const T* p10 = xd + ((b * H + ty->i1[i]) * W + tx->i0[j]) * C;
        const T* p11 = xd + ((b * H + ty->i1[i]) * W + tx->i1[j]) * C;
        T* dst = out.data() + ((b * oh + i) * ow + j) * C;
        for (std::size_t c = 0; c < C; ++c)
          dst[c] = wy0 * (wx0 * p00[c] + wx1 * p01[c]) + wy1 * (wx0 * p10[c] + wx1 * p11[c]);
      }
    }
  const bool track = detail::any_requires_grad<T>({&x});
  auto px = x.node_ptr();
  return detail::make_result<T>(
      "upsample2d_bilinear", {B, oh, ow, C}, std::move(out), {px}, track, [=](detail::Node<T>& self) {
        auto& gx = px->ensure_grad();
        for (std::size_t b = 0; b < B; ++b)
          for (std::size_t i = 0; i < oh; ++i) {
            const T wy1 = static_cast<T>(ty->w1[i]), wy0 = T(1) - wy1;
            for (std::size_t j = 0; j < ow; ++j) {
              const T wx1 = static_cast<T>(tx->w1[j]), wx0 = T(1) - wx1;
              const T* g = self.grad.data() + ((b * oh + i) * ow + j) * C;
              T* p00 = gx.data() + ((b * H + ty->i0[i]) * W + tx->i0[j]) * C;
              T* p01 = gx.data() + ((b * H + ty->i0[i]) * W + tx->i1[j]) * C;
              T* p10 = gx.data() + ((b * H + ty->i1[i]) * W + tx->i0[j]) * C;
              T* p11 = gx.data() + ((b * H + ty->i1[i]) * W + tx->i1[j]) * C;
              for (std::size_t c = 0; c < C; ++c) {
                p00[c] += wy0 * wx0 * g[c];
                p01[c] += wy0 * wx1 * g[c];
                p10[c] += wy1 * wx0 * g[c];
                p11[c] += wy1 * wx1 * g[c];
              }
            }
          }
      });
}

/// Integer-factor bilinear upsampling.
template <class T>
BasicTensor<T> upsample2d_bilinear(const BasicTensor<T>& x, std::size_t factor) {
  if (x.rank() != 4 || factor == 0) throw_shape("upsample2d_bilinear", x.shape(), {factor});
  return upsample2d_bilinear(x, x.dim(1) * factor, x.dim(2) * factor);
}

// ---------------------------------------------------------------------------
// Normalisation
// ---------------------------------------------------------------------------

template <class T>
BasicTensor<T> softmax(const BasicTensor<T>& x, int axis = -1) {
  const std::size_t ax = detail::norm_axis(axis, x.rank(), "softmax");
  const auto [outer, n, inner] = detail::split_axis(x.shape(), ax);
  std::vector<T> out(x.numel());
  const T* xd = x.data().data();
  for (std::size_t o = 0; o < outer; ++o)
    for (std::size_t i = 0; i < inner; ++i) {
      const std::size_t base = o * n * inner + i;
      T mx = -std::numeric_limits<T>::infinity();
      for (std::size_t k = 0; k < n; ++k) mx = std::max(mx, xd[base + k * inner]);
      T z = T(0);
      for (std::size_t k = 0; k < n; ++k) z += (out[base + k * inner] = std::exp(xd[base + k * inner] - mx));
      for (std::size_t k = 0; k < n; ++k) out[base + k * inner] /= z;
    }
  const bool track = detail::any_requires_grad<T>({&x});
  auto px = x.node_ptr();
  return detail::make_result<T>("softmax", x.shape(), std::move(out), {px}, track,
                                [px, outer, n, inner](detail::Node<T>& self) {
                                  auto& gx = px->ensure_grad();
                                  const auto& y = self.data;
                                  const auto& g = self.grad;
                                  for (std::size_t o = 0; o < outer; ++o)
                                    for (std::size_t i = 0; i < inner; ++i) {
                                      const std::size_t base = o * n * inner + i;
                                      T dot = T(0);
                                      for (std::size_t k = 0; k < n; ++k)
                                        dot += g[base + k * inner] * y[base + k * inner];
                                      for (std::size_t k = 0; k < n; ++k) {
                                        const std::size_t idx = base + k * inner;
                                        gx[idx] += y[idx] * (g[idx] - dot);
                                      }
                                    }
                                });
}

template <class T>
BasicTensor<T> log_softmax(const BasicTensor<T>& x, int axis = -1) {
  const std::size_t ax = detail::norm_axis(axis, x.rank(), "log_softmax");
  const auto [outer, n, inner] = detail::split_axis(x.shape(), ax);
  std::vector<T> out(x.numel());
  const T* xd = x.data().data();
  for (std::size_t o = 0; o < outer; ++o)
    for (std::size_t i = 0; i < inner; ++i) {
      const std::size_t base = o * n * inner + i;
      T mx = -std::numeric_limits<T>::infinity();
      for (std::size_t k = 0; k < n; ++k) mx = std::max(mx, xd[base + k * inner]);
      T z = T(0);
      for (std::size_t k = 0; k < n; ++k) z += std::exp(xd[base + k * inner] - mx);
      const T lz = mx + std::log(z);
      for (std::size_t k = 0; k < n; ++k) out[base + k * inner] = xd[base + k * inner] - lz;
    }
  const bool track = detail::any_requires_grad<T>({&x});
  auto px = x.node_ptr();
  return detail::make_result<T>("log_softmax", x.shape(), std::move(out), {px}, track,
                                [px, outer, n, inner](detail::Node<T>& self) {
                                  auto& gx = px->ensure_grad();
                                  const auto& y = self.data;
                                  const auto& g = self.grad;
                                  for (std::size_t o = 0; o < outer; ++o)
                                    for (std::size_t i = 0; i < inner; ++i) {
                                      const std::size_t base = o * n * inner + i;
                                      T gs = T(0);
                                      for (std::size_t k = 0; k < n; ++k) gs += g[base + k * inner];
                                      for (std::size_t k = 0; k < n; ++k) {
                                        const std::size_t idx = base + k * inner;
                                        gx[idx] += g[idx] - std::exp(y[idx]) * gs;
                                      }
                                    }
                                });
}

/// Normalises along `axis`, then applies per-position gamma/beta of length
/// shape[axis] (either may be undefined).
template <class T>
BasicTensor<T> layer_norm(const BasicTensor<T>& x, int axis, const BasicTensor<T>& gamma,
                          const BasicTensor<T>& beta, T eps = T(1e-5)) {
  const std::size_t ax = detail::norm_axis(axis, x.rank(), "layer_norm");
  const auto [outer, n, inner] = detail::split_axis(x.shape(), ax);
  if (gamma.defined() && gamma.numel() != n) throw_shape("layer_norm", x.shape(), gamma.shape(), "gamma");
  if (beta.defined() && beta.numel() != n) throw_shape("layer_norm", x.shape(), beta.shape(), "beta");
  auto xhat = std::make_shared<std::vector<T>>(x.numel());
  auto inv_std = std::make_shared<std::vector<T>>(outer * inner);
  std::vector<T> out(x.numel());
  const T* xd = x.data().data();
  for (std::size_t o = 0; o < outer; ++o)
    for (std::size_t i = 0; i < inner; ++i) {
      const std::size_t base = o * n * inner + i;
      T mu = T(0);
      for (std::size_t k = 0; k < n; ++k) mu += xd[base + k * inner];
      mu /= static_cast<T>(n);
      T var = T(0);
      for (std::size_t k = 0; k < n; ++k) {
        const T d = xd[base + k * inner] - mu;
        var += d * d;
      }
      var /= static_cast<T>(n);
      const T is = T(1) / std::sqrt(var + eps);
      (*inv_std)[o * inner + i] = is;
      for (std::size_t k = 0; k < n; ++k) {
        const std::size_t idx = base + k * inner;
        const T h = (xd[idx] - mu) * is;
        (*xhat)[idx] = h;
        out[idx] = h * (gamma.defined() ? gamma.data()[k] : T(1)) + (beta.defined() ? beta.data()[k] : T(0));
      }
    }
  const bool track = detail::any_requires_grad<T>({&x, &gamma, &beta});
  auto px = x.node_ptr(), pg = gamma.node_ptr(), pb = beta.node_ptr();
  std::vector<detail::NodePtr<T>> parents{px};
  if (pg) parents.push_back(pg);
  if (pb) parents.push_back(pb);
  return detail::make_result<T>(
      "layer_norm", x.shape(), std::move(out), std::move(parents), track, [=](detail::Node<T>& self) {
        const auto& g = self.grad;
        const auto& h = *xhat;
        if (pg && pg->requires_grad) {
          auto& gg = pg->ensure_grad();
          for (std::size_t idx = 0; idx < g.size(); ++idx) gg[(idx / inner) % n] += g[idx] * h[idx];
        }
        if (pb && pb->requires_grad) {
          auto& gb = pb->ensure_grad();
          for (std::size_t idx = 0; idx < g.size(); ++idx) gb[(idx / inner) % n] += g[idx];
        }
        if (!px->requires_grad) return;
        auto& gx = px->ensure_grad();
        std::vector<T> dh(n);
        for (std::size_t o = 0; o < outer; ++o)
          for (std::size_t i = 0; i < inner; ++i) {
            const std::size_t base = o * n * inner + i;
            T m1 = T(0), m2 = T(0);
            for (std::size_t k = 0; k < n; ++k) {
              const std::size_t idx = base + k * inner;
              dh[k] = g[idx] * (pg ? pg->data[k] : T(1));
              m1 += dh[k];
              m2 += dh[k] * h[idx];
            }
            m1 /= static_cast<T>(n);
            m2 /= static_cast<T>(n);
            const T is = (*inv_std)[o * inner + i];
            for (std::size_t k = 0; k < n; ++k) {
              const std::size_t idx = base + k * inner;
              gx[idx] += is * (dh[k] - m1 - h[idx] * m2);
            }
          }
      });
}

// ---------------------------------------------------------------------------
// Shape manipulation
// ---------------------------------------------------------------------------

template <class T>
BasicTensor<T> reshape(const BasicTensor<T>& x, Shape shape) {
  if (shape_numel(shape) != x.numel()) throw_shape("reshape", x.shape(), shape);
  std::vector<T> out(x.data().begin(), x.data().end());
  const bool track = detail::any_requires_grad<T>({&x});
  auto px = x.node_ptr();
  return detail::make_result<T>("reshape", std::move(shape), std::move(out), {px}, track,
                                [px](detail::Node<T>& self) { detail::accumulate<T>(*px, self.grad); });
}

/// General axis permutation: out.shape[i] = in.shape[perm[i]].
template <class T>
BasicTensor<T> permute(const BasicTensor<T>& x, const std::vector<std::size_t>& perm) {
  const Shape& s = x.shape();
  const std::size_t r = s.size();
  {
    std::vector<bool> used(r, false);
    bool ok = perm.size() == r;
    for (std::size_t p : perm) {
      if (!ok || p >= r || used[p]) {
        ok = false;
        break;
      }
      used[p] = true;
    }
    if (!ok) throw_shape("permute", s, Shape(perm.begin(), perm.end()), "invalid permutation");
  }
  Shape so(r);
  for (std::size_t i = 0; i < r; ++i) so[i] = s[perm[i]];
  std::vector<std::size_t> in_stride(r, 1);
  for (std::size_t i = r - 1; i-- > 0;) in_stride[i] = in_stride[i + 1] * s[i + 1];
  // Source offset for each destination element, computed once.
  auto src = std::make_shared<std::vector<std::size_t>>(x.numel());
  std::vector<std::size_t> idx(r, 0);
  for (std::size_t o = 0; o < src->size(); ++o) {
    std::size_t off = 0;
    for (std::size_t i = 0; i < r; ++i) off += idx[i] * in_stride[perm[i]];
    (*src)[o] = off;
    for (std::size_t i = r; i-- > 0;) {
      if (++idx[i] < so[i]) break;
      idx[i] = 0;
    }
  }
  std::vector<T> out(x.numel());
  const T* xd = x.data().data();
  for (std::size_t o = 0; o < out.size(); ++o) out[o] = xd[(*src)[o]];
  const bool track = detail::any_requires_grad<T>({&x});
  auto px = x.node_ptr();
  return detail::make_result<T>("permute", std::move(so), std::move(out), {px}, track,
                                [px, src](detail::Node<T>& self) {
                                  auto& gx = px->ensure_grad();
                                  for (std::size_t o = 0; o < src->size(); ++o) gx[(*src)[o]] += self.grad[o];
                                });
}

/// Swaps two axes.
template <class T>
BasicTensor<T> transpose(const BasicTensor<T>& x, int a = -2, int b = -1) {
  const std::size_t ia = detail::norm_axis(a, x.rank(), "transpose");
  const std::size_t ib = detail::norm_axis(b, x.rank(), "transpose");
  std::vector<std::size_t> perm(x.rank());
  std::iota(perm.begin(), perm.end(), std::size_t{0});
  std::swap(perm[ia], perm[ib]);
  return permute(x, perm);
}

template <class T>
BasicTensor<T> concat(const std::vector<BasicTensor<T>>& xs, int axis) {
  if (xs.empty()) throw ShapeError("concat: no inputs");
  const Shape& s0 = xs[0].shape();
  const std::size_t ax = detail::norm_axis(axis, s0.size(), "concat");
  std::vector<std::size_t> widths;
  Shape so = s0;
  so[ax] = 0;
  for (const auto& t : xs) {
    const Shape& s = t.shape();
    if (s.size() != s0.size()) throw_shape("concat", s0, s);
    for (std::size_t i = 0; i < s.size(); ++i)
      if (i != ax && s[i] != s0[i]) throw_shape("concat", s0, s);
    so[ax] += s[ax];
  }
  const auto outer = detail::split_axis(s0, ax).outer;
  const auto inner = detail::split_axis(s0, ax).inner;
  for (const auto& t : xs) widths.push_back(t.dim(ax) * inner);
  const std::size_t row = so[ax] * inner;
  std::vector<T> out(shape_numel(so));
  std::size_t col = 0;
  for (std::size_t t = 0; t < xs.size(); ++t) {
    const T* src = xs[t].data().data();
    for (std::size_t o = 0; o < outer; ++o)
      std::copy(src + o * widths[t], src + (o + 1) * widths[t], out.begin() + o * row + col);
    col += widths[t];
  }
  bool track = false;
  std::vector<detail::NodePtr<T>> parents;
  for (const auto& t : xs) {
    track = track || detail::any_requires_grad<T>({&t});
    parents.push_back(t.node_ptr());
  }
  auto ps = parents;
  return detail::make_result<T>("concat", std::move(so), std::move(out), std::move(parents), track,
                                [ps, widths, outer, row](detail::Node<T>& self) {
                                  std::size_t c = 0;
                                  for (std::size_t t = 0; t < ps.size(); ++t) {
                                    if (ps[t]->requires_grad) {
                                      auto& g = ps[t]->ensure_grad();
                                      for (std::size_t o = 0; o < outer; ++o)
                                        for (std::size_t k = 0; k < widths[t]; ++k)
                                          g[o * widths[t] + k] += self.grad[o * row + c + k];
                                    }
                                    c += widths[t];
                                  }
                                });
}

template <class T>
std::vector<BasicTensor<T>> split(const BasicTensor<T>& x, int axis, const std::vector<std::size_t>& sizes) {
  const Shape& s = x.shape();
  const std::size_t ax = detail::norm_axis(axis, s.size(), "split");
  std::size_t total = 0;
  for (auto v : sizes) {
    if (v == 0) throw_shape("split", s, Shape(sizes.begin(), sizes.end()), "zero-sized part");
    total += v;
  }
  if (total != s[ax]) throw_shape("split", s, Shape(sizes.begin(), sizes.end()), "sizes do not sum to axis");
  const auto [outer, n, inner] = detail::split_axis(s, ax);
  const bool track = detail::any_requires_grad<T>({&x});
  auto px = x.node_ptr();
  std::vector<BasicTensor<T>> parts;
  std::size_t start = 0;
  for (auto len : sizes) {
    Shape so = s;
    so[ax] = len;
    const std::size_t w = len * inner, row = n * inner, off = start * inner;
    std::vector<T> out(outer * w);
    const T* xd = x.data().data();
    for (std::size_t o = 0; o < outer; ++o)
      std::copy(xd + o * row + off, xd + o * row + off + w, out.begin() + o * w);
    parts.push_back(detail::make_result<T>("split", std::move(so), std::move(out), {px}, track,
                                           [px, outer, w, row, off](detail::Node<T>& self) {
                                             auto& g = px->ensure_grad();
                                             for (std::size_t o = 0; o < outer; ++o)
                                               for (std::size_t k = 0; k < w; ++k)
                                                 g[o * row + off + k] += self.grad[o * w + k];
                                           }));
    start += len;
  }
  return parts;
}

}  // namespace lfusion
