#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <vector>

#include "mtd/core/rng.hpp"
#include "mtd/nn/hyper.hpp"

// Layer primitives with explicit forward and backward passes. Backward
// functions accumulate parameter gradients (+=) and overwrite input gradients.

namespace mtd::nn {

template <class T>
using Mat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <class T>
using MapM = Eigen::Map<Mat<T>>;
template <class T>
using CMapM = Eigen::Map<const Mat<T>>;

// Vectorised reductions peel differently depending on buffer alignment, so
// every buffer Eigen maps uses aligned storage to keep results bit-reproducible.
template <class T>
using Buf = std::vector<T, Eigen::aligned_allocator<T>>;

template <class T>
inline T activate(Activation a, T x) {
  return a == Activation::Tanh ? std::tanh(x) : (x > T(0) ? x : T(0));
}

/// Derivative expressed through the activation's output y = act(x).
template <class T>
inline T activate_grad_from_output(Activation a, T y) {
  return a == Activation::Tanh ? T(1) - y * y : (y > T(0) ? T(1) : T(0));
}

template <class T>
inline T sigmoid(T x) {
  return T(1) / (T(1) + std::exp(-x));
}

/// Same-padded stride-1 2D convolution over a cin x h x w image, via im2col.
struct Conv2dShape {
  std::size_t cin = 0, cout = 0, h = 0, w = 0, k = 3;

  std::size_t patch() const { return cin * k * k; }
  std::size_t pixels() const { return h * w; }
  std::size_t weight_count() const { return cout * patch(); }
};

template <class T>
void im2col(const Conv2dShape& s, const T* x, T* cols) {
  const long pad = static_cast<long>(s.k / 2);
  const long H = static_cast<long>(s.h), W = static_cast<long>(s.w);
  for (std::size_t ci = 0; ci < s.cin; ++ci)
    for (std::size_t ky = 0; ky < s.k; ++ky)
      for (std::size_t kx = 0; kx < s.k; ++kx) {
        T* row = cols + ((ci * s.k + ky) * s.k + kx) * s.pixels();
        const T* img = x + ci * s.pixels();
        const long dy = static_cast<long>(ky) - pad, dx = static_cast<long>(kx) - pad;
        for (long y = 0; y < H; ++y) {
          const long sy = y + dy;
          T* out = row + y * W;
          if (sy < 0 || sy >= H) {
            std::fill(out, out + W, T(0));
            continue;
          }
          const T* src = img + sy * W;
          const long x0 = std::max(0L, -dx), x1 = std::min(W, W - dx);
          std::fill(out, out + x0, T(0));
          for (long xx = x0; xx < x1; ++xx) out[xx] = src[xx + dx];
          std::fill(out + std::max(x0, x1), out + W, T(0));
        }
      }
}

template <class T>
void col2im(const Conv2dShape& s, const T* cols, T* dx) {
  const long pad = static_cast<long>(s.k / 2);
  const long H = static_cast<long>(s.h), W = static_cast<long>(s.w);
  std::fill(dx, dx + s.cin * s.pixels(), T(0));
  for (std::size_t ci = 0; ci < s.cin; ++ci)
    for (std::size_t ky = 0; ky < s.k; ++ky)
      for (std::size_t kx = 0; kx < s.k; ++kx) {
        const T* row = cols + ((ci * s.k + ky) * s.k + kx) * s.pixels();
        T* img = dx + ci * s.pixels();
        const long dy = static_cast<long>(ky) - pad, ddx = static_cast<long>(kx) - pad;
        for (long y = 0; y < H; ++y) {
          const long sy = y + dy;
          if (sy < 0 || sy >= H) continue;
          const T* in = row + y * W;
          T* dst = img + sy * W;
          const long x0 = std::max(0L, -ddx), x1 = std::min(W, W - ddx);
          for (long xx = x0; xx < x1; ++xx) dst[xx + ddx] += in[xx];
        }
      }
}

/// y (cout x h x w) = W (cout x patch) * im2col(x) + b. `cols` needs patch * pixels scratch.
template <class T>
void conv2d_forward(const Conv2dShape& s, const T* x, const T* weight, const T* bias, T* y, T* cols) {
  im2col(s, x, cols);
  const auto P = static_cast<Eigen::Index>(s.pixels());
  MapM<T> Y(y, static_cast<Eigen::Index>(s.cout), P);
  Y.noalias() = CMapM<T>(weight, static_cast<Eigen::Index>(s.cout), static_cast<Eigen::Index>(s.patch())) *
                CMapM<T>(cols, static_cast<Eigen::Index>(s.patch()), P);
  for (std::size_t c = 0; c < s.cout; ++c) Y.row(static_cast<Eigen::Index>(c)).array() += bias[c];
}

/// Accumulates dW, db; writes dx when non-null. `cols` is scratch of patch * pixels.
template <class T>
void conv2d_backward(const Conv2dShape& s, const T* x, const T* weight, const T* dy, T* dweight, T* dbias, T* dx,
                     T* cols) {
  im2col(s, x, cols);
  const auto P = static_cast<Eigen::Index>(s.pixels());
  const auto Co = static_cast<Eigen::Index>(s.cout), K = static_cast<Eigen::Index>(s.patch());
  CMapM<T> dY(dy, Co, P);
  MapM<T>(dweight, Co, K).noalias() += dY * CMapM<T>(cols, K, P).transpose();
  for (Eigen::Index c = 0; c < Co; ++c) dbias[c] += dY.row(c).sum();
  if (dx) {
    MapM<T>(cols, K, P).noalias() = CMapM<T>(weight, Co, K).transpose() * dY;
    col2im(s, cols, dx);
  }
}

/// 2x2 stride-2 max pooling of a c x h x w image; odd trailing rows/columns are dropped.
template <class T>
void maxpool2_forward(const T* x, std::size_t c, std::size_t h, std::size_t w, T* y, std::uint32_t* arg) {
  const std::size_t ho = h / 2, wo = w / 2;
  for (std::size_t ch = 0; ch < c; ++ch)
    for (std::size_t i = 0; i < ho; ++i)
      for (std::size_t j = 0; j < wo; ++j) {
        const std::size_t base = ch * h * w + 2 * i * w + 2 * j;
        std::size_t best = base;
        for (std::size_t off : {base + 1, base + w, base + w + 1})
          if (x[off] > x[best]) best = off;
        const std::size_t o = (ch * ho + i) * wo + j;
        y[o] = x[best];
        arg[o] = static_cast<std::uint32_t>(best);
      }
}

template <class T>
void maxpool2_backward(const T* dy, const std::uint32_t* arg, std::size_t n_out, T* dx, std::size_t n_in) {
  std::fill(dx, dx + n_in, T(0));
  for (std::size_t o = 0; o < n_out; ++o) dx[arg[o]] += dy[o];
}

/// Inverted-dropout mask: 0 with probability p, else 1/(1-p). Counter-based so
/// a given (seed, site) always yields the same mask.
template <class T>
void dropout_mask(double p, std::uint64_t seed, std::uint64_t site, T* mask, std::size_t n) {
  if (p <= 0.0) {
    std::fill(mask, mask + n, T(1));
    return;
  }
  Rng rng(substream(seed, site));
  const T keep = T(1.0 / (1.0 - p));
  for (std::size_t i = 0; i < n; ++i) mask[i] = rng.uniform() < p ? T(0) : keep;
}

/// LSTM layer unrolled over S steps for a batch of B sequences. Gate order in
/// the 4H pre-activation: input, forget, candidate, output.
///   c_t = f * c_{t-1} + i * act(z_g),  h_t = o * act(c_t)
template <class T>
struct LstmCache {
  std::vector<Mat<T>> x;      // S of B x in
  std::vector<Mat<T>> gates;  // S of B x 4H, after nonlinearities
  std::vector<Mat<T>> c;      // S + 1 of B x H (c[0] = 0)
  std::vector<Mat<T>> h;      // S + 1 of B x H (h[0] = 0)
  std::vector<Mat<T>> actc;   // S of B x H
};

struct LstmShape {
  std::size_t in = 0, hidden = 0;
  Activation act = Activation::Tanh;

  std::size_t wx_count() const { return in * 4 * hidden; }
  std::size_t wh_count() const { return hidden * 4 * hidden; }
  std::size_t bias_count() const { return 4 * hidden; }
};

template <class T>
void lstm_forward(const LstmShape& s, const std::vector<Mat<T>>& xs, const T* wx, const T* wh, const T* b,
                  LstmCache<T>& cache) {
  const auto S = xs.size();
  const auto B = xs.empty() ? 0 : xs[0].rows();
  const auto H = static_cast<Eigen::Index>(s.hidden);
  CMapM<T> Wx(wx, static_cast<Eigen::Index>(s.in), 4 * H);
  CMapM<T> Wh(wh, H, 4 * H);
  Eigen::Map<const Eigen::Matrix<T, 1, Eigen::Dynamic>> bias(b, 4 * H);
  cache.x = xs;
  cache.gates.assign(S, Mat<T>(B, 4 * H));
  cache.c.assign(S + 1, Mat<T>::Zero(B, H));
  cache.h.assign(S + 1, Mat<T>::Zero(B, H));
  cache.actc.assign(S, Mat<T>(B, H));
  for (std::size_t t = 0; t < S; ++t) {
    Mat<T>& z = cache.gates[t];
    z.noalias() = xs[t] * Wx;
    z.noalias() += cache.h[t] * Wh;
    z.rowwise() += bias;
    for (Eigen::Index r = 0; r < B; ++r)
      for (Eigen::Index u = 0; u < H; ++u) {
        const T i = sigmoid(z(r, u));
        const T f = sigmoid(z(r, H + u));
        const T g = activate(s.act, z(r, 2 * H + u));
        const T o = sigmoid(z(r, 3 * H + u));
        z(r, u) = i;
        z(r, H + u) = f;
        z(r, 2 * H + u) = g;
        z(r, 3 * H + u) = o;
        const T c = f * cache.c[t](r, u) + i * g;
        cache.c[t + 1](r, u) = c;
        const T ac = activate(s.act, c);
        cache.actc[t](r, u) = ac;
        cache.h[t + 1](r, u) = o * ac;
      }
  }
}

/// dhs[t] is the loss gradient w.r.t. h_{t+1} from above (B x H each);
/// dxs receives the gradients w.r.t. the inputs.
template <class T>
void lstm_backward(const LstmShape& s, const LstmCache<T>& cache, const std::vector<Mat<T>>& dhs, const T* wx,
                   const T* wh, T* dwx, T* dwh, T* db, std::vector<Mat<T>>* dxs) {
  const auto S = cache.x.size();
  if (S == 0) return;
  const auto B = cache.x[0].rows();
  const auto H = static_cast<Eigen::Index>(s.hidden);
  const auto I = static_cast<Eigen::Index>(s.in);
  CMapM<T> Wx(wx, I, 4 * H);
  CMapM<T> Wh(wh, H, 4 * H);
  MapM<T> dWx(dwx, I, 4 * H);
  MapM<T> dWh(dwh, H, 4 * H);
  Eigen::Map<Eigen::Matrix<T, 1, Eigen::Dynamic>> dB(db, 4 * H);
  Mat<T> dh_rec = Mat<T>::Zero(B, H), dc_rec = Mat<T>::Zero(B, H), dz(B, 4 * H);
  if (dxs) dxs->assign(S, Mat<T>());
  for (std::size_t t = S; t-- > 0;) {
    const Mat<T>& g = cache.gates[t];
    for (Eigen::Index r = 0; r < B; ++r)
      for (Eigen::Index u = 0; u < H; ++u) {
        const T i = g(r, u), f = g(r, H + u), cand = g(r, 2 * H + u), o = g(r, 3 * H + u);
        const T ac = cache.actc[t](r, u);
        const T dh = dhs[t](r, u) + dh_rec(r, u);
        const T dc = dc_rec(r, u) + dh * o * activate_grad_from_output(s.act, ac);
        dz(r, u) = dc * cand * i * (T(1) - i);
        dz(r, H + u) = dc * cache.c[t](r, u) * f * (T(1) - f);
        dz(r, 2 * H + u) = dc * i * activate_grad_from_output(s.act, cand);
        dz(r, 3 * H + u) = dh * ac * o * (T(1) - o);
        dc_rec(r, u) = dc * f;
      }
    dWx.noalias() += cache.x[t].transpose() * dz;
    dWh.noalias() += cache.h[t].transpose() * dz;
    dB += dz.colwise().sum();
    dh_rec.noalias() = dz * Wh.transpose();
    if (dxs) (*dxs)[t].noalias() = dz * Wx.transpose();
  }
}

/// y (B x out) = x (B x in) * W (in x out) + b
template <class T>
void dense_forward(const Mat<T>& x, const T* w, const T* b, std::size_t out, Mat<T>& y) {
  const auto O = static_cast<Eigen::Index>(out);
  y.noalias() = x * CMapM<T>(w, x.cols(), O);
  y.rowwise() += Eigen::Map<const Eigen::Matrix<T, 1, Eigen::Dynamic>>(b, O);
}

template <class T>
void dense_backward(const Mat<T>& x, const Mat<T>& dy, const T* w, T* dw, T* db, Mat<T>* dx) {
  const auto O = dy.cols();
  MapM<T>(dw, x.cols(), O).noalias() += x.transpose() * dy;
  Eigen::Map<Eigen::Matrix<T, 1, Eigen::Dynamic>>(db, O) += dy.colwise().sum();
  if (dx) dx->noalias() = dy * CMapM<T>(w, x.cols(), O).transpose();
}

}  // namespace mtd::nn
