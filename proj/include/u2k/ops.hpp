// Core cube arithmetic shared by the computation graph and the degradation
// simulator: per-band 2-D cross-correlation (replicate-same or valid),
// top-left decimation and the mode-3 (spectral) product.
#pragma once

#include <algorithm>
#include <vector>

#include "u2k/common.hpp"
#include "u2k/tensor.hpp"

namespace u2k {

enum class Pad { ReplicateSame, Valid };

namespace detail {

inline int clampi(int v, int lo, int hi) { return v < lo ? lo : (v > hi ? hi : v); }

// dst[j] += w * src[clamp(j + dv)] over a row; index clamping realizes
// replicate padding. src has width w_src, dst has width w_out.
template <typename T>
inline void axpy_row_clamped(T* __restrict__ dst, const T* __restrict__ src, int w_out, int w_src,
                             int dv, T w) {
  int lo = std::min(w_out, std::max(0, -dv));
  int hi = std::max(lo, std::min(w_out, w_src - dv));
  for (int j = 0; j < lo; ++j) dst[j] += w * src[0];
  const T* __restrict__ s = src + dv;
  for (int j = lo; j < hi; ++j) dst[j] += w * s[j];
  for (int j = hi; j < w_out; ++j) dst[j] += w * src[w_src - 1];
}

// transpose of axpy_row_clamped: dst_src[clamp(j + dv)] += w * g[j]
template <typename T>
inline void scatter_row_clamped(T* __restrict__ dst_src, const T* __restrict__ g, int w_out,
                                int w_src, int dv, T w) {
  int lo = std::min(w_out, std::max(0, -dv));
  int hi = std::max(lo, std::min(w_out, w_src - dv));
  T left = T(0), right = T(0);
  for (int j = 0; j < lo; ++j) left += g[j];
  T* __restrict__ d = dst_src + dv;
  for (int j = lo; j < hi; ++j) d[j] += w * g[j];
  for (int j = hi; j < w_out; ++j) right += g[j];
  if (lo > 0) dst_src[0] += w * left;
  if (hi < w_out) dst_src[w_src - 1] += w * right;
}

// fixed-associativity unrolled dot product; the eight-lane layout both
// vectorizes without fast-math and keeps results bit-deterministic
template <typename T>
inline T dot8(const T* __restrict__ a, const T* __restrict__ b, int n) {
  T acc[8] = {T(0), T(0), T(0), T(0), T(0), T(0), T(0), T(0)};
  int j = 0;
  for (; j + 8 <= n; j += 8)
    for (int l = 0; l < 8; ++l) acc[l] += a[j + l] * b[j + l];
  for (; j < n; ++j) acc[j & 7] += a[j] * b[j];
  return ((acc[0] + acc[1]) + (acc[2] + acc[3])) + ((acc[4] + acc[5]) + (acc[6] + acc[7]));
}

// sum_j g[j] * src[clamp(j + dv)]
template <typename T>
inline T dot_row_clamped(const T* __restrict__ g, const T* __restrict__ src, int w_out, int w_src,
                         int dv) {
  int lo = std::min(w_out, std::max(0, -dv));
  int hi = std::max(lo, std::min(w_out, w_src - dv));
  T left = T(0), mid = T(0), right = T(0);
  for (int j = 0; j < lo; ++j) left += g[j];
  const T* __restrict__ s = src + dv;
  for (int j = lo; j < hi; ++j) mid += g[j] * s[j];
  for (int j = hi; j < w_out; ++j) right += g[j];
  return left * src[0] + mid + right * src[w_src - 1];
}

}  // namespace detail

// One square kernel applied independently to every band. Cross-correlation
// convention (no kernel flip).
template <typename T>
inline void conv2d_per_band_into(const Tensor<T>& cube, const Tensor<T>& kern, Pad pad,
                                 Tensor<T>& out) {
  require(cube.rank() == 3, ErrorKind::Config, "conv2d_per_band: cube must be 3-axis");
  require(kern.rank() == 2 && kern.dim(0) == kern.dim(1), ErrorKind::Config,
          "conv2d_per_band: kernel must be square");
  int k = kern.dim(0);
  require(k % 2 == 1, ErrorKind::Config, "conv2d_per_band: even kernel size rejected");
  int hi = cube.dim(0), wi = cube.dim(1), bands = cube.dim(2);
  if (pad == Pad::Valid) {
    require(k <= std::min(hi, wi), ErrorKind::Config,
            "conv2d_per_band: kernel exceeds extent in valid mode");
    if (out.dims() != std::vector<int>{hi - k + 1, wi - k + 1, bands})
      out.reshape_raw({hi - k + 1, wi - k + 1, bands});
  } else if (out.dims() != cube.dims()) {
    out.reshape_raw(cube.dims());
  }
  out.fill(T(0));
  int ho = out.dim(0), wo = out.dim(1);
  int m = k / 2;
  if (pad == Pad::Valid) {
    for (int b = 0; b < bands; ++b) {
      const T* ip = cube.plane(b);
      T* op = out.plane(b);
      for (int u = 0; u < k; ++u)
        for (int v = 0; v < k; ++v) {
          T w = kern.at(u, v);
          for (int i = 0; i < ho; ++i) {
            const T* __restrict__ src = ip + (i + u) * wi + v;
            T* __restrict__ dst = op + i * wo;
            for (int j = 0; j < wo; ++j) dst[j] += w * src[j];
          }
        }
    }
    return;
  }
  // replicate-same via a padded scratch plane; taps become branch-free rows
  int pw = wi + 2 * m;
  std::vector<T> padbuf(std::size_t(hi + 2 * m) * pw);
  for (int b = 0; b < bands; ++b) {
    const T* ip = cube.plane(b);
    T* op = out.plane(b);
    for (int i = -m; i < hi + m; ++i) {
      const T* srow = ip + detail::clampi(i, 0, hi - 1) * wi;
      T* prow = padbuf.data() + std::size_t(i + m) * pw;
      for (int j = 0; j < m; ++j) prow[j] = srow[0];
      std::copy(srow, srow + wi, prow + m);
      for (int j = 0; j < m; ++j) prow[m + wi + j] = srow[wi - 1];
    }
    for (int t = 0; t < k * k; ++t) {
      T w = kern[std::size_t(t)];
      const T* __restrict__ shifted = padbuf.data() + (t / k) * pw + (t % k);
      for (int i = 0; i < ho; ++i) {
        const T* __restrict__ srow = shifted + i * pw;
        T* __restrict__ drow = op + i * wo;
        for (int j = 0; j < wo; ++j) drow[j] += w * srow[j];
      }
    }
  }
}

template <typename T>
inline Tensor<T> conv2d_per_band(const Tensor<T>& cube, const Tensor<T>& kern,
                                 Pad pad = Pad::ReplicateSame) {
  Tensor<T> out;
  conv2d_per_band_into(cube, kern, pad, out);
  return out;
}

// out(i,j,b) = in(i*s, j*s, b)
template <typename T>
inline void downsample_into(const Tensor<T>& cube, int s, Tensor<T>& out) {
  require(cube.rank() == 3, ErrorKind::Config, "downsample: cube must be 3-axis");
  require(s >= 1, ErrorKind::Config, "downsample: factor must be >= 1");
  require(cube.dim(0) % s == 0, ErrorKind::Config,
          strfmt("downsample: H=%d not divisible by s=%d", cube.dim(0), s));
  require(cube.dim(1) % s == 0, ErrorKind::Config,
          strfmt("downsample: W=%d not divisible by s=%d", cube.dim(1), s));
  int ho = cube.dim(0) / s, wo = cube.dim(1) / s, bands = cube.dim(2);
  if (out.dims() != std::vector<int>{ho, wo, bands}) out.reshape_raw({ho, wo, bands});
  for (int b = 0; b < bands; ++b) {
    const T* ip = cube.plane(b);
    T* op = out.plane(b);
    for (int i = 0; i < ho; ++i)
      for (int j = 0; j < wo; ++j) op[i * wo + j] = ip[(i * s) * cube.dim(1) + j * s];
  }
}

template <typename T>
inline Tensor<T> downsample(const Tensor<T>& cube, int s) {
  Tensor<T> out;
  downsample_into(cube, s, out);
  return out;
}

// out(i,j,m) = sum_b mat(m,b) * cube(i,j,b)
template <typename T>
inline void mode3_into(const Tensor<T>& cube, const Tensor<T>& mat, Tensor<T>& out) {
  require(cube.rank() == 3 && mat.rank() == 2, ErrorKind::Config, "mode3: rank mismatch");
  require(mat.dim(1) == cube.dim(2), ErrorKind::Config,
          strfmt("mode3: matrix columns %d != cube bands %d", mat.dim(1), cube.dim(2)));
  int b1 = cube.dim(2), b2 = mat.dim(0);
  if (out.dims() != std::vector<int>{cube.dim(0), cube.dim(1), b2})
    out.reshape_raw({cube.dim(0), cube.dim(1), b2});
  std::size_t np = std::size_t(cube.dim(0)) * std::size_t(cube.dim(1));
  for (int o = 0; o < b2; ++o) {
    T* op = out.plane(o);
    std::fill(op, op + np, T(0));
    for (int b = 0; b < b1; ++b) {
      T w = mat.at(o, b);
      const T* ip = cube.plane(b);
      for (std::size_t i = 0; i < np; ++i) op[i] += w * ip[i];
    }
  }
}

template <typename T>
inline Tensor<T> mode3(const Tensor<T>& cube, const Tensor<T>& mat) {
  Tensor<T> out;
  mode3_into(cube, mat, out);
  return out;
}

// Reads a spatial window with replicate clamping at the cube borders, so a
// window may extend beyond the image and still match full-image convolution
// semantics.
template <typename T>
inline Tensor<T> crop_replicated(const Tensor<T>& cube, int i0, int j0, int h, int w) {
  require(cube.rank() == 3, ErrorKind::Config, "crop: cube must be 3-axis");
  Tensor<T> out = Tensor<T>::cube(h, w, cube.dim(2));
  for (int b = 0; b < cube.dim(2); ++b)
    for (int i = 0; i < h; ++i) {
      int si = detail::clampi(i0 + i, 0, cube.dim(0) - 1);
      for (int j = 0; j < w; ++j)
        out.at3(i, j, b) = cube.at3(si, detail::clampi(j0 + j, 0, cube.dim(1) - 1), b);
    }
  return out;
}

}  // namespace u2k
