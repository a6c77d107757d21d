// Copyright 2026 The layerprobe Authors
// SPDX-License-Identifier: Apache-2.0
//
// Layer primitives on raw row-major buffers. Every routine has a fixed
// reduction order, so results are bitwise reproducible for equal inputs.

#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <vector>

#include <Eigen/Core>

namespace lp::kernels {

template <typename T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using MatMap = Eigen::Map<RowMat<T>>;
template <typename T>
using ConstMatMap = Eigen::Map<const RowMat<T>>;

// --- dense ----------------------------------------------------------------

/// y[n, out] = x[n, in] * w[out, in]^T + b
template <typename T>
void dense_forward(const T* x, const T* w, const T* b, int n, int in, int out,
                   T* y) {
  ConstMatMap<T> X(x, n, in);
  ConstMatMap<T> W(w, out, in);
  MatMap<T> Y(y, n, out);
  Y.noalias() = X * W.transpose();
  Y.rowwise() += Eigen::Map<const Eigen::Matrix<T, 1, Eigen::Dynamic>>(b, out);
}

/// Accumulates dw, db (when non-null) and writes dx (when non-null).
template <typename T>
void dense_backward(const T* x, const T* w, const T* dy, int n, int in, int out,
                    T* dw, T* db, T* dx) {
  ConstMatMap<T> DY(dy, n, out);
  if (dw) {
    MatMap<T>(dw, out, in).noalias() += DY.transpose() * ConstMatMap<T>(x, n, in);
  }
  if (db) {
    for (int i = 0; i < n; ++i) {
      for (int o = 0; o < out; ++o) db[o] += dy[static_cast<std::size_t>(i) * out + o];
    }
  }
  if (dx) {
    MatMap<T>(dx, n, in).noalias() = DY * ConstMatMap<T>(w, out, in);
  }
}

// --- conv2d ---------------------------------------------------------------

struct ConvShape {
  int channels, height, width;  // input
  int out_channels, kernel, stride, padding;
  int out_height, out_width;

  int patch() const { return channels * kernel * kernel; }
  int out_area() const { return out_height * out_width; }
  int in_size() const { return channels * height * width; }
  int out_size() const { return out_channels * out_area(); }
  bool pointwise() const { return kernel == 1 && stride == 1 && padding == 0; }
};

/// Output columns [lo, hi) whose input column ow*stride - padding + kj lies
/// inside [0, width).
inline void valid_range(int kj, int stride, int padding, int width, int out_width,
                        int& lo, int& hi) {
  const int first = padding - kj;  // smallest ow*stride that lands inside
  lo = first <= 0 ? 0 : (first + stride - 1) / stride;
  const int last = width - 1 + padding - kj;  // largest ow*stride inside
  hi = last < 0 ? 0 : std::min(out_width, last / stride + 1);
  lo = std::min(lo, hi);
}

/// Writes the patch matrix of one image into cols[patch, col_offset + area]
/// with leading dimension ld.
template <typename T>
void im2col(const T* x, const ConvShape& s, T* cols, int ld, int col_offset) {
  for (int kj = 0; kj < s.kernel; ++kj) {
    int lo, hi;
    valid_range(kj, s.stride, s.padding, s.width, s.out_width, lo, hi);
    const int shift = kj - s.padding;
    for (int c = 0; c < s.channels; ++c) {
      for (int ki = 0; ki < s.kernel; ++ki) {
        const int row = (c * s.kernel + ki) * s.kernel + kj;
        T* dst = cols + static_cast<std::size_t>(row) * ld + col_offset;
        for (int oh = 0; oh < s.out_height; ++oh) {
          const int ih = oh * s.stride - s.padding + ki;
          T* drow = dst + oh * s.out_width;
          if (ih < 0 || ih >= s.height) {
            std::fill(drow, drow + s.out_width, T(0));
            continue;
          }
          const T* srow = x + (static_cast<std::size_t>(c) * s.height + ih) * s.width;
          std::fill(drow, drow + lo, T(0));
          if (s.stride == 1) {
            std::copy(srow + lo + shift, srow + hi + shift, drow + lo);
          } else {
            for (int ow = lo; ow < hi; ++ow) drow[ow] = srow[ow * s.stride + shift];
          }
          std::fill(drow + hi, drow + s.out_width, T(0));
        }
      }
    }
  }
}

/// Adds the patch-matrix gradient back into dx of one image.
template <typename T>
void col2im(const T* cols, const ConvShape& s, int ld, int col_offset, T* dx) {
  for (int kj = 0; kj < s.kernel; ++kj) {
    int lo, hi;
    valid_range(kj, s.stride, s.padding, s.width, s.out_width, lo, hi);
    const int shift = kj - s.padding;
    for (int c = 0; c < s.channels; ++c) {
      for (int ki = 0; ki < s.kernel; ++ki) {
        const int row = (c * s.kernel + ki) * s.kernel + kj;
        const T* src = cols + static_cast<std::size_t>(row) * ld + col_offset;
        for (int oh = 0; oh < s.out_height; ++oh) {
          const int ih = oh * s.stride - s.padding + ki;
          if (ih < 0 || ih >= s.height) continue;
          T* drow = dx + (static_cast<std::size_t>(c) * s.height + ih) * s.width;
          const T* srow = src + oh * s.out_width;
          if (s.stride == 1) {
            T* __restrict d = drow + shift;
            const T* __restrict g = srow;
            for (int ow = lo; ow < hi; ++ow) d[ow] += g[ow];
          } else {
            for (int ow = lo; ow < hi; ++ow) drow[ow * s.stride + shift] += srow[ow];
          }
        }
      }
    }
  }
}

/// Images per GEMM so that each patch matrix has roughly 4096 columns.
inline int conv_chunk(const ConvShape& s, int n) {
  return std::clamp(4096 / std::max(1, s.out_area()), 1, std::max(1, n));
}

/// y[n, O, Ho, Wo] = conv(x[n, C, H, W], w[O, C, k, k]) + b
template <typename T>
void conv2d_forward(const T* x, const T* w, const T* b, int n, const ConvShape& s,
                    T* y) {
  const int area = s.out_area();
  const int chunk = conv_chunk(s, n);
  ConstMatMap<T> W(w, s.out_channels, s.patch());
  RowMat<T> cols(s.patch(), static_cast<Eigen::Index>(chunk) * area);
  RowMat<T> out(s.out_channels, static_cast<Eigen::Index>(chunk) * area);
  for (int i0 = 0; i0 < n; i0 += chunk) {
    const int m = std::min(chunk, n - i0);
    const int ld = m * area;
    for (int i = 0; i < m; ++i) {
      im2col(x + static_cast<std::size_t>(i0 + i) * s.in_size(), s, cols.data(), ld,
             i * area);
    }
    ConstMatMap<T> C(cols.data(), s.patch(), ld);
    auto O = out.leftCols(ld);
    O.noalias() = W * C;
    for (int i = 0; i < m; ++i) {
      T* yi = y + static_cast<std::size_t>(i0 + i) * s.out_size();
      for (int o = 0; o < s.out_channels; ++o) {
        const T* src = out.data() + static_cast<std::size_t>(o) * out.cols() + i * area;
        T* dst = yi + static_cast<std::size_t>(o) * area;
        const T bias = b ? b[o] : T(0);
        for (int a = 0; a < area; ++a) dst[a] = src[a] + bias;
      }
    }
  }
}

/// Accumulates dw, db (when non-null) and writes dx (when non-null).
template <typename T>
void conv2d_backward(const T* x, const T* w, const T* dy, int n, const ConvShape& s,
                     T* dw, T* db, T* dx) {
  const int area = s.out_area();
  const int chunk = conv_chunk(s, n);
  ConstMatMap<T> W(w, s.out_channels, s.patch());
  RowMat<T> cols;
  if (dw) cols.resize(s.patch(), static_cast<Eigen::Index>(chunk) * area);
  RowMat<T> grad(s.out_channels, static_cast<Eigen::Index>(chunk) * area);
  RowMat<T> dcols;
  if (dx) {
    std::fill(dx, dx + static_cast<std::size_t>(n) * s.in_size(), T(0));
    dcols.resize(s.patch(), static_cast<Eigen::Index>(chunk) * area);
  }
  for (int i0 = 0; i0 < n; i0 += chunk) {
    const int m = std::min(chunk, n - i0);
    const int ld = m * area;
    // Gather dy of the chunk into [O, m*area].
    for (int i = 0; i < m; ++i) {
      const T* dyi = dy + static_cast<std::size_t>(i0 + i) * s.out_size();
      for (int o = 0; o < s.out_channels; ++o) {
        std::copy(dyi + static_cast<std::size_t>(o) * area,
                  dyi + static_cast<std::size_t>(o + 1) * area,
                  grad.data() + static_cast<std::size_t>(o) * grad.cols() + i * area);
      }
    }
    auto G = grad.leftCols(ld);
    if (db) {
      for (int o = 0; o < s.out_channels; ++o) {
        const T* g = grad.data() + static_cast<std::size_t>(o) * grad.cols();
        T acc = 0;
        for (int a = 0; a < ld; ++a) acc += g[a];
        db[o] += acc;
      }
    }
    if (dw) {
      for (int i = 0; i < m; ++i) {
        im2col(x + static_cast<std::size_t>(i0 + i) * s.in_size(), s, cols.data(), ld,
               i * area);
      }
      ConstMatMap<T> C(cols.data(), s.patch(), ld);
      MatMap<T>(dw, s.out_channels, s.patch()).noalias() += G * C.transpose();
    }
    if (dx) {
      auto D = dcols.leftCols(ld);
      D.noalias() = W.transpose() * G;
      for (int i = 0; i < m; ++i) {
        col2im(dcols.data(), s, static_cast<int>(dcols.cols()), i * area,
               dx + static_cast<std::size_t>(i0 + i) * s.in_size());
      }
    }
  }
}

// --- pooling --------------------------------------------------------------

template <typename T>
void maxpool_forward(const T* x, int n, int c, int h, int w, int k, int stride,
                     int oh, int ow, T* y, int* argmax) {
  for (int img = 0; img < n * c; ++img) {
    const T* xi = x + static_cast<std::size_t>(img) * h * w;
    for (int i = 0; i < oh; ++i) {
      for (int j = 0; j < ow; ++j) {
        int best = (i * stride) * w + j * stride;
        for (int a = 0; a < k; ++a) {
          for (int b = 0; b < k; ++b) {
            const int idx = (i * stride + a) * w + (j * stride + b);
            if (xi[idx] > xi[best]) best = idx;
          }
        }
        const std::size_t o = (static_cast<std::size_t>(img) * oh + i) * ow + j;
        y[o] = xi[best];
        argmax[o] = best;
      }
    }
  }
}

template <typename T>
void maxpool_backward(const T* dy, const int* argmax, int n, int c, int h, int w,
                      int oh, int ow, T* dx) {
  std::fill(dx, dx + static_cast<std::size_t>(n) * c * h * w, T(0));
  for (int img = 0; img < n * c; ++img) {
    T* dxi = dx + static_cast<std::size_t>(img) * h * w;
    for (int o = 0; o < oh * ow; ++o) {
      const std::size_t idx = static_cast<std::size_t>(img) * oh * ow + o;
      dxi[argmax[idx]] += dy[idx];
    }
  }
}

template <typename T>
void avgpool_forward(const T* x, int n, int c, int area, T* y) {
  for (int i = 0; i < n * c; ++i) {
    T acc = 0;
    const T* xi = x + static_cast<std::size_t>(i) * area;
    for (int a = 0; a < area; ++a) acc += xi[a];
    y[i] = acc / static_cast<T>(area);
  }
}

template <typename T>
void avgpool_backward(const T* dy, int n, int c, int area, T* dx) {
  for (int i = 0; i < n * c; ++i) {
    const T g = dy[i] / static_cast<T>(area);
    std::fill(dx + static_cast<std::size_t>(i) * area,
              dx + static_cast<std::size_t>(i + 1) * area, g);
  }
}

// --- batch norm -----------------------------------------------------------

inline constexpr double kBatchNormEps = 1e-5;
inline constexpr double kBatchNormMomentum = 0.1;

template <typename T>
struct BatchNormCache {
  std::vector<T> xhat;
  std::vector<T> inv_std;
  bool batch_stats = false;
};

/// x laid out [n, c, area]. With batch_stats, normalizes by the batch moments
/// and (when running stats are non-null) updates them.
template <typename T>
void batchnorm_forward(const T* x, int n, int c, int area, const T* gamma,
                       const T* beta, T* running_mean, T* running_var,
                       bool batch_stats, T* y, BatchNormCache<T>* cache) {
  const std::size_t total = static_cast<std::size_t>(n) * c * area;
  std::vector<T> xhat_local;
  std::vector<T>& xhat = cache ? cache->xhat : xhat_local;
  xhat.resize(total);
  std::vector<T> inv(c);
  const double count = static_cast<double>(n) * area;
  for (int ch = 0; ch < c; ++ch) {
    double mean;
    double var;
    if (batch_stats) {
      double s = 0;
      for (int i = 0; i < n; ++i) {
        const T* xi = x + (static_cast<std::size_t>(i) * c + ch) * area;
        for (int a = 0; a < area; ++a) s += xi[a];
      }
      mean = s / count;
      double ss = 0;
      for (int i = 0; i < n; ++i) {
        const T* xi = x + (static_cast<std::size_t>(i) * c + ch) * area;
        for (int a = 0; a < area; ++a) ss += (xi[a] - mean) * (xi[a] - mean);
      }
      var = ss / count;
      if (running_mean && running_var) {
        const double m = kBatchNormMomentum;
        const double unbiased = count > 1 ? ss / (count - 1) : var;
        running_mean[ch] = static_cast<T>((1 - m) * running_mean[ch] + m * mean);
        running_var[ch] = static_cast<T>((1 - m) * running_var[ch] + m * unbiased);
      }
    } else {
      mean = running_mean[ch];
      var = running_var[ch];
    }
    const T inv_std = static_cast<T>(1.0 / std::sqrt(var + kBatchNormEps));
    inv[ch] = inv_std;
    const T mu = static_cast<T>(mean);
    for (int i = 0; i < n; ++i) {
      const std::size_t off = (static_cast<std::size_t>(i) * c + ch) * area;
      for (int a = 0; a < area; ++a) {
        const T h = (x[off + a] - mu) * inv_std;
        xhat[off + a] = h;
        y[off + a] = gamma[ch] * h + beta[ch];
      }
    }
  }
  if (cache) {
    cache->inv_std = std::move(inv);
    cache->batch_stats = batch_stats;
  }
}

template <typename T>
void batchnorm_backward(const T* dy, int n, int c, int area, const T* gamma,
                        const BatchNormCache<T>& cache, T* dgamma, T* dbeta, T* dx) {
  const T count = static_cast<T>(n) * area;
  for (int ch = 0; ch < c; ++ch) {
    T sg = 0;
    T sb = 0;
    for (int i = 0; i < n; ++i) {
      const std::size_t off = (static_cast<std::size_t>(i) * c + ch) * area;
      for (int a = 0; a < area; ++a) {
        sg += dy[off + a] * cache.xhat[off + a];
        sb += dy[off + a];
      }
    }
    if (dgamma) dgamma[ch] += sg;
    if (dbeta) dbeta[ch] += sb;
    if (!dx) continue;
    const T scale = gamma[ch] * cache.inv_std[ch];
    for (int i = 0; i < n; ++i) {
      const std::size_t off = (static_cast<std::size_t>(i) * c + ch) * area;
      for (int a = 0; a < area; ++a) {
        dx[off + a] = cache.batch_stats
                          ? scale / count *
                                (count * dy[off + a] - sb - cache.xhat[off + a] * sg)
                          : scale * dy[off + a];
      }
    }
  }
}

}  // namespace lp::kernels
