#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <random>
#include <vector>

#include "mseg/errors.hpp"
#include "mseg/tensor.hpp"

namespace mseg {

enum class Padding { same, valid };

namespace detail {

constexpr std::size_t kColumnBlock = 256;

// C[M,N] += A[M,K] * B[K,N]
template <class T>
void gemm_nn(std::size_t M, std::size_t N, std::size_t K, const T* A, const T* B, T* C) {
  for (std::size_t j0 = 0; j0 < N; j0 += kColumnBlock) {
    const std::size_t jn = std::min(N, j0 + kColumnBlock) - j0;
    for (std::size_t i = 0; i < M; ++i) {
      T* c = C + i * N + j0;
      for (std::size_t k = 0; k < K; ++k) {
        const T a = A[i * K + k];
        const T* b = B + k * N + j0;
        for (std::size_t j = 0; j < jn; ++j) c[j] += a * b[j];
      }
    }
  }
}

// C[M,K] += A[M,N] * B[K,N]^T
template <class T>
void gemm_nt(std::size_t M, std::size_t K, std::size_t N, const T* A, const T* B, T* C) {
  for (std::size_t j0 = 0; j0 < N; j0 += kColumnBlock) {
    const std::size_t jn = std::min(N, j0 + kColumnBlock) - j0;
    for (std::size_t i = 0; i < M; ++i) {
      const T* a = A + i * N + j0;
      for (std::size_t k = 0; k < K; ++k) {
        const T* b = B + k * N + j0;
        T s0 = 0, s1 = 0, s2 = 0, s3 = 0;
        std::size_t j = 0;
        for (; j + 4 <= jn; j += 4) {
          s0 += a[j] * b[j];
          s1 += a[j + 1] * b[j + 1];
          s2 += a[j + 2] * b[j + 2];
          s3 += a[j + 3] * b[j + 3];
        }
        for (; j < jn; ++j) s0 += a[j] * b[j];
        C[i * K + k] += (s0 + s1) + (s2 + s3);
      }
    }
  }
}

// C[K,N] += A[M,K]^T * B[M,N]
template <class T>
void gemm_tn(std::size_t K, std::size_t N, std::size_t M, const T* A, const T* B, T* C) {
  for (std::size_t j0 = 0; j0 < N; j0 += kColumnBlock) {
    const std::size_t jn = std::min(N, j0 + kColumnBlock) - j0;
    for (std::size_t m = 0; m < M; ++m) {
      const T* b = B + m * N + j0;
      for (std::size_t k = 0; k < K; ++k) {
        const T a = A[m * K + k];
        T* c = C + k * N + j0;
        for (std::size_t j = 0; j < jn; ++j) c[j] += a * b[j];
      }
    }
  }
}

struct ConvGeometry {
  std::size_t n, cin, h, w, cout, k, pad, oh, ow;
};

template <class T>
ConvGeometry conv_geometry(const Tensor<T>& input, const Tensor<T>& kernel, Padding padding) {
  if (input.rank() != 4 || kernel.rank() != 4) {
    throw InvalidArgument("conv2d expects [N,C,H,W] input and [Cout,Cin,k,k] kernel");
  }
  ConvGeometry g{input.dim(0), input.dim(1), input.dim(2), input.dim(3),
                 kernel.dim(0), kernel.dim(2), 0, 0, 0};
  if (kernel.dim(1) != g.cin) {
    throw InvalidArgument("conv2d: kernel expects " + std::to_string(kernel.dim(1)) +
                          " input channels, got " + std::to_string(g.cin));
  }
  if (kernel.dim(3) != g.k) throw InvalidArgument("conv2d: kernel must be square");
  if (padding == Padding::same) {
    if (g.k % 2 == 0) throw InvalidArgument("conv2d: same padding needs an odd kernel");
    g.pad = g.k / 2;
    g.oh = g.h;
    g.ow = g.w;
  } else {
    if (g.k > g.h || g.k > g.w) throw InvalidArgument("conv2d: kernel larger than input");
    g.oh = g.h - g.k + 1;
    g.ow = g.w - g.k + 1;
  }
  return g;
}

template <class T>
void im2col(const ConvGeometry& g, const T* in, T* cols) {
  const std::size_t plane = g.oh * g.ow;
  for (std::size_t c = 0; c < g.cin; ++c) {
    for (std::size_t ky = 0; ky < g.k; ++ky) {
      for (std::size_t kx = 0; kx < g.k; ++kx) {
        T* dst = cols + ((c * g.k + ky) * g.k + kx) * plane;
        for (std::size_t oy = 0; oy < g.oh; ++oy) {
          const long iy = static_cast<long>(oy + ky) - static_cast<long>(g.pad);
          T* row = dst + oy * g.ow;
          if (iy < 0 || iy >= static_cast<long>(g.h)) {
            std::fill_n(row, g.ow, T{0});
            continue;
          }
          const T* src = in + (c * g.h + iy) * g.w;
          for (std::size_t ox = 0; ox < g.ow; ++ox) {
            const long ix = static_cast<long>(ox + kx) - static_cast<long>(g.pad);
            row[ox] = (ix < 0 || ix >= static_cast<long>(g.w)) ? T{0} : src[ix];
          }
        }
      }
    }
  }
}

template <class T>
void col2im(const ConvGeometry& g, const T* cols, T* in) {
  const std::size_t plane = g.oh * g.ow;
  for (std::size_t c = 0; c < g.cin; ++c) {
    for (std::size_t ky = 0; ky < g.k; ++ky) {
      for (std::size_t kx = 0; kx < g.k; ++kx) {
        const T* src = cols + ((c * g.k + ky) * g.k + kx) * plane;
        for (std::size_t oy = 0; oy < g.oh; ++oy) {
          const long iy = static_cast<long>(oy + ky) - static_cast<long>(g.pad);
          if (iy < 0 || iy >= static_cast<long>(g.h)) continue;
          T* dst = in + (c * g.h + iy) * g.w;
          const T* row = src + oy * g.ow;
          for (std::size_t ox = 0; ox < g.ow; ++ox) {
            const long ix = static_cast<long>(ox + kx) - static_cast<long>(g.pad);
            if (ix >= 0 && ix < static_cast<long>(g.w)) dst[ix] += row[ox];
          }
        }
      }
    }
  }
}

inline bool is_pointwise(const ConvGeometry& g) { return g.k == 1 && g.pad == 0; }

}  // namespace detail

// Cross-correlation. input [N,Cin,H,W], kernel [Cout,Cin,k,k], bias [Cout] or empty.
template <class T>
Tensor<T> conv2d(const Tensor<T>& input, const Tensor<T>& kernel, const Tensor<T>& bias,
                 Padding padding = Padding::same) {
  const auto g = detail::conv_geometry(input, kernel, padding);
  if (bias.size() != 0 && bias.size() != g.cout) throw InvalidArgument("conv2d: bias size");
  Tensor<T> out({g.n, g.cout, g.oh, g.ow});
  const std::size_t plane = g.oh * g.ow;
  const std::size_t kk = g.cin * g.k * g.k;
  std::vector<T> cols(detail::is_pointwise(g) ? 0 : kk * plane);
  for (std::size_t n = 0; n < g.n; ++n) {
    const T* in = input.data() + n * g.cin * g.h * g.w;
    T* o = out.data() + n * g.cout * plane;
    if (bias.size() != 0) {
      for (std::size_t co = 0; co < g.cout; ++co) std::fill_n(o + co * plane, plane, bias[co]);
    }
    const T* b = in;
    if (!detail::is_pointwise(g)) {
      detail::im2col(g, in, cols.data());
      b = cols.data();
    }
    detail::gemm_nn(g.cout, plane, kk, kernel.data(), b, o);
  }
  return out;
}

// Accumulates (+=) into whichever gradient outputs are non-null.
template <class T>
void conv2d_backward(const Tensor<T>& input, const Tensor<T>& kernel, const Tensor<T>& dout,
                     Padding padding, Tensor<T>* dinput, Tensor<T>* dkernel, Tensor<T>* dbias) {
  const auto g = detail::conv_geometry(input, kernel, padding);
  if (dout.shape() != Shape{g.n, g.cout, g.oh, g.ow}) {
    throw InvalidArgument("conv2d_backward: upstream gradient shape " + shape_str(dout.shape()));
  }
  const std::size_t plane = g.oh * g.ow;
  const std::size_t kk = g.cin * g.k * g.k;
  const bool pointwise = detail::is_pointwise(g);
  std::vector<T> cols(pointwise ? 0 : kk * plane);
  for (std::size_t n = 0; n < g.n; ++n) {
    const T* in = input.data() + n * g.cin * g.h * g.w;
    const T* d = dout.data() + n * g.cout * plane;
    if (dbias) {
      for (std::size_t co = 0; co < g.cout; ++co) {
        T s = 0;
        for (std::size_t i = 0; i < plane; ++i) s += d[co * plane + i];
        (*dbias)[co] += s;
      }
    }
    if (dkernel) {
      const T* b = in;
      if (!pointwise) {
        detail::im2col(g, in, cols.data());
        b = cols.data();
      }
      detail::gemm_nt(g.cout, kk, plane, d, b, dkernel->data());
    }
    if (dinput) {
      T* di = dinput->data() + n * g.cin * g.h * g.w;
      if (pointwise) {
        detail::gemm_tn(kk, plane, g.cout, kernel.data(), d, di);
      } else {
        std::fill(cols.begin(), cols.end(), T{0});
        detail::gemm_tn(kk, plane, g.cout, kernel.data(), d, cols.data());
        detail::col2im(g, cols.data(), di);
      }
    }
  }
}

template <class T>
struct ConvGrads {
  Tensor<T> input, kernel, bias;
};

template <class T>
ConvGrads<T> conv2d_backward(const Tensor<T>& input, const Tensor<T>& kernel,
                             const Tensor<T>& dout, Padding padding = Padding::same) {
  ConvGrads<T> g{Tensor<T>(input.shape()), Tensor<T>(kernel.shape()),
                 Tensor<T>(Shape{kernel.dim(0)})};
  conv2d_backward(input, kernel, dout, padding, &g.input, &g.kernel, &g.bias);
  return g;
}

// ---------------------------------------------------------------------------
// Elementwise activations

template <class T>
Tensor<T> leaky_relu(const Tensor<T>& x, double slope) {
  Tensor<T> y = x;
  const T s = static_cast<T>(slope);
  for (T& v : y.values()) v = v >= 0 ? v : s * v;
  return y;
}

template <class T>
void leaky_relu_backward(const Tensor<T>& x, const Tensor<T>& dy, double slope, Tensor<T>& dx) {
  const T s = static_cast<T>(slope);
  for (std::size_t i = 0; i < x.size(); ++i) dx[i] += x[i] >= 0 ? dy[i] : s * dy[i];
}

template <class T>
Tensor<T> elu(const Tensor<T>& x, double alpha) {
  Tensor<T> y = x;
  const T a = static_cast<T>(alpha);
  for (T& v : y.values()) v = v >= 0 ? v : a * std::expm1(v);
  return y;
}

// Uses the forward output: d/dx = y + alpha for x < 0.
template <class T>
void elu_backward(const Tensor<T>& x, const Tensor<T>& y, const Tensor<T>& dy, double alpha,
                  Tensor<T>& dx) {
  const T a = static_cast<T>(alpha);
  for (std::size_t i = 0; i < x.size(); ++i) dx[i] += x[i] >= 0 ? dy[i] : (y[i] + a) * dy[i];
}

// ---------------------------------------------------------------------------
// Resolution changes on [N,C,H,W]

template <class T>
Tensor<T> mean_pool2(const Tensor<T>& x) {
  if (x.rank() != 4) throw InvalidArgument("mean_pool2 expects [N,C,H,W]");
  const std::size_t h = x.dim(2), w = x.dim(3);
  if (h % 2 != 0 || w % 2 != 0) throw InvalidArgument("mean_pool2 requires even dimensions");
  const std::size_t planes = x.dim(0) * x.dim(1), oh = h / 2, ow = w / 2;
  Tensor<T> y({x.dim(0), x.dim(1), oh, ow});
  for (std::size_t p = 0; p < planes; ++p) {
    const T* in = x.data() + p * h * w;
    T* out = y.data() + p * oh * ow;
    for (std::size_t r = 0; r < oh; ++r) {
      for (std::size_t c = 0; c < ow; ++c) {
        const T* a = in + 2 * r * w + 2 * c;
        out[r * ow + c] = (a[0] + a[1] + a[w] + a[w + 1]) * T(0.25);
      }
    }
  }
  return y;
}

template <class T>
void mean_pool2_backward(const Tensor<T>& dy, Tensor<T>& dx) {
  const std::size_t h = dx.dim(2), w = dx.dim(3), oh = h / 2, ow = w / 2;
  const std::size_t planes = dx.dim(0) * dx.dim(1);
  for (std::size_t p = 0; p < planes; ++p) {
    T* d = dx.data() + p * h * w;
    const T* g = dy.data() + p * oh * ow;
    for (std::size_t r = 0; r < oh; ++r) {
      for (std::size_t c = 0; c < ow; ++c) {
        const T v = g[r * ow + c] * T(0.25);
        T* a = d + 2 * r * w + 2 * c;
        a[0] += v;
        a[1] += v;
        a[w] += v;
        a[w + 1] += v;
      }
    }
  }
}

template <class T>
Tensor<T> nearest_upsample2(const Tensor<T>& x) {
  if (x.rank() != 4) throw InvalidArgument("nearest_upsample2 expects [N,C,H,W]");
  const std::size_t h = x.dim(2), w = x.dim(3), planes = x.dim(0) * x.dim(1);
  Tensor<T> y({x.dim(0), x.dim(1), 2 * h, 2 * w});
  for (std::size_t p = 0; p < planes; ++p) {
    const T* in = x.data() + p * h * w;
    T* out = y.data() + p * 4 * h * w;
    for (std::size_t r = 0; r < 2 * h; ++r) {
      for (std::size_t c = 0; c < 2 * w; ++c) out[r * 2 * w + c] = in[(r / 2) * w + c / 2];
    }
  }
  return y;
}

template <class T>
void nearest_upsample2_backward(const Tensor<T>& dy, Tensor<T>& dx) {
  const std::size_t h = dx.dim(2), w = dx.dim(3), planes = dx.dim(0) * dx.dim(1);
  for (std::size_t p = 0; p < planes; ++p) {
    const T* g = dy.data() + p * 4 * h * w;
    T* d = dx.data() + p * h * w;
    for (std::size_t r = 0; r < 2 * h; ++r) {
      for (std::size_t c = 0; c < 2 * w; ++c) d[(r / 2) * w + c / 2] += g[r * 2 * w + c];
    }
  }
}

namespace detail {

// Half-pixel-centre 2x interpolation taps along one axis, edge-clamped.
struct Taps {
  std::size_t lo, hi;
  double wlo, whi;
};

inline std::vector<Taps> upsample_taps(std::size_t n) {
  std::vector<Taps> taps(2 * n);
  for (std::size_t i = 0; i < n; ++i) {
    taps[2 * i] = {i == 0 ? 0 : i - 1, i, 0.25, 0.75};
    taps[2 * i + 1] = {i, i + 1 < n ? i + 1 : n - 1, 0.75, 0.25};
  }
  return taps;
}

}  // namespace detail

template <class T>
Tensor<T> bilinear_upsample2(const Tensor<T>& x) {
  if (x.rank() != 4) throw InvalidArgument("bilinear_upsample2 expects [N,C,H,W]");
  const std::size_t h = x.dim(2), w = x.dim(3), planes = x.dim(0) * x.dim(1);
  const auto ty = detail::upsample_taps(h), tx = detail::upsample_taps(w);
  Tensor<T> y({x.dim(0), x.dim(1), 2 * h, 2 * w});
  for (std::size_t p = 0; p < planes; ++p) {
    const T* in = x.data() + p * h * w;
    T* out = y.data() + p * 4 * h * w;
    for (std::size_t r = 0; r < 2 * h; ++r) {
      const auto& a = ty[r];
      for (std::size_t c = 0; c < 2 * w; ++c) {
        const auto& b = tx[c];
        out[r * 2 * w + c] = static_cast<T>(
            a.wlo * (b.wlo * in[a.lo * w + b.lo] + b.whi * in[a.lo * w + b.hi]) +
            a.whi * (b.wlo * in[a.hi * w + b.lo] + b.whi * in[a.hi * w + b.hi]));
      }
    }
  }
  return y;
}

template <class T>
void bilinear_upsample2_backward(const Tensor<T>& dy, Tensor<T>& dx) {
  const std::size_t h = dx.dim(2), w = dx.dim(3), planes = dx.dim(0) * dx.dim(1);
  const auto ty = detail::upsample_taps(h), tx = detail::upsample_taps(w);
  for (std::size_t p = 0; p < planes; ++p) {
    const T* g = dy.data() + p * 4 * h * w;
    T* d = dx.data() + p * h * w;
    for (std::size_t r = 0; r < 2 * h; ++r) {
      const auto& a = ty[r];
      for (std::size_t c = 0; c < 2 * w; ++c) {
        const auto& b = tx[c];
        const T v = g[r * 2 * w + c];
        d[a.lo * w + b.lo] += static_cast<T>(a.wlo * b.wlo) * v;
        d[a.lo * w + b.hi] += static_cast<T>(a.wlo * b.whi) * v;
        d[a.hi * w + b.lo] += static_cast<T>(a.whi * b.wlo) * v;
        d[a.hi * w + b.hi] += static_cast<T>(a.whi * b.whi) * v;
      }
    }
  }
}

// ---------------------------------------------------------------------------
// Dropout with inverted scaling. `scale` receives the per-element multiplier.

template <class T>
Tensor<T> dropout(const Tensor<T>& x, double rate, std::mt19937_64& rng, bool training,
                  Tensor<T>* scale = nullptr) {
  if (!(rate >= 0.0 && rate < 1.0)) throw InvalidArgument("dropout rate must be in [0,1)");
  if (!training || rate == 0.0) {
    if (scale) *scale = Tensor<T>(x.shape(), T{1});
    return x;
  }
  Tensor<T> m(x.shape());
  std::bernoulli_distribution keep(1.0 - rate);
  const T s = static_cast<T>(1.0 / (1.0 - rate));
  for (std::size_t i = 0; i < m.size(); ++i) m[i] = keep(rng) ? s : T{0};
  Tensor<T> y = x;
  for (std::size_t i = 0; i < y.size(); ++i) y[i] *= m[i];
  if (scale) *scale = std::move(m);
  return y;
}

// ---------------------------------------------------------------------------
// Channel concatenation of two [N,C,H,W] tensors

template <class T>
Tensor<T> concat_channels(const Tensor<T>& a, const Tensor<T>& b) {
  if (a.rank() != 4 || b.rank() != 4 || a.dim(0) != b.dim(0) || a.dim(2) != b.dim(2) ||
      a.dim(3) != b.dim(3)) {
    throw InvalidArgument("concat_channels: incompatible shapes " + shape_str(a.shape()) + " and " +
                          shape_str(b.shape()));
  }
  const std::size_t n = a.dim(0), plane = a.dim(2) * a.dim(3);
  const std::size_t ca = a.dim(1) * plane, cb = b.dim(1) * plane;
  Tensor<T> y({n, a.dim(1) + b.dim(1), a.dim(2), a.dim(3)});
  for (std::size_t i = 0; i < n; ++i) {
    std::copy_n(a.data() + i * ca, ca, y.data() + i * (ca + cb));
    std::copy_n(b.data() + i * cb, cb, y.data() + i * (ca + cb) + ca);
  }
  return y;
}

template <class T>
void concat_channels_backward(const Tensor<T>& dy, Tensor<T>* da, Tensor<T>* db, std::size_t ca_ch,
                              std::size_t cb_ch) {
  const std::size_t n = dy.dim(0), plane = dy.dim(2) * dy.dim(3);
  const std::size_t ca = ca_ch * plane, cb = cb_ch * plane;
  for (std::size_t i = 0; i < n; ++i) {
    const T* g = dy.data() + i * (ca + cb);
    if (da) {
      T* d = da->data() + i * ca;
      for (std::size_t j = 0; j < ca; ++j) d[j] += g[j];
    }
    if (db) {
      T* d = db->data() + i * cb;
      for (std::size_t j = 0; j < cb; ++j) d[j] += g[ca + j];
    }
  }
}

}  // namespace mseg
