// Copyright 2026 The magms Authors
// SPDX-License-Identifier: Apache-2.0

#include "magms/nn.hpp"

#include <algorithm>
#include <vector>

#include <Eigen/Core>

namespace magms::nn {

namespace {

template <class T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <class T>
using MapMat = Eigen::Map<RowMat<T>>;
template <class T>
using ConstMapMat = Eigen::Map<const RowMat<T>>;
template <class T>
using ConstMapVec = Eigen::Map<const Eigen::Matrix<T, Eigen::Dynamic, 1>>;
template <class T>
using StridedMat = Eigen::Map<RowMat<T>, 0, Eigen::OuterStride<>>;
template <class T>
using ConstStridedMat = Eigen::Map<const RowMat<T>, 0, Eigen::OuterStride<>>;
template <class T>
using MapVec = Eigen::Map<Eigen::Matrix<T, Eigen::Dynamic, 1>>;

// Per-channel sums in a fixed lane order, independent of buffer alignment.
template <class T>
void add_channel_sums(const T* data, std::int64_t channels, std::int64_t n, T* out) {
  constexpr int kLanes = 8;
  for (std::int64_t c = 0; c < channels; ++c) {
    const T* row = data + c * n;
    T lane[kLanes] = {};
    std::int64_t i = 0;
    for (; i + kLanes <= n; i += kLanes) {
      for (int l = 0; l < kLanes; ++l) lane[l] += row[i + l];
    }
    T s = 0;
    for (int l = 0; l < kLanes; ++l) s += lane[l];
    for (; i < n; ++i) s += row[i];
    out[c] += s;
  }
}

template <class T>
void require_rank4(const BasicTensor<T>& x, std::int64_t channels, const char* what) {
  if (x.rank() != 4 || x.dim(0) != channels) {
    throw DimensionError(std::string(what) + ": expected " + std::to_string(channels) +
                         " channels, got shape " + shape_str(x.shape()));
  }
}

struct Extents {
  std::int64_t d, h, w;
  std::int64_t size() const { return d * h * w; }
};

template <class T>
void im2col(const BasicTensor<T>& x, const ConvGeometry& g, Extents out, std::int64_t z0,
            std::int64_t z1, RowMat<T>& col) {
  const std::int64_t D = x.dim(1), H = x.dim(2), W = x.dim(3);
  const int k = g.kernel, s = g.stride, pad = g.kernel / 2;
  const std::int64_t cols = (z1 - z0) * out.h * out.w;
  col.resize(std::int64_t{g.in_channels} * k * k * k, cols);
  const T* src = x.data();
  std::int64_t row = 0;
  for (int ci = 0; ci < g.in_channels; ++ci) {
    const T* plane = src + ci * D * H * W;
    for (int kz = 0; kz < k; ++kz) {
      for (int ky = 0; ky < k; ++ky) {
        for (int kx = 0; kx < k; ++kx, ++row) {
          T* dst = col.data() + row * cols;
          for (std::int64_t oz = z0; oz < z1; ++oz) {
            const std::int64_t iz = oz * s + kz - pad;
            for (std::int64_t oy = 0; oy < out.h; ++oy) {
              const std::int64_t iy = oy * s + ky - pad;
              T* line = dst + ((oz - z0) * out.h + oy) * out.w;
              if (iz < 0 || iz >= D || iy < 0 || iy >= H) {
                std::fill(line, line + out.w, T{0});
                continue;
              }
              const T* in_line = plane + (iz * H + iy) * W;
              for (std::int64_t ox = 0; ox < out.w; ++ox) {
                const std::int64_t ix = ox * s + kx - pad;
                line[ox] = (ix >= 0 && ix < W) ? in_line[ix] : T{0};
              }
            }
          }
        }
      }
    }
  }
}

template <class T>
void col2im(const RowMat<T>& col, const ConvGeometry& g, Extents out, std::int64_t z0,
            std::int64_t z1, BasicTensor<T>& dx) {
  const std::int64_t D = dx.dim(1), H = dx.dim(2), W = dx.dim(3);
  const int k = g.kernel, s = g.stride, pad = g.kernel / 2;
  const std::int64_t cols = (z1 - z0) * out.h * out.w;
  T* dst = dx.data();
  std::int64_t row = 0;
  for (int ci = 0; ci < g.in_channels; ++ci) {
    T* plane = dst + ci * D * H * W;
    for (int kz = 0; kz < k; ++kz) {
      for (int ky = 0; ky < k; ++ky) {
        for (int kx = 0; kx < k; ++kx, ++row) {
          const T* src = col.data() + row * cols;
          for (std::int64_t oz = z0; oz < z1; ++oz) {
            const std::int64_t iz = oz * s + kz - pad;
            if (iz < 0 || iz >= D) continue;
            for (std::int64_t oy = 0; oy < out.h; ++oy) {
              const std::int64_t iy = oy * s + ky - pad;
              if (iy < 0 || iy >= H) continue;
              const T* line = src + ((oz - z0) * out.h + oy) * out.w;
              T* in_line = plane + (iz * H + iy) * W;
              for (std::int64_t ox = 0; ox < out.w; ++ox) {
                const std::int64_t ix = ox * s + kx - pad;
                if (ix >= 0 && ix < W) in_line[ix] += line[ox];
              }
            }
          }
        }
      }
    }
  }
}

// Output depth planes per im2col slab; keeps the column buffer near 256 KiB.
template <class T>
std::int64_t slab_depth(const ConvGeometry& g, Extents out) {
  const std::int64_t plane_bytes = g.weight_size() / g.out_channels * out.h * out.w *
                                   static_cast<std::int64_t>(sizeof(T));
  return std::clamp<std::int64_t>((std::int64_t{1} << 18) / std::max<std::int64_t>(plane_bytes, 1),
                                  1, std::max<std::int64_t>(out.d, 1));
}

template <class T>
Extents conv_out_extents(const BasicTensor<T>& x, const ConvGeometry& g) {
  return {g.out_extent(x.dim(1)), g.out_extent(x.dim(2)), g.out_extent(x.dim(3))};
}

template <class T>
void check_sizes(std::span<const T> weight, std::span<const T> bias, std::int64_t wsize,
                 std::int64_t bsize, const char* what) {
  if (static_cast<std::int64_t>(weight.size()) != wsize ||
      static_cast<std::int64_t>(bias.size()) != bsize) {
    throw DimensionError(std::string(what) + ": parameter size mismatch");
  }
}

template <class T>
BasicTensor<T> pad_spatial(const BasicTensor<T>& x, int p) {
  const std::int64_t C = x.dim(0), D = x.dim(1), H = x.dim(2), W = x.dim(3);
  BasicTensor<T> out(Shape{C, D + 2 * p, H + 2 * p, W + 2 * p});
  const std::int64_t Hp = H + 2 * p, Wp = W + 2 * p, Dp = D + 2 * p;
  for (std::int64_t c = 0; c < C; ++c) {
    for (std::int64_t z = 0; z < D; ++z) {
      for (std::int64_t y = 0; y < H; ++y) {
        const T* src = x.data() + ((c * D + z) * H + y) * W;
        std::copy(src, src + W, out.data() + ((c * Dp + z + p) * Hp + y + p) * Wp + p);
      }
    }
  }
  return out;
}

// Stride-1 "same" correlation on a pre-padded input, one output line at a
// time for blocks of up to four output channels.
template <class T>
void direct_conv(const BasicTensor<T>& xp, const T* weight, const T* bias, int cin, int cout,
                 int k, T* y, Extents out) {
  constexpr int kBlock = 4;
  const std::int64_t Hp = xp.dim(2), Wp = xp.dim(3), Dp = xp.dim(1);
  const std::int64_t kk = std::int64_t{k} * k * k, W = out.w;
  std::vector<T> acc(static_cast<std::size_t>(kBlock * W));
  for (int c0 = 0; c0 < cout; c0 += kBlock) {
    const int nb = std::min(kBlock, cout - c0);
    for (std::int64_t oz = 0; oz < out.d; ++oz) {
      for (std::int64_t oy = 0; oy < out.h; ++oy) {
        for (int b = 0; b < kBlock; ++b) {
          std::fill_n(acc.data() + b * W, W, (bias && b < nb) ? bias[c0 + b] : T{0});
        }
        T* a0 = acc.data();
        T* a1 = a0 + W;
        T* a2 = a1 + W;
        T* a3 = a2 + W;
        for (int ci = 0; ci < cin; ++ci) {
          for (int kz = 0; kz < k; ++kz) {
            for (int ky = 0; ky < k; ++ky) {
              const T* line = xp.data() + ((ci * Dp + oz + kz) * Hp + oy + ky) * Wp;
              for (int kx = 0; kx < k; ++kx) {
                const std::int64_t t = (std::int64_t{ci} * k + kz) * k * k + ky * k + kx;
                T w[kBlock];
                for (int b = 0; b < kBlock; ++b) {
                  w[b] = b < nb ? weight[(c0 + b) * cin * kk + t] : T{0};
                }
                const T* xl = line + kx;
                for (std::int64_t ox = 0; ox < W; ++ox) {
                  const T v = xl[ox];
                  a0[ox] += w[0] * v;
                  a1[ox] += w[1] * v;
                  a2[ox] += w[2] * v;
                  a3[ox] += w[3] * v;
                }
              }
            }
          }
        }
        for (int b = 0; b < nb; ++b) {
          std::copy_n(acc.data() + b * W, W,
                      y + (((c0 + b) * out.d + oz) * out.h + oy) * out.w);
        }
      }
    }
  }
}

template <class T>
void direct_conv_weight_grad(const BasicTensor<T>& xp, const BasicTensor<T>& dy, int cin,
                             int cout, int k, T* dweight) {
  const std::int64_t Hp = xp.dim(2), Wp = xp.dim(3), Dp = xp.dim(1);
  const std::int64_t D = dy.dim(1), H = dy.dim(2), W = dy.dim(3);
  std::vector<T> acc(static_cast<std::size_t>(k * W));
  for (int co = 0; co < cout; ++co) {
    for (int ci = 0; ci < cin; ++ci) {
      T* dw = dweight + (std::int64_t{co} * cin + ci) * k * k * k;
      for (int kz = 0; kz < k; ++kz) {
        for (int ky = 0; ky < k; ++ky, dw += k) {
          std::fill(acc.begin(), acc.end(), T{0});
          for (std::int64_t z = 0; z < D; ++z) {
            for (std::int64_t y = 0; y < H; ++y) {
              const T* g = dy.data() + ((co * D + z) * H + y) * W;
              const T* line = xp.data() + ((ci * Dp + z + kz) * Hp + y + ky) * Wp;
              for (int kx = 0; kx < k; ++kx) {
                T* a = acc.data() + kx * W;
                const T* xl = line + kx;
                for (std::int64_t x = 0; x < W; ++x) a[x] += g[x] * xl[x];
              }
            }
          }
          for (int kx = 0; kx < k; ++kx) {
            T sum{0};
            for (std::int64_t x = 0; x < W; ++x) sum += acc[static_cast<std::size_t>(kx * W + x)];
            dw[kx] += sum;
          }
        }
      }
    }
  }
}

}  // namespace

template <class T>
BasicTensor<T> conv3d_forward(const BasicTensor<T>& x, std::span<const T> weight,
                              std::span<const T> bias, const ConvGeometry& g) {
  require_rank4(x, g.in_channels, "conv3d");
  check_sizes(weight, bias, g.weight_size(), g.out_channels, "conv3d");
  const Extents out = conv_out_extents(x, g);
  BasicTensor<T> y(Shape{g.out_channels, out.d, out.h, out.w});
  if (g.stride == 1) {
    direct_conv(pad_spatial(x, g.kernel / 2), weight.data(), bias.data(), g.in_channels,
                g.out_channels, g.kernel, y.data(), out);
    return y;
  }
  const std::int64_t plane = out.h * out.w, step = slab_depth<T>(g, out);
  ConstMapMat<T> wm(weight.data(), g.out_channels, g.weight_size() / g.out_channels);
  const ConstMapVec<T> b(bias.data(), g.out_channels);
  RowMat<T> col;
  for (std::int64_t z0 = 0; z0 < out.d; z0 += step) {
    const std::int64_t z1 = std::min(out.d, z0 + step);
    im2col(x, g, out, z0, z1, col);
    StridedMat<T> ym(y.data() + z0 * plane, g.out_channels, col.cols(),
                     Eigen::OuterStride<>(out.size()));
    ym.noalias() = wm * col;
    ym.colwise() += b;
  }
  return y;
}

template <class T>
void conv3d_backward(const BasicTensor<T>& x, const BasicTensor<T>& dy,
                     std::span<const T> weight, const ConvGeometry& g, std::span<T> dweight,
                     std::span<T> dbias, BasicTensor<T>* dx) {
  require_rank4(x, g.in_channels, "conv3d_backward");
  const Extents out = conv_out_extents(x, g);
  if (dy.shape() != Shape{g.out_channels, out.d, out.h, out.w}) {
    throw DimensionError("conv3d_backward: gradient shape " + shape_str(dy.shape()));
  }
  add_channel_sums(dy.data(), g.out_channels, out.size(), dbias.data());
  if (g.stride == 1) {
    const int k = g.kernel, p = k / 2;
    direct_conv_weight_grad(pad_spatial(x, p), dy, g.in_channels, g.out_channels, k,
                            dweight.data());
    if (dx) {
      // Input gradient: correlation of dy with the channel-swapped, flipped kernel.
      const std::int64_t kk = std::int64_t{k} * k * k;
      std::vector<T> flipped(weight.size());
      for (int co = 0; co < g.out_channels; ++co) {
        for (int ci = 0; ci < g.in_channels; ++ci) {
          for (std::int64_t t = 0; t < kk; ++t) {
            flipped[(std::int64_t{ci} * g.out_channels + co) * kk + (kk - 1 - t)] =
                weight[(std::int64_t{co} * g.in_channels + ci) * kk + t];
          }
        }
      }
      *dx = BasicTensor<T>(x.shape());
      direct_conv(pad_spatial(dy, p), flipped.data(), static_cast<const T*>(nullptr),
                  g.out_channels, g.in_channels, k, dx->data(),
                  Extents{x.dim(1), x.dim(2), x.dim(3)});
    }
    return;
  }
  const std::int64_t plane = out.h * out.w, step = slab_depth<T>(g, out);
  const std::int64_t rows = g.weight_size() / g.out_channels;
  MapMat<T> dwm(dweight.data(), g.out_channels, rows);
  ConstMapMat<T> wm(weight.data(), g.out_channels, rows);
  if (dx) *dx = BasicTensor<T>(x.shape());
  RowMat<T> col, dcol;
  for (std::int64_t z0 = 0; z0 < out.d; z0 += step) {
    const std::int64_t z1 = std::min(out.d, z0 + step);
    im2col(x, g, out, z0, z1, col);
    ConstStridedMat<T> dym(dy.data() + z0 * plane, g.out_channels, col.cols(),
                           Eigen::OuterStride<>(out.size()));
    dwm.noalias() += dym * col.transpose();
    if (dx) {
      dcol.noalias() = wm.transpose() * dym;
      col2im(dcol, g, out, z0, z1, *dx);
    }
  }
}

template <class T>
BasicTensor<T> upconv2x_forward(const BasicTensor<T>& x, std::span<const T> weight,
                                std::span<const T> bias, int in_channels, int out_channels) {
  require_rank4(x, in_channels, "upconv2x");
  check_sizes(weight, bias, std::int64_t{in_channels} * out_channels * 8, out_channels,
              "upconv2x");
  const std::int64_t D = x.dim(1), H = x.dim(2), W = x.dim(3), n = D * H * W;
  ConstMapMat<T> wm(weight.data(), in_channels, std::int64_t{out_channels} * 8);
  ConstMapMat<T> xm(x.data(), in_channels, n);
  RowMat<T> y8 = wm.transpose() * xm;  // (out*8) x n
  BasicTensor<T> y(Shape{out_channels, 2 * D, 2 * H, 2 * W});
  const std::int64_t H2 = 2 * H, W2 = 2 * W, plane = 8 * n;
  for (int co = 0; co < out_channels; ++co) {
    const T b = bias[static_cast<std::size_t>(co)];
    T* yc = y.data() + co * plane;
    for (int tap = 0; tap < 8; ++tap) {
      const int a = tap >> 2, bb = (tap >> 1) & 1, c = tap & 1;
      const T* src = y8.data() + (std::int64_t{co} * 8 + tap) * n;
      for (std::int64_t z = 0; z < D; ++z) {
        for (std::int64_t yy = 0; yy < H; ++yy) {
          T* dst = yc + ((2 * z + a) * H2 + (2 * yy + bb)) * W2 + c;
          const T* s = src + (z * H + yy) * W;
          for (std::int64_t xx = 0; xx < W; ++xx) dst[2 * xx] = s[xx] + b;
        }
      }
    }
  }
  return y;
}

template <class T>
void upconv2x_backward(const BasicTensor<T>& x, const BasicTensor<T>& dy,
                       std::span<const T> weight, int in_channels, int out_channels,
                       std::span<T> dweight, std::span<T> dbias, BasicTensor<T>* dx) {
  require_rank4(x, in_channels, "upconv2x_backward");
  const std::int64_t D = x.dim(1), H = x.dim(2), W = x.dim(3), n = D * H * W;
  if (dy.shape() != Shape{out_channels, 2 * D, 2 * H, 2 * W}) {
    throw DimensionError("upconv2x_backward: gradient shape " + shape_str(dy.shape()));
  }
  RowMat<T> dy8(std::int64_t{out_channels} * 8, n);
  const std::int64_t H2 = 2 * H, W2 = 2 * W, plane = 8 * n;
  for (int co = 0; co < out_channels; ++co) {
    const T* gc = dy.data() + co * plane;
    T bsum = 0;
    for (std::int64_t i = 0; i < plane; ++i) bsum += gc[i];
    dbias[static_cast<std::size_t>(co)] += bsum;
    for (int tap = 0; tap < 8; ++tap) {
      const int a = tap >> 2, bb = (tap >> 1) & 1, c = tap & 1;
      T* dst = dy8.data() + (std::int64_t{co} * 8 + tap) * n;
      for (std::int64_t z = 0; z < D; ++z) {
        for (std::int64_t yy = 0; yy < H; ++yy) {
          const T* src = gc + ((2 * z + a) * H2 + (2 * yy + bb)) * W2 + c;
          T* d = dst + (z * H + yy) * W;
          for (std::int64_t xx = 0; xx < W; ++xx) d[xx] = src[2 * xx];
        }
      }
    }
  }
  ConstMapMat<T> xm(x.data(), in_channels, n);
  MapMat<T> dwm(dweight.data(), in_channels, std::int64_t{out_channels} * 8);
  dwm.noalias() += xm * dy8.transpose();
  if (dx) {
    ConstMapMat<T> wm(weight.data(), in_channels, std::int64_t{out_channels} * 8);
    *dx = BasicTensor<T>(x.shape());
    MapMat<T>(dx->data(), in_channels, n).noalias() = wm * dy8;
  }
}

template <class T>
BasicTensor<T> pointwise_forward(const BasicTensor<T>& x, std::span<const T> weight,
                                 std::span<const T> bias, int out_channels) {
  if (x.rank() != 4) throw DimensionError("pointwise: expected rank-4 input");
  const std::int64_t cin = x.dim(0), n = x.spatial_size();
  check_sizes(weight, bias, cin * out_channels, out_channels, "pointwise");
  BasicTensor<T> y(Shape{out_channels, x.dim(1), x.dim(2), x.dim(3)});
  MapMat<T> ym(y.data(), out_channels, n);
  ym.noalias() = ConstMapMat<T>(weight.data(), out_channels, cin) *
                 ConstMapMat<T>(x.data(), cin, n);
  ym.colwise() += ConstMapVec<T>(bias.data(), out_channels);
  return y;
}

template <class T>
void pointwise_backward(const BasicTensor<T>& x, const BasicTensor<T>& dy,
                        std::span<const T> weight, int out_channels, std::span<T> dweight,
                        std::span<T> dbias, BasicTensor<T>* dx) {
  const std::int64_t cin = x.dim(0), n = x.spatial_size();
  if (dy.shape() != Shape{out_channels, x.dim(1), x.dim(2), x.dim(3)}) {
    throw DimensionError("pointwise_backward: gradient shape " + shape_str(dy.shape()));
  }
  ConstMapMat<T> dym(dy.data(), out_channels, n);
  ConstMapMat<T> xm(x.data(), cin, n);
  MapMat<T>(dweight.data(), out_channels, cin).noalias() += dym * xm.transpose();
  add_channel_sums(dy.data(), out_channels, n, dbias.data());
  if (dx) {
    *dx = BasicTensor<T>(x.shape());
    MapMat<T>(dx->data(), cin, n).noalias() =
        ConstMapMat<T>(weight.data(), out_channels, cin).transpose() * dym;
  }
}

template <class T>
void relu_inplace(BasicTensor<T>& x) {
  for (auto& v : x.values()) v = v > T{0} ? v : T{0};
}

template <class T>
void relu_backward_inplace(const BasicTensor<T>& y, BasicTensor<T>& dy) {
  y.require_same_shape(dy, "relu_backward");
  const T* yv = y.data();
  T* g = dy.data();
  for (std::int64_t i = 0; i < y.numel(); ++i) {
    if (!(yv[i] > T{0})) g[i] = T{0};
  }
}

template <class T>
BasicTensor<T> concat_channels(const BasicTensor<T>& a, const BasicTensor<T>& b) {
  if (a.rank() != 4 || b.rank() != 4 || a.dim(1) != b.dim(1) || a.dim(2) != b.dim(2) ||
      a.dim(3) != b.dim(3)) {
    throw DimensionError("concat_channels: " + shape_str(a.shape()) + " vs " +
                         shape_str(b.shape()));
  }
  BasicTensor<T> out(Shape{a.dim(0) + b.dim(0), a.dim(1), a.dim(2), a.dim(3)});
  std::copy(a.data(), a.data() + a.numel(), out.data());
  std::copy(b.data(), b.data() + b.numel(), out.data() + a.numel());
  return out;
}

template <class T>
void split_channels(const BasicTensor<T>& ab, std::int64_t channels_a, BasicTensor<T>& a,
                    BasicTensor<T>& b) {
  const std::int64_t n = ab.spatial_size();
  a = BasicTensor<T>(Shape{channels_a, ab.dim(1), ab.dim(2), ab.dim(3)});
  b = BasicTensor<T>(Shape{ab.dim(0) - channels_a, ab.dim(1), ab.dim(2), ab.dim(3)});
  std::copy(ab.data(), ab.data() + channels_a * n, a.data());
  std::copy(ab.data() + channels_a * n, ab.data() + ab.numel(), b.data());
}

#define MAGMS_INSTANTIATE_NN(T)                                                            \
  template BasicTensor<T> conv3d_forward(const BasicTensor<T>&, std::span<const T>,        \
                                         std::span<const T>, const ConvGeometry&);         \
  template void conv3d_backward(const BasicTensor<T>&, const BasicTensor<T>&,              \
                                std::span<const T>, const ConvGeometry&, std::span<T>,     \
                                std::span<T>, BasicTensor<T>*);                            \
  template BasicTensor<T> upconv2x_forward(const BasicTensor<T>&, std::span<const T>,      \
                                           std::span<const T>, int, int);                  \
  template void upconv2x_backward(const BasicTensor<T>&, const BasicTensor<T>&,            \
                                  std::span<const T>, int, int, std::span<T>,              \
                                  std::span<T>, BasicTensor<T>*);                          \
  template BasicTensor<T> pointwise_forward(const BasicTensor<T>&, std::span<const T>,     \
                                            std::span<const T>, int);                      \
  template void pointwise_backward(const BasicTensor<T>&, const BasicTensor<T>&,           \
                                   std::span<const T>, int, std::span<T>, std::span<T>,    \
                                   BasicTensor<T>*);                                       \
  template void relu_inplace(BasicTensor<T>&);                                             \
  template void relu_backward_inplace(const BasicTensor<T>&, BasicTensor<T>&);             \
  template BasicTensor<T> concat_channels(const BasicTensor<T>&, const BasicTensor<T>&);   \
  template void split_channels(const BasicTensor<T>&, std::int64_t, BasicTensor<T>&,       \
                               BasicTensor<T>&);

MAGMS_INSTANTIATE_NN(float)
MAGMS_INSTANTIATE_NN(double)

#undef MAGMS_INSTANTIATE_NN

}  // namespace magms::nn
