// Copyright 2026 The magms Authors
// SPDX-License-Identifier: Apache-2.0

// Layer kernels with hand-written backward passes. Activations are rank-4
// tensors (channels, depth, height, width) for a single sample.

#pragma once

#include <span>

#include "magms/tensor.hpp"

namespace magms::nn {

/// Cubic convolution with `kernel`^3 taps, zero padding kernel/2.
/// Weight layout (out, in, kz, ky, kx); bias (out).
struct ConvGeometry {
  int in_channels = 1;
  int out_channels = 1;
  int kernel = 3;
  int stride = 1;

  std::int64_t weight_size() const {
    return std::int64_t{in_channels} * out_channels * kernel * kernel * kernel;
  }
  std::int64_t out_extent(std::int64_t in) const {
    return (in + 2 * (kernel / 2) - kernel) / stride + 1;
  }
};

template <class T>
BasicTensor<T> conv3d_forward(const BasicTensor<T>& x, std::span<const T> weight,
                              std::span<const T> bias, const ConvGeometry& g);

/// Accumulates into dweight/dbias; writes dx when non-null.
template <class T>
void conv3d_backward(const BasicTensor<T>& x, const BasicTensor<T>& dy,
                     std::span<const T> weight, const ConvGeometry& g, std::span<T> dweight,
                     std::span<T> dbias, BasicTensor<T>* dx);

/// Transposed convolution, kernel 2, stride 2: doubles every spatial extent.
/// Weight layout (in, out, 2, 2, 2); bias (out).
template <class T>
BasicTensor<T> upconv2x_forward(const BasicTensor<T>& x, std::span<const T> weight,
                                std::span<const T> bias, int in_channels, int out_channels);

template <class T>
void upconv2x_backward(const BasicTensor<T>& x, const BasicTensor<T>& dy,
                       std::span<const T> weight, int in_channels, int out_channels,
                       std::span<T> dweight, std::span<T> dbias, BasicTensor<T>* dx);

/// 1x1x1 convolution. Weight layout (out, in); bias (out).
template <class T>
BasicTensor<T> pointwise_forward(const BasicTensor<T>& x, std::span<const T> weight,
                                 std::span<const T> bias, int out_channels);

template <class T>
void pointwise_backward(const BasicTensor<T>& x, const BasicTensor<T>& dy,
                        std::span<const T> weight, int out_channels, std::span<T> dweight,
                        std::span<T> dbias, BasicTensor<T>* dx);

template <class T>
void relu_inplace(BasicTensor<T>& x);

/// dy masked by y > 0, in place.
template <class T>
void relu_backward_inplace(const BasicTensor<T>& y, BasicTensor<T>& dy);

/// Channel-wise concatenation of two rank-4 tensors with equal spatial shape.
template <class T>
BasicTensor<T> concat_channels(const BasicTensor<T>& a, const BasicTensor<T>& b);

/// Inverse of concat_channels for gradients: first `channels_a` channels to a.
template <class T>
void split_channels(const BasicTensor<T>& ab, std::int64_t channels_a, BasicTensor<T>& a,
                    BasicTensor<T>& b);

}  // namespace magms::nn
