// Copyright 2026 The MMCS Authors.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#pragma once

// Dense layer primitives for the segmentation network. Activations are stored
// channels x (batch * height * width): column j is one pixel, so the channel
// vector of a pixel is contiguous and a convolution is a single GEMM against
// an im2col buffer.

#include "mmcs/error.hpp"

#include <Eigen/Core>

#include <algorithm>
#include <cstdint>
#include <cstring>
#include <string>
#include <vector>

namespace mmcs {

template <typename Scalar>
using MatrixT = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;
template <typename Scalar>
using VectorT = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;

template <typename Scalar>
struct FeatureMap {
  MatrixT<Scalar> data;
  int batch = 0;
  int height = 0;
  int width = 0;

  FeatureMap() = default;
  FeatureMap(int channels, int batch_, int height_, int width_)
      : data(MatrixT<Scalar>::Zero(channels, Eigen::Index{batch_} * height_ * width_)),
        batch(batch_),
        height(height_),
        width(width_) {}

  int channels() const { return static_cast<int>(data.rows()); }
  Eigen::Index pixels() const { return Eigen::Index{height} * width; }
  Eigen::Index column(int b, int r, int c) const { return b * pixels() + Eigen::Index{r} * width + c; }
  bool same_shape(const FeatureMap& o) const {
    return data.rows() == o.data.rows() && batch == o.batch && height == o.height && width == o.width;
  }
};

/// Square convolution with odd kernel and "same" zero padding. Parameters live
/// in a flat vector: weight (out x kernel*kernel*in, column-major) then bias.
struct ConvSpec {
  int in = 0;
  int out = 0;
  int kernel = 3;
  Eigen::Index offset = 0;

  Eigen::Index weight_count() const { return Eigen::Index{out} * kernel * kernel * in; }
  Eigen::Index param_count() const { return weight_count() + out; }
};

namespace layers {

template <typename Scalar>
using ConstWeights = Eigen::Map<const MatrixT<Scalar>>;

template <typename Scalar>
ConstWeights<Scalar> conv_weight(const ConvSpec& s, const VectorT<Scalar>& theta) {
  return ConstWeights<Scalar>(theta.data() + s.offset, s.out, s.kernel * s.kernel * s.in);
}

template <typename Scalar>
Eigen::Map<const VectorT<Scalar>> conv_bias(const ConvSpec& s, const VectorT<Scalar>& theta) {
  return Eigen::Map<const VectorT<Scalar>>(theta.data() + s.offset + s.weight_count(), s.out);
}

/// Column j of the result stacks the kernel neighbourhood of pixel j, taps in
/// (ky, kx) order with `in` channels each; out-of-image taps are zero.
template <typename Scalar>
MatrixT<Scalar> im2col(const FeatureMap<Scalar>& x, int kernel) {
  const int cin = x.channels();
  const int half = kernel / 2;
  const Eigen::Index rows = Eigen::Index{kernel} * kernel * cin;
  MatrixT<Scalar> col(rows, x.data.cols());
  const auto bytes = sizeof(Scalar) * static_cast<std::size_t>(cin);
  for (int b = 0; b < x.batch; ++b)
    for (int r = 0; r < x.height; ++r)
      for (int c = 0; c < x.width; ++c) {
        Scalar* dst = col.data() + x.column(b, r, c) * rows;
        for (int ky = 0; ky < kernel; ++ky) {
          const int sr = r + ky - half;
          for (int kx = 0; kx < kernel; ++kx, dst += cin) {
            const int sc = c + kx - half;
            if (sr < 0 || sr >= x.height || sc < 0 || sc >= x.width)
              std::memset(dst, 0, bytes);
            else
              std::memcpy(dst, x.data.data() + x.column(b, sr, sc) * cin, bytes);
          }
        }
      }
  return col;
}

/// Adjoint of im2col: scatter-add each tap back onto its source pixel.
template <typename Scalar>
void col2im_add(const MatrixT<Scalar>& col, int kernel, FeatureMap<Scalar>& dx) {
  const int cin = dx.channels();
  const int half = kernel / 2;
  const Eigen::Index rows = Eigen::Index{kernel} * kernel * cin;
  using Vec = Eigen::Map<VectorT<Scalar>>;
  using ConstVec = Eigen::Map<const VectorT<Scalar>>;
  for (int b = 0; b < dx.batch; ++b)
    for (int r = 0; r < dx.height; ++r)
      for (int c = 0; c < dx.width; ++c) {
        const Scalar* src = col.data() + dx.column(b, r, c) * rows;
        for (int ky = 0; ky < kernel; ++ky) {
          const int sr = r + ky - half;
          for (int kx = 0; kx < kernel; ++kx, src += cin) {
            const int sc = c + kx - half;
            if (sr < 0 || sr >= dx.height || sc < 0 || sc >= dx.width) continue;
            Vec(dx.data.data() + dx.column(b, sr, sc) * cin, cin) += ConstVec(src, cin);
          }
        }
      }
}

/// When `col_out` is given, the im2col buffer is kept for the backward pass.
template <typename Scalar>
FeatureMap<Scalar> conv_forward(const ConvSpec& s, const VectorT<Scalar>& theta, const FeatureMap<Scalar>& x,
                                MatrixT<Scalar>* col_out = nullptr) {
  if (x.channels() != s.in)
    throw ShapeError("conv expects " + std::to_string(s.in) + " input channels, got " + std::to_string(x.channels()));
  FeatureMap<Scalar> y;
  y.batch = x.batch;
  y.height = x.height;
  y.width = x.width;
  if (s.kernel == 1) {
    y.data.noalias() = conv_weight(s, theta) * x.data;
  } else if (col_out) {
    *col_out = im2col(x, s.kernel);
    y.data.noalias() = conv_weight(s, theta) * *col_out;
  } else {
    y.data.noalias() = conv_weight(s, theta) * im2col(x, s.kernel);
  }
  y.data.colwise() += conv_bias(s, theta);
  return y;
}

/// Accumulates parameter gradients into `grad` and returns d(loss)/d(input).
/// `col` is the forward im2col buffer of `x` (ignored for 1x1 kernels).
template <typename Scalar>
FeatureMap<Scalar> conv_backward(const ConvSpec& s, const VectorT<Scalar>& theta, const FeatureMap<Scalar>& x,
                                 const MatrixT<Scalar>& col, const FeatureMap<Scalar>& dy, VectorT<Scalar>& grad) {
  Eigen::Map<MatrixT<Scalar>> gw(grad.data() + s.offset, s.out, s.kernel * s.kernel * s.in);
  Eigen::Map<VectorT<Scalar>> gb(grad.data() + s.offset + s.weight_count(), s.out);
  gb += dy.data.rowwise().sum();
  FeatureMap<Scalar> dx;
  dx.batch = x.batch;
  dx.height = x.height;
  dx.width = x.width;
  if (s.kernel == 1) {
    gw.noalias() += dy.data * x.data.transpose();
    dx.data.noalias() = conv_weight(s, theta).transpose() * dy.data;
  } else {
    gw.noalias() += dy.data * col.transpose();
    const MatrixT<Scalar> dcol = conv_weight(s, theta).transpose() * dy.data;
    dx.data = MatrixT<Scalar>::Zero(x.data.rows(), x.data.cols());
    col2im_add(dcol, s.kernel, dx);
  }
  return dx;
}

template <typename Scalar>
FeatureMap<Scalar> conv_backward(const ConvSpec& s, const VectorT<Scalar>& theta, const FeatureMap<Scalar>& x,
                                 const FeatureMap<Scalar>& dy, VectorT<Scalar>& grad) {
  if (s.kernel == 1) return conv_backward(s, theta, x, MatrixT<Scalar>(), dy, grad);
  return conv_backward(s, theta, x, im2col(x, s.kernel), dy, grad);
}

template <typename Scalar>
void relu_inplace(FeatureMap<Scalar>& x) {
  x.data = x.data.cwiseMax(Scalar(0));
}

/// Gradient through ReLU given its output.
template <typename Scalar>
void relu_backward_inplace(const FeatureMap<Scalar>& y, FeatureMap<Scalar>& dy) {
  dy.data = (y.data.array() > Scalar(0)).select(dy.data, Scalar(0));
}

/// 2x2 max pool, stride 2. Records the winning column per output for backward.
template <typename Scalar>
FeatureMap<Scalar> maxpool_forward(const FeatureMap<Scalar>& x, std::vector<Eigen::Index>* argmax) {
  if (x.height % 2 != 0 || x.width % 2 != 0) throw ShapeError("max pool needs even spatial dims");
  FeatureMap<Scalar> y(x.channels(), x.batch, x.height / 2, x.width / 2);
  if (argmax) argmax->assign(static_cast<std::size_t>(y.data.size()), 0);
  for (int b = 0; b < x.batch; ++b)
    for (int r = 0; r < y.height; ++r)
      for (int c = 0; c < y.width; ++c) {
        const Eigen::Index out_col = y.column(b, r, c);
        const Eigen::Index cand[4] = {x.column(b, 2 * r, 2 * c), x.column(b, 2 * r, 2 * c + 1),
                                      x.column(b, 2 * r + 1, 2 * c), x.column(b, 2 * r + 1, 2 * c + 1)};
        for (int ch = 0; ch < x.channels(); ++ch) {
          Eigen::Index best = cand[0];
          for (int k = 1; k < 4; ++k)
            if (x.data(ch, cand[k]) > x.data(ch, best)) best = cand[k];
          y.data(ch, out_col) = x.data(ch, best);
          if (argmax) (*argmax)[static_cast<std::size_t>(out_col * x.channels() + ch)] = best;
        }
      }
  return y;
}

/// Only the batch and spatial dims of `x_shape` are read.
template <typename Scalar>
FeatureMap<Scalar> maxpool_backward(const FeatureMap<Scalar>& x_shape, const std::vector<Eigen::Index>& argmax,
                                    const FeatureMap<Scalar>& dy) {
  FeatureMap<Scalar> dx(dy.channels(), x_shape.batch, x_shape.height, x_shape.width);
  const int ch_n = dy.channels();
  for (Eigen::Index col = 0; col < dy.data.cols(); ++col)
    for (int ch = 0; ch < ch_n; ++ch) dx.data(ch, argmax[static_cast<std::size_t>(col * ch_n + ch)]) += dy.data(ch, col);
  return dx;
}

/// Nearest-neighbour 2x upsampling.
template <typename Scalar>
FeatureMap<Scalar> upsample_forward(const FeatureMap<Scalar>& x) {
  FeatureMap<Scalar> y(x.channels(), x.batch, x.height * 2, x.width * 2);
  for (int b = 0; b < y.batch; ++b)
    for (int r = 0; r < y.height; ++r)
      for (int c = 0; c < y.width; ++c) y.data.col(y.column(b, r, c)) = x.data.col(x.column(b, r / 2, c / 2));
  return y;
}

template <typename Scalar>
FeatureMap<Scalar> upsample_backward(const FeatureMap<Scalar>& dy) {
  FeatureMap<Scalar> dx(dy.channels(), dy.batch, dy.height / 2, dy.width / 2);
  for (int b = 0; b < dy.batch; ++b)
    for (int r = 0; r < dy.height; ++r)
      for (int c = 0; c < dy.width; ++c) dx.data.col(dx.column(b, r / 2, c / 2)) += dy.data.col(dy.column(b, r, c));
  return dx;
}

/// Channel concatenation [a; b].
template <typename Scalar>
FeatureMap<Scalar> concat_channels(const FeatureMap<Scalar>& a, const FeatureMap<Scalar>& b) {
  FeatureMap<Scalar> y;
  y.batch = a.batch;
  y.height = a.height;
  y.width = a.width;
  y.data.resize(a.data.rows() + b.data.rows(), a.data.cols());
  y.data.topRows(a.data.rows()) = a.data;
  y.data.bottomRows(b.data.rows()) = b.data;
  return y;
}

template <typename Scalar>
FeatureMap<Scalar> slice_channels(const FeatureMap<Scalar>& x, int first, int count) {
  FeatureMap<Scalar> y;
  y.batch = x.batch;
  y.height = x.height;
  y.width = x.width;
  y.data = x.data.middleRows(first, count);
  return y;
}

}  // namespace layers
}  // namespace mmcs
