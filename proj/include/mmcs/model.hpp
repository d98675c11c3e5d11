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

#include "mmcs/core.hpp"
#include "mmcs/layers.hpp"
#include "mmcs/rng.hpp"

#include <cmath>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

namespace mmcs {

/// Encoder-decoder shape. Input 2 channels (cytoplasm, nucleus), output 3
/// (flow_y, flow_x, cell logit).
struct NetArch {
  int levels = 3;
  int base_width = 16;
  int in_channels = 2;
  int out_channels = 3;

  int width_at(int level) const { return base_width << level; }
  /// Spatial dims must be multiples of this.
  int divisor() const { return 1 << (levels - 1); }
  bool operator==(const NetArch&) const = default;
};

/// Residual U-Net: per level two 3x3 convolutions with a (1x1 when widths
/// differ) skip, 2x max-pool down, nearest 2x up with concatenated skips,
/// and a 1x1 output head.
template <typename Scalar>
class SegNet {
 public:
  struct Block {
    ConvSpec a;
    ConvSpec b;
    std::optional<ConvSpec> skip;
  };

  struct BlockTape {
    FeatureMap<Scalar> x;
    FeatureMap<Scalar> h;
    FeatureMap<Scalar> y;
    MatrixT<Scalar> col_x;
    MatrixT<Scalar> col_h;
  };

  /// Intermediate activations kept for the backward pass.
  struct Tape {
    std::vector<BlockTape> encoder;
    std::vector<BlockTape> decoder;
    std::vector<std::vector<Eigen::Index>> pool_argmax;
    std::vector<FeatureMap<Scalar>> pool_input_shape;
    FeatureMap<Scalar> head_input;
  };

  explicit SegNet(NetArch arch = {});

  /// All parameters zero; forward then returns zeros for any input.
  static SegNet zeros(NetArch arch) { return SegNet(arch); }
  /// He-normal convolutions, zero biases, small head.
  static SegNet initialized(NetArch arch, RngStream rng);

  const NetArch& arch() const { return arch_; }
  Eigen::Index num_parameters() const { return theta.size(); }

  /// Throws ShapeError unless channels and spatial dims are acceptable.
  void check_input(const FeatureMap<Scalar>& x) const;

  FeatureMap<Scalar> forward(const FeatureMap<Scalar>& x, Tape* tape = nullptr) const;
  /// Accumulates d(loss)/d(theta) into `grad` given d(loss)/d(output).
  void backward(const Tape& tape, const FeatureMap<Scalar>& dout, VectorT<Scalar>& grad) const;

  template <typename Other>
  SegNet<Other> cast() const {
    SegNet<Other> out(arch_);
    out.theta = theta.template cast<Other>();
    return out;
  }

  /// Flat parameter vector; layers view slices of it.
  VectorT<Scalar> theta;

 private:
  FeatureMap<Scalar> block_forward(const Block& blk, const FeatureMap<Scalar>& x, BlockTape* tape) const;
  FeatureMap<Scalar> block_backward(const Block& blk, const BlockTape& tape, FeatureMap<Scalar> dy,
                                    VectorT<Scalar>& grad) const;

  NetArch arch_;
  std::vector<Block> encoder_;
  std::vector<Block> decoder_;  // decoder_[l] produces level l, l = 0..levels-2
  ConvSpec head_;
};

// ---------------------------------------------------------------------------
// Loss

struct LossTerms {
  double mse = 0.0;
  double bce = 0.0;
  double total() const { return mse + bce; }
};

/// Flow regression targets are scaled by this factor inside the loss.
inline constexpr double kFlowTargetScale = 5.0;

/// Numerically stable binary cross entropy with logits.
template <typename Scalar>
Scalar bce_with_logits(Scalar logit, Scalar target) {
  using std::abs;
  using std::exp;
  using std::log1p;
  return std::max(logit, Scalar(0)) - logit * target + log1p(exp(-abs(logit)));
}

template <typename Scalar>
Scalar sigmoid(Scalar z) {
  using std::exp;
  return z >= Scalar(0) ? Scalar(1) / (Scalar(1) + exp(-z)) : exp(z) / (Scalar(1) + exp(z));
}

/// Loss in network-output space for one sample. `pred` and `target` are
/// 3 x pixels; target rows 0-1 are regression values and row 2 holds cell
/// probabilities. MSE averages over both flow rows, BCE over pixels. When
/// `dpred` is non-null it receives weight * d(loss)/d(pred).
template <typename Scalar>
LossTerms output_space_loss(const MatrixT<Scalar>& pred, const MatrixT<Scalar>& target, MatrixT<Scalar>* dpred,
                            Scalar weight) {
  if (pred.rows() != 3 || target.rows() != 3 || pred.cols() != target.cols())
    throw ShapeError("loss expects matching 3-channel prediction and target");
  const auto n = static_cast<double>(pred.cols());
  LossTerms out;
  long double mse = 0.0L;
  long double bce = 0.0L;
  if (dpred) dpred->resize(3, pred.cols());
  for (Eigen::Index j = 0; j < pred.cols(); ++j) {
    for (int r = 0; r < 2; ++r) {
      const Scalar d = pred(r, j) - target(r, j);
      mse += static_cast<long double>(d * d);
      if (dpred) (*dpred)(r, j) = weight * Scalar(2) * d / Scalar(2.0 * n);
    }
    const Scalar z = pred(2, j);
    const Scalar y = target(2, j);
    bce += static_cast<long double>(bce_with_logits(z, y));
    if (dpred) (*dpred)(2, j) = weight * (sigmoid(z) - y) / Scalar(n);
  }
  out.mse = static_cast<double>(mse / (2.0L * n));
  out.bce = static_cast<double>(bce / n);
  return out;
}

/// Output-space target from a mask-derived FlowMap (unit flows, {0,1} occupancy).
template <typename Scalar>
MatrixT<Scalar> label_target(const FlowMap& target) {
  const Eigen::Index n = Eigen::Index{target.height()} * target.width();
  MatrixT<Scalar> t(3, n);
  for (Eigen::Index j = 0; j < n; ++j) {
    t(0, j) = Scalar(kFlowTargetScale) * Scalar(target.flow_y().data()[j]);
    t(1, j) = Scalar(kFlowTargetScale) * Scalar(target.flow_x().data()[j]);
    t(2, j) = Scalar(target.cell_logit().data()[j]);
  }
  return t;
}

/// Output-space target from a stored raw prediction: flows as-is, the logit
/// plane becomes a soft probability target.
template <typename Scalar>
MatrixT<Scalar> pseudo_target(const FlowMap& raw) {
  const Eigen::Index n = Eigen::Index{raw.height()} * raw.width();
  MatrixT<Scalar> t(3, n);
  for (Eigen::Index j = 0; j < n; ++j) {
    t(0, j) = Scalar(raw.flow_y().data()[j]);
    t(1, j) = Scalar(raw.flow_x().data()[j]);
    t(2, j) = sigmoid(Scalar(raw.cell_logit().data()[j]));
  }
  return t;
}

/// loss(pred, target) for a raw prediction against a mask-derived target:
/// MSE(pred flows, 5 * target flows) + BCEWithLogits(pred logit, occupancy).
LossTerms flow_loss(const FlowMap& pred, const FlowMap& target);

// ---------------------------------------------------------------------------
// Conversions between image-space types and network feature maps.

template <typename Scalar>
FeatureMap<Scalar> to_feature_map(const std::vector<const ImageTensor*>& images);
template <typename Scalar>
FeatureMap<Scalar> to_feature_map(const ImageTensor& image) {
  return to_feature_map<Scalar>(std::vector<const ImageTensor*>{&image});
}
template <typename Scalar>
FlowMap to_flow_map(const FeatureMap<Scalar>& out, int sample);

/// Batched forward over equally sized 2-channel tiles.
std::vector<FlowMap> forward(const SegNet<float>& net, const std::vector<ImageTensor>& tiles);

/// Forward on one image of any size: zero-pads up to the divisor, crops back.
FlowMap predict_full(const SegNet<float>& net, const ImageTensor& image);

/// Mean loss over a batch of (image, mask-derived target) pairs and its
/// gradient with respect to all parameters.
template <typename Scalar>
struct LossAndGradient {
  double loss = 0.0;
  VectorT<Scalar> grad;
};

template <typename Scalar>
LossAndGradient<Scalar> backward(const SegNet<Scalar>& net, const std::vector<ImageTensor>& batch,
                                 const std::vector<FlowMap>& targets);

/// One sample's contribution to a batch objective: weight * loss(f(image), target).
template <typename Scalar>
struct GradientJob {
  const ImageTensor* image = nullptr;
  MatrixT<Scalar> target;  // 3 x (H*W), see label_target / pseudo_target
  Scalar weight = Scalar(1);
};

/// Sum of weighted per-sample losses and its gradient. Samples are processed
/// in parallel; per-sample gradients are summed in job order, so the result
/// does not depend on the worker count. `per_sample` receives unweighted terms.
template <typename Scalar>
LossAndGradient<Scalar> weighted_backward(const SegNet<Scalar>& net, const std::vector<GradientJob<Scalar>>& jobs,
                                          std::vector<LossTerms>* per_sample = nullptr);

// ---------------------------------------------------------------------------
// Optimizer and schedule

struct SgdConfig {
  double lr0 = 0.1;
  double momentum = 0.9;
  double weight_decay = 1e-5;
  int warmup_epochs = 10;
  std::optional<int> anneal_start_epoch;
  int anneal_period = 100;
  double lr_floor = 0.0016;
  int batch_size = 16;
  /// Global gradient-norm clip applied before the momentum update; 0 disables.
  double clip_norm = 5.0;

  void validate() const;
};

/// Linear warmup, constant, then halving every anneal_period epochs down to lr_floor.
double lr_at(int epoch, const SgdConfig& cfg);

/// Classic momentum SGD with L2 weight decay folded into the velocity and an
/// optional global-norm clip on the incoming gradient.
template <typename Scalar>
class SgdOptimizer {
 public:
  explicit SgdOptimizer(Eigen::Index n_params = 0) : velocity_(VectorT<Scalar>::Zero(n_params)) {}

  const VectorT<Scalar>& velocity() const { return velocity_; }

  /// Throws NumericError and leaves `theta` untouched if `grad` is not finite.
  void step(VectorT<Scalar>& theta, const VectorT<Scalar>& grad, const SgdConfig& cfg, int epoch) {
    step_with_lr(theta, grad, cfg, static_cast<Scalar>(lr_at(epoch, cfg)));
  }

  void step_with_lr(VectorT<Scalar>& theta, const VectorT<Scalar>& grad, const SgdConfig& cfg, Scalar lr) {
    if (grad.size() != theta.size()) throw ShapeError("gradient size does not match parameters");
    if (!grad.allFinite()) throw NumericError("non-finite gradient; step aborted");
    if (velocity_.size() != theta.size()) velocity_ = VectorT<Scalar>::Zero(theta.size());
    Scalar gain(1);
    if (cfg.clip_norm > 0.0) {
      const double norm = static_cast<double>(grad.norm());
      if (norm > cfg.clip_norm) gain = static_cast<Scalar>(cfg.clip_norm / norm);
    }
    velocity_ = Scalar(cfg.momentum) * velocity_ + gain * grad + Scalar(cfg.weight_decay) * theta;
    theta -= lr * velocity_;
  }

 private:
  VectorT<Scalar> velocity_;
};

// ---------------------------------------------------------------------------
// Checkpoints

struct Checkpoint {
  SegNet<float> net;
  std::map<std::string, std::string> metadata;
};

inline constexpr std::uint32_t kCheckpointVersion = 1;

void save_checkpoint(const std::filesystem::path& path, const SegNet<float>& net,
                     const std::map<std::string, std::string>& metadata);
Checkpoint load_checkpoint(const std::filesystem::path& path);

extern template class SegNet<float>;
extern template class SegNet<double>;

}  // namespace mmcs
