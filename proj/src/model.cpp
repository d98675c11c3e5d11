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

#include "mmcs/model.hpp"

#include "mmcs/error.hpp"
#include "mmcs/parallel.hpp"

#include <algorithm>
#include <cmath>
#include <string>

namespace mmcs {

template <typename Scalar>
SegNet<Scalar>::SegNet(NetArch arch) : arch_(arch) {
  if (arch.levels < 1 || arch.levels > 6) throw UsageError("levels must be in [1, 6]");
  if (arch.base_width < 1) throw UsageError("base_width must be positive");
  Eigen::Index offset = 0;
  auto conv = [&](int in, int out, int kernel) {
    ConvSpec s{in, out, kernel, offset};
    offset += s.param_count();
    return s;
  };
  auto block = [&](int in, int out) {
    Block b;
    b.a = conv(in, out, 3);
    b.b = conv(out, out, 3);
    if (in != out) b.skip = conv(in, out, 1);
    return b;
  };
  int prev = arch.in_channels;
  for (int l = 0; l < arch.levels; ++l) {
    encoder_.push_back(block(prev, arch.width_at(l)));
    prev = arch.width_at(l);
  }
  for (int l = 0; l + 1 < arch.levels; ++l) decoder_.push_back(block(arch.width_at(l + 1) + arch.width_at(l), arch.width_at(l)));
  head_ = conv(arch.width_at(0), arch.out_channels, 1);
  theta = VectorT<Scalar>::Zero(offset);
}

template <typename Scalar>
SegNet<Scalar> SegNet<Scalar>::initialized(NetArch arch, RngStream rng) {
  SegNet net(arch);
  auto he = [&](const ConvSpec& s, double gain) {
    const double stddev = gain * std::sqrt(2.0 / static_cast<double>(s.kernel * s.kernel * s.in));
    for (Eigen::Index i = 0; i < s.weight_count(); ++i) net.theta[s.offset + i] = static_cast<Scalar>(stddev * rng.normal());
  };
  auto init_block = [&](const Block& b) {
    he(b.a, 1.0);
    // Second conv starts small so each residual block begins near its skip path.
    he(b.b, 0.5);
    if (b.skip) he(*b.skip, 1.0);
  };
  for (const auto& b : net.encoder_) init_block(b);
  for (const auto& b : net.decoder_) init_block(b);
  he(net.head_, 0.5);
  return net;
}

template <typename Scalar>
void SegNet<Scalar>::check_input(const FeatureMap<Scalar>& x) const {
  if (x.channels() != arch_.in_channels)
    throw ShapeError("network expects " + std::to_string(arch_.in_channels) + " input channels, got " +
                     std::to_string(x.channels()));
  const int d = arch_.divisor();
  if (x.height < d || x.width < d || x.height % d != 0 || x.width % d != 0)
    throw ShapeError("tile " + std::to_string(x.height) + "x" + std::to_string(x.width) + " is not divisible by " +
                     std::to_string(d));
}

template <typename Scalar>
FeatureMap<Scalar> SegNet<Scalar>::block_forward(const Block& blk, const FeatureMap<Scalar>& x, BlockTape* tape) const {
  FeatureMap<Scalar> h = layers::conv_forward(blk.a, theta, x, tape ? &tape->col_x : nullptr);
  layers::relu_inplace(h);
  FeatureMap<Scalar> y = layers::conv_forward(blk.b, theta, h, tape ? &tape->col_h : nullptr);
  if (blk.skip)
    y.data += layers::conv_forward(*blk.skip, theta, x).data;
  else
    y.data += x.data;
  layers::relu_inplace(y);
  if (tape) {
    tape->x = x;
    tape->h = std::move(h);
    tape->y = y;
  }
  return y;
}

template <typename Scalar>
FeatureMap<Scalar> SegNet<Scalar>::block_backward(const Block& blk, const BlockTape& tape, FeatureMap<Scalar> dy,
                                                  VectorT<Scalar>& grad) const {
  layers::relu_backward_inplace(tape.y, dy);
  FeatureMap<Scalar> dh = layers::conv_backward(blk.b, theta, tape.h, tape.col_h, dy, grad);
  layers::relu_backward_inplace(tape.h, dh);
  FeatureMap<Scalar> dx = layers::conv_backward(blk.a, theta, tape.x, tape.col_x, dh, grad);
  if (blk.skip)
    dx.data += layers::conv_backward(*blk.skip, theta, tape.x, dy, grad).data;
  else
    dx.data += dy.data;
  return dx;
}

template <typename Scalar>
FeatureMap<Scalar> SegNet<Scalar>::forward(const FeatureMap<Scalar>& x, Tape* tape) const {
  check_input(x);
  const int levels = arch_.levels;
  if (tape) {
    tape->encoder.assign(static_cast<std::size_t>(levels), {});
    tape->decoder.assign(static_cast<std::size_t>(levels - 1), {});
    tape->pool_argmax.assign(static_cast<std::size_t>(levels - 1), {});
    tape->pool_input_shape.assign(static_cast<std::size_t>(levels - 1), {});
  }
  std::vector<FeatureMap<Scalar>> skips;
  FeatureMap<Scalar> cur = block_forward(encoder_[0], x, tape ? &tape->encoder[0] : nullptr);
  for (int l = 1; l < levels; ++l) {
    skips.push_back(cur);
    const auto li = static_cast<std::size_t>(l - 1);
    FeatureMap<Scalar> pooled = layers::maxpool_forward(cur, tape ? &tape->pool_argmax[li] : nullptr);
    if (tape) tape->pool_input_shape[li] = FeatureMap<Scalar>(0, cur.batch, cur.height, cur.width);
    cur = block_forward(encoder_[static_cast<std::size_t>(l)], pooled,
                        tape ? &tape->encoder[static_cast<std::size_t>(l)] : nullptr);
  }
  for (int l = levels - 2; l >= 0; --l) {
    const auto li = static_cast<std::size_t>(l);
    FeatureMap<Scalar> cat = layers::concat_channels(layers::upsample_forward(cur), skips[li]);
    cur = block_forward(decoder_[li], cat, tape ? &tape->decoder[li] : nullptr);
  }
  if (tape) tape->head_input = cur;
  return layers::conv_forward(head_, theta, cur);
}

template <typename Scalar>
void SegNet<Scalar>::backward(const Tape& tape, const FeatureMap<Scalar>& dout, VectorT<Scalar>& grad) const {
  if (grad.size() != theta.size()) grad = VectorT<Scalar>::Zero(theta.size());
  const int levels = arch_.levels;
  std::vector<FeatureMap<Scalar>> dskip(static_cast<std::size_t>(levels));
  FeatureMap<Scalar> d = layers::conv_backward(head_, theta, tape.head_input, dout, grad);
  for (int l = 0; l + 1 < levels; ++l) {
    const auto li = static_cast<std::size_t>(l);
    const FeatureMap<Scalar> dcat = block_backward(decoder_[li], tape.decoder[li], std::move(d), grad);
    const int up_channels = arch_.width_at(l + 1);
    dskip[li] = layers::slice_channels(dcat, up_channels, arch_.width_at(l));
    d = layers::upsample_backward(layers::slice_channels(dcat, 0, up_channels));
  }
  // `d` is now the gradient w.r.t. the deepest encoder output.
  for (int l = levels - 1; l >= 0; --l) {
    const auto li = static_cast<std::size_t>(l);
    if (l < levels - 1) d.data += dskip[li].data;
    FeatureMap<Scalar> dx = block_backward(encoder_[li], tape.encoder[li], std::move(d), grad);
    if (l > 0) d = layers::maxpool_backward(tape.pool_input_shape[li - 1], tape.pool_argmax[li - 1], dx);
  }
}

template class SegNet<float>;
template class SegNet<double>;

// ---------------------------------------------------------------------------

LossTerms flow_loss(const FlowMap& pred, const FlowMap& target) {
  if (pred.height() != target.height() || pred.width() != target.width())
    throw ShapeError("loss: prediction and target dims differ");
  const Eigen::Index n = Eigen::Index{pred.height()} * pred.width();
  MatrixT<double> p(3, n);
  for (int c = 0; c < 3; ++c)
    for (Eigen::Index j = 0; j < n; ++j) p(c, j) = pred.planes[static_cast<std::size_t>(c)].data()[j];
  return output_space_loss<double>(p, label_target<double>(target), nullptr, 1.0);
}

template <typename Scalar>
FeatureMap<Scalar> to_feature_map(const std::vector<const ImageTensor*>& images) {
  if (images.empty()) throw ShapeError("empty batch");
  const int h = images[0]->height();
  const int w = images[0]->width();
  const int c = images[0]->num_channels();
  FeatureMap<Scalar> x(c, static_cast<int>(images.size()), h, w);
  for (int b = 0; b < x.batch; ++b) {
    const ImageTensor& img = *images[static_cast<std::size_t>(b)];
    if (img.height() != h || img.width() != w || img.num_channels() != c)
      throw ShapeError("batch tiles must share shape");
    for (int ch = 0; ch < c; ++ch)
      for (int r = 0; r < h; ++r)
        for (int col = 0; col < w; ++col) x.data(ch, x.column(b, r, col)) = static_cast<Scalar>(img[ch](r, col));
  }
  return x;
}

template <typename Scalar>
FlowMap to_flow_map(const FeatureMap<Scalar>& out, int sample) {
  FlowMap f(out.height, out.width);
  for (int ch = 0; ch < 3; ++ch)
    for (int r = 0; r < out.height; ++r)
      for (int c = 0; c < out.width; ++c)
        f.planes[static_cast<std::size_t>(ch)](r, c) = static_cast<float>(out.data(ch, out.column(sample, r, c)));
  return f;
}

template FeatureMap<float> to_feature_map<float>(const std::vector<const ImageTensor*>&);
template FeatureMap<double> to_feature_map<double>(const std::vector<const ImageTensor*>&);
template FlowMap to_flow_map<float>(const FeatureMap<float>&, int);
template FlowMap to_flow_map<double>(const FeatureMap<double>&, int);

std::vector<FlowMap> forward(const SegNet<float>& net, const std::vector<ImageTensor>& tiles) {
  std::vector<const ImageTensor*> ptrs;
  for (const auto& t : tiles) ptrs.push_back(&t);
  const FeatureMap<float> out = net.forward(to_feature_map<float>(ptrs));
  std::vector<FlowMap> result;
  for (int b = 0; b < out.batch; ++b) result.push_back(to_flow_map(out, b));
  return result;
}

FlowMap predict_full(const SegNet<float>& net, const ImageTensor& image) {
  const int d = net.arch().divisor();
  const int h = image.height();
  const int w = image.width();
  const int ph = std::max(d, (h + d - 1) / d * d);
  const int pw = std::max(d, (w + d - 1) / d * d);
  ImageTensor padded(ph, pw, image.num_channels());
  for (int c = 0; c < image.num_channels(); ++c) padded[c].topLeftCorner(h, w) = image[c];
  const FlowMap full = to_flow_map(net.forward(to_feature_map<float>(padded)), 0);
  if (ph == h && pw == w) return full;
  FlowMap out(h, w);
  for (std::size_t c = 0; c < 3; ++c) out.planes[c] = full.planes[c].topLeftCorner(h, w);
  return out;
}

template <typename Scalar>
LossAndGradient<Scalar> weighted_backward(const SegNet<Scalar>& net, const std::vector<GradientJob<Scalar>>& jobs,
                                          std::vector<LossTerms>* per_sample) {
  std::vector<VectorT<Scalar>> grads(jobs.size());
  std::vector<LossTerms> terms(jobs.size());
  parallel_for(jobs.size(), [&](std::size_t i) {
    const auto& job = jobs[i];
    typename SegNet<Scalar>::Tape tape;
    const FeatureMap<Scalar> pred = net.forward(to_feature_map<Scalar>(*job.image), &tape);
    if (job.target.rows() != 3 || job.target.cols() != pred.data.cols())
      throw ShapeError("target dims do not match prediction");
    FeatureMap<Scalar> dpred(0, pred.batch, pred.height, pred.width);
    terms[i] = output_space_loss<Scalar>(pred.data, job.target, &dpred.data, job.weight);
    grads[i] = VectorT<Scalar>::Zero(net.num_parameters());
    net.backward(tape, dpred, grads[i]);
  });
  LossAndGradient<Scalar> out;
  out.grad = VectorT<Scalar>::Zero(net.num_parameters());
  for (std::size_t i = 0; i < jobs.size(); ++i) {
    out.grad += grads[i];
    out.loss += static_cast<double>(jobs[i].weight) * terms[i].total();
  }
  if (per_sample) *per_sample = std::move(terms);
  return out;
}

template LossAndGradient<float> weighted_backward<float>(const SegNet<float>&,
                                                         const std::vector<GradientJob<float>>&,
                                                         std::vector<LossTerms>*);
template LossAndGradient<double> weighted_backward<double>(const SegNet<double>&,
                                                           const std::vector<GradientJob<double>>&,
                                                           std::vector<LossTerms>*);

template <typename Scalar>
LossAndGradient<Scalar> backward(const SegNet<Scalar>& net, const std::vector<ImageTensor>& batch,
                                 const std::vector<FlowMap>& targets) {
  if (batch.size() != targets.size() || batch.empty()) throw ShapeError("batch and targets differ in length");
  std::vector<GradientJob<Scalar>> jobs(batch.size());
  const auto weight = static_cast<Scalar>(1.0 / static_cast<double>(batch.size()));
  for (std::size_t i = 0; i < batch.size(); ++i) {
    if (targets[i].height() != batch[i].height() || targets[i].width() != batch[i].width())
      throw ShapeError("target dims do not match prediction");
    jobs[i] = {&batch[i], label_target<Scalar>(targets[i]), weight};
  }
  return weighted_backward(net, jobs);
}

template LossAndGradient<float> backward<float>(const SegNet<float>&, const std::vector<ImageTensor>&,
                                                const std::vector<FlowMap>&);
template LossAndGradient<double> backward<double>(const SegNet<double>&, const std::vector<ImageTensor>&,
                                                  const std::vector<FlowMap>&);

// ---------------------------------------------------------------------------

void SgdConfig::validate() const {
  if (!(lr0 > lr_floor && lr_floor > 0.0)) throw UsageError("require lr0 > lr_floor > 0");
  if (anneal_period < 1) throw UsageError("anneal_period must be >= 1");
  if (warmup_epochs < 0) throw UsageError("warmup_epochs must be >= 0");
  if (batch_size < 1) throw UsageError("batch_size must be >= 1");
  if (momentum < 0.0 || momentum >= 1.0) throw UsageError("momentum must be in [0, 1)");
  if (clip_norm < 0.0) throw UsageError("clip_norm must be >= 0");
}

double lr_at(int epoch, const SgdConfig& cfg) {
  if (epoch < 0) throw UsageError("epoch must be >= 0");
  if (epoch < cfg.warmup_epochs) return cfg.lr0 * static_cast<double>(epoch + 1) / cfg.warmup_epochs;
  if (!cfg.anneal_start_epoch || epoch < *cfg.anneal_start_epoch) return cfg.lr0;
  const int halvings = (epoch - *cfg.anneal_start_epoch) / cfg.anneal_period + 1;
  // ldexp is exact, so breakpoints compare equal to their closed forms.
  return std::max(cfg.lr_floor, std::ldexp(cfg.lr0, -halvings));
}

}  // namespace mmcs
