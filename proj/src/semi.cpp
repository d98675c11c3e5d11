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

#include "mmcs/semi.hpp"

#include "mmcs/error.hpp"
#include "mmcs/flows.hpp"
#include "mmcs/parallel.hpp"

#include <numeric>
#include <string>

namespace mmcs {
namespace {

constexpr std::uint64_t kPretrainPhase = 0;
constexpr std::uint64_t kSemiPhase = 1;

RngStream sample_stream(const RngStream& rng, StreamTag tag, std::uint64_t phase, int epoch, std::size_t id) {
  return rng.substream(tag, phase).substream(tag, static_cast<std::uint64_t>(epoch), id);
}

std::vector<std::size_t> shuffled(std::size_t n, RngStream rng) {
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  for (std::size_t i = n; i > 1; --i)
    std::swap(order[i - 1], order[static_cast<std::size_t>(rng.uniform_int(0, static_cast<std::int64_t>(i) - 1))]);
  return order;
}

double mean_of(const std::vector<double>& v) {
  double s = 0.0;
  for (double x : v) s += x;
  return s / static_cast<double>(v.size());
}

void check_tile(const SegNet<float>& net, const TrainOptions& opts) {
  opts.augment.validate(net.arch().divisor());
  opts.sgd.validate();
}

}  // namespace

TrainingData prepare_training_data(const std::vector<ImageTensor>& labeled_images,
                                   const std::vector<InstanceMask>& labeled_masks,
                                   const std::vector<ImageTensor>& unlabeled_images, double target_diameter) {
  if (labeled_images.size() != labeled_masks.size()) throw ShapeError("labeled images and masks differ in count");
  TrainingData out;
  out.stats = dataset_mean_diameter(labeled_masks);
  out.scale = checked_scale(target_diameter, out.stats.mean);
  out.labeled.resize(labeled_images.size());
  out.unlabeled.resize(unlabeled_images.size());
  parallel_for(labeled_images.size(), [&](std::size_t i) {
    RescaledPair r = train_rescale(percentile_normalize(labeled_images[i]), labeled_masks[i], out.stats,
                                   target_diameter);
    out.labeled[i] = {std::move(r.image), std::move(r.mask)};
  });
  parallel_for(unlabeled_images.size(), [&](std::size_t i) {
    const ImageTensor n = percentile_normalize(unlabeled_images[i]);
    out.unlabeled[i] =
        out.scale == 1.0 ? n : resize_bilinear(n, scaled_extent(n.height(), out.scale), scaled_extent(n.width(), out.scale));
  });
  return out;
}

void SemiConfig::validate() const {
  if (!(w >= 0.0 && w <= 1.0)) throw UsageError("w must be in [0, 1]");
  if (T < 1) throw UsageError("T must be >= 1");
  if (epochs < 1) throw UsageError("epochs must be >= 1");
  if (batch_size < 1) throw UsageError("batch_size must be >= 1");
  if (pretrain_epochs < 0) throw UsageError("pretrain_epochs must be >= 0");
  if (eval_every < 0) throw UsageError("eval_every must be >= 0");
}

void pretrain(SegNet<float>& net, const std::vector<LabeledSample>& labeled, int epochs, const TrainOptions& opts) {
  if (labeled.empty()) throw DataError("pretraining needs at least one labeled image");
  check_tile(net, opts);
  SgdOptimizer<float> opt(net.num_parameters());
  const auto batch = static_cast<std::size_t>(opts.sgd.batch_size);
  for (int e = 0; e < epochs; ++e) {
    const auto order = shuffled(labeled.size(), opts.rng.substream(StreamTag::Batching, kPretrainPhase, e));
    const double lr = lr_at(e, opts.sgd);
    std::vector<double> batch_losses;
    for (std::size_t b = 0; b < order.size(); b += batch) {
      const std::size_t n = std::min(batch, order.size() - b);
      std::vector<ImageTensor> images(n);
      std::vector<FlowMap> targets(n);
      parallel_for(n, [&](std::size_t k) {
        const std::size_t id = order[b + k];
        RngStream s = sample_stream(opts.rng, StreamTag::Augment, kPretrainPhase, e, id);
        AugmentedPair p = random_augment(labeled[id].image, labeled[id].mask, opts.augment, s);
        images[k] = std::move(p.image);
        targets[k] = mask_to_flow(p.mask);
      });
      const auto lg = backward(net, images, targets);
      opt.step_with_lr(net.theta, lg.grad, opts.sgd, static_cast<float>(lr));
      batch_losses.push_back(lg.loss);
    }
    if (opts.on_epoch) {
      EpochRecord rec;
      rec.epoch = e;
      rec.lr = lr;
      rec.labeled_loss = mean_of(batch_losses);
      rec.total_loss = *rec.labeled_loss;
      opts.on_epoch(rec);
    }
  }
}

PseudoLabelStore init_pseudo(const SegNet<float>& net, const std::vector<ImageTensor>& unlabeled) {
  PseudoLabelStore store;
  store.entries.resize(unlabeled.size());
  parallel_for(unlabeled.size(), [&](std::size_t i) { store.entries[i] = predict_full(net, unlabeled[i]); });
  return store;
}

double combined_batch_loss(const std::vector<double>& labeled_losses, const std::vector<double>& unlabeled_losses,
                           double w) {
  if (labeled_losses.empty() && unlabeled_losses.empty()) throw DataError("batch has neither labeled nor unlabeled samples");
  double total = 0.0;
  if (!labeled_losses.empty()) total += (1.0 - w) * mean_of(labeled_losses);
  if (!unlabeled_losses.empty()) total += w * mean_of(unlabeled_losses);
  return total;
}

void update_pseudo(PseudoLabelStore& store, const std::vector<FlowMap>& predictions) {
  if (predictions.size() != store.entries.size()) throw ShapeError("prediction count does not match pseudo-label store");
  for (std::size_t i = 0; i < predictions.size(); ++i)
    if (predictions[i].height() != store.entries[i].height() || predictions[i].width() != store.entries[i].width())
      throw ShapeError("prediction dims do not match pseudo-label " + std::to_string(i));
  for (std::size_t i = 0; i < predictions.size(); ++i)
    for (std::size_t c = 0; c < 3; ++c)
      store.entries[i].planes[c] = 0.5f * store.entries[i].planes[c] + 0.5f * predictions[i].planes[c];
  ++store.update_count;
}

void update_pseudo(PseudoLabelStore& store, const SegNet<float>& net, const std::vector<ImageTensor>& unlabeled) {
  if (unlabeled.size() != store.entries.size()) throw ShapeError("unlabeled set does not match pseudo-label store");
  std::vector<FlowMap> predictions(unlabeled.size());
  parallel_for(unlabeled.size(), [&](std::size_t i) { predictions[i] = predict_full(net, unlabeled[i]); });
  update_pseudo(store, predictions);
}

void semi_train(SegNet<float>& net, const std::vector<LabeledSample>& labeled,
                const std::vector<ImageTensor>& unlabeled, PseudoLabelStore& store, const SemiConfig& cfg,
                const TrainOptions& opts) {
  cfg.validate();
  check_tile(net, opts);
  if (store.entries.size() != unlabeled.size()) throw ShapeError("pseudo-label store does not match unlabeled set");
  if (labeled.empty() && unlabeled.empty()) throw DataError("semi-supervised training needs data");
  const std::size_t n_l = labeled.size();
  const std::size_t pool = n_l + unlabeled.size();
  const auto batch = static_cast<std::size_t>(cfg.batch_size);
  SgdOptimizer<float> opt(net.num_parameters());

  for (int k = 1; k <= cfg.epochs; ++k) {
    const auto order = shuffled(pool, opts.rng.substream(StreamTag::Batching, kSemiPhase, k));
    const double lr = lr_at(k, opts.sgd);
    std::vector<double> all_l, all_u, totals;
    for (std::size_t b = 0; b < pool; b += batch) {
      const std::size_t n = std::min(batch, pool - b);
      std::size_t count_l = 0;
      for (std::size_t j = 0; j < n; ++j) count_l += order[b + j] < n_l;
      const std::size_t count_u = n - count_l;
      // A side whose weight is zero is never evaluated.
      const auto w_l = count_l > 0 && cfg.w < 1.0 ? static_cast<float>((1.0 - cfg.w) / static_cast<double>(count_l)) : 0.0f;
      const auto w_u = count_u > 0 && cfg.w > 0.0 ? static_cast<float>(cfg.w / static_cast<double>(count_u)) : 0.0f;
      std::vector<std::size_t> ids;
      for (std::size_t j = 0; j < n; ++j) {
        const std::size_t id = order[b + j];
        if ((id < n_l && w_l > 0.0f) || (id >= n_l && w_u > 0.0f)) ids.push_back(id);
      }
      if (ids.empty()) continue;

      std::vector<ImageTensor> images(ids.size());
      std::vector<GradientJob<float>> jobs(ids.size());
      parallel_for(ids.size(), [&](std::size_t j) {
        const std::size_t id = ids[j];
        RngStream s = sample_stream(opts.rng, StreamTag::Augment, kSemiPhase, k, id);
        if (id < n_l) {
          AugmentedPair p = random_augment(labeled[id].image, labeled[id].mask, opts.augment, s);
          images[j] = std::move(p.image);
          jobs[j].target = label_target<float>(mask_to_flow(p.mask));
          jobs[j].weight = w_l;
        } else {
          const ImageTensor& x = unlabeled[id - n_l];
          const AffineWarp warp = sample_warp(opts.augment, s, x.height(), x.width());
          images[j] = warp_image(x, warp);
          jobs[j].target = pseudo_target<float>(warp_flow(store.entries[id - n_l], warp));
          jobs[j].weight = w_u;
        }
      });
      for (std::size_t j = 0; j < ids.size(); ++j) jobs[j].image = &images[j];

      std::vector<LossTerms> terms;
      const auto lg = weighted_backward(net, jobs, &terms);
      opt.step_with_lr(net.theta, lg.grad, opts.sgd, static_cast<float>(lr));

      std::vector<double> batch_l, batch_u;
      for (std::size_t j = 0; j < ids.size(); ++j) (ids[j] < n_l ? batch_l : batch_u).push_back(terms[j].total());
      totals.push_back(combined_batch_loss(batch_l, batch_u, cfg.w));
      all_l.insert(all_l.end(), batch_l.begin(), batch_l.end());
      all_u.insert(all_u.end(), batch_u.begin(), batch_u.end());
    }

    const bool refresh = k % cfg.T == 0;
    if (refresh) {
      update_pseudo(store, net, unlabeled);
      store.last_update_epoch = k;
    }
    if (opts.on_epoch) {
      EpochRecord rec;
      rec.epoch = k;
      rec.lr = lr;
      if (!all_l.empty()) rec.labeled_loss = mean_of(all_l);
      if (!all_u.empty()) rec.unlabeled_loss = mean_of(all_u);
      rec.total_loss = totals.empty() ? 0.0 : mean_of(totals);
      rec.pseudo_update = refresh;
      opts.on_epoch(rec);
    }
    if (refresh && opts.on_checkpoint) opts.on_checkpoint(k, net, store);
  }
}

std::vector<ScheduleRow> epoch_schedule_report(const SemiConfig& cfg, const SgdConfig& sgd) {
  cfg.validate();
  std::vector<ScheduleRow> rows;
  rows.reserve(static_cast<std::size_t>(cfg.epochs));
  for (int k = 1; k <= cfg.epochs; ++k) {
    const bool at_t = k % cfg.T == 0;
    rows.push_back({k, lr_at(k, sgd), at_t, at_t});
  }
  return rows;
}

}  // namespace mmcs
