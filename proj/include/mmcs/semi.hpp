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

#include "mmcs/augment.hpp"
#include "mmcs/core.hpp"
#include "mmcs/diameter.hpp"
#include "mmcs/model.hpp"
#include "mmcs/rng.hpp"

#include <functional>
#include <optional>
#include <vector>

namespace mmcs {

/// A labeled image after normalization and diameter rescaling.
struct LabeledSample {
  ImageTensor image;
  InstanceMask mask;
};

struct TrainingData {
  std::vector<LabeledSample> labeled;
  std::vector<ImageTensor> unlabeled;
  DiameterStats stats;
  double scale = 1.0;
};

/// Percentile-normalizes every image and rescales labeled and unlabeled images
/// by target_diameter / (labeled mean diameter).
TrainingData prepare_training_data(const std::vector<ImageTensor>& labeled_images,
                                   const std::vector<InstanceMask>& labeled_masks,
                                   const std::vector<ImageTensor>& unlabeled_images, double target_diameter);

/// Pseudo-labels z~ in raw network-output space, indexed like the unlabeled set.
struct PseudoLabelStore {
  std::vector<FlowMap> entries;
  int update_count = 0;
  std::optional<int> last_update_epoch;
};

struct SemiConfig {
  double w = 0.4;
  int T = 100;
  int epochs = 250;
  int batch_size = 16;
  int pretrain_epochs = 200;
  /// Training commands score the eval split every this many epochs; 0 disables.
  int eval_every = 0;

  void validate() const;
};

struct EpochRecord {
  int epoch = 0;
  double lr = 0.0;
  /// Mean unweighted per-sample losses; empty when no sample of that kind was evaluated.
  std::optional<double> labeled_loss;
  std::optional<double> unlabeled_loss;
  /// Mean of the per-batch combined objective over the batches that stepped.
  double total_loss = 0.0;
  bool pseudo_update = false;
};

struct TrainOptions {
  SgdConfig sgd;
  AugmentConfig augment;
  RngStream rng{0};
  std::function<void(const EpochRecord&)> on_epoch;
  /// Called after epochs that are multiples of T (semi) with the current state.
  std::function<void(int epoch, const SegNet<float>&, const PseudoLabelStore&)> on_checkpoint;
};

/// Supervised loop over `epochs` epochs (0-based, lr_at(epoch)), batch size from opts.sgd.
void pretrain(SegNet<float>& net, const std::vector<LabeledSample>& labeled, int epochs, const TrainOptions& opts);

PseudoLabelStore init_pseudo(const SegNet<float>& net, const std::vector<ImageTensor>& unlabeled);

/// (1 - w) * mean(labeled) + w * mean(unlabeled); an empty side contributes 0.
double combined_batch_loss(const std::vector<double>& labeled_losses, const std::vector<double>& unlabeled_losses,
                           double w);

/// z~ <- 0.5 z~ + 0.5 f for each entry.
void update_pseudo(PseudoLabelStore& store, const std::vector<FlowMap>& predictions);
void update_pseudo(PseudoLabelStore& store, const SegNet<float>& net, const std::vector<ImageTensor>& unlabeled);

/// Mixed-batch training for epochs 1..cfg.epochs starting from a fresh
/// optimizer state; pseudo-labels refresh after every T-th epoch.
void semi_train(SegNet<float>& net, const std::vector<LabeledSample>& labeled,
                const std::vector<ImageTensor>& unlabeled, PseudoLabelStore& store, const SemiConfig& cfg,
                const TrainOptions& opts);

struct ScheduleRow {
  int epoch = 0;
  double lr = 0.0;
  bool pseudo_update = false;
  bool checkpoint = false;
};

std::vector<ScheduleRow> epoch_schedule_report(const SemiConfig& cfg, const SgdConfig& sgd);

}  // namespace mmcs
