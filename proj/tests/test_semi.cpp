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

#include "doctest.h"
#include "mmcs/error.hpp"
#include "mmcs/flows.hpp"
#include "mmcs/ingest.hpp"
#include "mmcs/semi.hpp"
#include "reference_loops.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

using namespace mmcs;
using mmcs::testing::reference_supervised;

namespace {

struct Fixture {
  std::vector<LabeledSample> labeled;
  std::vector<ImageTensor> unlabeled;
  TrainOptions opts;
  NetArch arch;
};

Fixture small_fixture(int n_l, int n_u, int size = 40) {
  SynthSpec spec;
  spec.image_size = size;
  spec.count_min = 1;
  spec.count_max = 3;
  spec.radius_min = 4;
  spec.radius_max = 6;
  spec.min_gap = 1;
  Fixture f;
  for (auto& s : synth_blobs(spec, RngStream(5), n_l + n_u)) {
    if (static_cast<int>(f.labeled.size()) < n_l)
      f.labeled.push_back({percentile_normalize(s.image), s.mask});
    else
      f.unlabeled.push_back(percentile_normalize(s.image));
  }
  f.arch.levels = 2;
  f.arch.base_width = 4;
  f.opts.augment.tile = 32;
  f.opts.sgd.batch_size = 2;
  f.opts.rng = RngStream(77);
  return f;
}

FlowMap constant_flowmap(int h, int w, float v) {
  FlowMap m(h, w);
  for (auto& p : m.planes) p.setConstant(v);
  return m;
}

}  // namespace

TEST_CASE("combined_batch_loss examples") {
  CHECK(combined_batch_loss({1.0, 3.0}, {4.0}, 0.4) == doctest::Approx(2.8));
  CHECK(combined_batch_loss({1.0, 3.0}, {4.0}, 0.0) == doctest::Approx(2.0));
  CHECK(combined_batch_loss({}, {4.0, 2.0}, 0.4) == doctest::Approx(0.4 * 3.0));
  CHECK(combined_batch_loss({2.0}, {}, 0.4) == doctest::Approx(0.6 * 2.0));
  CHECK_THROWS_AS(combined_batch_loss({}, {}, 0.4), DataError);
}

TEST_CASE("combined_batch_loss ignores order within each side") {
  std::mt19937 gen(3);
  std::uniform_real_distribution<double> u(0.0, 5.0);
  for (int t = 0; t < 50; ++t) {
    std::vector<double> l(1 + t % 5), un(t % 4);
    for (auto& x : l) x = u(gen);
    for (auto& x : un) x = u(gen);
    const double w = u(gen) / 5.0;
    const double ref = combined_batch_loss(l, un, w);
    std::shuffle(l.begin(), l.end(), gen);
    std::shuffle(un.begin(), un.end(), gen);
    CHECK(combined_batch_loss(l, un, w) == doctest::Approx(ref).epsilon(1e-12));
  }
}

TEST_CASE("update_pseudo examples and closed form") {
  PseudoLabelStore store;
  store.entries.push_back(constant_flowmap(3, 4, 0.2f));
  update_pseudo(store, {constant_flowmap(3, 4, 0.6f)});
  CHECK(store.entries[0].planes[0](1, 1) == doctest::Approx(0.4));
  CHECK(store.update_count == 1);

  PseudoLabelStore fixed;
  fixed.entries.push_back(constant_flowmap(2, 2, -1.25f));
  update_pseudo(fixed, {constant_flowmap(2, 2, -1.25f)});
  CHECK((fixed.entries[0].planes[2] == -1.25f).all());

  const double z0 = 3.0, p = -0.7;
  PseudoLabelStore ema;
  ema.entries.push_back(constant_flowmap(2, 3, static_cast<float>(z0)));
  for (int k = 1; k <= 5; ++k) {
    update_pseudo(ema, {constant_flowmap(2, 3, static_cast<float>(p))});
    const double expected = p + (z0 - p) / std::ldexp(1.0, k);
    for (const auto& plane : ema.entries[0].planes) CHECK(std::abs(plane(1, 2) - expected) < 1e-6);
  }
  CHECK(ema.update_count == 5);

  CHECK_THROWS_AS(update_pseudo(ema, {}), ShapeError);
  CHECK_THROWS_AS(update_pseudo(ema, {constant_flowmap(3, 3, 0.0f)}), ShapeError);
}

TEST_CASE("init_pseudo stores the deterministic prediction") {
  const Fixture f = small_fixture(0, 3);
  const auto net = SegNet<float>::initialized(f.arch, RngStream(4));
  const auto store = init_pseudo(net, f.unlabeled);
  REQUIRE(store.entries.size() == 3);
  CHECK(store.update_count == 0);
  for (std::size_t i = 0; i < 3; ++i) {
    const FlowMap p = predict_full(net, f.unlabeled[i]);
    for (std::size_t c = 0; c < 3; ++c) {
      CHECK((store.entries[i].planes[c] == p.planes[c]).all());
      CHECK(store.entries[i].planes[c].allFinite());
    }
  }
  CHECK(init_pseudo(net, {}).entries.empty());
}

TEST_CASE("schedule report") {
  SgdConfig sgd;
  sgd.anneal_start_epoch = 120;
  SemiConfig cfg;
  cfg.epochs = 250;
  cfg.T = 100;
  auto updates = [](const std::vector<ScheduleRow>& rows) {
    std::vector<int> e;
    for (const auto& r : rows)
      if (r.pseudo_update) e.push_back(r.epoch);
    return e;
  };
  const auto rows = epoch_schedule_report(cfg, sgd);
  CHECK(rows.size() == 250);
  CHECK(updates(rows) == std::vector<int>{100, 200});
  for (const auto& r : rows) {
    CHECK(r.lr == lr_at(r.epoch, sgd));
    CHECK(r.checkpoint == r.pseudo_update);
  }
  cfg.epochs = 99;
  CHECK(updates(epoch_schedule_report(cfg, sgd)).empty());
  cfg.epochs = 300;
  CHECK(updates(epoch_schedule_report(cfg, sgd)) == std::vector<int>{100, 200, 300});
  cfg.T = 0;
  CHECK_THROWS_AS(epoch_schedule_report(cfg, sgd), UsageError);
}

TEST_CASE("semi config validation") {
  SemiConfig cfg;
  cfg.w = 1.5;
  CHECK_THROWS_AS(cfg.validate(), UsageError);
  cfg = {};
  cfg.epochs = 0;
  CHECK_THROWS_AS(cfg.validate(), UsageError);
}

TEST_CASE("pretrain halves the loss on one image and rejects an empty set") {
  Fixture f = small_fixture(1, 0, 32);
  f.opts.augment.rotate = false;
  f.opts.augment.flip = false;
  f.opts.augment.scale_jitter_lo = f.opts.augment.scale_jitter_hi = 1.0;
  f.opts.augment.translate_fraction = 0.0;
  auto net = SegNet<float>::initialized(f.arch, RngStream(9));
  std::vector<double> losses;
  f.opts.on_epoch = [&](const EpochRecord& r) { losses.push_back(*r.labeled_loss); };
  pretrain(net, f.labeled, 200, f.opts);
  REQUIRE(losses.size() == 200);
  CHECK(losses.back() < losses.front() / 2);
  CHECK_THROWS_AS(pretrain(net, {}, 1, f.opts), DataError);
}

TEST_CASE("pretrain is deterministic for a seed") {
  const Fixture f = small_fixture(3, 0);
  auto a = SegNet<float>::initialized(f.arch, RngStream(1));
  auto b = a;
  pretrain(a, f.labeled, 3, f.opts);
  pretrain(b, f.labeled, 3, f.opts);
  CHECK(a.theta == b.theta);
}

TEST_CASE("w = 0 reproduces the supervised trajectory bit for bit") {
  const Fixture f = small_fixture(3, 3);
  const auto start = SegNet<float>::initialized(f.arch, RngStream(2));
  SemiConfig cfg;
  cfg.w = 0.0;
  cfg.T = 2;
  cfg.epochs = 4;
  cfg.batch_size = 2;

  auto semi = start;
  PseudoLabelStore store = init_pseudo(start, f.unlabeled);
  semi_train(semi, f.labeled, f.unlabeled, store, cfg, f.opts);

  auto ref = start;
  reference_supervised(ref, f.labeled, 6, cfg.epochs, cfg.batch_size, f.opts);
  CHECK(semi.theta == ref.theta);
  CHECK(semi.theta != start.theta);
}

TEST_CASE("semi_train runs the pseudo-label schedule deterministically") {
  const Fixture f = small_fixture(2, 3);
  const auto start = SegNet<float>::initialized(f.arch, RngStream(6));
  SemiConfig cfg;
  cfg.T = 2;
  cfg.epochs = 5;
  cfg.batch_size = 2;

  auto run = [&](std::vector<int>& checkpoints, std::vector<EpochRecord>& log) {
    auto net = start;
    PseudoLabelStore store = init_pseudo(start, f.unlabeled);
    TrainOptions opts = f.opts;
    opts.on_epoch = [&](const EpochRecord& r) { log.push_back(r); };
    opts.on_checkpoint = [&](int e, const SegNet<float>&, const PseudoLabelStore&) { checkpoints.push_back(e); };
    semi_train(net, f.labeled, f.unlabeled, store, cfg, opts);
    CHECK(store.update_count == 2);
    CHECK(store.last_update_epoch == 4);
    return std::make_pair(net, store);
  };
  std::vector<int> c1, c2;
  std::vector<EpochRecord> l1, l2;
  const auto [n1, s1] = run(c1, l1);
  const auto [n2, s2] = run(c2, l2);
  CHECK(c1 == std::vector<int>{2, 4});
  CHECK(n1.theta == n2.theta);
  for (std::size_t i = 0; i < s1.entries.size(); ++i)
    for (std::size_t c = 0; c < 3; ++c) CHECK((s1.entries[i].planes[c] == s2.entries[i].planes[c]).all());
  REQUIRE(l1.size() == 5);
  for (std::size_t e = 0; e < 5; ++e) {
    CHECK(l1[e].epoch == static_cast<int>(e) + 1);
    CHECK(l1[e].pseudo_update == ((e + 1) % 2 == 0));
    CHECK(std::isfinite(l1[e].total_loss));
    CHECK(l1[e].total_loss == l2[e].total_loss);
  }
}

TEST_CASE("pseudo-labels act as constant targets between refreshes") {
  const Fixture f = small_fixture(2, 2);
  auto net = SegNet<float>::initialized(f.arch, RngStream(8));
  PseudoLabelStore store = init_pseudo(net, f.unlabeled);
  const PseudoLabelStore before = store;
  SemiConfig cfg;
  cfg.T = 10;
  cfg.epochs = 3;
  cfg.batch_size = 2;
  semi_train(net, f.labeled, f.unlabeled, store, cfg, f.opts);
  CHECK(store.update_count == 0);
  for (std::size_t i = 0; i < store.entries.size(); ++i)
    for (std::size_t c = 0; c < 3; ++c) CHECK((store.entries[i].planes[c] == before.entries[i].planes[c]).all());

  PseudoLabelStore wrong;
  CHECK_THROWS_AS(semi_train(net, f.labeled, f.unlabeled, wrong, cfg, f.opts), ShapeError);
}
