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
#include "mmcs/layers.hpp"
#include "mmcs/model.hpp"
#include "mmcs/parallel.hpp"
#include "test_support.hpp"

#include <cmath>
#include <fstream>
#include <functional>
#include <limits>
#include <random>

using namespace mmcs;
using mmcs::testing::TempDir;

namespace {

using Vec = VectorT<double>;
using FM = FeatureMap<double>;

FM random_map(int ch, int b, int h, int w, std::mt19937& gen) {
  std::normal_distribution<double> n;
  FM x(ch, b, h, w);
  for (Eigen::Index i = 0; i < x.data.size(); ++i) x.data.data()[i] = n(gen);
  return x;
}

double relative_error(double analytic, double numeric) {
  const double denom = std::max({std::abs(analytic), std::abs(numeric), 1e-8});
  return std::abs(analytic - numeric) / denom;
}

// Central difference of f at every coordinate of v (or a sample of them).
double max_fd_error(Vec& v, const Vec& analytic, const std::function<double()>& f, int stride = 1) {
  const double h = 1e-5;
  double worst = 0.0;
  for (Eigen::Index i = 0; i < v.size(); i += stride) {
    const double keep = v[i];
    v[i] = keep + h;
    const double up = f();
    v[i] = keep - h;
    const double down = f();
    v[i] = keep;
    worst = std::max(worst, relative_error(analytic[i], (up - down) / (2 * h)));
  }
  return worst;
}

Vec as_vec(MatrixT<double>& m) { return Eigen::Map<Vec>(m.data(), m.size()); }

struct TinyData {
  std::vector<ImageTensor> images;
  std::vector<FlowMap> targets;
};

TinyData tiny_data(int n, int size, std::uint64_t seed) {
  SynthSpec spec;
  spec.image_size = size;
  spec.count_min = 1;
  spec.count_max = 2;
  spec.radius_min = 3;
  spec.radius_max = 5;
  spec.min_gap = 1;
  TinyData d;
  for (auto& s : synth_blobs(spec, RngStream(seed), n)) {
    d.images.push_back(s.image);
    d.targets.push_back(mask_to_flow(s.mask));
  }
  return d;
}

}  // namespace

TEST_CASE("zero-initialized net emits zeros; identical tiles give identical outputs") {
  const auto net = SegNet<float>::zeros(NetArch{});
  ImageTensor img(32, 32, 2, 0.8f);
  const FlowMap out = predict_full(net, img);
  for (const auto& p : out.planes) CHECK((p == 0.0f).all());

  const auto rnet = SegNet<float>::initialized(NetArch{}, RngStream(1));
  ImageTensor tile(32, 32, 2);
  tile[0].setRandom();
  const auto outs = forward(rnet, {tile, tile});
  REQUIRE(outs.size() == 2);
  CHECK(outs[0] == outs[1]);
}

TEST_CASE("forward shape guards") {
  const auto net = SegNet<float>::initialized(NetArch{}, RngStream(1));
  CHECK_THROWS_AS(forward(net, {ImageTensor(113, 113, 2)}), ShapeError);
  CHECK_THROWS_AS(forward(net, {ImageTensor(32, 32, 3)}), ShapeError);
  CHECK(predict_full(net, ImageTensor(37, 21, 2)).height() == 37);
}

TEST_CASE("loss examples") {
  // Perfect prediction of 5x flows with saturated logits.
  FlowMap target(3, 3);
  target.flow_y().setConstant(0.6f);
  target.flow_x().setConstant(-0.8f);
  target.cell_logit() << 1, 0, 1, 0, 1, 1, 0, 0, 1;
  FlowMap pred(3, 3);
  pred.flow_y() = 5.0f * target.flow_y();
  pred.flow_x() = 5.0f * target.flow_x();
  pred.cell_logit() = (target.cell_logit() * 40.0f) - 20.0f;
  CHECK(flow_loss(pred, target).total() < 1e-6);

  // Zero prediction against an all-background target: BCE at logit 0.
  const LossTerms z = flow_loss(FlowMap(4, 4), FlowMap(4, 4));
  CHECK(z.bce == doctest::Approx(std::log(2.0)).epsilon(1e-12));
  CHECK(z.mse == 0.0);

  // One pixel, unit flows in both components: (5 * 1)^2 per entry.
  FlowMap one(1, 1);
  one.flow_y()(0, 0) = 1.0f;
  one.flow_x()(0, 0) = 1.0f;
  one.cell_logit()(0, 0) = 1.0f;
  CHECK(flow_loss(FlowMap(1, 1), one).mse == doctest::Approx(25.0));
  // A unit vector (0.6, 0.8): (9 + 16) / 2.
  one.flow_y()(0, 0) = 0.6f;
  one.flow_x()(0, 0) = 0.8f;
  CHECK(flow_loss(FlowMap(1, 1), one).mse == doctest::Approx(12.5).epsilon(1e-6));
  CHECK_THROWS_AS(flow_loss(FlowMap(2, 2), FlowMap(2, 3)), ShapeError);
}

TEST_CASE("layer gradients match finite differences") {
  std::mt19937 gen(5);
  std::normal_distribution<double> n;

  SUBCASE("convolution 3x3 and 1x1") {
    for (int kernel : {3, 1}) {
      const ConvSpec s{3, 4, kernel, 0};
      Vec theta(s.param_count());
      for (auto& t : theta) t = n(gen);
      FM x = random_map(3, 2, 5, 6, gen);
      const FM r = random_map(4, 2, 5, 6, gen);
      auto objective = [&] { return (layers::conv_forward(s, theta, x).data.array() * r.data.array()).sum(); };
      Vec grad = Vec::Zero(theta.size());
      FM dx = layers::conv_backward(s, theta, x, r, grad);
      CHECK(max_fd_error(theta, grad, objective) < 1e-6);
      Eigen::Map<Vec> xv(x.data.data(), x.data.size());
      Vec xs = xv;
      auto objective_x = [&] {
        xv = xs;
        return objective();
      };
      CHECK(max_fd_error(xs, as_vec(dx.data), objective_x) < 1e-6);
    }
  }

  SUBCASE("relu, maxpool and upsample") {
    FM x = random_map(2, 1, 6, 4, gen);
    const FM r_pool = random_map(2, 1, 3, 2, gen);
    const FM r_up = random_map(2, 1, 12, 8, gen);
    Eigen::Map<Vec> xv(x.data.data(), x.data.size());
    Vec xs = xv;

    auto relu_obj = [&] {
      xv = xs;
      FM y = x;
      layers::relu_inplace(y);
      return (y.data.array() * x.data.array()).sum() * 0.0 + (y.data.array() * r_up.data.leftCols(24).array()).sum();
    };
    FM y = x;
    layers::relu_inplace(y);
    FM dy;
    dy.batch = 1;
    dy.height = 6;
    dy.width = 4;
    dy.data = r_up.data.leftCols(24);
    layers::relu_backward_inplace(y, dy);
    CHECK(max_fd_error(xs, as_vec(dy.data), relu_obj) < 1e-6);

    std::vector<Eigen::Index> argmax;
    layers::maxpool_forward(x, &argmax);
    FM dpool = layers::maxpool_backward(x, argmax, r_pool);
    auto pool_obj = [&] {
      xv = xs;
      return (layers::maxpool_forward<double>(x, nullptr).data.array() * r_pool.data.array()).sum();
    };
    CHECK(max_fd_error(xs, as_vec(dpool.data), pool_obj) < 1e-6);

    FM dup = layers::upsample_backward(r_up);
    auto up_obj = [&] {
      xv = xs;
      return (layers::upsample_forward(x).data.array() * r_up.data.array()).sum();
    };
    CHECK(max_fd_error(xs, as_vec(dup.data), up_obj) < 1e-6);
  }
}

TEST_CASE("network gradient matches finite differences on random probes") {
  NetArch arch;
  arch.levels = 2;
  arch.base_width = 4;
  const auto net = SegNet<double>::initialized(arch, RngStream(8));
  REQUIRE(net.num_parameters() <= 5000);
  const TinyData d = tiny_data(2, 16, 3);
  const auto lg = backward(net, d.images, d.targets);
  auto probe = net;
  std::mt19937 gen(17);
  double worst = 0.0;
  for (int k = 0; k < 100; ++k) {
    const auto i = static_cast<Eigen::Index>(gen() % static_cast<unsigned>(net.num_parameters()));
    const double h = 1e-4;
    probe.theta = net.theta;
    probe.theta[i] += h;
    const double up = backward(probe, d.images, d.targets).loss;
    probe.theta[i] -= 2 * h;
    const double down = backward(probe, d.images, d.targets).loss;
    worst = std::max(worst, relative_error(lg.grad[i], (up - down) / (2 * h)));
  }
  CHECK(worst < 1e-4);
}

TEST_CASE("stationary point and batch-mean invariance") {
  NetArch arch;
  arch.levels = 2;
  arch.base_width = 4;
  const auto net = SegNet<double>::initialized(arch, RngStream(2));
  const TinyData d = tiny_data(2, 16, 4);

  // Targets equal to the net's own output (soft occupancy) minimize the loss.
  std::vector<GradientJob<double>> jobs;
  for (const auto& img : d.images) {
    const FM out = net.forward(to_feature_map<double>(img));
    MatrixT<double> t = out.data;
    for (Eigen::Index j = 0; j < t.cols(); ++j) t(2, j) = sigmoid(t(2, j));
    jobs.push_back({&img, t, 0.5});
  }
  CHECK(weighted_backward(net, jobs).grad.norm() < 1e-8);

  const auto single = backward(net, d.images, d.targets);
  std::vector<ImageTensor> imgs2 = d.images;
  std::vector<FlowMap> tg2 = d.targets;
  imgs2.insert(imgs2.end(), d.images.begin(), d.images.end());
  tg2.insert(tg2.end(), d.targets.begin(), d.targets.end());
  const auto doubled = backward(net, imgs2, tg2);
  CHECK((single.grad - doubled.grad).cwiseAbs().maxCoeff() < 1e-12);
  CHECK(std::abs(single.loss - doubled.loss) < 1e-12);
}

TEST_CASE("gradients do not depend on the worker count") {
  const auto net = SegNet<float>::initialized(NetArch{}, RngStream(3));
  const TinyData d = tiny_data(5, 32, 6);
  set_worker_count(1);
  const auto a = backward(net, d.images, d.targets);
  set_worker_count(3);
  const auto b = backward(net, d.images, d.targets);
  set_worker_count(0);
  CHECK(a.grad == b.grad);
  CHECK(a.loss == b.loss);
}

TEST_CASE("sgd step examples") {
  SgdConfig cfg;
  cfg.momentum = 0.0;
  cfg.weight_decay = 0.0;
  VectorT<double> theta = VectorT<double>::Zero(1);
  const VectorT<double> g = VectorT<double>::Ones(1);
  SgdOptimizer<double> plain(1);
  plain.step_with_lr(theta, g, cfg, 0.1);
  CHECK(theta[0] == doctest::Approx(-0.1).epsilon(1e-15));

  cfg.momentum = 0.9;
  theta.setZero();
  SgdOptimizer<double> mom(1);
  mom.step_with_lr(theta, g, cfg, 0.1);
  mom.step_with_lr(theta, g, cfg, 0.1);
  CHECK(theta[0] == doctest::Approx(-0.29).epsilon(1e-15));

  VectorT<double> nan_grad(1);
  nan_grad[0] = std::numeric_limits<double>::quiet_NaN();
  const double before = theta[0];
  CHECK_THROWS_AS(mom.step_with_lr(theta, nan_grad, cfg, 0.1), NumericError);
  CHECK(theta[0] == before);

  // Weight decay folds lambda * theta into the velocity.
  cfg.momentum = 0.0;
  cfg.weight_decay = 0.5;
  theta[0] = 2.0;
  SgdOptimizer<double> wd(1);
  wd.step_with_lr(theta, VectorT<double>::Zero(1), cfg, 0.1);
  CHECK(theta[0] == doctest::Approx(2.0 - 0.1 * 1.0).epsilon(1e-15));

  // Gradients above the clip norm are rescaled to it.
  cfg.weight_decay = 0.0;
  cfg.clip_norm = 5.0;
  VectorT<double> big(2);
  big << 30.0, 40.0;
  VectorT<double> t2 = VectorT<double>::Zero(2);
  SgdOptimizer<double> clip(2);
  clip.step_with_lr(t2, big, cfg, 1.0);
  CHECK(t2[0] == doctest::Approx(-3.0));
  CHECK(t2[1] == doctest::Approx(-4.0));
}

TEST_CASE("lr_at breakpoints") {
  SgdConfig cfg;
  cfg.anneal_start_epoch = 1500;
  const double lr0 = cfg.lr0;
  CHECK(lr_at(0, cfg) == lr0 * 1 / 10);
  CHECK(lr_at(4, cfg) == 0.05);
  CHECK(lr_at(9, cfg) == lr0 * 10 / 10);
  CHECK(lr_at(10, cfg) == lr0);
  CHECK(lr_at(1499, cfg) == lr0);
  CHECK(lr_at(1500, cfg) == lr0 / 2);
  CHECK(lr_at(1599, cfg) == lr0 / 2);
  CHECK(lr_at(1600, cfg) == lr0 / 4);
  CHECK(lr_at(1700, cfg) == 0.0125);
  CHECK(lr_at(2100, cfg) == 0.0016);
  CHECK(lr_at(100000, cfg) == 0.0016);
  cfg.anneal_start_epoch.reset();
  CHECK(lr_at(100000, cfg) == lr0);
  CHECK_THROWS_AS(lr_at(-1, cfg), UsageError);
}

TEST_CASE("checkpoint round trip and corruption") {
  TempDir dir;
  NetArch arch;
  arch.base_width = 8;
  const auto net = SegNet<float>::initialized(arch, RngStream(4));
  save_checkpoint(dir / "a.ckpt", net, {{"mean_diameter", "30"}, {"note", "x=y"}});
  const Checkpoint back = load_checkpoint(dir / "a.ckpt");
  CHECK(back.net.arch() == arch);
  CHECK(back.net.theta == net.theta);
  CHECK(back.metadata.at("mean_diameter") == "30");
  CHECK(back.metadata.at("note") == "x=y");

  std::ifstream in(dir / "a.ckpt", std::ios::binary);
  std::string bytes((std::istreambuf_iterator<char>(in)), {});
  std::ofstream(dir / "t.ckpt", std::ios::binary) << bytes.substr(0, bytes.size() / 2);
  CHECK_THROWS_AS(load_checkpoint(dir / "t.ckpt"), CorruptionError);

  std::string flipped = bytes;
  flipped[100] = static_cast<char>(flipped[100] ^ 0x40);
  std::ofstream(dir / "f.ckpt", std::ios::binary) << flipped;
  CHECK_THROWS_WITH_AS(load_checkpoint(dir / "f.ckpt"), doctest::Contains("checksum"), CorruptionError);

  std::string version = bytes;
  version[8] = 9;  // first byte of the version field after the magic
  std::ofstream(dir / "v.ckpt", std::ios::binary) << version;
  CHECK_THROWS_WITH_AS(load_checkpoint(dir / "v.ckpt"), doctest::Contains("version"), CorruptionError);
  CHECK_THROWS_AS(load_checkpoint(dir / "absent.ckpt"), IoError);
}

TEST_CASE("training on one fixed batch decreases the smoothed loss") {
  NetArch arch;
  arch.base_width = 8;
  auto net = SegNet<float>::initialized(arch, RngStream(12));
  const TinyData d = tiny_data(4, 32, 9);
  SgdConfig cfg;
  // Constant lr spikes once the loss is small; halve every 50 epochs.
  cfg.anneal_start_epoch = 50;
  cfg.anneal_period = 50;
  SgdOptimizer<float> opt(net.num_parameters());
  std::vector<double> window_means;
  double acc = 0.0;
  for (int e = 0; e < 200; ++e) {
    const auto lg = backward(net, d.images, d.targets);
    acc += lg.loss;
    if (e % 10 == 9) {
      window_means.push_back(acc / 10);
      acc = 0.0;
    }
    opt.step(net.theta, lg.grad, cfg, e);
  }
  for (std::size_t i = 1; i < window_means.size(); ++i) CHECK(window_means[i] < window_means[i - 1]);
}

TEST_CASE("forward is translation equivariant away from borders") {
  const auto net = SegNet<float>::initialized(NetArch{}, RngStream(5));
  ImageTensor img(96, 96, 2);
  std::mt19937 gen(1);
  std::uniform_real_distribution<float> u(0, 1);
  for (auto& ch : img.channels)
    for (Eigen::Index i = 0; i < ch.size(); ++i) ch.data()[i] = u(gen);
  const int shift = 8;  // a multiple of the pooling divisor
  ImageTensor shifted(96, 96, 2);
  for (int c = 0; c < 2; ++c) shifted[c].bottomRightCorner(96 - shift, 96 - shift) = img[c].topLeftCorner(96 - shift, 96 - shift);
  const FlowMap a = predict_full(net, img);
  const FlowMap b = predict_full(net, shifted);
  for (std::size_t p = 0; p < 3; ++p) {
    const Plane ca = a.planes[p].block(32, 32, 24, 24);
    const Plane cb = b.planes[p].block(32 + shift, 32 + shift, 24, 24);
    CHECK((ca - cb).abs().maxCoeff() <= 1e-4f * (1.0f + ca.abs().maxCoeff()));
  }
}
