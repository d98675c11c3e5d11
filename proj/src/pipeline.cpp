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

#include "mmcs/pipeline.hpp"

#include "mmcs/augment.hpp"
#include "mmcs/diameter.hpp"
#include "mmcs/error.hpp"
#include "mmcs/flows.hpp"
#include "mmcs/parallel.hpp"
#include "mmcs/semi.hpp"

#include <json.hpp>

#include <cstdio>
#include <fstream>
#include <functional>
#include <map>
#include <memory>
#include <optional>
#include <set>

namespace mmcs {

namespace fs = std::filesystem;
using nlohmann::ordered_json;

namespace {

const std::vector<std::string> kSynthSections{"run", "synth"};
const std::vector<std::string> kTrainSections{"run", "net", "sgd", "semi", "augment", "diameter", "data"};
const std::vector<std::string> kInferSections{"augment", "flows", "diameter", "data"};

void make_dir(const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw IoError("cannot create directory " + dir.string() + ": " + ec.message());
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path.string());
  out << text;
  if (!out) throw IoError("failed writing " + path.string());
}

void echo_config(const RunConfig& cfg, const std::vector<std::string>& sections, const fs::path& out) {
  make_dir(out);
  write_text(out / "config.resolved", format_config(cfg, sections));
}

std::string fmt_double(double v) { return ordered_json(v).dump(); }

double parse_meta_double(const Checkpoint& ckpt, const std::string& key) {
  const auto it = ckpt.metadata.find(key);
  if (it == ckpt.metadata.end()) throw DataError("checkpoint lacks metadata '" + key + "'");
  try {
    std::size_t used = 0;
    const double v = std::stod(it->second, &used);
    if (used != it->second.size()) throw std::invalid_argument(key);
    return v;
  } catch (const std::logic_error&) {
    throw DataError("checkpoint metadata '" + key + "' is not a number: " + it->second);
  }
}

bool meta_flag(const Checkpoint& ckpt, const std::string& key, bool fallback) {
  const auto it = ckpt.metadata.find(key);
  return it == ckpt.metadata.end() ? fallback : it->second == "true";
}

ImageTensor apply_channel_policy(ImageTensor image, bool nucleus_channel) {
  if (!nucleus_channel) image[1].setZero();
  return image;
}

std::vector<ImageTensor> channel_policy(std::vector<ImageTensor> images, bool nucleus_channel) {
  for (auto& im : images) im = apply_channel_policy(std::move(im), nucleus_channel);
  return images;
}

ordered_json epoch_json(const EpochRecord& r, std::optional<double> val_f1) {
  ordered_json j;
  j["epoch"] = r.epoch;
  j["lr"] = r.lr;
  j["labeled_loss"] = r.labeled_loss ? ordered_json(*r.labeled_loss) : ordered_json(nullptr);
  j["unlabeled_loss"] = r.unlabeled_loss ? ordered_json(*r.unlabeled_loss) : ordered_json(nullptr);
  j["total_loss"] = r.total_loss;
  j["pseudo_update"] = r.pseudo_update;
  if (val_f1) j["val_f1"] = *val_f1;
  return j;
}

/// Appends one JSON object per epoch, flushing so partial runs leave a usable log.
/// With a validator, every `every`-th epoch (counted from 1) also records val_f1.
class EpochLog {
 public:
  using Validator = std::function<double()>;

  EpochLog(const fs::path& path, int epoch_offset, int every = 0, Validator validate = {})
      : out_(path, std::ios::binary), offset_(epoch_offset), every_(every), validate_(std::move(validate)) {
    if (!out_) throw IoError("cannot write " + path.string());
  }
  void operator()(const EpochRecord& r) {
    if (!std::isfinite(r.total_loss)) throw NumericError("training loss became non-finite at epoch " + std::to_string(r.epoch));
    std::optional<double> val;
    if (validate_ && every_ > 0 && (r.epoch + offset_) % every_ == 0) val = validate_();
    out_ << epoch_json(r, val).dump() << '\n';
    out_.flush();
  }

 private:
  std::ofstream out_;
  int offset_;
  int every_;
  Validator validate_;
};

/// Pooled F1 of `net` on the manifest's eval split, or an empty validator when
/// validation is off or there is nothing to score.
EpochLog::Validator eval_split_validator(const RunConfig& cfg, const DatasetManifest& manifest,
                                         const SegNet<float>& net, double dataset_diameter) {
  if (cfg.semi.eval_every == 0 || manifest.of(Split::Eval).empty()) return {};
  auto split = std::make_shared<SplitData>(load_split(manifest, Split::Eval));
  RunConfig infer = cfg;
  infer.diameter = dataset_diameter;
  return [split, infer, &net] {
    std::vector<InstanceMask> preds(split->images.size());
    parallel_for(preds.size(), [&](std::size_t i) {
      preds[i] = segment_image(net, split->images[i], infer.target_diameter, infer);
    });
    std::vector<std::pair<const InstanceMask*, const InstanceMask*>> pairs;
    for (std::size_t i = 0; i < preds.size(); ++i) pairs.emplace_back(&preds[i], &split->masks[i]);
    return dataset_f1(pairs).f1;
  };
}

std::map<std::string, std::string> training_metadata(const RunConfig& cfg, const TrainingData& data,
                                                     const std::string& stage) {
  return {{"stage", stage},
          {"mean_diameter", fmt_double(cfg.target_diameter)},
          {"dataset_mean_diameter", fmt_double(data.stats.mean)},
          {"train_scale", fmt_double(data.scale)},
          {"nucleus_channel", cfg.nucleus_channel ? "true" : "false"},
          {"seed", std::to_string(cfg.seed)},
          {"tile", std::to_string(cfg.augment.tile)}};
}

TrainOptions train_options(const RunConfig& cfg) {
  TrainOptions o;
  o.sgd = cfg.sgd;
  o.augment = cfg.augment;
  o.rng = RngStream(cfg.seed);
  return o;
}

}  // namespace

SplitData load_split(const DatasetManifest& manifest, Split split) {
  const auto records = manifest.of(split);
  SplitData d;
  d.names.resize(records.size());
  d.images.resize(records.size());
  if (split != Split::Unlabeled) d.masks.resize(records.size());
  parallel_for(records.size(), [&](std::size_t i) {
    const auto* r = records[i];
    d.names[i] = fs::path(r->image_path).stem().string();
    d.images[i] = load_image(manifest.resolve(r->image_path));
    if (split != Split::Unlabeled) {
      d.masks[i] = load_mask(manifest.resolve(*r->mask_path));
      if (d.masks[i].height() != d.images[i].height() || d.masks[i].width() != d.images[i].width())
        throw ShapeError("mask " + *r->mask_path + " does not match its image dims");
    }
  });
  return d;
}

InstanceMask segment_image(const SegNet<float>& net, const ImageTensor& image, double model_diameter,
                           const RunConfig& cfg) {
  const ImageTensor prepared = percentile_normalize(apply_channel_policy(image, cfg.nucleus_channel));
  const RescaledImage rescaled = inference_rescale(prepared, cfg.diameter, model_diameter);
  const int d = net.arch().divisor();
  const int tile = (cfg.augment.tile + d - 1) / d * d;
  const TiledImage tiled = tile_grid(rescaled.image, tile, cfg.tile_overlap);
  std::vector<FlowMap> outputs(tiled.tiles.size());
  for (std::size_t i = 0; i < tiled.tiles.size(); ++i) outputs[i] = predict_full(net, tiled.tiles[i]);
  const FlowMap raw = reassemble(outputs, tiled.grid);
  const InstanceMask small = flow_to_mask(decode_prediction(raw, cfg.flows), cfg.flows);
  if (small.height() == image.height() && small.width() == image.width()) return small;
  return canonicalize_mask(resize_nearest(small, image.height(), image.width()));
}

RasterImage render_overlay(const ImageTensor& image, const InstanceMask& mask) {
  static constexpr std::uint8_t palette[8][3] = {{230, 25, 75},  {60, 180, 75},  {255, 225, 25}, {0, 130, 200},
                                                 {245, 130, 48}, {145, 30, 180}, {70, 240, 240}, {240, 50, 230}};
  const ImageTensor norm = percentile_normalize(image);
  RasterImage out;
  out.height = image.height();
  out.width = image.width();
  out.channels = 3;
  out.bit_depth = 8;
  out.samples.resize(static_cast<std::size_t>(out.height) * out.width * 3);
  for (int r = 0; r < out.height; ++r)
    for (int c = 0; c < out.width; ++c) {
      const auto gray = static_cast<std::uint16_t>(std::lround(norm[0](r, c) * 255.0f));
      const std::int32_t l = mask.labels(r, c);
      bool edge = false;
      if (l > 0) {
        const int dr[4] = {-1, 1, 0, 0};
        const int dc[4] = {0, 0, -1, 1};
        for (int k = 0; k < 4 && !edge; ++k) {
          const int rr = r + dr[k];
          const int cc = c + dc[k];
          edge = rr < 0 || cc < 0 || rr >= out.height || cc >= out.width || mask.labels(rr, cc) != l;
        }
      }
      const std::size_t base = (static_cast<std::size_t>(r) * out.width + c) * 3;
      for (int ch = 0; ch < 3; ++ch) out.samples[base + ch] = edge ? palette[(l - 1) % 8][ch] : gray;
    }
  return out;
}

// ---------------------------------------------------------------------------

void cmd_synth(const RunConfig& cfg, const fs::path& out) {
  cfg.validate();
  echo_config(cfg, kSynthSections, out);
  make_dir(out / "images");
  make_dir(out / "masks");
  const auto samples = synth_blobs(cfg.synth, RngStream(cfg.seed).substream(StreamTag::Synth), cfg.split.n);

  DatasetManifest manifest;
  manifest.base_dir = out;
  std::vector<std::pair<Split, int>> plan;
  for (int i = 0; i < cfg.split.labeled; ++i) plan.emplace_back(Split::Labeled, i);
  for (int i = 0; i < cfg.split.unlabeled; ++i) plan.emplace_back(Split::Unlabeled, i);
  for (int i = 0; i < cfg.split.eval; ++i) plan.emplace_back(Split::Eval, i);
  manifest.records.resize(plan.size());
  parallel_for(plan.size(), [&](std::size_t k) {
    const auto [split, i] = plan[k];
    char stem[64];
    std::snprintf(stem, sizeof stem, "%s_%03d", split_name(split), i);
    const auto& s = samples[k];
    // Stored as RGB: red empty, green cytoplasm, blue nucleus.
    ImageTensor rgb(s.image.height(), s.image.width(), 3);
    rgb[1] = s.image[0];
    rgb[2] = s.image[1];
    ManifestRecord rec;
    rec.split = split;
    rec.image_path = std::string("images/") + stem + ".png";
    write_raster(out / rec.image_path, tensor_to_raster(rgb, 8));
    if (split != Split::Unlabeled) {
      rec.mask_path = std::string("masks/") + stem + ".png";
      save_mask(out / *rec.mask_path, s.mask);
    }
    manifest.records[k] = std::move(rec);
  });
  write_manifest(out / "manifest.tsv", manifest);
}

void cmd_pretrain(const RunConfig& cfg, const fs::path& manifest_path, const fs::path& out) {
  cfg.validate();
  echo_config(cfg, kTrainSections, out);
  const DatasetManifest manifest = load_manifest(manifest_path);
  const SplitData labeled = load_split(manifest, Split::Labeled);
  if (labeled.images.empty()) throw DataError("manifest has no labeled records");
  const TrainingData data =
      prepare_training_data(channel_policy(labeled.images, cfg.nucleus_channel), labeled.masks, {}, cfg.target_diameter);

  SegNet<float> net = SegNet<float>::initialized(cfg.net, RngStream(cfg.seed).substream(StreamTag::Init));
  EpochLog log(out / "pretrain_log.jsonl", 1, cfg.semi.eval_every,
               eval_split_validator(cfg, manifest, net, data.stats.mean));
  TrainOptions opts = train_options(cfg);
  opts.on_epoch = std::ref(log);
  pretrain(net, data.labeled, cfg.semi.pretrain_epochs, opts);
  save_checkpoint(out / "pretrain.ckpt", net, training_metadata(cfg, data, "pretrain"));
}

void cmd_semitrain(RunConfig cfg, const fs::path& manifest_path, const fs::path& init_checkpoint, const fs::path& out) {
  const Checkpoint init = load_checkpoint(init_checkpoint);
  // The network shape and data preparation must match the pretrained model.
  cfg.net = init.net.arch();
  cfg.target_diameter = parse_meta_double(init, "mean_diameter");
  cfg.nucleus_channel = meta_flag(init, "nucleus_channel", true);
  cfg.validate();
  echo_config(cfg, kTrainSections, out);

  const DatasetManifest manifest = load_manifest(manifest_path);
  const SplitData labeled = load_split(manifest, Split::Labeled);
  const SplitData unlabeled = load_split(manifest, Split::Unlabeled);
  if (unlabeled.images.empty()) throw DataError("manifest has no unlabeled records");
  if (labeled.images.empty()) throw DataError("manifest has no labeled records");
  const TrainingData data = prepare_training_data(channel_policy(labeled.images, cfg.nucleus_channel), labeled.masks,
                                                  channel_policy(unlabeled.images, cfg.nucleus_channel),
                                                  cfg.target_diameter);

  SegNet<float> net = init.net;
  PseudoLabelStore store = init_pseudo(net, data.unlabeled);
  make_dir(out / "checkpoints");
  EpochLog log(out / "semi_log.jsonl", 0, cfg.semi.eval_every,
               eval_split_validator(cfg, manifest, net, data.stats.mean));
  TrainOptions opts = train_options(cfg);
  opts.on_epoch = std::ref(log);
  const auto meta = training_metadata(cfg, data, "semi");
  opts.on_checkpoint = [&](int epoch, const SegNet<float>& current, const PseudoLabelStore& s) {
    auto m = meta;
    m["epoch"] = std::to_string(epoch);
    m["pseudo_updates"] = std::to_string(s.update_count);
    char name[64];
    std::snprintf(name, sizeof name, "epoch_%04d.ckpt", epoch);
    save_checkpoint(out / "checkpoints" / name, current, m);
  };
  SemiConfig semi = cfg.semi;
  semi.batch_size = cfg.sgd.batch_size;
  semi_train(net, data.labeled, data.unlabeled, store, semi, opts);
  auto final_meta = meta;
  final_meta["epoch"] = std::to_string(semi.epochs);
  final_meta["pseudo_updates"] = std::to_string(store.update_count);
  save_checkpoint(out / "semi.ckpt", net, final_meta);
}

void cmd_infer(RunConfig cfg, const fs::path& checkpoint, const std::vector<fs::path>& images, const fs::path& out) {
  if (images.empty()) throw UsageError("no input images");
  const Checkpoint ckpt = load_checkpoint(checkpoint);
  const double model_diameter = parse_meta_double(ckpt, "mean_diameter");
  cfg.nucleus_channel = meta_flag(ckpt, "nucleus_channel", true);
  cfg.net = ckpt.net.arch();
  cfg.flows.validate();
  if (!(cfg.diameter > 0.0)) throw UsageError("diameter must be > 0");
  if (cfg.tile_overlap < 0.0 || cfg.tile_overlap > 0.5) throw UsageError("tile_overlap must be in [0, 0.5]");
  echo_config(cfg, kInferSections, out);
  make_dir(out / "masks");
  make_dir(out / "overlays");
  std::set<std::string> stems;
  for (const auto& p : images)
    if (!stems.insert(p.stem().string()).second) throw UsageError("duplicate image name " + p.stem().string());
  parallel_for(images.size(), [&](std::size_t i) {
    const ImageTensor image = load_image(images[i]);
    const InstanceMask mask = segment_image(ckpt.net, image, model_diameter, cfg);
    const std::string name = images[i].stem().string() + ".png";
    save_mask(out / "masks" / name, mask);
    write_raster(out / "overlays" / name, render_overlay(image, mask));
  });
}

MatchResult cmd_eval(const fs::path& pred_dir, const fs::path& gt_manifest, const fs::path& out) {
  const DatasetManifest manifest = load_manifest(gt_manifest);
  const auto records = manifest.of(Split::Eval);
  if (records.empty()) throw DataError("manifest has no eval records");
  std::vector<std::string> missing;
  for (const auto* r : records) {
    const fs::path p = pred_dir / (fs::path(r->image_path).stem().string() + ".png");
    if (!fs::exists(p)) missing.push_back(p.string());
  }
  if (!missing.empty()) {
    std::string list;
    for (const auto& m : missing) list += "\n  " + m;
    throw DataError("missing predictions:" + list);
  }
  std::vector<InstanceMask> preds(records.size()), gts(records.size());
  parallel_for(records.size(), [&](std::size_t i) {
    preds[i] = load_mask(pred_dir / (fs::path(records[i]->image_path).stem().string() + ".png"));
    gts[i] = load_mask(manifest.resolve(*records[i]->mask_path));
  });
  ordered_json report;
  report["threshold"] = 0.5;
  report["per_image"] = ordered_json::array();
  std::vector<std::pair<const InstanceMask*, const InstanceMask*>> pairs;
  double f1_sum = 0.0;
  for (std::size_t i = 0; i < records.size(); ++i) {
    const MatchResult r = f1_at_iou(preds[i], gts[i]);
    f1_sum += r.f1;
    report["per_image"].push_back({{"image", fs::path(records[i]->image_path).stem().string()},
                                   {"tp", r.tp},
                                   {"fp", r.fp},
                                   {"fn", r.fn},
                                   {"f1", r.f1}});
    pairs.emplace_back(&preds[i], &gts[i]);
  }
  const MatchResult pooled = dataset_f1(pairs);
  report["pooled"] = {{"tp", pooled.tp}, {"fp", pooled.fp}, {"fn", pooled.fn}, {"f1", pooled.f1}};
  report["mean_per_image_f1"] = f1_sum / static_cast<double>(records.size());
  make_dir(out);
  write_text(out / "eval_report.json", report.dump(2) + "\n");
  return pooled;
}

}  // namespace mmcs
