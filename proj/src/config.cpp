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

#include "mmcs/config.hpp"

#include "mmcs/error.hpp"

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>

#include <algorithm>
#include <charconv>
#include <fstream>
#include <sstream>

namespace mmcs {
namespace {

std::string fmt(double v) {
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof buf, v);
  return {buf, res.ptr};
}
std::string fmt(long long v) { return std::to_string(v); }
std::string fmt(bool v) { return v ? "true" : "false"; }

template <typename T>
T parse_number(const std::string& key, const std::string& text) {
  T v{};
  const char* end = text.data() + text.size();
  const auto res = std::from_chars(text.data(), end, v);
  if (res.ec != std::errc() || res.ptr != end) throw UsageError("invalid value '" + text + "' for " + key);
  return v;
}

bool parse_bool(const std::string& key, const std::string& text) {
  if (text == "true" || text == "1" || text == "yes" || text == "on") return true;
  if (text == "false" || text == "0" || text == "no" || text == "off") return false;
  throw UsageError("invalid boolean '" + text + "' for " + key);
}

template <typename T, typename Access>
ConfigField number(std::string section, std::string key, std::string help, Access access) {
  ConfigField f{section, key, std::move(help), {}, {}};
  f.get = [access](const RunConfig& c) {
    if constexpr (std::is_floating_point_v<T>)
      return fmt(static_cast<double>(access(c)));
    else
      return fmt(static_cast<long long>(access(c)));
  };
  f.set = [access, name = section + "." + key](RunConfig& c, const std::string& v) {
    access(c) = parse_number<T>(name, v);
  };
  return f;
}

template <typename Access>
ConfigField boolean(std::string section, std::string key, std::string help, Access access) {
  ConfigField f{section, key, std::move(help), {}, {}};
  f.get = [access](const RunConfig& c) { return fmt(static_cast<bool>(access(c))); };
  f.set = [access, name = section + "." + key](RunConfig& c, const std::string& v) { access(c) = parse_bool(name, v); };
  return f;
}

#define MMCS_FIELD(expr) [](auto& c) -> auto& { return expr; }

std::vector<ConfigField> build_fields() {
  std::vector<ConfigField> f;
  f.push_back(number<std::uint64_t>("run", "seed", "root seed for every random stream", MMCS_FIELD(c.seed)));

  f.push_back(number<int>("synth", "n", "total synthetic images", MMCS_FIELD(c.split.n)));
  f.push_back(number<int>("synth", "labeled", "images in the labeled split", MMCS_FIELD(c.split.labeled)));
  f.push_back(number<int>("synth", "unlabeled", "images in the unlabeled split", MMCS_FIELD(c.split.unlabeled)));
  f.push_back(number<int>("synth", "eval", "images in the eval split", MMCS_FIELD(c.split.eval)));
  f.push_back(number<int>("synth", "image_size", "side of each synthetic image", MMCS_FIELD(c.synth.image_size)));
  f.push_back(number<int>("synth", "count_min", "fewest cells per image", MMCS_FIELD(c.synth.count_min)));
  f.push_back(number<int>("synth", "count_max", "most cells per image", MMCS_FIELD(c.synth.count_max)));
  f.push_back(number<double>("synth", "radius_min", "smallest cell semi-major axis", MMCS_FIELD(c.synth.radius_min)));
  f.push_back(number<double>("synth", "radius_max", "largest cell semi-major axis", MMCS_FIELD(c.synth.radius_max)));
  f.push_back(number<double>("synth", "eccentricity_min", "lowest ellipse eccentricity", MMCS_FIELD(c.synth.eccentricity_min)));
  f.push_back(number<double>("synth", "eccentricity_max", "highest ellipse eccentricity", MMCS_FIELD(c.synth.eccentricity_max)));
  f.push_back(number<double>("synth", "nucleus_fraction", "nucleus radius over cell minor axis", MMCS_FIELD(c.synth.nucleus_fraction)));
  f.push_back(number<double>("synth", "noise_sigma", "additive Gaussian noise", MMCS_FIELD(c.synth.noise_sigma)));
  f.push_back(number<double>("synth", "background", "channel 0 background level", MMCS_FIELD(c.synth.background)));
  f.push_back(number<double>("synth", "cyto_min", "lowest cytoplasm intensity", MMCS_FIELD(c.synth.cyto_min)));
  f.push_back(number<double>("synth", "cyto_max", "highest cytoplasm intensity", MMCS_FIELD(c.synth.cyto_max)));
  f.push_back(number<double>("synth", "nucleus_intensity", "nucleus channel intensity", MMCS_FIELD(c.synth.nucleus_intensity)));
  f.push_back(boolean("synth", "touching_pairs", "place cells as touching pairs of discs", MMCS_FIELD(c.synth.touching_pairs)));
  f.push_back(number<int>("synth", "min_gap", "empty pixels between separate cells", MMCS_FIELD(c.synth.min_gap)));
  f.push_back(number<int>("synth", "max_attempts", "placement retry budget per image", MMCS_FIELD(c.synth.max_attempts)));

  f.push_back(number<int>("net", "levels", "resolution levels of the network", MMCS_FIELD(c.net.levels)));
  f.push_back(number<int>("net", "base_width", "channels at full resolution", MMCS_FIELD(c.net.base_width)));

  f.push_back(number<double>("sgd", "lr0", "peak learning rate", MMCS_FIELD(c.sgd.lr0)));
  f.push_back(number<double>("sgd", "momentum", "SGD momentum", MMCS_FIELD(c.sgd.momentum)));
  f.push_back(number<double>("sgd", "weight_decay", "L2 weight decay", MMCS_FIELD(c.sgd.weight_decay)));
  f.push_back(number<int>("sgd", "warmup_epochs", "linear warmup length", MMCS_FIELD(c.sgd.warmup_epochs)));
  {
    ConfigField a{"sgd", "anneal_start", "first annealed epoch (none: no annealing)", {}, {}};
    a.get = [](const RunConfig& c) { return c.sgd.anneal_start_epoch ? fmt(static_cast<long long>(*c.sgd.anneal_start_epoch)) : std::string("none"); };
    a.set = [](RunConfig& c, const std::string& v) {
      if (v == "none" || v.empty())
        c.sgd.anneal_start_epoch.reset();
      else
        c.sgd.anneal_start_epoch = parse_number<int>("sgd.anneal_start", v);
    };
    f.push_back(std::move(a));
  }
  f.push_back(number<int>("sgd", "anneal_period", "epochs between halvings", MMCS_FIELD(c.sgd.anneal_period)));
  f.push_back(number<double>("sgd", "lr_floor", "learning-rate floor", MMCS_FIELD(c.sgd.lr_floor)));
  f.push_back(number<int>("sgd", "batch_size", "minibatch size", MMCS_FIELD(c.sgd.batch_size)));
  f.push_back(number<double>("sgd", "clip_norm", "gradient-norm clip (0 disables)", MMCS_FIELD(c.sgd.clip_norm)));

  f.push_back(number<double>("semi", "w", "weight of the unlabeled loss", MMCS_FIELD(c.semi.w)));
  f.push_back(number<int>("semi", "T", "epochs between pseudo-label updates", MMCS_FIELD(c.semi.T)));
  f.push_back(number<int>("semi", "epochs", "semi-supervised epochs", MMCS_FIELD(c.semi.epochs)));
  f.push_back(number<int>("semi", "pretrain_epochs", "supervised pretraining epochs", MMCS_FIELD(c.semi.pretrain_epochs)));
  f.push_back(number<int>("semi", "eval_every", "score the eval split every N epochs (0: never)",
                          MMCS_FIELD(c.semi.eval_every)));

  f.push_back(number<int>("augment", "tile", "training tile side", MMCS_FIELD(c.augment.tile)));
  f.push_back(boolean("augment", "rotate", "random full-circle rotation", MMCS_FIELD(c.augment.rotate)));
  f.push_back(number<double>("augment", "scale_jitter_lo", "lowest random scale", MMCS_FIELD(c.augment.scale_jitter_lo)));
  f.push_back(number<double>("augment", "scale_jitter_hi", "highest random scale", MMCS_FIELD(c.augment.scale_jitter_hi)));
  f.push_back(number<double>("augment", "translate_fraction", "shift jitter as a fraction of the tile", MMCS_FIELD(c.augment.translate_fraction)));
  f.push_back(boolean("augment", "flip", "random horizontal flip", MMCS_FIELD(c.augment.flip)));

  f.push_back(number<int>("flows", "n_follow_steps", "Euler steps of flow tracking", MMCS_FIELD(c.flows.n_follow_steps)));
  f.push_back(number<double>("flows", "step_size", "Euler step length", MMCS_FIELD(c.flows.step_size)));
  f.push_back(number<double>("flows", "cell_threshold", "foreground logit threshold", MMCS_FIELD(c.flows.cell_threshold)));
  f.push_back(number<int>("flows", "min_size", "smallest kept instance, pixels", MMCS_FIELD(c.flows.min_size)));
  f.push_back(number<int>("flows", "sink_bin", "sink histogram bin, pixels", MMCS_FIELD(c.flows.sink_bin)));
  f.push_back(number<double>("flows", "sink_merge_radius", "sinks closer than this merge", MMCS_FIELD(c.flows.sink_merge_radius)));

  f.push_back(number<double>("diameter", "target_diameter", "training rescale target, pixels", MMCS_FIELD(c.target_diameter)));
  f.push_back(number<double>("diameter", "diameter", "cell diameter of inference images, pixels", MMCS_FIELD(c.diameter)));

  f.push_back(number<double>("data", "tile_overlap", "inference tile overlap fraction", MMCS_FIELD(c.tile_overlap)));
  f.push_back(boolean("data", "nucleus_channel", "use channel 1 (false zero-fills it)", MMCS_FIELD(c.nucleus_channel)));
  return f;
}

#undef MMCS_FIELD

}  // namespace

void RunConfig::validate() const {
  synth.validate();
  sgd.validate();
  semi.validate();
  flows.validate();
  augment.validate(net.divisor());
  if (split.n != split.labeled + split.unlabeled + split.eval)
    throw UsageError("synth.n must equal labeled + unlabeled + eval");
  if (split.labeled < 0 || split.unlabeled < 0 || split.eval < 0) throw UsageError("split counts must be >= 0");
  if (!(target_diameter > 0.0)) throw UsageError("target_diameter must be > 0");
  if (!(diameter > 0.0)) throw UsageError("diameter must be > 0");
  if (tile_overlap < 0.0 || tile_overlap > 0.5) throw UsageError("tile_overlap must be in [0, 0.5]");
  if (net.levels < 1 || net.levels > 6 || net.base_width < 1) throw UsageError("invalid network shape");
}

std::string ConfigField::flag() const {
  std::string s = "--" + key;
  std::replace(s.begin(), s.end(), '_', '-');
  return s;
}

const std::vector<ConfigField>& config_fields() {
  static const std::vector<ConfigField> fields = build_fields();
  return fields;
}

const ConfigField* find_field(const std::string& section, const std::string& key) {
  for (const auto& f : config_fields())
    if (f.section == section && f.key == key) return &f;
  return nullptr;
}

void apply_config_text(RunConfig& cfg, const std::string& text) {
  boost::property_tree::ptree tree;
  std::istringstream in(text);
  try {
    boost::property_tree::ini_parser::read_ini(in, tree);
  } catch (const boost::property_tree::ini_parser_error& e) {
    throw UsageError("config parse error at line " + std::to_string(e.line()) + ": " + e.message());
  }
  for (const auto& [section, body] : tree) {
    if (body.empty()) throw UsageError("config entry '" + section + "' is outside a [section]");
    for (const auto& [key, value] : body) {
      const ConfigField* f = find_field(section, key);
      if (!f) throw UsageError("unknown config key " + section + "." + key);
      f->set(cfg, value.data());
    }
  }
}

void apply_config_file(RunConfig& cfg, const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot read config " + path.string());
  std::ostringstream text;
  text << in.rdbuf();
  apply_config_text(cfg, text.str());
}

std::string format_config(const RunConfig& cfg, const std::vector<std::string>& sections) {
  std::string out;
  for (const auto& section : sections) {
    out += "[" + section + "]\n";
    for (const auto& f : config_fields())
      if (f.section == section) out += f.key + " = " + f.get(cfg) + "\n";
    out += "\n";
  }
  return out;
}

}  // namespace mmcs
