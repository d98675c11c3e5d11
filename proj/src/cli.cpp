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

#include "mmcs/error.hpp"
#include "mmcs/pipeline.hpp"

#include <CLI11.hpp>

#include <iostream>
#include <map>
#include <optional>

namespace mmcs {

namespace fs = std::filesystem;

namespace {

/// Registers one flag per config field of `sections`; values are applied after
/// the optional --config file so flags win.
class ConfigFlags {
 public:
  ConfigFlags(CLI::App* app, const std::vector<std::string>& sections, const RunConfig& defaults) {
    app->add_option("--config", config_file_, "key = value config file ([section] headers)");
    for (const auto& f : config_fields()) {
      if (std::find(sections.begin(), sections.end(), f.section) == sections.end()) continue;
      auto& slot = values_[&f];
      app->add_option(f.flag(), slot, f.help + " [" + f.section + "." + f.key + "]")
          ->default_str(f.get(defaults))
          ->type_name(type_hint(f.get(defaults)));
    }
  }

  RunConfig resolve() const {
    RunConfig cfg;
    if (config_file_) apply_config_file(cfg, *config_file_);
    for (const auto& [field, value] : values_)
      if (value) field->set(cfg, *value);
    return cfg;
  }

 private:
  static std::string type_hint(const std::string& example) {
    if (example == "true" || example == "false") return "BOOL";
    return "VALUE";
  }

  std::optional<std::string> config_file_;
  std::map<const ConfigField*, std::optional<std::string>> values_;
};

}  // namespace

int run_cli(int argc, const char* const* argv) {
  CLI::App app{"mmcs: semi-supervised cell instance segmentation"};
  app.require_subcommand(1);
  const RunConfig defaults;

  fs::path out;
  fs::path manifest;
  fs::path checkpoint;
  std::vector<fs::path> images;
  std::string split = "eval";
  fs::path pred_dir;

  auto* synth = app.add_subcommand("synth", "generate a synthetic dataset and manifest");
  synth->add_option("--out", out, "output directory")->required();
  ConfigFlags synth_flags(synth, {"run", "synth"}, defaults);

  auto* pre = app.add_subcommand("pretrain", "supervised training on the labeled split");
  pre->add_option("--manifest", manifest, "dataset manifest")->required()->check(CLI::ExistingFile);
  pre->add_option("--out", out, "output directory")->required();
  ConfigFlags pre_flags(pre, {"run", "net", "sgd", "semi", "augment", "diameter", "data"}, defaults);

  auto* semi = app.add_subcommand("semitrain", "temporal-ensembling training from a pretrained checkpoint");
  semi->add_option("--manifest", manifest, "dataset manifest")->required()->check(CLI::ExistingFile);
  semi->add_option("--init-checkpoint", checkpoint, "pretrained checkpoint")->required()->check(CLI::ExistingFile);
  semi->add_option("--out", out, "output directory")->required();
  ConfigFlags semi_flags(semi, {"run", "sgd", "semi", "augment"}, defaults);

  auto* infer = app.add_subcommand("infer", "segment images with a trained checkpoint");
  infer->add_option("--checkpoint", checkpoint, "model checkpoint")->required()->check(CLI::ExistingFile);
  infer->add_option("--image", images, "input image (repeatable)")->check(CLI::ExistingFile);
  infer->add_option("--manifest", manifest, "take inputs from this manifest instead")->check(CLI::ExistingFile);
  infer->add_option("--split", split, "manifest split used with --manifest")
      ->default_str("eval")
      ->check(CLI::IsMember({"labeled", "unlabeled", "eval"}));
  infer->add_option("--out", out, "output directory")->required();
  ConfigFlags infer_flags(infer, {"augment", "flows", "diameter", "data"}, defaults);

  auto* ev = app.add_subcommand("eval", "F1 at IoU 0.5 of predicted masks against a manifest's eval split");
  ev->add_option("--pred-dir", pred_dir, "directory of predicted masks named after the images")
      ->required()
      ->check(CLI::ExistingDirectory);
  ev->add_option("--gt-manifest", manifest, "manifest with eval records")->required()->check(CLI::ExistingFile);
  ev->add_option("--out", out, "output directory")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 2;
  }

  try {
    if (*synth) {
      cmd_synth(synth_flags.resolve(), out);
    } else if (*pre) {
      cmd_pretrain(pre_flags.resolve(), manifest, out);
    } else if (*semi) {
      cmd_semitrain(semi_flags.resolve(), manifest, checkpoint, out);
    } else if (*infer) {
      std::vector<fs::path> inputs = images;
      if (!manifest.empty()) {
        const DatasetManifest m = load_manifest(manifest);
        const Split s = split == "labeled" ? Split::Labeled : split == "unlabeled" ? Split::Unlabeled : Split::Eval;
        for (const auto* r : m.of(s)) inputs.push_back(m.resolve(r->image_path));
      }
      cmd_infer(infer_flags.resolve(), checkpoint, inputs, out);
    } else if (*ev) {
      const MatchResult r = cmd_eval(pred_dir, manifest, out);
      std::cout << "pooled f1 " << r.f1 << " (tp " << r.tp << ", fp " << r.fp << ", fn " << r.fn << ")\n";
    }
  } catch (const UsageError& e) {
    std::cerr << "usage error: " << e.what() << '\n';
    return 2;
  } catch (const DataError& e) {
    std::cerr << "data error: " << e.what() << '\n';
    return 3;
  } catch (const NumericError& e) {
    std::cerr << "numeric error: " << e.what() << '\n';
    return 4;
  } catch (const std::exception& e) {
    std::cerr << "internal error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}

}  // namespace mmcs
