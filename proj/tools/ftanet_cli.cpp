// Copyright 2026 The ftanet Authors
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

// Command-line front end. Talks to the library only through the C interface.

#include <CLI11.hpp>

#include <cstdint>
#include <cstdio>
#include <fstream>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "ftanet/ftanet.h"

namespace {

constexpr int kExitOk = 0;
constexpr int kExitInternal = 1;
constexpr int kExitBadInput = 2;

// Thrown with the status of the failing call; main turns it into an exit code.
struct CallFailed {
  ftanet_status status;
};

void check(ftanet_status s) {
  if (s != FTANET_OK) throw CallFailed{s};
}

int exit_code(ftanet_status s) {
  if (s == FTANET_OK) return kExitOk;
  return s == FTANET_INTERNAL || s == FTANET_NUMERIC ? kExitInternal : kExitBadInput;
}

template <typename T, void (*Free)(T*)>
struct Deleter {
  void operator()(T* p) const { Free(p); }
};
using ConfigPtr = std::unique_ptr<ftanet_config, Deleter<ftanet_config, ftanet_config_free>>;
using ModelPtr = std::unique_ptr<ftanet_model, Deleter<ftanet_model, ftanet_model_free>>;
using ContourPtr = std::unique_ptr<ftanet_contour, Deleter<ftanet_contour, ftanet_contour_free>>;
using SaliencePtr = std::unique_ptr<ftanet_salience, Deleter<ftanet_salience, ftanet_salience_free>>;
using StringPtr = std::unique_ptr<char, Deleter<char, ftanet_string_free>>;

struct Common {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::vector<std::string> sets;

  std::vector<const char*> overrides() {
    if (seed) sets.push_back("seed=" + std::to_string(*seed));
    std::vector<const char*> out;
    for (const auto& s : sets) out.push_back(s.c_str());
    return out;
  }
  const char* config_path() const { return config.empty() ? nullptr : config.c_str(); }
};

void add_common(CLI::App* cmd, Common& c, const char* config_help) {
  cmd->add_option("--config", c.config, config_help)->check(CLI::ExistingFile);
  cmd->add_option("--seed", c.seed, "Random seed (overrides the config)");
  cmd->add_option("--set", c.sets, "Override a config key, e.g. --set layer_cfg.widths=[8,8,8]");
}

ConfigPtr load_config(Common& c) {
  ftanet_config* cfg = nullptr;
  const auto ov = c.overrides();
  check(ftanet_config_load(c.config_path(), ov.data(), ov.size(), &cfg));
  return ConfigPtr(cfg);
}

struct TrainArgs {
  std::string manifest, out;
  long report_every = 50;
  bool quiet = false;
};

void progress(long step, int epoch, double loss, void* user) {
  const auto* args = static_cast<const TrainArgs*>(user);
  if (!args->quiet && (step == 1 || step % args->report_every == 0)) {
    std::fprintf(stderr, "step %ld  epoch %d  loss %.6f\n", step, epoch + 1, loss);
  }
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"FTANet singing melody extraction"};
  app.require_subcommand(1);
  app.set_version_flag("--version", std::string(ftanet_version()));

  Common feat_common;
  std::string feat_wav, feat_out;
  auto* features = app.add_subcommand("features", "Compute the 320 x T x 3 CFP representation of a WAV file");
  features->add_option("wav", feat_wav, "Input WAV")->required()->check(CLI::ExistingFile);
  features->add_option("--out", feat_out, "Output CFP file")->required();
  add_common(features, feat_common, "Run config JSON");

  Common train_common;
  TrainArgs train_args;
  auto* train = app.add_subcommand("train", "Train a model on a manifest of WAV/annotation pairs");
  train->add_option("manifest", train_args.manifest, "Manifest: wav<TAB>annotation<TAB>repeat per line")->required();
  train->add_option("--out", train_args.out, "Output model file (sidecar and loss CSV are written next to it)")
      ->required();
  train->add_option("--report-every", train_args.report_every, "Print the loss every N steps")
      ->check(CLI::PositiveNumber);
  train->add_flag("--quiet", train_args.quiet, "No progress output");
  add_common(train, train_common, "Run config JSON");

  std::string ex_wav, ex_model, ex_out, ex_png;
  auto* extract = app.add_subcommand("extract", "Extract the melody contour of a WAV file");
  extract->add_option("wav", ex_wav, "Input WAV")->required();
  extract->add_option("model", ex_model, "Trained model file")->required();
  extract->add_option("--out", ex_out, "Output contour (time<TAB>Hz per frame)")->required();
  extract->add_option("--salience", ex_png, "Also write the salience map as a PNG heatmap");

  std::string ev_ref, ev_est, ev_out;
  double ev_tol = 50.0;
  auto* evaluate = app.add_subcommand("evaluate", "Score an estimated contour against a reference");
  evaluate->add_option("ref", ev_ref, "Reference contour")->required();
  evaluate->add_option("est", ev_est, "Estimated contour")->required();
  evaluate->add_option("--out", ev_out, "Write the report as JSON");
  evaluate->add_option("--tolerance", ev_tol, "Pitch tolerance in cents")->check(CLI::Range(1e-9, 600.0));

  Common synth_common;
  std::string synth_out;
  auto* synth = app.add_subcommand("synth", "Generate a synthetic training set with annotations and a manifest");
  synth->add_option("--out", synth_out, "Output directory")->required();
  add_common(synth, synth_common, "Synthesis spec JSON");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? kExitOk : kExitBadInput;
  }

  try {
    if (*features) {
      ConfigPtr cfg = load_config(feat_common);
      check(ftanet_features(cfg.get(), feat_wav.c_str(), feat_out.c_str()));
    } else if (*train) {
      ConfigPtr cfg = load_config(train_common);
      ftanet_model* raw = nullptr;
      check(ftanet_train(cfg.get(), train_args.manifest.c_str(), progress, &train_args, &raw));
      ModelPtr model(raw);
      check(ftanet_model_save(model.get(), train_args.out.c_str()));
      check(ftanet_model_write_loss_csv(model.get(), (train_args.out + ".loss.csv").c_str()));
    } else if (*extract) {
      ftanet_model* raw_model = nullptr;
      check(ftanet_model_load(ex_model.c_str(), &raw_model));
      ModelPtr model(raw_model);
      ftanet_salience* raw_sal = nullptr;
      ftanet_contour* raw_contour = nullptr;
      check(ftanet_extract(model.get(), ex_wav.c_str(), ex_png.empty() ? nullptr : &raw_sal, &raw_contour));
      SaliencePtr sal(raw_sal);
      ContourPtr contour(raw_contour);
      check(ftanet_contour_save(contour.get(), ex_out.c_str()));
      if (sal) check(ftanet_salience_write_png(sal.get(), ex_png.c_str()));
    } else if (*evaluate) {
      ftanet_contour* raw = nullptr;
      check(ftanet_contour_load(ev_ref.c_str(), &raw));
      ContourPtr ref(raw);
      check(ftanet_contour_load(ev_est.c_str(), &raw));
      ContourPtr est(raw);
      ftanet_report report{};
      check(ftanet_evaluate(ref.get(), est.get(), ev_tol, &report));
      char* line = nullptr;
      check(ftanet_report_line(&report, &line));
      StringPtr line_ptr(line);
      std::printf("%s\n", line);
      if (!ev_out.empty()) {
        char* js = nullptr;
        check(ftanet_report_json(&report, &js));
        StringPtr js_ptr(js);
        std::ofstream out(ev_out, std::ios::trunc);
        out << js << '\n';
        if (!out.flush()) {
          std::fprintf(stderr, "error: cannot write %s\n", ev_out.c_str());
          return kExitBadInput;
        }
      }
    } else if (*synth) {
      const auto ov = synth_common.overrides();
      char* manifest = nullptr;
      check(ftanet_synth(synth_common.config_path(), ov.data(), ov.size(), synth_out.c_str(), &manifest));
      StringPtr manifest_ptr(manifest);
      std::printf("%s\n", manifest);
    }
  } catch (const CallFailed& f) {
    std::fprintf(stderr, "error: %s\n", ftanet_last_error());
    return exit_code(f.status);
  }
  return kExitOk;
}
