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

#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <filesystem>
#include <fstream>

#include "config.hpp"
#include "error.hpp"

using namespace ftanet;
using nlohmann::json;
namespace fs = std::filesystem;

namespace {

struct Caught {
  ErrorCode code = ErrorCode::kOk;
  std::string what;
};

Caught catch_error(const std::function<void()>& fn) {
  try {
    fn();
  } catch (const Error& e) {
    return {e.code(), e.what()};
  }
  return {};
}

fs::path scratch() {
  const auto dir = fs::temp_directory_path() / "ftanet_test_config";
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

json with(const std::string& assignment) {
  json j = json::object();
  apply_override(j, assignment);
  return j;
}

}  // namespace

TEST_CASE("run config defaults and json round trip") {
  const RunConfig d;
  CHECK(d.sample_rate == 44100);
  CHECK(d.cfp.window == 2048);
  CHECK(d.cfp.hop == 256);
  CHECK(d.grid.n_bins == 320);
  CHECK(d.grid.bins_per_octave == 60);
  CHECK(d.lr == 1e-4);
  CHECK(d.batch == 8);
  CHECK(d.layer.widths == std::vector<int>{32, 64, 128});
  d.validate();

  const auto j = to_json(d);
  for (const char* key : {"sample_rate", "window", "hop", "fft_size", "gammas", "freq_hp_hz", "quef_hp_s", "f_min",
                          "f_max", "bins_per_octave", "n_bins", "layer_cfg", "lr", "epochs", "steps", "batch", "seed"}) {
    CHECK_MESSAGE(j.contains(key), key);
  }
  CHECK(to_json(run_config_from_json(j)).dump() == j.dump());
  CHECK(to_json(run_config_from_json(json::object())).dump() == j.dump());

  RunConfig c;
  c.layer.widths = {8, 8};
  c.layer.mdb_widths = {4, 4, 4};
  c.cfp.gammas = {0.3, 0.5, 0.7};
  c.seed = 123456789012345ULL;
  c.steps = 2000;
  const RunConfig back = run_config_from_json(to_json(c));
  CHECK(back.layer == c.layer);
  CHECK(back.cfp.gammas == c.cfp.gammas);
  CHECK(back.seed == c.seed);
  CHECK(back.steps == 2000);
  const TrainConfig t = back.train_config();
  CHECK(t.layer == c.layer);
  CHECK(t.steps == 2000);
  CHECK(t.seed == c.seed);
  CHECK(t.batch == 8);
}

TEST_CASE("unknown keys are rejected") {
  const Caught top = catch_error([] { run_config_from_json(json{{"learning_rate", 0.1}}); });
  CHECK(top.code == ErrorCode::kParse);
  CHECK(top.what.find("learning_rate") != std::string::npos);
  CHECK(top.what.find("lr") != std::string::npos);  // the allowed keys are listed

  const Caught nested = catch_error([] { run_config_from_json(json{{"layer_cfg", {{"depth", 3}}}}); });
  CHECK(nested.code == ErrorCode::kParse);
  CHECK(nested.what.find("layer_cfg.depth") != std::string::npos);

  CHECK(catch_error([] { synth_spec_from_json(json{{"clips", 3}}); }).code == ErrorCode::kParse);
}

TEST_CASE("wrongly typed values are rejected") {
  CHECK(catch_error([] { run_config_from_json(json{{"lr", "fast"}}); }).code == ErrorCode::kParse);
  CHECK(catch_error([] { run_config_from_json(json{{"batch", 2.5}}); }).code == ErrorCode::kParse);
  CHECK(catch_error([] { run_config_from_json(json{{"gammas", {0.2, 0.6}}}); }).code == ErrorCode::kParse);
  CHECK(catch_error([] { run_config_from_json(json{{"layer_cfg", {{"widths", 8}}}}); }).code == ErrorCode::kParse);
  CHECK(catch_error([] { run_config_from_json(json::array()); }).code == ErrorCode::kParse);
}

TEST_CASE("values are validated") {
  for (const char* a : {"sample_rate=22050", "n_bins=300", "gammas=[0.24,0,0.6]", "gammas=[0.24,3,0.6]", "batch=0",
                        "epochs=0", "steps=-1", "lr=-1", "hop=0", "window=8", "fft_size=1024", "f_max=10",
                        "f_min=-1", "layer_cfg.widths=[]", "layer_cfg.widths=[8,0]", "layer_cfg.reduction=0",
                        "layer_cfg.attention_kernel=4", "bins_per_octave=0", "freq_hp_hz=-1"}) {
    CAPTURE(a);
    const Caught c = catch_error([&] { run_config_from_json(with(a)); });
    CHECK(c.code == ErrorCode::kInvalidArgument);
    CHECK(!c.what.empty());
  }
}

TEST_CASE("overrides") {
  json j = to_json(RunConfig{});
  apply_override(j, "lr=0.001");
  apply_override(j, "layer_cfg.widths=[8,8,8]");
  apply_override(j, "seed=5");
  const RunConfig c = run_config_from_json(j);
  CHECK(c.lr == 0.001);
  CHECK(c.layer.widths == std::vector<int>{8, 8, 8});
  CHECK(c.layer.mdb_widths == std::vector<int>{32, 64, 128});
  CHECK(c.seed == 5);

  json fresh = json::object();
  apply_override(fresh, "layer_cfg.reduction=2");
  CHECK(fresh == json{{"layer_cfg", {{"reduction", 2}}}});
  apply_override(fresh, "name=hello world");
  CHECK(fresh["name"] == "hello world");  // non-JSON text is taken as a string

  CHECK(catch_error([&] { apply_override(fresh, "lr"); }).code == ErrorCode::kInvalidArgument);
  CHECK(catch_error([&] { apply_override(fresh, "=3"); }).code == ErrorCode::kInvalidArgument);
  CHECK(catch_error([&] { apply_override(fresh, "name.x=1"); }).code == ErrorCode::kInvalidArgument);
  CHECK(catch_error([&] { apply_override(fresh, "a..b=1"); }).code == ErrorCode::kInvalidArgument);
  CHECK(catch_error([] { run_config_from_json(with("lr=abc")); }).code == ErrorCode::kParse);
}

TEST_CASE("config files") {
  const auto dir = scratch();
  std::ofstream(dir / "run.json") << R"({"lr": 0.01, "layer_cfg": {"widths": [4, 4]}})";
  const RunConfig c = load_run_config(dir / "run.json");
  CHECK(c.lr == 0.01);
  CHECK(c.layer.widths == std::vector<int>{4, 4});
  CHECK(catch_error([&] { load_run_config(dir / "absent.json"); }).code == ErrorCode::kNotFound);
  std::ofstream(dir / "broken.json") << "{\"lr\": ";
  const Caught broken = catch_error([&] { load_run_config(dir / "broken.json"); });
  CHECK(broken.code == ErrorCode::kParse);
  CHECK(broken.what.find("broken.json") != std::string::npos);
}

TEST_CASE("synth spec json") {
  const SynthSpec d;
  const auto j = to_json(d);
  const SynthSpec back = synth_spec_from_json(j);
  CHECK(back.seed == d.seed);
  CHECK(back.n_clips == 8);
  CHECK(back.noise_db == d.noise_db);
  CHECK(!back.fixed_f0_hz);
  CHECK(to_json(back).dump() == j.dump());

  CHECK(!synth_spec_from_json(json{{"noise_db", nullptr}}).noise_db);
  CHECK(!synth_spec_from_json(json{{"noise_db", "-inf"}}).noise_db);
  CHECK(synth_spec_from_json(json{{"noise_db", -20}}).noise_db == -20.0);
  CHECK(synth_spec_from_json(json{{"fixed_f0_hz", 440}}).fixed_f0_hz == 440.0);
  CHECK(catch_error([] { synth_spec_from_json(json{{"noise_db", "loud"}}); }).code == ErrorCode::kParse);
  CHECK(catch_error([] { synth_spec_from_json(json{{"n_harmonics", 0}}); }).code == ErrorCode::kInvalidArgument);

  SynthSpec quiet;
  quiet.noise_db.reset();
  quiet.fixed_f0_hz = 220.0;
  const SynthSpec q = synth_spec_from_json(to_json(quiet));
  CHECK(!q.noise_db);
  CHECK(q.fixed_f0_hz == 220.0);
}

TEST_CASE("saved models carry their config") {
  const auto dir = scratch();
  SavedModel m;
  m.config.layer.widths = {4, 4, 4};
  m.config.layer.mdb_widths = {2, 2, 2};
  m.config.seed = 3;
  m.params = init_params(m.config.layer, 3);
  save_model(dir / "m.ftan", m);
  CHECK(sidecar_path(dir / "m.ftan") == dir / "m.ftan.json");
  const json side = read_json_file(dir / "m.ftan.json");
  CHECK(side["format"] == "ftanet-model");
  CHECK(side["version"] == 1);

  const SavedModel back = load_model(dir / "m.ftan");
  CHECK(back.config.layer == m.config.layer);
  CHECK(to_json(back.config) == to_json(m.config));
  for (const auto& [name, t] : m.params) CHECK(back.params.at(name).values == t.values);

  auto rewrite = [&](const json& j) { std::ofstream(dir / "m.ftan.json") << j.dump(); };
  json v2 = side;
  v2["version"] = 2;
  rewrite(v2);
  CHECK(catch_error([&] { load_model(dir / "m.ftan"); }).code == ErrorCode::kUnsupportedVersion);

  json other = side;
  other["config"]["layer_cfg"]["widths"] = {8, 8, 8};
  rewrite(other);
  const Caught mismatch = catch_error([&] { load_model(dir / "m.ftan"); });
  CHECK(mismatch.code == ErrorCode::kCorruptFile);
  CHECK(mismatch.what.find("layer_cfg") != std::string::npos);

  json extra = side;
  extra["note"] = "x";
  rewrite(extra);
  CHECK(catch_error([&] { load_model(dir / "m.ftan"); }).code == ErrorCode::kCorruptFile);

  std::ofstream(dir / "m.ftan.json") << "not json";
  CHECK(catch_error([&] { load_model(dir / "m.ftan"); }).code == ErrorCode::kParse);

  fs::remove(dir / "m.ftan.json");
  CHECK(catch_error([&] { load_model(dir / "m.ftan"); }).code == ErrorCode::kCorruptFile);
  const Caught missing = catch_error([&] { load_model(dir / "none.ftan"); });
  CHECK(missing.code == ErrorCode::kNotFound);
  CHECK(missing.what.find("model not found") != std::string::npos);
}
