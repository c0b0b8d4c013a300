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

#include <cmath>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <sstream>

#include "audio_io.hpp"
#include "cfp.hpp"
#include "error.hpp"
#include "training.hpp"

using namespace ftanet;
namespace fs = std::filesystem;

namespace {

int hot_row(const Tensor<float>& target, std::size_t t) {
  const std::size_t n = target.dims[1];
  int row = -1;
  for (std::size_t r = 0; r < target.dims[0]; ++r) {
    const float v = target.values[r * n + t];
    if (v == 1.0f) {
      if (row >= 0) return -2;
      row = static_cast<int>(r);
    } else if (v != 0.0f) {
      return -3;
    }
  }
  return row;
}

LayerConfig tiny_layer() {
  LayerConfig c;
  c.widths = {4, 4, 4};
  c.mdb_widths = {4, 4, 4};
  c.reduction = 2;
  return c;
}

CfpTensor fake_cfp(int frames, std::uint64_t seed) {
  CfpTensor c;
  c.n_frames = frames;
  c.data.resize(static_cast<std::size_t>(320 * frames * 3));
  std::uint64_t s = seed;
  for (float& v : c.data) {
    s = s * 6364136223846793005ULL + 1442695040888963407ULL;
    v = static_cast<float>(s >> 40) / static_cast<float>(1 << 24);
  }
  return c;
}

std::vector<double> times_of(const CfpTensor& c) {
  std::vector<double> out;
  for (int t = 0; t < c.n_frames; ++t) out.push_back(c.frame_time(t));
  return out;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), {}};
}

ErrorCode code_of(const std::function<void()>& fn) {
  try {
    fn();
  } catch (const Error& e) {
    return e.code();
  }
  FAIL("expected an error");
  return ErrorCode::kInternal;
}

fs::path scratch(const char* name) {
  const auto dir = fs::temp_directory_path() / "ftanet_test_training" / name;
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

}  // namespace

TEST_CASE("encode_labels examples") {
  // 10 ms annotation hop, 5.8 ms frame hop.
  const MelodyContour ref{{0.0, 0.01, 0.02, 0.03}, {440.0, 330.0, 0.0, -440.0}};
  std::vector<double> frames;
  for (int i = 0; i < 8; ++i) frames.push_back(i * 0.0058);
  const Tensor<float> y = encode_labels(ref, frames);
  REQUIRE(y.dims == Shape{321, 8});
  CHECK(hot_row(y, 0) == 230);
  CHECK(hot_row(y, 1) == hz_to_bin(330.0, LogFreqGrid{}));  // 5.8 ms is nearest to the 10 ms label
  CHECK(hot_row(y, 2) == hot_row(y, 1));
  CHECK(hot_row(y, 3) == 320);
  CHECK(hot_row(y, 4) == 320);
  CHECK(hot_row(y, 5) == 320);  // negative frequency marks unvoiced
  CHECK(hot_row(y, 6) == 320);
  CHECK(hot_row(y, 7) == 320);  // beyond half a hop past the last label

  const Tensor<float> none = encode_labels({}, frames);
  for (std::size_t t = 0; t < frames.size(); ++t) CHECK(hot_row(none, t) == 320);

  const MelodyContour bad{{0.0, 0.02, 0.01}, {100.0, 100.0, 100.0}};
  CHECK(code_of([&] { encode_labels(bad, frames); }) == ErrorCode::kInvalidArgument);
  try {
    encode_labels(bad, frames);
  } catch (const Error& e) {
    CHECK(std::string(e.what()).find("row 3") != std::string::npos);
  }
}

TEST_CASE("encode then argmax reproduces the quantized contour") {
  const LogFreqGrid g;
  MelodyContour ref;
  std::vector<double> frames;
  for (int i = 0; i < 2000; ++i) {
    const double t = i * 256.0 / 44100.0;
    ref.times.push_back(t);
    ref.freqs.push_back(i % 7 == 0 ? 0.0 : 31.0 * std::exp2(i * 5.3 / 2000.0));
    frames.push_back(t);
  }
  const Tensor<float> y = encode_labels(ref, frames);
  for (std::size_t t = 0; t < frames.size(); ++t) {
    const int row = hot_row(y, t);
    if (ref.freqs[t] <= 0.0) {
      REQUIRE(row == 320);
    } else {
      REQUIRE(row >= 0);
      REQUIRE(row < 320);
      const double cents = 1200.0 * std::log2(ref.freqs[t] / bin_to_hz(row, g));
      REQUIRE(std::abs(cents) <= 10.0 + 1e-9);
    }
  }
}

TEST_CASE("segment_clip examples") {
  for (auto [frames, expect] : {std::pair{256, 2}, {300, 3}, {128, 1}, {1, 1}}) {
    CAPTURE(frames);
    const CfpTensor cfp = fake_cfp(frames, 5);
    MelodyContour ref;
    for (int t = 0; t < frames; ++t) {
      ref.times.push_back(cfp.frame_time(t));
      ref.freqs.push_back(t % 3 ? 300.0 : 0.0);
    }
    const Tensor<float> y = encode_labels(ref, times_of(cfp));
    const auto segs = segment_clip(cfp, y, 4);
    REQUIRE(static_cast<int>(segs.size()) == expect);
    for (std::size_t s = 0; s < segs.size(); ++s) {
      const auto& seg = segs[s];
      CHECK(seg.source_clip == 4);
      CHECK(seg.offset == static_cast<int>(s) * 128);
      CHECK(seg.n_real == std::min(128, frames - seg.offset));
      REQUIRE(seg.input.dims == Shape{320, 128, 3});
      REQUIRE(seg.target.dims == Shape{321, 128});
      for (int t = 0; t < 128; ++t) {
        const int row = hot_row(seg.target, static_cast<std::size_t>(t));
        REQUIRE(row >= 0);
        const bool real = t < seg.n_real;
        const int src = seg.offset + t;
        if (real) {
          REQUIRE(row == hot_row(y, static_cast<std::size_t>(src)));
        } else {
          REQUIRE(row == 320);
        }
        for (int f = 0; f < 320; ++f) {
          for (int c = 0; c < 3; ++c) {
            const float v = seg.input.values[static_cast<std::size_t>((f * 128 + t) * 3 + c)];
            REQUIRE(v == (real ? cfp.at(f, src, c) : 0.0f));
          }
        }
      }
    }
  }
  CHECK(segment_clip(fake_cfp(300, 1), encode_labels({}, times_of(fake_cfp(300, 1))))[2].n_real == 44);
}

TEST_CASE("train: lr 0 leaves parameters bitwise unchanged") {
  const CfpTensor cfp = fake_cfp(200, 2);
  const auto segs = segment_clip(cfp, encode_labels({}, times_of(cfp)));
  TrainConfig cfg;
  cfg.layer = tiny_layer();
  cfg.lr = 0.0;
  cfg.epochs = 3;
  cfg.batch = 1;
  cfg.seed = 9;
  const ModelParams before = init_params(cfg.layer, cfg.seed);
  const TrainResult r = train(segs, cfg);
  CHECK(r.step_loss.size() == 6);
  CHECK(r.epoch_loss.size() == 3);
  REQUIRE(r.params.size() == before.size());
  for (const auto& [name, t] : before) {
    CAPTURE(name);
    CHECK(r.params.at(name).dims == t.dims);
    CHECK(r.params.at(name).values == t.values);
  }
}

TEST_CASE("train: same seed gives identical histories, different seed differs") {
  const CfpTensor cfp = fake_cfp(300, 3);
  MelodyContour ref{times_of(cfp), std::vector<double>(times_of(cfp).size(), 250.0)};
  const auto segs = segment_clip(cfp, encode_labels(ref, times_of(cfp)));
  TrainConfig cfg;
  cfg.layer = tiny_layer();
  cfg.steps = 4;
  cfg.batch = 2;
  cfg.seed = 11;
  const TrainResult a = train(segs, cfg), b = train(segs, cfg);
  CHECK(a.step_loss == b.step_loss);
  CHECK(a.step_epoch == b.step_epoch);
  for (const auto& [name, t] : a.params) CHECK(b.params.at(name).values == t.values);
  REQUIRE(a.step_loss.size() == 4);
  CHECK(a.step_epoch == std::vector<int>{0, 0, 1, 1});
  cfg.seed = 12;
  const TrainResult c = train(segs, cfg);
  CHECK(c.step_loss != a.step_loss);
}

TEST_CASE("train: single segment overfits") {
  SynthSpec spec;
  spec.n_clips = 1;
  spec.duration_s = 128 * 256.0 / 44100.0;
  const SynthClip clip = synth_clip(spec, 0);
  const CfpTensor cfp = compute_cfp(clip.audio);
  auto segs = segment_clip(cfp, encode_labels(clip.annotation, times_of(cfp)));
  segs.resize(1);
  TrainConfig cfg;
  cfg.layer.widths = {8, 8, 8};
  cfg.layer.mdb_widths = {8, 8, 8};
  cfg.steps = 500;
  cfg.batch = 1;
  cfg.seed = 1;
  long calls = 0;
  const TrainResult r = train(segs, cfg, [&](long step, int epoch, double loss) {
    ++calls;
    CHECK(step == calls);
    CHECK(epoch == step - 1);
    CHECK(std::isfinite(loss));
  });
  CHECK(calls == 500);
  REQUIRE(r.step_loss.size() == 500);
  const double first = r.step_loss.front(), last = r.step_loss.back();
  MESSAGE("loss " << first << " -> " << last);
  CHECK(last <= 0.5 * first);

  // Fixed batch: compare each 10-step window mean with the previous one.
  int windows = 0, held = 0;
  for (std::size_t w = 10; w + 10 <= r.step_loss.size(); w += 10) {
    double prev = 0.0, cur = 0.0;
    for (std::size_t i = 0; i < 10; ++i) {
      prev += r.step_loss[w - 10 + i];
      cur += r.step_loss[w + i];
    }
    ++windows;
    held += cur <= prev;
  }
  MESSAGE(held << "/" << windows << " windows non-increasing");
  CHECK(held >= 0.9 * windows);
}

TEST_CASE("train: argument errors") {
  TrainConfig cfg;
  cfg.layer = tiny_layer();
  CHECK(code_of([&] { train({}, cfg); }) == ErrorCode::kEmptyInput);
  const CfpTensor cfp = fake_cfp(10, 1);
  auto segs = segment_clip(cfp, encode_labels({}, times_of(cfp)));
  cfg.batch = 0;
  CHECK(code_of([&] { train(segs, cfg); }) == ErrorCode::kInvalidArgument);
  cfg.batch = 1;
  cfg.lr = std::nan("");
  CHECK(code_of([&] { train(segs, cfg); }) == ErrorCode::kInvalidArgument);
  cfg.lr = 1e-4;
  segs[0].target.dims = {320, 128};
  CHECK(code_of([&] { train(segs, cfg); }) != ErrorCode::kInternal);
}

TEST_CASE("loss csv") {
  const auto dir = scratch("csv");
  TrainResult r;
  r.step_loss = {0.5, 0.25};
  r.step_epoch = {0, 1};
  write_loss_csv(dir / "l.csv", r);
  CHECK(slurp(dir / "l.csv") == "step,epoch,loss\n1,1,0.5\n2,2,0.25\n");
}

TEST_CASE("synth: pure tone gives channel-0 argmax at bin 230") {
  SynthSpec spec;
  spec.n_clips = 1;
  spec.duration_s = 1.0;
  spec.fixed_f0_hz = 440.0;
  spec.noise_db.reset();
  spec.n_harmonics = 1;
  spec.vibrato_cents = 0.0;
  spec.gap_fraction = 0.0;
  const SynthClip clip = synth_clip(spec, 0);
  for (double f : clip.annotation.freqs) REQUIRE(f == 440.0);
  const CfpTensor cfp = compute_cfp(clip.audio);
  int interior = 0;
  for (int t = 8; t * 256 + 1024 <= static_cast<int>(clip.audio.samples.size()); ++t) {
    int best = 0;
    for (int f = 1; f < 320; ++f) {
      if (cfp.at(f, t, 0) > cfp.at(best, t, 0)) best = f;
    }
    REQUIRE(best == 230);
    ++interior;
  }
  CHECK(interior > 150);
}

TEST_CASE("synth: annotation invariants and voicing fraction") {
  SynthSpec spec;
  for (int i = 0; i < spec.n_clips; ++i) {
    CAPTURE(i);
    const SynthClip clip = synth_clip(spec, i);
    const auto frames = clip.annotation.size();
    CHECK(frames == static_cast<std::size_t>(5.0 * 44100) / 256 + 1);
    CHECK(clip.annotation.times[1] == doctest::Approx(256.0 / 44100.0));
    int unvoiced = 0;
    for (double f : clip.annotation.freqs) {
      if (f == 0.0) {
        ++unvoiced;
      } else {
        REQUIRE(f >= 31.0);
        REQUIRE(f <= 1250.0);
        REQUIRE(f >= spec.f0_min_hz * std::exp2(-spec.vibrato_cents / 1200.0) - 1e-9);
        REQUIRE(f <= spec.f0_max_hz * std::exp2(spec.vibrato_cents / 1200.0) + 1e-9);
      }
    }
    const double expected = spec.gap_fraction * static_cast<double>(frames);
    MESSAGE("unvoiced " << unvoiced << " expected " << expected);
    CHECK(std::abs(unvoiced - expected) <= 1.0);
    float peak = 0.0f;
    for (float s : clip.audio.samples) peak = std::max(peak, std::abs(s));
    CHECK(peak < 1.0f);
    CHECK(peak > 0.1f);
  }
}

TEST_CASE("synth: dataset files are deterministic and load back") {
  SynthSpec spec;
  spec.n_clips = 2;
  spec.duration_s = 1.0;
  const auto a = scratch("a"), b = scratch("b");
  const fs::path ma = synth_dataset(spec, a), mb = synth_dataset(spec, b);
  CHECK(ma == a / "manifest.tsv");
  for (const char* f : {"clip_000.wav", "clip_000.txt", "clip_001.wav", "clip_001.txt", "manifest.tsv"}) {
    CAPTURE(f);
    CHECK(!slurp(a / f).empty());
    CHECK(slurp(a / f) == slurp(b / f));
  }
  const auto entries = read_manifest(ma);
  REQUIRE(entries.size() == 2);
  CHECK(entries[0].wav == a / "clip_000.wav");
  CHECK(entries[1].annotation == a / "clip_001.txt");
  CHECK(entries[0].repeat == 1);
  const auto segs = load_training_set(entries);
  CHECK(segs.size() == 2 * 2);  // 173 frames per clip
  CHECK(segs[2].source_clip == 1);

  SynthSpec other = spec;
  other.seed = 8;
  const auto c = scratch("c");
  synth_dataset(other, c);
  CHECK(slurp(a / "clip_000.wav") != slurp(c / "clip_000.wav"));

  const auto blocker = scratch("blocked") / "file";
  std::ofstream(blocker) << "x";
  CHECK(code_of([&] { synth_dataset(spec, blocker / "sub"); }) == ErrorCode::kIo);
}

TEST_CASE("manifest parsing") {
  const auto dir = scratch("manifest");
  synth_dataset([] {
    SynthSpec s;
    s.n_clips = 1;
    s.duration_s = 0.5;
    return s;
  }(), dir);
  std::ofstream(dir / "m.tsv") << "# comment\n\nclip_000.wav\tclip_000.txt\t3\nclip_000.wav\tclip_000.txt\n";
  const auto entries = read_manifest(dir / "m.tsv");
  REQUIRE(entries.size() == 2);
  CHECK(entries[0].repeat == 3);
  CHECK(entries[1].repeat == 1);
  CHECK(load_training_set(entries).size() == 4 * 1);

  std::ofstream(dir / "empty.tsv") << "# nothing\n";
  CHECK(code_of([&] { read_manifest(dir / "empty.tsv"); }) == ErrorCode::kEmptyInput);
  CHECK(code_of([&] { read_manifest(dir / "absent.tsv"); }) == ErrorCode::kNotFound);
  std::ofstream(dir / "bad.tsv") << "clip_000.wav\tclip_000.txt\tzero\n";
  CHECK(code_of([&] { read_manifest(dir / "bad.tsv"); }) == ErrorCode::kParse);
  std::ofstream(dir / "one.tsv") << "clip_000.wav\n";
  try {
    read_manifest(dir / "one.tsv");
    FAIL("expected an error");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::kParse);
    CHECK(std::string(e.what()).find("one.tsv:1:") != std::string::npos);
  }
  std::ofstream(dir / "gone.tsv") << "missing.wav\tclip_000.txt\n";
  CHECK(code_of([&] { load_training_set(read_manifest(dir / "gone.tsv")); }) == ErrorCode::kNotFound);
}

TEST_CASE("synth spec validation") {
  auto rejects = [](auto mutate) {
    SynthSpec s;
    mutate(s);
    return code_of([&] { s.validate(); }) == ErrorCode::kInvalidArgument;
  };
  CHECK(rejects([](SynthSpec& s) { s.n_clips = 0; }));
  CHECK(rejects([](SynthSpec& s) { s.f0_min_hz = 20.0; }));
  CHECK(rejects([](SynthSpec& s) { s.f0_max_hz = 1300.0; }));
  CHECK(rejects([](SynthSpec& s) { s.f0_max_hz = 100.0; }));
  CHECK(rejects([](SynthSpec& s) { s.n_harmonics = 0; }));
  CHECK(rejects([](SynthSpec& s) { s.gap_fraction = 1.0; }));
  CHECK(rejects([](SynthSpec& s) { s.fixed_f0_hz = 2000.0; }));
  CHECK(rejects([](SynthSpec& s) { s.duration_s = 0.0; }));
}
