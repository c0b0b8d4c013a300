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

#include "training.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numbers>
#include <random>
#include <sstream>

#if defined(__GLIBC__)
#include <malloc.h>
#endif

#include "error.hpp"

namespace ftanet {

Tensor<float> encode_labels(const MelodyContour& contour, const std::vector<double>& frame_times,
                            const LogFreqGrid& grid) {
  require(contour.freqs.size() == contour.size(), ErrorCode::kShapeMismatch, "contour times and freqs differ in length");
  for (std::size_t i = 1; i < contour.size(); ++i) {
    require(contour.times[i] > contour.times[i - 1], ErrorCode::kInvalidArgument,
            "annotation timestamps are not strictly increasing at row " + std::to_string(i + 1));
  }
  const std::size_t n = frame_times.size();
  const std::size_t rows = static_cast<std::size_t>(grid.n_bins) + 1;
  Tensor<float> target({rows, n});
  if (n == 0) return target;
  const MelodyContour on_frames = contour.size() == 0 ? MelodyContour{frame_times, std::vector<double>(n, 0.0)}
                                                      : resample_contour(contour, frame_times, 1e-6);
  for (std::size_t t = 0; t < n; ++t) {
    const double f = on_frames.freqs[t];
    const std::size_t row = f > 0.0 ? static_cast<std::size_t>(hz_to_bin(f, grid)) : rows - 1;
    target.values[row * n + t] = 1.0f;
  }
  return target;
}

std::vector<TrainSegment> segment_clip(const CfpTensor& cfp, const Tensor<float>& target, int clip_id) {
  const auto f = static_cast<std::size_t>(cfp.n_bins());
  const auto n = static_cast<std::size_t>(cfp.n_frames);
  require(target.dims.size() == 2 && target.dims[0] == f + 1 && target.dims[1] == n, ErrorCode::kShapeMismatch,
          "target must be (F+1) x T matching the features, got " + shape_string(target.dims));
  const std::size_t seg = kSegmentFrames;
  std::vector<TrainSegment> out;
  for (std::size_t start = 0; start < n; start += seg) {
    const std::size_t real = std::min(seg, n - start);
    TrainSegment s;
    s.source_clip = clip_id;
    s.offset = static_cast<int>(start);
    s.n_real = static_cast<int>(real);
    s.input = Tensor<float>({f, seg, static_cast<std::size_t>(kCfpChannels)});
    s.target = Tensor<float>({f + 1, seg});
    for (std::size_t b = 0; b < f; ++b) {
      std::copy_n(cfp.data.begin() + static_cast<long>((b * n + start) * kCfpChannels), real * kCfpChannels,
                  s.input.values.begin() + static_cast<long>(b * seg * kCfpChannels));
    }
    for (std::size_t r = 0; r <= f; ++r) {
      std::copy_n(target.values.begin() + static_cast<long>(r * n + start), real,
                  s.target.values.begin() + static_cast<long>(r * seg));
    }
    for (std::size_t t = real; t < seg; ++t) s.target.values[f * seg + t] = 1.0f;
    out.push_back(std::move(s));
  }
  return out;
}

namespace {

void keep_freed_tensors_in_heap() {
#if defined(__GLIBC__)
  // Every step allocates and frees the same multi-megabyte activations;
  // without this glibc hands them back to the kernel and refaults them.
  static const bool once = [] {
    mallopt(M_MMAP_THRESHOLD, 256 << 20);
    mallopt(M_TRIM_THRESHOLD, 1 << 30);
    return true;
  }();
  (void)once;
#endif
}

void shuffle(std::vector<std::size_t>& v, std::mt19937_64& rng) {
  for (std::size_t i = v.size(); i > 1; --i) std::swap(v[i - 1], v[rng() % i]);
}

}  // namespace

TrainResult train(const std::vector<TrainSegment>& segments, const TrainConfig& cfg, const TrainProgress& progress) {
  require(!segments.empty(), ErrorCode::kEmptyInput, "training set is empty");
  require(cfg.batch >= 1, ErrorCode::kInvalidArgument, "batch must be >= 1");
  require(cfg.steps > 0 || cfg.epochs >= 1, ErrorCode::kInvalidArgument, "need epochs >= 1 or steps >= 1");
  require(cfg.lr >= 0.0 && std::isfinite(cfg.lr), ErrorCode::kInvalidArgument, "learning rate must be finite and >= 0");
  cfg.layer.validate();
  for (const auto& s : segments) {
    require(s.input.dims == Shape{kMelodyBins, kSegmentFrames, kCfpChannels} &&
                s.target.dims == Shape{kSalienceRows, kSegmentFrames},
            ErrorCode::kShapeMismatch, "training segments must be 320 x 128 x 3 with 321 x 128 targets");
  }
  keep_freed_tensors_in_heap();

  TrainResult result;
  ParamSet<float> params = to_param_set<float>(init_params(cfg.layer, cfg.seed), true);
  AdamState<float> adam;
  const AdamConfig adam_cfg{cfg.lr};
  std::mt19937_64 order_rng(cfg.seed ^ 0x9e3779b97f4a7c15ULL);
  std::vector<std::size_t> order(segments.size());
  const auto batch = static_cast<std::size_t>(cfg.batch);
  long step = 0;
  for (int epoch = 0; cfg.steps > 0 ? step < cfg.steps : epoch < cfg.epochs; ++epoch) {
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    shuffle(order, order_rng);
    double epoch_total = 0.0;
    int epoch_steps = 0;
    for (std::size_t b0 = 0; b0 < order.size() && (cfg.steps == 0 || step < cfg.steps); b0 += batch) {
      const std::size_t b1 = std::min(order.size(), b0 + batch);
      const auto inv = static_cast<float>(1.0 / static_cast<double>(b1 - b0));
      double batch_loss = 0.0;
      for (auto& [name, p] : params) p.zero_grad();
      for (std::size_t k = b0; k < b1; ++k) {
        const TrainSegment& seg = segments[order[k]];
        const Var<float> pred = salience_graph(Var<float>::constant(seg.input), params, cfg.layer);
        const Var<float> loss = bce_loss(pred, Var<float>::constant(seg.target));
        batch_loss += static_cast<double>(loss.item());
        backward(scale(loss, inv));
      }
      batch_loss /= static_cast<double>(b1 - b0);
      if (!std::isfinite(batch_loss)) {
        fail(ErrorCode::kNumeric, "non-finite training loss at step " + std::to_string(step + 1) + " (epoch " +
                                      std::to_string(epoch + 1) + "); try a smaller learning rate");
      }
      adam_step(params, adam, adam_cfg);
      ++step;
      ++epoch_steps;
      epoch_total += batch_loss;
      result.step_loss.push_back(batch_loss);
      result.step_epoch.push_back(epoch);
      if (progress) progress(step, epoch, batch_loss);
    }
    if (epoch_steps > 0) result.epoch_loss.push_back(epoch_total / epoch_steps);
  }
  result.params = from_param_set(params);
  return result;
}

void write_loss_csv(const std::filesystem::path& path, const TrainResult& result) {
  std::ofstream out(path, std::ios::trunc);
  require(static_cast<bool>(out), ErrorCode::kIo, "cannot open " + path.string() + " for writing");
  out << "step,epoch,loss\n";
  char buf[96];
  for (std::size_t i = 0; i < result.step_loss.size(); ++i) {
    std::snprintf(buf, sizeof buf, "%zu,%d,%.9g\n", i + 1, result.step_epoch[i] + 1, result.step_loss[i]);
    out << buf;
  }
  require(static_cast<bool>(out.flush()), ErrorCode::kIo, "failed writing " + path.string());
}

std::vector<ManifestEntry> read_manifest(const std::filesystem::path& path) {
  std::ifstream in(path);
  require(static_cast<bool>(in), std::filesystem::exists(path) ? ErrorCode::kIo : ErrorCode::kNotFound,
          "cannot open manifest " + path.string());
  const std::filesystem::path base = path.parent_path();
  auto resolve = [&](const std::string& p) {
    const std::filesystem::path fp(p);
    return fp.is_absolute() ? fp : base / fp;
  };
  std::vector<ManifestEntry> entries;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.find_first_not_of(" \t") == std::string::npos || line[0] == '#') continue;
    const std::string where = path.string() + ":" + std::to_string(line_no) + ": ";
    std::vector<std::string> cols;
    std::stringstream ss(line);
    for (std::string c; std::getline(ss, c, '\t');) cols.push_back(c);
    require(cols.size() == 2 || cols.size() == 3, ErrorCode::kParse,
            where + "expected wav<TAB>annotation[<TAB>repeat]");
    ManifestEntry e{resolve(cols[0]), resolve(cols[1]), 1};
    if (cols.size() == 3) {
      std::size_t used = 0;
      try {
        e.repeat = std::stoi(cols[2], &used);
      } catch (const std::exception&) {
        used = 0;
      }
      require(used == cols[2].size() && used > 0 && e.repeat >= 1, ErrorCode::kParse,
              where + "repeat count must be a positive integer");
    }
    entries.push_back(std::move(e));
  }
  require(!entries.empty(), ErrorCode::kEmptyInput, "manifest " + path.string() + " lists no clips");
  return entries;
}

std::vector<TrainSegment> load_training_set(const std::vector<ManifestEntry>& entries, const LogFreqGrid& grid,
                                            const CfpConfig& cfp_cfg, int sample_rate) {
  std::vector<TrainSegment> out;
  int clip = 0;
  for (const auto& e : entries) {
    const AudioBuffer audio = resample(load_wav(e.wav), sample_rate);
    const CfpTensor cfp = compute_cfp(audio, grid, cfp_cfg);
    std::vector<double> times(static_cast<std::size_t>(cfp.n_frames));
    for (int t = 0; t < cfp.n_frames; ++t) times[static_cast<std::size_t>(t)] = cfp.frame_time(t);
    const Tensor<float> target = encode_labels(load_contour(e.annotation), times, grid);
    const auto segs = segment_clip(cfp, target, clip);
    for (int r = 0; r < e.repeat; ++r) out.insert(out.end(), segs.begin(), segs.end());
    ++clip;
  }
  return out;
}

void SynthSpec::validate() const {
  auto bad = [](const std::string& m) { fail(ErrorCode::kInvalidArgument, "synth spec: " + m); };
  if (n_clips < 1) bad("n_clips must be >= 1");
  if (!(duration_s > 0.0)) bad("duration_s must be > 0");
  if (!(f0_min_hz > 0.0) || f0_max_hz < f0_min_hz) bad("need 0 < f0_min_hz <= f0_max_hz");
  if (!(vibrato_cents >= 0.0) || !(vibrato_hz >= 0.0)) bad("vibrato depth and rate must be >= 0");
  const double swing = std::exp2(vibrato_cents / 1200.0);
  const double lo = fixed_f0_hz.value_or(f0_min_hz), hi = fixed_f0_hz.value_or(f0_max_hz);
  if (!(lo / swing >= 31.0 && hi * swing <= 1250.0)) bad("f0 range including vibrato must stay within 31..1250 Hz");
  if (!(note_min_s > 0.0) || note_max_s < note_min_s) bad("need 0 < note_min_s <= note_max_s");
  if (n_harmonics < 1) bad("n_harmonics must be >= 1");
  if (hi * swing * n_harmonics >= kModelSampleRate / 2.0) bad("highest harmonic exceeds the Nyquist frequency");
  if (!(rolloff > 0.0)) bad("rolloff must be > 0");
  if (!(gap_fraction >= 0.0 && gap_fraction < 1.0)) bad("gap_fraction must be in [0, 1)");
  if (noise_db && !std::isfinite(*noise_db)) bad("noise_db must be finite (omit it for no noise)");
}

namespace {

double unit(std::mt19937_64& rng) { return static_cast<double>(rng() >> 11) * 0x1.0p-53; }
double uniform(std::mt19937_64& rng, double lo, double hi) { return lo + (hi - lo) * unit(rng); }

double gaussian(std::mt19937_64& rng) {
  const double u1 = 1.0 - unit(rng);  // (0, 1]
  const double u2 = unit(rng);
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
}

struct Span {
  double start, end;
};

// Voiced runs covering (1 - gap_fraction) of the clip, separated by equal gaps.
std::vector<Span> voiced_runs(const SynthSpec& spec, std::mt19937_64& rng) {
  const double d = spec.duration_s;
  if (spec.gap_fraction == 0.0) return {{0.0, d}};
  const int n_gaps = std::max(1, static_cast<int>(std::lround(d / 1.25)));
  const double gap = spec.gap_fraction * d / n_gaps;
  std::vector<double> weights(static_cast<std::size_t>(n_gaps + 1));
  double total = 0.0;
  for (double& w : weights) total += (w = uniform(rng, 0.5, 1.5));
  std::vector<Span> runs;
  double t = 0.0;
  for (std::size_t i = 0; i < weights.size(); ++i) {
    const double len = (1.0 - spec.gap_fraction) * d * weights[i] / total;
    runs.push_back({t, t + len});
    t += len + gap;
  }
  return runs;
}

}  // namespace

SynthClip synth_clip(const SynthSpec& spec, int index) {
  spec.validate();
  std::mt19937_64 rng(spec.seed * 0x100000001b3ULL + static_cast<std::uint64_t>(index) + 1);
  const int fs = kModelSampleRate;
  const auto n = static_cast<std::size_t>(std::llround(spec.duration_s * fs));
  const auto runs = voiced_runs(spec, rng);

  // Piecewise-constant notes on a semitone grid, redrawn for each run.
  std::vector<double> note_hz(n, 0.0);
  const double semis = 12.0 * std::log2(spec.f0_max_hz / spec.f0_min_hz);
  for (const auto& run : runs) {
    double t = run.start;
    double pitch = std::floor(uniform(rng, 0.0, semis + 1.0));
    while (t < run.end) {
      const double len = uniform(rng, spec.note_min_s, spec.note_max_s);
      const double hz = spec.fixed_f0_hz.value_or(spec.f0_min_hz * std::exp2(std::min(pitch, semis) / 12.0));
      const auto i0 = static_cast<std::size_t>(std::llround(t * fs));
      const auto i1 = std::min(n, static_cast<std::size_t>(std::llround(std::min(t + len, run.end) * fs)));
      for (std::size_t i = i0; i < i1; ++i) note_hz[i] = hz;
      t += len;
      pitch = std::clamp(pitch + std::round(uniform(rng, -5.0, 5.0)), 0.0, std::floor(semis));
    }
  }

  const double vib_phase = uniform(rng, 0.0, 2.0 * std::numbers::pi);
  auto f0_at = [&](double t, double base) {
    return base * std::exp2(spec.vibrato_cents * std::sin(2.0 * std::numbers::pi * spec.vibrato_hz * t + vib_phase) / 1200.0);
  };
  double amp_total = 0.0;
  for (int k = 0; k < spec.n_harmonics; ++k) amp_total += std::pow(spec.rolloff, k);
  const double level = 0.5 / amp_total;  // peak below -6 dBFS
  constexpr double kRampS = 0.005;

  SynthClip clip;
  clip.audio.sample_rate = fs;
  clip.audio.samples.assign(n, 0.0f);
  const double noise_rms = spec.noise_db ? std::pow(10.0, *spec.noise_db / 20.0) : 0.0;
  std::vector<double> phase(static_cast<std::size_t>(spec.n_harmonics), 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    const double t = static_cast<double>(i) / fs;
    double x = 0.0;
    if (note_hz[i] > 0.0) {
      const double f0 = f0_at(t, note_hz[i]);
      double env = 1.0;
      for (const auto& run : runs) {
        if (t >= run.start && t < run.end) env = std::min({1.0, (t - run.start) / kRampS, (run.end - t) / kRampS});
      }
      for (int k = 0; k < spec.n_harmonics; ++k) {
        auto& ph = phase[static_cast<std::size_t>(k)];
        x += std::pow(spec.rolloff, k) * std::sin(ph);
        ph = std::fmod(ph + 2.0 * std::numbers::pi * (k + 1) * f0 / fs, 2.0 * std::numbers::pi);
      }
      x *= level * std::max(0.0, env);
    } else {
      std::fill(phase.begin(), phase.end(), 0.0);
    }
    if (noise_rms > 0.0) x += noise_rms * gaussian(rng);
    clip.audio.samples[i] = static_cast<float>(std::clamp(x, -1.0, 1.0));
  }

  const int hop = CfpConfig{}.hop;
  const std::size_t frames = n / static_cast<std::size_t>(hop) + 1;
  for (std::size_t j = 0; j < frames; ++j) {
    const double t = static_cast<double>(j) * hop / fs;
    const auto i = std::min(n - 1, j * static_cast<std::size_t>(hop));
    clip.annotation.times.push_back(t);
    clip.annotation.freqs.push_back(note_hz[i] > 0.0 ? f0_at(t, note_hz[i]) : 0.0);
  }
  return clip;
}

std::filesystem::path synth_dataset(const SynthSpec& spec, const std::filesystem::path& out_dir) {
  spec.validate();
  std::error_code ec;
  std::filesystem::create_directories(out_dir, ec);
  require(!ec && std::filesystem::is_directory(out_dir), ErrorCode::kIo,
          "cannot create output directory " + out_dir.string());
  const auto manifest_path = out_dir / "manifest.tsv";
  std::ofstream manifest(manifest_path, std::ios::trunc);
  require(static_cast<bool>(manifest), ErrorCode::kIo, "directory " + out_dir.string() + " is not writable");
  for (int c = 0; c < spec.n_clips; ++c) {
    char stem[32];
    std::snprintf(stem, sizeof stem, "clip_%03d", c);
    const SynthClip clip = synth_clip(spec, c);
    write_wav(out_dir / (std::string(stem) + ".wav"), clip.audio);
    save_contour(out_dir / (std::string(stem) + ".txt"), clip.annotation);
    manifest << stem << ".wav\t" << stem << ".txt\t1\n";
  }
  require(static_cast<bool>(manifest.flush()), ErrorCode::kIo, "failed writing " + manifest_path.string());
  return manifest_path;
}

}  // namespace ftanet
