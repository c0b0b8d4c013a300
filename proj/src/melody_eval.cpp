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

#include "melody_eval.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "error.hpp"

namespace ftanet {

bool is_uniform(const std::vector<double>& times, double tol) {
  if (times.size() < 3) return true;
  const double hop = (times.back() - times.front()) / static_cast<double>(times.size() - 1);
  for (std::size_t i = 0; i < times.size(); ++i) {
    if (std::abs(times[i] - (times.front() + hop * static_cast<double>(i))) > tol) return false;
  }
  return true;
}

MelodyContour decode_salience(const SalienceMap& sal, const LogFreqGrid& grid) {
  require(sal.n_rows == grid.n_bins + 1, ErrorCode::kShapeMismatch,
          "salience map has " + std::to_string(sal.n_rows) + " rows, expected " +
              std::to_string(grid.n_bins + 1));
  require(sal.frame_times.size() == static_cast<std::size_t>(sal.n_frames), ErrorCode::kShapeMismatch,
          "salience map frame times do not match its width");
  MelodyContour out;
  out.times = sal.frame_times;
  out.freqs.resize(static_cast<std::size_t>(sal.n_frames));
  for (int t = 0; t < sal.n_frames; ++t) {
    int best_pitch = 0;
    for (int r = 1; r < grid.n_bins; ++r) {
      if (sal.at(r, t) > sal.at(best_pitch, t)) best_pitch = r;
    }
    const bool voiced = sal.at(best_pitch, t) >= sal.at(grid.n_bins, t);
    const double hz = bin_to_hz(best_pitch, grid);
    out.freqs[static_cast<std::size_t>(t)] = voiced ? hz : -hz;
  }
  return out;
}

MelodyContour resample_contour(const MelodyContour& ref, const std::vector<double>& times, double uniform_tol) {
  require(ref.size() > 0, ErrorCode::kEmptyInput, "cannot resample an empty reference contour");
  require(ref.freqs.size() == ref.size(), ErrorCode::kShapeMismatch, "contour times and freqs differ in length");
  require(is_uniform(times, uniform_tol), ErrorCode::kInvalidArgument, "target time grid is not uniform");
  double half_hop = 0.0;
  if (ref.size() > 1) {
    half_hop = 0.5 * (ref.times.back() - ref.times.front()) / static_cast<double>(ref.size() - 1);
  } else if (times.size() > 1) {
    half_hop = 0.5 * (times[1] - times[0]);
  }
  constexpr double kTieSlack = 1e-9;
  MelodyContour out;
  out.times = times;
  out.freqs.assign(times.size(), 0.0);
  for (std::size_t i = 0; i < times.size(); ++i) {
    const double t = times[i];
    if (t < ref.times.front() - half_hop - kTieSlack || t > ref.times.back() + half_hop + kTieSlack) continue;
    const auto it = std::lower_bound(ref.times.begin(), ref.times.end(), t);
    std::size_t j = static_cast<std::size_t>(it - ref.times.begin());
    if (j == ref.size()) {
      j = ref.size() - 1;
    } else if (j > 0 && (t - ref.times[j - 1]) <= (ref.times[j] - t) + kTieSlack) {
      --j;
    }
    out.freqs[i] = ref.freqs[j];
  }
  return out;
}

double fold_cents(double cents) { return cents - 1200.0 * std::floor((cents + 600.0) / 1200.0); }

EvalReport evaluate(const MelodyContour& ref, const MelodyContour& est, double tolerance_cents) {
  require(ref.size() > 0, ErrorCode::kEmptyInput, "evaluation needs at least one frame");
  require(ref.freqs.size() == ref.size() && est.freqs.size() == est.size(), ErrorCode::kShapeMismatch,
          "contour times and freqs differ in length");
  require(est.size() == ref.size(), ErrorCode::kShapeMismatch,
          "reference has " + std::to_string(ref.size()) + " frames, estimate has " + std::to_string(est.size()));
  for (std::size_t i = 0; i < ref.size(); ++i) {
    require(std::abs(ref.times[i] - est.times[i]) <= 1e-6, ErrorCode::kShapeMismatch,
            "reference and estimate are on different time grids (frame " + std::to_string(i) + ")");
  }
  EvalReport r;
  r.n_frames = ref.size();
  std::size_t pitch_hits = 0, chroma_hits = 0, voiced_hits = 0, false_alarms = 0, unvoiced_hits = 0,
              overall_hits = 0;
  for (std::size_t i = 0; i < ref.size(); ++i) {
    const double rf = ref.freqs[i], ef = est.freqs[i];
    const bool ref_voiced = rf > 0.0;
    const bool est_voiced = ef > 0.0;
    if (!ref_voiced) {
      ++r.n_ref_unvoiced;
      if (est_voiced) {
        ++false_alarms;
      } else {
        ++unvoiced_hits;
      }
      continue;
    }
    ++r.n_ref_voiced;
    if (est_voiced) ++voiced_hits;
    if (ef == 0.0) continue;  // no pitch estimate at all
    const double cents = 1200.0 * std::log2(std::abs(ef) / rf);
    const bool pitch_ok = std::abs(cents) <= tolerance_cents;
    if (pitch_ok) ++pitch_hits;
    if (std::abs(fold_cents(cents)) <= tolerance_cents) ++chroma_hits;
    if (pitch_ok && est_voiced) ++overall_hits;
  }
  auto ratio = [](std::size_t num, std::size_t den) {
    return den == 0 ? 0.0 : static_cast<double>(num) / static_cast<double>(den);
  };
  r.rpa = ratio(pitch_hits, r.n_ref_voiced);
  r.rca = ratio(chroma_hits, r.n_ref_voiced);
  r.vr = ratio(voiced_hits, r.n_ref_voiced);
  r.vfa = ratio(false_alarms, r.n_ref_unvoiced);
  r.oa = ratio(overall_hits + unvoiced_hits, r.n_frames);
  return r;
}

EvalReport evaluate_aligned(const MelodyContour& ref, const MelodyContour& est, double tolerance_cents) {
  bool same_grid = ref.size() == est.size();
  for (std::size_t i = 0; same_grid && i < ref.size(); ++i) same_grid = std::abs(ref.times[i] - est.times[i]) <= 1e-6;
  if (same_grid) return evaluate(ref, est, tolerance_cents);
  require(est.size() > 0, ErrorCode::kEmptyInput, "estimate contour is empty");
  require(is_uniform(est.times, 1e-6), ErrorCode::kInvalidArgument,
          "contours are on different time grids and the estimate grid is not uniform");
  return evaluate(resample_contour(ref, est.times, 1e-6), est, tolerance_cents);
}

MelodyContour load_contour(const std::filesystem::path& path) {
  std::ifstream in(path);
  require(static_cast<bool>(in), std::filesystem::exists(path) ? ErrorCode::kIo : ErrorCode::kNotFound,
          "cannot open contour file " + path.string());
  MelodyContour c;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    std::replace(line.begin(), line.end(), ',', ' ');
    std::istringstream fields(line);
    std::string a, b, extra;
    if (!(fields >> a)) continue;  // blank line
    const std::string where = path.string() + ":" + std::to_string(line_no) + ": ";
    require(static_cast<bool>(fields >> b) && !(fields >> extra), ErrorCode::kParse,
            where + "expected two columns (time, frequency)");
    double t = 0.0, f = 0.0;
    std::size_t used_a = 0, used_b = 0;
    try {
      t = std::stod(a, &used_a);
      f = std::stod(b, &used_b);
    } catch (const std::exception&) {
      fail(ErrorCode::kParse, where + "non-numeric token");
    }
    require(used_a == a.size() && used_b == b.size() && std::isfinite(t) && std::isfinite(f), ErrorCode::kParse,
            where + "non-numeric token");
    require(c.times.empty() || t > c.times.back(), ErrorCode::kParse, where + "times must be strictly increasing");
    const double mag = std::abs(f);
    require(mag == 0.0 || (mag >= kMinContourHz && mag <= kMaxContourHz), ErrorCode::kParse,
            where + "frequency outside 20..5000 Hz");
    c.times.push_back(t);
    c.freqs.push_back(f);
  }
  require(!c.times.empty(), ErrorCode::kEmptyInput, path.string() + ": contour file has no frames");
  return c;
}

void save_contour(const std::filesystem::path& path, const MelodyContour& contour) {
  require(contour.freqs.size() == contour.size(), ErrorCode::kShapeMismatch, "contour times and freqs differ in length");
  std::ofstream out(path, std::ios::trunc);
  require(static_cast<bool>(out), ErrorCode::kIo, "cannot open " + path.string() + " for writing");
  char buf[64];
  for (std::size_t i = 0; i < contour.size(); ++i) {
    std::snprintf(buf, sizeof buf, "%.10f\t%.6f\n", contour.times[i], contour.freqs[i]);
    out << buf;
  }
  require(static_cast<bool>(out.flush()), ErrorCode::kIo, "failed writing " + path.string());
}

std::string report_json(const EvalReport& r) {
  const nlohmann::ordered_json j = {{"oa", r.oa},
                                    {"rpa", r.rpa},
                                    {"rca", r.rca},
                                    {"vr", r.vr},
                                    {"vfa", r.vfa},
                                    {"n_frames", r.n_frames},
                                    {"n_ref_voiced", r.n_ref_voiced},
                                    {"n_ref_unvoiced", r.n_ref_unvoiced}};
  return j.dump(2);
}

std::string report_line(const EvalReport& r) {
  char buf[128];
  std::snprintf(buf, sizeof buf, "OA %.1f RPA %.1f RCA %.1f VR %.1f VFA %.1f", 100.0 * r.oa, 100.0 * r.rpa,
                100.0 * r.rca, 100.0 * r.vr, 100.0 * r.vfa);
  return buf;
}

}  // namespace ftanet
