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

#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "cfp.hpp"
#include "model.hpp"

namespace ftanet {

/// Per-frame pitch track. freqs > 0 voiced, < 0 unvoiced with a shadow pitch
/// estimate of |f|, 0 unvoiced without estimate.
struct MelodyContour {
  std::vector<double> times;
  std::vector<double> freqs;

  std::size_t size() const { return times.size(); }
};

struct EvalReport {
  double oa = 0.0;
  double rpa = 0.0;
  double rca = 0.0;
  double vr = 0.0;
  double vfa = 0.0;
  std::size_t n_frames = 0;
  std::size_t n_ref_voiced = 0;
  std::size_t n_ref_unvoiced = 0;
};

inline constexpr double kDefaultCentTolerance = 50.0;
inline constexpr double kMinContourHz = 20.0;
inline constexpr double kMaxContourHz = 5000.0;

/// True when the spacing of `times` is constant within `tol` seconds.
bool is_uniform(const std::vector<double>& times, double tol = 1e-9);

/// Argmax decoding with the non-melody row; ties go to the lower row.
MelodyContour decode_salience(const SalienceMap& sal, const LogFreqGrid& grid = {});

/// Nearest-neighbour lookup of ref at each of `times` (ties to the earlier
/// frame); points further than half a reference hop outside ref are unvoiced.
MelodyContour resample_contour(const MelodyContour& ref, const std::vector<double>& times,
                               double uniform_tol = 1e-9);

/// Octave-folded cent difference in [-600, 600).
double fold_cents(double cents);

/// Both contours must share one time grid (within 1e-6 s).
EvalReport evaluate(const MelodyContour& ref, const MelodyContour& est,
                    double tolerance_cents = kDefaultCentTolerance);

/// Evaluates directly when both contours share a grid; otherwise the reference
/// is resampled onto the estimate's grid, which must be uniform.
EvalReport evaluate_aligned(const MelodyContour& ref, const MelodyContour& est,
                            double tolerance_cents = kDefaultCentTolerance);

/// Two numeric columns (time, Hz) per line, separated by whitespace or a comma.
MelodyContour load_contour(const std::filesystem::path& path);
void save_contour(const std::filesystem::path& path, const MelodyContour& contour);

std::string report_json(const EvalReport& report);
/// "OA 85.9 RPA ... VFA ..." with percentages to one decimal.
std::string report_line(const EvalReport& report);

}  // namespace ftanet
