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

#include <array>
#include <cstdint>
#include <filesystem>
#include <vector>

#include "model.hpp"

namespace ftanet {

/// RGB raster, row 0 at the top.
struct Image {
  int width = 0;
  int height = 0;
  std::vector<std::uint8_t> rgb;
};

// Salience below this floor maps to the darkest colour.
inline constexpr double kHeatmapFloor = 1e-6;
inline constexpr int kStripHeight = 8;
inline constexpr int kSeparatorHeight = 2;

/// Maps t in [0, 1] to a black-purple-orange-white ramp whose luminance rises monotonically.
std::array<std::uint8_t, 3> colormap(double t);

/// One column per frame, pitch bins upward from the bottom; the non-melody row
/// is drawn as a strip above them behind a grey separator.
Image render_salience(const SalienceMap& sal);

void write_png(const std::filesystem::path& path, const Image& image);

}  // namespace ftanet
