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

#include "heatmap.hpp"

#include <png.h>

#include <algorithm>
#include <cmath>

#include "error.hpp"

namespace ftanet {

std::array<std::uint8_t, 3> colormap(double t) {
  static constexpr double kStops[][3] = {
      {0, 0, 4}, {60, 15, 110}, {150, 40, 110}, {230, 90, 40}, {250, 190, 40}, {252, 255, 220}};
  constexpr int n = 6;
  t = std::clamp(std::isfinite(t) ? t : 0.0, 0.0, 1.0) * (n - 1);
  const int i = std::min(n - 2, static_cast<int>(t));
  const double u = t - i;
  std::array<std::uint8_t, 3> c{};
  for (int k = 0; k < 3; ++k) {
    c[static_cast<std::size_t>(k)] =
        static_cast<std::uint8_t>(std::lround(kStops[i][k] + u * (kStops[i + 1][k] - kStops[i][k])));
  }
  return c;
}

Image render_salience(const SalienceMap& sal) {
  require(sal.n_rows == kSalienceRows && sal.n_frames >= 1 &&
              sal.values.size() == static_cast<std::size_t>(sal.n_rows) * sal.n_frames,
          ErrorCode::kShapeMismatch, "salience map must be 321 x T with T >= 1");
  Image img;
  img.width = sal.n_frames;
  img.height = kStripHeight + kSeparatorHeight + kMelodyBins;
  img.rgb.assign(static_cast<std::size_t>(img.width) * img.height * 3, 0);
  const double lo = std::log10(kHeatmapFloor);
  auto shade = [&](float v) { return colormap((std::log10(std::max<double>(v, kHeatmapFloor)) - lo) / -lo); };
  auto put = [&](int x, int y, std::array<std::uint8_t, 3> c) {
    std::copy(c.begin(), c.end(), img.rgb.begin() + (static_cast<long>(y) * img.width + x) * 3);
  };
  for (int x = 0; x < img.width; ++x) {
    const auto strip = shade(sal.at(kNonMelodyRow, x));
    for (int y = 0; y < kStripHeight; ++y) put(x, y, strip);
    for (int y = kStripHeight; y < kStripHeight + kSeparatorHeight; ++y) put(x, y, {128, 128, 128});
    for (int b = 0; b < kMelodyBins; ++b) put(x, img.height - 1 - b, shade(sal.at(b, x)));
  }
  return img;
}

void write_png(const std::filesystem::path& path, const Image& image) {
  require(image.width > 0 && image.height > 0 &&
              image.rgb.size() == static_cast<std::size_t>(image.width) * image.height * 3,
          ErrorCode::kInvalidArgument, "image buffer does not match its size");
  png_image png{};
  png.version = PNG_IMAGE_VERSION;
  png.width = static_cast<png_uint_32>(image.width);
  png.height = static_cast<png_uint_32>(image.height);
  png.format = PNG_FORMAT_RGB;
  if (!png_image_write_to_file(&png, path.c_str(), 0, image.rgb.data(), 0, nullptr)) {
    const std::string msg = png.message;
    png_image_free(&png);
    fail(ErrorCode::kIo, "cannot write " + path.string() + ": " + msg);
  }
}

}  // namespace ftanet
