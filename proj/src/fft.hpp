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

#include <complex>
#include <cstddef>
#include <span>

namespace ftanet {

/// Real-input FFT of a fixed size backed by FFTW (double precision).
/// Plans are built with FFTW_ESTIMATE so results do not depend on timing.
class RealFft {
 public:
  explicit RealFft(std::size_t size);
  ~RealFft();
  RealFft(const RealFft&) = delete;
  RealFft& operator=(const RealFft&) = delete;

  std::size_t size() const { return size_; }
  std::size_t n_bins() const { return size_ / 2 + 1; }

  /// in: size() samples; out: n_bins() coefficients (unnormalized).
  void forward(std::span<const double> in, std::span<std::complex<double>> out);
  /// in: n_bins() coefficients; out: size() samples (unnormalized, no 1/N).
  void inverse(std::span<const std::complex<double>> in, std::span<double> out);

 private:
  std::size_t size_;
  double* real_;
  void* spectrum_;  // fftw_complex*
  void* forward_plan_;
  void* inverse_plan_;
};

}  // namespace ftanet
