// Copyright 2026 The EFL Authors
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

#ifndef EFL_IIR_HPP
#define EFL_IIR_HPP

#include <vector>

namespace efl {

// One second-order section, a0 normalized to 1.
struct Biquad {
  double b0, b1, b2;
  double a1, a2;
};

// Cascade of second-order sections with a scalar input gain.
struct SosFilter {
  std::vector<Biquad> sections;
  double gain = 1.0;

  // single forward pass, zero initial conditions
  std::vector<double> apply(const std::vector<double>& x) const;

  // forward-backward pass (zero phase, squared magnitude response)
  std::vector<double> filtfilt(const std::vector<double>& x) const;

  // |H(e^{j 2 pi f / fs})|
  double magnitude_at(double freq_hz, double sample_rate) const;
};

// Butterworth designs via the bilinear transform. `order` is the analog
// prototype order; the band-pass therefore has 2*order poles.
SosFilter butter_bandpass(int order, double lo_hz, double hi_hz,
                          double sample_rate);
SosFilter butter_lowpass(int order, double cutoff_hz, double sample_rate);

}  // namespace efl

#endif  // EFL_IIR_HPP
