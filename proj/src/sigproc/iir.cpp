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

#include "efl/iir.hpp"

#include <algorithm>
#include <cmath>
#include <complex>
#include <string>

#include "efl/errors.hpp"

namespace efl {

namespace {

using cplx = std::complex<double>;

// Butterworth analog prototype poles (unit cutoff, left half-plane).
std::vector<cplx> prototype_poles(int order) {
  std::vector<cplx> poles;
  poles.reserve(order);
  for (int k = 0; k < order; ++k) {
    double theta = M_PI * (2.0 * k + order + 1.0) / (2.0 * order);
    poles.emplace_back(std::cos(theta), std::sin(theta));
  }
  return poles;
}

cplx bilinear(cplx s, double fs2) {
  // fs2 = 2 * sample_rate
  return (fs2 + s) / (fs2 - s);
}

// Group digital poles into biquad denominators. Complex poles are taken with
// imag > 0 and paired with their conjugate; real poles are paired in order.
std::vector<Biquad> poles_to_sections(const std::vector<cplx>& zpoles,
                                      double zero_plus, double zero_minus,
                                      bool bandpass) {
  std::vector<cplx> upper;
  std::vector<double> reals;
  const double tol = 1e-10;
  for (const auto& p : zpoles) {
    if (p.imag() > tol) {
      upper.push_back(p);
    } else if (std::abs(p.imag()) <= tol) {
      reals.push_back(p.real());
    }
  }
  std::sort(upper.begin(), upper.end(), [](const cplx& a, const cplx& b) {
    if (a.real() != b.real()) return a.real() < b.real();
    return a.imag() < b.imag();
  });
  std::sort(reals.begin(), reals.end());

  std::vector<Biquad> sections;
  for (const auto& p : upper) {
    Biquad s{};
    s.a1 = -2.0 * p.real();
    s.a2 = std::norm(p);
    sections.push_back(s);
  }
  for (size_t i = 0; i + 1 < reals.size(); i += 2) {
    Biquad s{};
    s.a1 = -(reals[i] + reals[i + 1]);
    s.a2 = reals[i] * reals[i + 1];
    sections.push_back(s);
  }
  if (reals.size() % 2 == 1) {
    Biquad s{};
    s.a1 = -reals.back();
    s.a2 = 0.0;
    sections.push_back(s);
  }

  // Zeros: band-pass puts one zero at +1 and one at -1 in every section;
  // low-pass puts a double zero at -1 (first-order leftover gets a single).
  for (size_t i = 0; i < sections.size(); ++i) {
    Biquad& s = sections[i];
    bool first_order = (s.a2 == 0.0) && !bandpass && (reals.size() % 2 == 1) &&
                       (i == sections.size() - 1);
    if (bandpass) {
      s.b0 = 1.0;
      s.b1 = -(zero_plus + zero_minus);
      s.b2 = zero_plus * zero_minus;
    } else if (first_order) {
      s.b0 = 1.0;
      s.b1 = -zero_minus;
      s.b2 = 0.0;
    } else {
      s.b0 = 1.0;
      s.b1 = -2.0 * zero_minus;
      s.b2 = zero_minus * zero_minus;
    }
  }
  return sections;
}

double cascade_magnitude(const std::vector<Biquad>& sections, double theta) {
  cplx z = {std::cos(theta), std::sin(theta)};
  cplx zi = 1.0 / z;
  cplx h = {1.0, 0.0};
  for (const auto& s : sections) {
    cplx num = s.b0 + s.b1 * zi + s.b2 * zi * zi;
    cplx den = 1.0 + s.a1 * zi + s.a2 * zi * zi;
    h *= num / den;
  }
  return std::abs(h);
}

}  // namespace

std::vector<double> SosFilter::apply(const std::vector<double>& x) const {
  std::vector<double> y(x.size());
  for (size_t i = 0; i < x.size(); ++i) y[i] = gain * x[i];
  for (const auto& s : sections) {
    double s1 = 0.0, s2 = 0.0;
    for (size_t i = 0; i < y.size(); ++i) {
      double xi = y[i];
      double yi = s.b0 * xi + s1;
      s1 = s.b1 * xi - s.a1 * yi + s2;
      s2 = s.b2 * xi - s.a2 * yi;
      y[i] = yi;
    }
  }
  return y;
}

std::vector<double> SosFilter::filtfilt(const std::vector<double>& x) const {
  std::vector<double> y = apply(x);
  std::reverse(y.begin(), y.end());
  y = apply(y);
  std::reverse(y.begin(), y.end());
  return y;
}

double SosFilter::magnitude_at(double freq_hz, double sample_rate) const {
  double theta = 2.0 * M_PI * freq_hz / sample_rate;
  return gain * cascade_magnitude(sections, theta);
}

SosFilter butter_bandpass(int order, double lo_hz, double hi_hz,
                          double sample_rate) {
  if (order < 1) throw ConfigError("filter order must be >= 1");
  if (!(0.0 < lo_hz && lo_hz < hi_hz && hi_hz < sample_rate / 2.0)) {
    throw ConfigError("band-pass corners must satisfy 0 < lo < hi < fs/2 (lo=" +
                      std::to_string(lo_hz) + ", hi=" + std::to_string(hi_hz) +
                      ", fs=" + std::to_string(sample_rate) + ")");
  }
  double fs2 = 2.0 * sample_rate;
  double w1 = fs2 * std::tan(M_PI * lo_hz / sample_rate);
  double w2 = fs2 * std::tan(M_PI * hi_hz / sample_rate);
  double w0 = std::sqrt(w1 * w2);
  double bw = w2 - w1;

  std::vector<cplx> zpoles;
  for (const auto& p : prototype_poles(order)) {
    cplx bp = bw * p * 0.5;
    cplx disc = std::sqrt(bp * bp - w0 * w0);
    zpoles.push_back(bilinear(bp + disc, fs2));
    zpoles.push_back(bilinear(bp - disc, fs2));
  }

  SosFilter f;
  f.sections = poles_to_sections(zpoles, 1.0, -1.0, /*bandpass=*/true);
  double theta0 = 2.0 * std::atan(w0 / fs2);
  double mag = cascade_magnitude(f.sections, theta0);
  if (mag <= 0.0) throw NumericError("degenerate band-pass design");
  f.gain = 1.0 / mag;
  return f;
}

SosFilter butter_lowpass(int order, double cutoff_hz, double sample_rate) {
  if (order < 1) throw ConfigError("filter order must be >= 1");
  if (!(0.0 < cutoff_hz && cutoff_hz < sample_rate / 2.0)) {
    throw ConfigError("low-pass cutoff must satisfy 0 < fc < fs/2");
  }
  double fs2 = 2.0 * sample_rate;
  double wc = fs2 * std::tan(M_PI * cutoff_hz / sample_rate);

  std::vector<cplx> zpoles;
  for (const auto& p : prototype_poles(order)) {
    zpoles.push_back(bilinear(wc * p, fs2));
  }

  SosFilter f;
  f.sections = poles_to_sections(zpoles, 1.0, -1.0, /*bandpass=*/false);
  double mag = cascade_magnitude(f.sections, 0.0);
  if (mag <= 0.0) throw NumericError("degenerate low-pass design");
  f.gain = 1.0 / mag;
  return f;
}

}  // namespace efl
