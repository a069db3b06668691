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

#include "efl/fft.hpp"

#include <cmath>
#include <stdexcept>

#include "efl/errors.hpp"

namespace efl {

size_t Fft::next_pow2(size_t n) {
  size_t p = 1;
  while (p < n) p <<= 1;
  return p;
}

Fft::Fft(size_t n) : n_(n) {
  if (n == 0 || (n & (n - 1)) != 0) {
    throw ConfigError("FFT size must be a power of two, got " +
                      std::to_string(n));
  }
  rev_.resize(n);
  size_t log2n = 0;
  while ((size_t{1} << log2n) < n) ++log2n;
  for (size_t i = 0; i < n; ++i) {
    size_t r = 0;
    for (size_t b = 0; b < log2n; ++b) {
      if (i & (size_t{1} << b)) r |= size_t{1} << (log2n - 1 - b);
    }
    rev_[i] = r;
  }
  tw_.resize(n / 2);
  for (size_t i = 0; i < n / 2; ++i) {
    double ang = -2.0 * M_PI * static_cast<double>(i) / static_cast<double>(n);
    tw_[i] = {std::cos(ang), std::sin(ang)};
  }
}

void Fft::forward(std::vector<std::complex<double>>& a) const {
  if (a.size() != n_) throw ShapeError("FFT input length != plan size");
  for (size_t i = 0; i < n_; ++i) {
    size_t r = rev_[i];
    if (i < r) std::swap(a[i], a[r]);
  }
  for (size_t len = 2; len <= n_; len <<= 1) {
    size_t step = n_ / len;
    for (size_t i = 0; i < n_; i += len) {
      for (size_t j = 0; j < len / 2; ++j) {
        auto u = a[i + j];
        auto v = a[i + j + len / 2] * tw_[j * step];
        a[i + j] = u + v;
        a[i + j + len / 2] = u - v;
      }
    }
  }
}

std::vector<std::complex<double>> Fft::real_forward(const double* x,
                                                    size_t len) const {
  std::vector<std::complex<double>> buf(n_, {0.0, 0.0});
  size_t m = len < n_ ? len : n_;
  for (size_t i = 0; i < m; ++i) buf[i] = {x[i], 0.0};
  forward(buf);
  buf.resize(n_ / 2 + 1);
  return buf;
}

std::vector<double> magnitude_spectrum(const std::vector<double>& x,
                                       double sample_rate, size_t min_fft_len,
                                       double* out_bin_hz) {
  size_t nfft = Fft::next_pow2(x.size() > min_fft_len ? x.size() : min_fft_len);
  Fft plan(nfft);
  auto spec = plan.real_forward(x.data(), x.size());
  std::vector<double> mag(spec.size());
  for (size_t i = 0; i < spec.size(); ++i) mag[i] = std::abs(spec[i]);
  if (out_bin_hz) *out_bin_hz = sample_rate / static_cast<double>(nfft);
  return mag;
}

}  // namespace efl
