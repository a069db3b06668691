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

#ifndef EFL_FFT_HPP
#define EFL_FFT_HPP

#include <complex>
#include <cstddef>
#include <vector>

namespace efl {

// Radix-2 FFT with precomputed twiddles. Sizes must be powers of two.
class Fft {
 public:
  explicit Fft(size_t n);

  size_t size() const { return n_; }

  // in-place complex transform (forward)
  void forward(std::vector<std::complex<double>>& a) const;

  // real input (zero-padded/truncated to n) -> first n/2+1 bins
  std::vector<std::complex<double>> real_forward(const double* x,
                                                 size_t len) const;

  static size_t next_pow2(size_t n);

 private:
  size_t n_;
  std::vector<size_t> rev_;
  std::vector<std::complex<double>> tw_;
};

// Magnitude spectrum of an arbitrary-length real signal, zero-padded to at
// least min_fft_len (power of two). Returns |X_k| for k = 0..nfft/2 and the
// bin spacing via out_bin_hz.
std::vector<double> magnitude_spectrum(const std::vector<double>& x,
                                       double sample_rate, size_t min_fft_len,
                                       double* out_bin_hz);

}  // namespace efl

#endif  // EFL_FFT_HPP
