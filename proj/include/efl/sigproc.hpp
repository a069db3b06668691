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

#ifndef EFL_SIGPROC_HPP
#define EFL_SIGPROC_HPP

#include <cstddef>
#include <cstdint>
#include <vector>

namespace efl::sigproc {

// ---------------------------------------------------------------------------
// Types
// ---------------------------------------------------------------------------

// Linear up-chirp probe description. Defaults follow the sensing setup this
// library targets: a 25 ms sweep over 19-23 kHz emitted every 50 ms at 48 kHz.
struct ChirpSpec {
  double f_start = 19000.0;        // Hz
  double f_end = 23000.0;          // Hz
  double sweep_duration = 0.025;   // seconds (T)
  double emission_period = 0.050;  // seconds between emission starts
  double sample_rate = 48000.0;    // Hz (F_s)
  double amplitude = 1.0;          // (0, 1]

  double bandwidth() const { return f_end - f_start; }
  size_t sweep_samples() const;
  size_t period_samples() const;

  // throws ConfigError when any invariant is violated
  void validate() const;
};

enum class BufferOrigin { synthetic, file };

struct AcousticBuffer {
  std::vector<double> samples;
  double sample_rate = 48000.0;
  BufferOrigin origin = BufferOrigin::synthetic;

  size_t size() const { return samples.size(); }
  double duration() const {
    return static_cast<double>(samples.size()) / sample_rate;
  }
  double rms() const;
};

// Magnitude time-frequency matrix of one analysis window. Row-major,
// magnitudes[f * n_time + t].
struct Spectrogram {
  std::vector<double> magnitudes;
  std::vector<double> freq_axis;  // Hz, ascending, length n_freq
  std::vector<double> time_axis;  // seconds (window centers), length n_time
  size_t window_len = 0;          // samples
  size_t hop = 0;                 // samples

  size_t n_freq() const { return freq_axis.size(); }
  size_t n_time() const { return time_axis.size(); }
  double at(size_t f, size_t t) const { return magnitudes[f * n_time() + t]; }
  double& at(size_t f, size_t t) { return magnitudes[f * n_time() + t]; }
};

// Constants of the ranging geometry.
struct FmcwConstants {
  double v0 = 340.0;    // speed of sound, m/s
  double B = 4000.0;    // sweep bandwidth, Hz
  double T = 0.025;     // sweep duration, s

  static FmcwConstants from_chirp(const ChirpSpec& c) {
    return {340.0, c.bandwidth(), c.sweep_duration};
  }
};

enum class SubtractMode { fixed, least_squares };

// Pipeline knobs that the sensing geometry fixes but a caller may override.
struct PreprocessOptions {
  double band_lo = 19000.0;       // raw-signal band-pass corners, Hz
  double band_hi = 23000.0;
  int band_order = 4;
  double echo_lo = 190.0;         // dechirped echo band, Hz
  double echo_hi = 500.0;
  int echo_order = 4;
  size_t stft_window = 512;       // samples
  size_t stft_hop = 128;          // samples
  SubtractMode subtract = SubtractMode::least_squares;
};

// ---------------------------------------------------------------------------
// Operations
// ---------------------------------------------------------------------------

// s(t) = A sin(2 pi (f_start t + B/(2T) t^2)) on [0, T), zero to the end of
// the emission period.
AcousticBuffer gen_chirp(const ChirpSpec& spec);

// Chirp train covering n_samples, sweep starting at every emission period.
AcousticBuffer gen_chirp_train(const ChirpSpec& spec, size_t n_samples);

// |df| = 2 R B / (T v0)
double expected_freq_shift(double range_m, const FmcwConstants& c);

// d_r = v0 / (2 B)
double range_resolution(const FmcwConstants& c);

// Range change covered by one sample of extra echo delay: v0 / (2 Fs).
double sample_resolution(const FmcwConstants& c, double sample_rate);

// R = v0 |df| T / (2 B); inverse of expected_freq_shift
double range_from_shift(double df_hz, const FmcwConstants& c);

// Zero-phase Butterworth band-pass (forward-backward).
AcousticBuffer bandpass(const AcousticBuffer& buf, double lo_hz, double hi_hz,
                        int order);

// S - c * S_d. fixed mode uses c = fixed_c (0.9 unless overridden);
// least-squares minimizes ||S - c S_d|| giving c = <S,S_d>/<S_d,S_d>.
AcousticBuffer subtract_direct_path(const AcousticBuffer& received,
                                    const AcousticBuffer& direct_template,
                                    SubtractMode mode, double fixed_c = 0.9);

// Offset (into `recording`) maximizing normalized cross-correlation against
// the chirp template. Ties resolve to the smallest offset.
size_t synchronize(const AcousticBuffer& recording,
                   const AcousticBuffer& chirp);

// Element-wise product with the reference chirp; each echo at range R turns
// into a sinusoid at 2 R B / (T v0).
AcousticBuffer dechirp(const AcousticBuffer& received,
                       const AcousticBuffer& chirp);

// Butterworth band selection on the dechirped signal; keeps the beat band of
// the near-face range window.
AcousticBuffer isolate_echo_band(const AcousticBuffer& dechirped,
                                 double lo_hz, double hi_hz, int order = 4);

// Hann-window magnitude STFT. n_time = floor((len - window)/hop) + 1;
// the FFT length is `window_len` rounded up to a power of two.
Spectrogram stft_spectrogram(const AcousticBuffer& buf, size_t window_len,
                             size_t hop);

// Full front end: band-pass -> direct-path subtraction -> synchronization ->
// dechirp -> echo-band isolation -> one STFT spectrogram per frame_len frame.
std::vector<Spectrogram> preprocess(const AcousticBuffer& recording,
                                    const ChirpSpec& spec, double frame_len,
                                    const PreprocessOptions& opt = {});

// ---------------------------------------------------------------------------
// Small helpers shared by tests and the simulator
// ---------------------------------------------------------------------------

// Instantaneous emitted amplitude at time t (seconds) for a periodic train.
double chirp_train_value(const ChirpSpec& spec, double t);

double dominant_frequency_hz(const AcousticBuffer& buf, size_t min_fft_len,
                             double lo_hz = 0.0, double hi_hz = -1.0);

double band_energy_fraction(const AcousticBuffer& buf, double lo_hz,
                            double hi_hz);

}  // namespace efl::sigproc

#endif  // EFL_SIGPROC_HPP
