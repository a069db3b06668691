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

#include "efl/sigproc.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "efl/errors.hpp"
#include "efl/fft.hpp"
#include "efl/iir.hpp"
#include "efl/parallel.hpp"

namespace efl::sigproc {

namespace {

constexpr double kPi = 3.14159265358979323846;

double dot(const std::vector<double>& a, const std::vector<double>& b) {
  double s = 0.0;
  for (size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

}  // namespace

// ---------------------------------------------------------------------------
// ChirpSpec / AcousticBuffer
// ---------------------------------------------------------------------------

size_t ChirpSpec::sweep_samples() const {
  return static_cast<size_t>(std::llround(sweep_duration * sample_rate));
}

size_t ChirpSpec::period_samples() const {
  return static_cast<size_t>(std::llround(emission_period * sample_rate));
}

void ChirpSpec::validate() const {
  if (sample_rate <= 0.0) throw ConfigError("chirp: sample_rate must be > 0");
  if (f_start <= 0.0 || f_end <= f_start)
    throw ConfigError("chirp: need 0 < f_start < f_end");
  if (f_end >= sample_rate / 2.0)
    throw ConfigError("chirp: f_end must be below Nyquist");
  if (sweep_duration <= 0.0)
    throw ConfigError("chirp: sweep_duration must be > 0");
  if (emission_period < sweep_duration)
    throw ConfigError("chirp: emission_period must cover the sweep");
  if (amplitude <= 0.0 || amplitude > 1.0)
    throw ConfigError("chirp: amplitude must be in (0, 1]");
}

double AcousticBuffer::rms() const {
  if (samples.empty()) return 0.0;
  double s = 0.0;
  for (double v : samples) s += v * v;
  return std::sqrt(s / static_cast<double>(samples.size()));
}

// ---------------------------------------------------------------------------
// Chirp generation
// ---------------------------------------------------------------------------

AcousticBuffer gen_chirp(const ChirpSpec& spec) {
  spec.validate();
  const size_t n_sweep = spec.sweep_samples();
  const size_t n_period = spec.period_samples();
  const double k = spec.bandwidth() / spec.sweep_duration;  // Hz per second

  AcousticBuffer out;
  out.sample_rate = spec.sample_rate;
  out.origin = BufferOrigin::synthetic;
  out.samples.assign(n_period, 0.0);
  for (size_t i = 0; i < n_sweep; ++i) {
    const double t = static_cast<double>(i) / spec.sample_rate;
    const double phase = 2.0 * kPi * (spec.f_start * t + 0.5 * k * t * t);
    out.samples[i] = spec.amplitude * std::sin(phase);
  }
  return out;
}

AcousticBuffer gen_chirp_train(const ChirpSpec& spec, size_t n_samples) {
  const AcousticBuffer one = gen_chirp(spec);
  AcousticBuffer out;
  out.sample_rate = spec.sample_rate;
  out.origin = BufferOrigin::synthetic;
  out.samples.resize(n_samples);
  const size_t p = one.samples.size();
  for (size_t i = 0; i < n_samples; ++i) out.samples[i] = one.samples[i % p];
  return out;
}

double chirp_train_value(const ChirpSpec& spec, double t) {
  if (t < 0.0) {
    const double periods = std::ceil(-t / spec.emission_period);
    t += periods * spec.emission_period;
  }
  const double tm = std::fmod(t, spec.emission_period);
  if (tm >= spec.sweep_duration) return 0.0;
  const double k = spec.bandwidth() / spec.sweep_duration;
  const double phase = 2.0 * kPi * (spec.f_start * tm + 0.5 * k * tm * tm);
  return spec.amplitude * std::sin(phase);
}

// ---------------------------------------------------------------------------
// FMCW geometry
// ---------------------------------------------------------------------------

double expected_freq_shift(double range_m, const FmcwConstants& c) {
  if (range_m < 0.0) throw ConfigError("expected_freq_shift: negative range");
  return 2.0 * range_m * c.B / (c.T * c.v0);
}

double range_resolution(const FmcwConstants& c) { return c.v0 / (2.0 * c.B); }

double sample_resolution(const FmcwConstants& c, double sample_rate) {
  if (sample_rate <= 0.0)
    throw ConfigError("sample_resolution: sample_rate must be positive");
  return c.v0 / (2.0 * sample_rate);
}

double range_from_shift(double df_hz, const FmcwConstants& c) {
  if (df_hz < 0.0) throw ConfigError("range_from_shift: negative shift");
  return c.v0 * df_hz * c.T / (2.0 * c.B);
}

// ---------------------------------------------------------------------------
// Filtering
// ---------------------------------------------------------------------------

AcousticBuffer bandpass(const AcousticBuffer& buf, double lo_hz, double hi_hz,
                        int order) {
  if (buf.samples.empty()) throw DataError("bandpass: empty buffer");
  const SosFilter f = butter_bandpass(order, lo_hz, hi_hz, buf.sample_rate);
  AcousticBuffer out = buf;
  out.samples = f.filtfilt(buf.samples);
  return out;
}

// ---------------------------------------------------------------------------
// Direct-path subtraction
// ---------------------------------------------------------------------------

AcousticBuffer subtract_direct_path(const AcousticBuffer& received,
                                    const AcousticBuffer& direct_template,
                                    SubtractMode mode, double fixed_c) {
  if (received.samples.size() != direct_template.samples.size())
    throw ShapeError("subtract_direct_path: length mismatch");
  if (received.samples.empty())
    throw DataError("subtract_direct_path: empty buffer");

  double c = fixed_c;
  if (mode == SubtractMode::least_squares) {
    const double denom = dot(direct_template.samples, direct_template.samples);
    if (denom <= 0.0)
      throw DegenerateInputError("subtract_direct_path: zero-energy template");
    c = dot(received.samples, direct_template.samples) / denom;
  }

  AcousticBuffer out = received;
  for (size_t i = 0; i < out.samples.size(); ++i)
    out.samples[i] -= c * direct_template.samples[i];
  return out;
}

// ---------------------------------------------------------------------------
// Synchronization
// ---------------------------------------------------------------------------

size_t synchronize(const AcousticBuffer& recording,
                   const AcousticBuffer& chirp) {
  const size_t n = recording.samples.size();
  const size_t m = chirp.samples.size();
  if (m == 0) throw DataError("synchronize: empty template");
  if (n < m)
    throw InsufficientDataError("synchronize: recording shorter than template");

  const double chirp_energy = dot(chirp.samples, chirp.samples);
  if (chirp_energy <= 0.0)
    throw DegenerateInputError("synchronize: zero-energy template");

  // prefix sums of squared samples for O(1) window energies
  std::vector<double> prefix(n + 1, 0.0);
  for (size_t i = 0; i < n; ++i)
    prefix[i + 1] = prefix[i] + recording.samples[i] * recording.samples[i];

  const size_t n_offsets = n - m + 1;
  std::vector<double> score(n_offsets);
  const double* rec = recording.samples.data();
  const double* tpl = chirp.samples.data();
  parallel_for(n_offsets, [&](size_t o) {
    const double window_energy = prefix[o + m] - prefix[o];
    if (window_energy <= 0.0) {
      score[o] = -std::numeric_limits<double>::infinity();
      return;
    }
    double acc = 0.0;
    for (size_t i = 0; i < m; ++i) acc += rec[o + i] * tpl[i];
    score[o] = acc / std::sqrt(window_energy * chirp_energy);
  });

  size_t best = 0;
  double best_score = -std::numeric_limits<double>::infinity();
  for (size_t o = 0; o < n_offsets; ++o) {
    if (score[o] > best_score) {
      best_score = score[o];
      best = o;
    }
  }
  if (!std::isfinite(best_score))
    throw DegenerateInputError("synchronize: silent recording");
  return best;
}

// ---------------------------------------------------------------------------
// Dechirp and echo-band isolation
// ---------------------------------------------------------------------------

AcousticBuffer dechirp(const AcousticBuffer& received,
                       const AcousticBuffer& chirp) {
  if (received.samples.size() != chirp.samples.size())
    throw ShapeError("dechirp: length mismatch");
  AcousticBuffer out = received;
  for (size_t i = 0; i < out.samples.size(); ++i)
    out.samples[i] *= chirp.samples[i];
  return out;
}

AcousticBuffer isolate_echo_band(const AcousticBuffer& dechirped, double lo_hz,
                                 double hi_hz, int order) {
  return bandpass(dechirped, lo_hz, hi_hz, order);
}

// ---------------------------------------------------------------------------
// STFT
// ---------------------------------------------------------------------------

Spectrogram stft_spectrogram(const AcousticBuffer& buf, size_t window_len,
                             size_t hop) {
  if (window_len < 2) throw ConfigError("stft: window too small");
  if (hop == 0) throw ConfigError("stft: hop must be > 0");
  if (buf.samples.size() < window_len)
    throw InsufficientDataError("stft: buffer shorter than one window");

  const size_t n_time = (buf.samples.size() - window_len) / hop + 1;
  const size_t nfft = Fft::next_pow2(window_len);
  const size_t n_freq = nfft / 2 + 1;

  // periodic Hann
  std::vector<double> window(window_len);
  for (size_t i = 0; i < window_len; ++i)
    window[i] =
        0.5 * (1.0 - std::cos(2.0 * kPi * static_cast<double>(i) /
                              static_cast<double>(window_len)));

  Spectrogram sp;
  sp.window_len = window_len;
  sp.hop = hop;
  sp.freq_axis.resize(n_freq);
  for (size_t k = 0; k < n_freq; ++k)
    sp.freq_axis[k] =
        static_cast<double>(k) * buf.sample_rate / static_cast<double>(nfft);
  sp.time_axis.resize(n_time);
  for (size_t t = 0; t < n_time; ++t)
    sp.time_axis[t] = (static_cast<double>(t * hop) +
                       0.5 * static_cast<double>(window_len)) /
                      buf.sample_rate;
  sp.magnitudes.assign(n_freq * n_time, 0.0);

  const Fft fft(nfft);
  parallel_for(n_time, [&](size_t t) {
    std::vector<double> frame(window_len);
    const double* src = buf.samples.data() + t * hop;
    for (size_t i = 0; i < window_len; ++i) frame[i] = src[i] * window[i];
    const auto bins = fft.real_forward(frame.data(), frame.size());
    for (size_t k = 0; k < n_freq; ++k)
      sp.magnitudes[k * n_time + t] = std::abs(bins[k]);
  });
  return sp;
}

// ---------------------------------------------------------------------------
// Full front end
// ---------------------------------------------------------------------------

std::vector<Spectrogram> preprocess(const AcousticBuffer& recording,
                                    const ChirpSpec& spec, double frame_len,
                                    const PreprocessOptions& opt) {
  spec.validate();
  if (frame_len <= 0.0) throw ConfigError("preprocess: frame_len must be > 0");
  if (recording.sample_rate != spec.sample_rate)
    throw ConfigError("preprocess: sample-rate mismatch with chirp spec");

  const AcousticBuffer bp =
      bandpass(recording, opt.band_lo, opt.band_hi, opt.band_order);

  // Synchronize on the band-passed signal: the direct path dominates there,
  // which is exactly the alignment the dechirp reference needs.
  const AcousticBuffer chirp = gen_chirp(spec);
  AcousticBuffer sweep;
  sweep.sample_rate = spec.sample_rate;
  sweep.samples.assign(chirp.samples.begin(),
                       chirp.samples.begin() +
                           static_cast<long>(spec.sweep_samples()));
  // The emitted train is periodic, so alignment only matters modulo the
  // emission period; reducing the best offset keeps the longest usable span.
  const size_t offset = synchronize(bp, sweep) % spec.period_samples();

  // Direct-path template: the emitted train phase-locked to the detected
  // offset, passed through the same band filter so its texture matches the
  // recording's direct component.
  const size_t n = bp.samples.size();
  const size_t period = chirp.samples.size();
  AcousticBuffer train;
  train.sample_rate = spec.sample_rate;
  train.samples.resize(n);
  for (size_t i = 0; i < n; ++i) {
    const long long rel = static_cast<long long>(i) -
                          static_cast<long long>(offset);
    const long long p = static_cast<long long>(period);
    const size_t idx = static_cast<size_t>(((rel % p) + p) % p);
    train.samples[i] = chirp.samples[idx];
  }
  const AcousticBuffer train_bp =
      bandpass(train, opt.band_lo, opt.band_hi, opt.band_order);
  const AcousticBuffer cleaned =
      subtract_direct_path(bp, train_bp, opt.subtract);

  // Dechirp from the synchronization point onward against the raw train.
  AcousticBuffer aligned;
  aligned.sample_rate = spec.sample_rate;
  aligned.origin = recording.origin;
  aligned.samples.assign(cleaned.samples.begin() + static_cast<long>(offset),
                         cleaned.samples.end());
  AcousticBuffer ref;
  ref.sample_rate = spec.sample_rate;
  ref.samples.resize(aligned.samples.size());
  for (size_t i = 0; i < ref.samples.size(); ++i)
    ref.samples[i] = chirp.samples[i % period];
  const AcousticBuffer beat = dechirp(aligned, ref);

  const AcousticBuffer echo =
      isolate_echo_band(beat, opt.echo_lo, opt.echo_hi, opt.echo_order);

  const size_t frame_samples =
      static_cast<size_t>(std::llround(frame_len * spec.sample_rate));
  if (frame_samples < opt.stft_window)
    throw ConfigError("preprocess: frame shorter than the STFT window");
  const size_t n_frames = echo.samples.size() / frame_samples;
  if (n_frames == 0)
    throw InsufficientDataError("preprocess: recording shorter than one frame");

  std::vector<Spectrogram> frames;
  frames.reserve(n_frames);
  for (size_t f = 0; f < n_frames; ++f) {
    AcousticBuffer piece;
    piece.sample_rate = spec.sample_rate;
    piece.origin = recording.origin;
    piece.samples.assign(
        echo.samples.begin() + static_cast<long>(f * frame_samples),
        echo.samples.begin() + static_cast<long>((f + 1) * frame_samples));
    frames.push_back(stft_spectrogram(piece, opt.stft_window, opt.stft_hop));
  }
  return frames;
}

// ---------------------------------------------------------------------------
// Spectral helpers
// ---------------------------------------------------------------------------

double dominant_frequency_hz(const AcousticBuffer& buf, size_t min_fft_len,
                             double lo_hz, double hi_hz) {
  if (buf.samples.empty()) throw DataError("dominant_frequency: empty buffer");
  double bin_hz = 0.0;
  const std::vector<double> mag =
      magnitude_spectrum(buf.samples, buf.sample_rate, min_fft_len, &bin_hz);
  if (hi_hz < 0.0) hi_hz = buf.sample_rate / 2.0;

  size_t best = 0;
  double best_mag = -1.0;
  for (size_t k = 0; k < mag.size(); ++k) {
    const double f = static_cast<double>(k) * bin_hz;
    if (f < lo_hz || f > hi_hz) continue;
    if (mag[k] > best_mag) {
      best_mag = mag[k];
      best = k;
    }
  }
  if (best_mag < 0.0) throw ConfigError("dominant_frequency: empty band");

  // quadratic peak interpolation for sub-bin resolution
  double delta = 0.0;
  if (best > 0 && best + 1 < mag.size()) {
    const double a = mag[best - 1], b = mag[best], c = mag[best + 1];
    const double denom = a - 2.0 * b + c;
    if (std::abs(denom) > 1e-30) delta = 0.5 * (a - c) / denom;
    delta = std::clamp(delta, -0.5, 0.5);
  }
  return (static_cast<double>(best) + delta) * bin_hz;
}

double band_energy_fraction(const AcousticBuffer& buf, double lo_hz,
                            double hi_hz) {
  if (buf.samples.empty())
    throw DataError("band_energy_fraction: empty buffer");
  double bin_hz = 0.0;
  const std::vector<double> mag =
      magnitude_spectrum(buf.samples, buf.sample_rate, buf.samples.size(),
                         &bin_hz);
  double total = 0.0, band = 0.0;
  for (size_t k = 0; k < mag.size(); ++k) {
    const double e = mag[k] * mag[k];
    total += e;
    const double f = static_cast<double>(k) * bin_hz;
    if (f >= lo_hz && f <= hi_hz) band += e;
  }
  if (total <= 0.0) return 0.0;
  return band / total;
}

}  // namespace efl::sigproc
