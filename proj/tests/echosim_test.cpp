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

#include "efl/echosim.hpp"

#include <cmath>
#include <map>
#include <set>
#include <vector>

#include <doctest.h>

#include "efl/errors.hpp"
#include "efl/sigproc.hpp"

using namespace efl;
using namespace efl::echosim;
using sigproc::AcousticBuffer;
using sigproc::ChirpSpec;
using sigproc::Spectrogram;

namespace {

SceneSpec bare_scene() {
  SceneSpec s;
  s.face_distance = 0.35;
  s.person_id = "p0";
  s.domain_id = "d0";
  return s;
}

double l2_diff(const std::vector<double>& a, const std::vector<double>& b) {
  double s = 0.0;
  for (size_t i = 0; i < a.size(); ++i) {
    const double d = a[i] - b[i];
    s += d * d;
  }
  return std::sqrt(s);
}

std::vector<double> mean_magnitudes(const std::vector<LabeledSample>& set,
                                    const std::string& domain, int half) {
  std::vector<double> acc;
  size_t count = 0;
  size_t idx = 0;
  for (const LabeledSample& s : set) {
    if (s.domain_id != domain) continue;
    const size_t my_idx = idx++;
    if (half == 0 && my_idx % 2 != 0) continue;
    if (half == 1 && my_idx % 2 != 1) continue;
    if (acc.empty()) acc.assign(s.spectrogram.magnitudes.size(), 0.0);
    for (size_t i = 0; i < acc.size(); ++i)
      acc[i] += s.spectrogram.magnitudes[i];
    ++count;
  }
  for (double& v : acc) v /= static_cast<double>(count);
  return acc;
}

}  // namespace

TEST_CASE("expression templates are deterministic and distinct") {
  const auto a1 = expression_template(ExpressionClass::anger, 42);
  const auto a2 = expression_template(ExpressionClass::anger, 42);
  REQUIRE(a1.size() == a2.size());
  for (size_t i = 0; i < a1.size(); ++i) {
    CHECK(a1[i].motion_freq == a2[i].motion_freq);
    CHECK(a1[i].base_distance == a2[i].base_distance);
    CHECK(a1[i].motion_phase == a2[i].motion_phase);
  }

  // every class pair differs in at least one reflector's motion_freq
  for (int c1 = 0; c1 < kNumClasses; ++c1) {
    for (int c2 = c1 + 1; c2 < kNumClasses; ++c2) {
      const auto t1 =
          expression_template(static_cast<ExpressionClass>(c1), 7);
      const auto t2 =
          expression_template(static_cast<ExpressionClass>(c2), 7);
      bool differs = t1.size() != t2.size();
      for (size_t r = 0; r < std::min(t1.size(), t2.size()); ++r)
        if (t1[r].motion_freq != t2[r].motion_freq) differs = true;
      CHECK(differs);
    }
  }
}

TEST_CASE("person perturbation stays within 20 percent") {
  // [DERIVED] multiplicative style factor bound, checked over 100 seeds
  for (int c = 0; c < kNumClasses; ++c) {
    const ExpressionClass cls = static_cast<ExpressionClass>(c);
    const auto canonical = expression_template(cls, 0);
    for (uint64_t seed = 1; seed <= 100; ++seed) {
      const auto t = expression_template(cls, seed);
      REQUIRE(t.size() == canonical.size());
      for (size_t r = 0; r < t.size(); ++r) {
        // freq and amplitude are scaled directly; compare against the seed-0
        // variant's own canonical by reconstructing the bound from the table
        // values is awkward, so check the looser derived property: any two
        // persons' parameters lie within a 1.2/0.8 band of each other.
        CHECK(t[r].motion_freq / canonical[r].motion_freq <= 1.2 / 0.8);
        CHECK(t[r].motion_freq / canonical[r].motion_freq >= 0.8 / 1.2);
        CHECK(t[r].motion_amplitude / canonical[r].motion_amplitude <=
              1.2 / 0.8);
        CHECK(t[r].motion_amplitude / canonical[r].motion_amplitude >=
              0.8 / 1.2);
        t[r].validate();
      }
    }
  }
}

TEST_CASE("no reflectors and no noise leaves the scaled chirp train") {
  ChirpSpec chirp;
  SceneSpec scene = bare_scene();
  scene.direct_path_gain = 0.7;
  const AcousticBuffer rec = simulate_recording(scene, chirp, 0.1);
  REQUIRE(rec.samples.size() == 4800);
  for (size_t i = 0; i < rec.samples.size(); ++i) {
    const double t = static_cast<double>(i) / chirp.sample_rate;
    CHECK(rec.samples[i] ==
          doctest::Approx(0.7 * sigproc::chirp_train_value(chirp, t))
              .epsilon(1e-12));
  }
}

TEST_CASE("echo amplitude follows inverse square range") {
  // [TRIVIAL] model definition: moving 0.25 m -> 0.50 m scales amplitude 4:1
  ChirpSpec chirp;
  SceneSpec near_scene = bare_scene();
  near_scene.direct_path_gain = 0.0;
  ReflectorSpec r;
  r.base_distance = 0.25;
  r.reflectivity = 1.0;
  near_scene.face_reflectors = {r};
  near_scene.face_distance = 0.25;

  SceneSpec far_scene = near_scene;
  far_scene.face_reflectors[0].base_distance = 0.50;
  far_scene.face_distance = 0.50;

  const AcousticBuffer a = simulate_recording(near_scene, chirp, 0.1);
  const AcousticBuffer b = simulate_recording(far_scene, chirp, 0.1);
  const double ratio = a.rms() / b.rms();
  CHECK(ratio == doctest::Approx(4.0).epsilon(0.01));
}

TEST_CASE("static reflector yields the Eq. 4 beat peak after dechirp") {
  // [DERIVED] 0.25 m -> 235.29 Hz within +-1/T = +-40 Hz, measured with a
  // long FFT on the dechirped signal (the 512-point STFT grid is coarser
  // than 1/T and cannot carry this check).
  ChirpSpec chirp;
  SceneSpec scene = bare_scene();
  scene.face_distance = 0.25;
  ReflectorSpec r;
  r.base_distance = 0.25;
  r.reflectivity = 0.05;
  scene.face_reflectors = {r};

  const AcousticBuffer rec = simulate_recording(scene, chirp, 1.0);
  const AcousticBuffer bp = sigproc::bandpass(rec, 19000.0, 23000.0, 4);
  const AcousticBuffer tpl = sigproc::bandpass(
      sigproc::gen_chirp_train(chirp, bp.samples.size()), 19000.0, 23000.0, 4);
  const AcousticBuffer cleaned = sigproc::subtract_direct_path(
      bp, tpl, sigproc::SubtractMode::least_squares);
  const AcousticBuffer beat = sigproc::dechirp(
      cleaned, sigproc::gen_chirp_train(chirp, cleaned.samples.size()));
  const AcousticBuffer echo = sigproc::isolate_echo_band(beat, 190.0, 500.0);

  const double measured =
      sigproc::dominant_frequency_hz(echo, size_t(1) << 17, 100.0, 700.0);
  const double expected = 235.29411764705884;
  CHECK(std::abs(measured - expected) <= 40.0);
}

TEST_CASE("simulation is deterministic in the seed") {
  ChirpSpec chirp;
  SceneSpec scene = bare_scene();
  scene.ambient_noise_level = 0.01;
  scene.inband_noise_level = 0.005;
  scene.seed = 99;
  ReflectorSpec r;
  r.base_distance = 0.3;
  r.motion_amplitude = 0.004;
  r.motion_freq = 5.0;
  scene.face_reflectors = {r};

  const AcousticBuffer a = simulate_recording(scene, chirp, 0.2);
  const AcousticBuffer b = simulate_recording(scene, chirp, 0.2);
  REQUIRE(a.samples.size() == b.samples.size());
  for (size_t i = 0; i < a.samples.size(); ++i)
    CHECK(a.samples[i] == b.samples[i]);

  SceneSpec other = scene;
  other.seed = 100;
  const AcousticBuffer c = simulate_recording(other, chirp, 0.2);
  double diff = 0.0;
  for (size_t i = 0; i < a.samples.size(); ++i)
    diff += std::abs(a.samples[i] - c.samples[i]);
  CHECK(diff > 0.0);
}

TEST_CASE("ambient noise sits below 8 kHz and vanishes after bandpass") {
  // [DERIVED] a pure ambient-noise scene loses >= 40 dB of energy through
  // the 19-23 kHz band-pass relative to a face recording.
  ChirpSpec chirp;
  SceneSpec noise_scene = bare_scene();
  noise_scene.direct_path_gain = 0.0;
  noise_scene.ambient_noise_level = 0.05;
  noise_scene.seed = 7;

  const AcousticBuffer noise_rec = simulate_recording(noise_scene, chirp, 0.5);
  CHECK(sigproc::band_energy_fraction(noise_rec, 0.0, 8000.0) > 0.95);

  SceneSpec face_scene = bare_scene();
  face_scene.direct_path_gain = 0.0;
  ReflectorSpec r;
  r.base_distance = 0.3;
  r.reflectivity = 0.05;
  face_scene.face_reflectors = {r};
  const AcousticBuffer face_rec = simulate_recording(face_scene, chirp, 0.5);

  const AcousticBuffer noise_bp = sigproc::bandpass(noise_rec, 19000.0,
                                                    23000.0, 4);
  const AcousticBuffer face_bp = sigproc::bandpass(face_rec, 19000.0,
                                                   23000.0, 4);
  const double db = 20.0 * std::log10(face_bp.rms() / noise_bp.rms());
  CHECK(db >= 40.0);
}

TEST_CASE("in-band noise lands in the probe band") {
  ChirpSpec chirp;
  SceneSpec scene = bare_scene();
  scene.direct_path_gain = 0.0;
  scene.inband_noise_level = 0.05;
  scene.seed = 11;
  const AcousticBuffer rec = simulate_recording(scene, chirp, 0.5);
  CHECK(sigproc::band_energy_fraction(rec, 18500.0, 23500.0) > 0.9);
  CHECK(rec.rms() == doctest::Approx(0.05).epsilon(1e-9));
}

TEST_CASE("duration below one emission period is rejected") {
  ChirpSpec chirp;
  CHECK_THROWS_AS(simulate_recording(bare_scene(), chirp, 0.03), ConfigError);
}

TEST_CASE("scene validation") {
  SceneSpec s = bare_scene();
  s.face_distance = 0.1;
  CHECK_THROWS_AS(s.validate(), ConfigError);
  s = bare_scene();
  s.ambient_noise_level = -1.0;
  CHECK_THROWS_AS(s.validate(), ConfigError);
  s = bare_scene();
  ReflectorSpec r;
  r.base_distance = 0.3;
  r.motion_amplitude = 0.4;  // amplitude >= base
  s.face_reflectors = {r};
  CHECK_THROWS_AS(s.validate(), ConfigError);
}

TEST_CASE("generate_dataset counts and determinism") {
  ChirpSpec chirp;
  DomainProfile d0;
  d0.domain_id = "lab";
  DatasetOptions opt;

  // [TRIVIAL] 1 domain x 2 persons x 6 classes x 2 reps x 4 frames = 96
  const auto set = generate_dataset({d0}, 2, 2, chirp, 42, opt);
  CHECK(set.size() == 96);

  std::set<std::string> ids;
  std::map<int, int> per_class;
  for (const LabeledSample& s : set) {
    ids.insert(s.sample_id);
    per_class[static_cast<int>(s.label)]++;
    CHECK(s.domain_id == "lab");
    CHECK_FALSE(s.clutter);
    CHECK(s.spectrogram.n_time() == 90);
    CHECK(s.spectrogram.n_freq() >= 8);  // band crop keeps the echo rows
  }
  CHECK(ids.size() == 96);  // sample ids unique
  for (int c = 0; c < kNumClasses; ++c) CHECK(per_class[c] == 16);

  const auto again = generate_dataset({d0}, 2, 2, chirp, 42, opt);
  REQUIRE(again.size() == set.size());
  for (size_t i = 0; i < set.size(); ++i) {
    CHECK(again[i].sample_id == set[i].sample_id);
    CHECK(again[i].spectrogram.magnitudes == set[i].spectrogram.magnitudes);
  }
}

TEST_CASE("distinct domain profiles separate in mean spectrogram") {
  // [DERIVED] between-domain mean difference exceeds within-domain
  ChirpSpec chirp;
  DomainProfile d0;
  d0.domain_id = "plain";
  DomainProfile d1;
  d1.domain_id = "shifted";
  d1.set_uniform_offsets({0.04, 1.3, 0.8});
  d1.clutter_intensity = 1.0;
  d1.inband_noise_mult = 2.0;

  DatasetOptions opt;
  opt.duration = 0.5;  // two frames per recording keeps this test quick
  const auto set = generate_dataset({d0, d1}, 1, 2, chirp, 13, opt);

  const auto m0 = mean_magnitudes(set, "plain", -1);
  const auto m1 = mean_magnitudes(set, "shifted", -1);
  const auto h0 = mean_magnitudes(set, "plain", 0);
  const auto h1 = mean_magnitudes(set, "plain", 1);
  REQUIRE(m0.size() == m1.size());

  const double between = l2_diff(m0, m1);
  const double within = l2_diff(h0, h1);
  CHECK(between > within);
}

TEST_CASE("noise free single person dataset is centroid separable") {
  // nearest-centroid on mean spectrograms reaches 100% training accuracy
  ChirpSpec chirp;
  DomainProfile d0;
  DatasetOptions opt;
  opt.ambient_noise = 0.0;
  opt.inband_noise = 0.0;
  const auto set = generate_dataset({d0}, 1, 2, chirp, 5, opt);
  REQUIRE(set.size() == 48);

  // class centroids over flattened crops
  const size_t dim = set[0].spectrogram.magnitudes.size();
  std::vector<std::vector<double>> centroid(kNumClasses,
                                            std::vector<double>(dim, 0.0));
  std::vector<int> counts(kNumClasses, 0);
  for (const LabeledSample& s : set) {
    const int c = static_cast<int>(s.label);
    for (size_t i = 0; i < dim; ++i)
      centroid[c][i] += s.spectrogram.magnitudes[i];
    counts[c]++;
  }
  for (int c = 0; c < kNumClasses; ++c)
    for (size_t i = 0; i < dim; ++i)
      centroid[c][i] /= static_cast<double>(counts[c]);

  int correct = 0;
  for (const LabeledSample& s : set) {
    int best = -1;
    double best_d = 0.0;
    for (int c = 0; c < kNumClasses; ++c) {
      const double d = l2_diff(s.spectrogram.magnitudes, centroid[c]);
      if (best < 0 || d < best_d) {
        best = c;
        best_d = d;
      }
    }
    if (best == static_cast<int>(s.label)) ++correct;
  }
  CHECK(correct == static_cast<int>(set.size()));
}

TEST_CASE("expression class names round trip") {
  for (int c = 0; c < kNumClasses; ++c) {
    const ExpressionClass cls = static_cast<ExpressionClass>(c);
    CHECK(expression_from_string(to_string(cls)) == cls);
  }
  CHECK_THROWS_AS(expression_from_string("boredom"), ConfigError);
}
