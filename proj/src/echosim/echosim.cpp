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
#include <string>

#include "efl/errors.hpp"
#include "efl/iir.hpp"
#include "efl/rng.hpp"

namespace efl::echosim {

namespace {

constexpr double kPi = 3.14159265358979323846;
constexpr double kSpeedOfSound = 340.0;  // m/s
constexpr double kFaceCenter = 0.35;     // m, canonical template distance

// Faces return a small fraction of the probe: with patch reflectivities of
// ~0.01 a reflector at 0.35 m echoes at ~8% of the direct-path amplitude.
constexpr double kReflectivityScale = 0.01;

// Canonical per-class micro-motion signatures over 3-5 facial patches
// (forehead, brows, cheeks, mouth, chin). Classes differ in patch count,
// motion frequency, amplitude, patch spacing, and reflectivity pattern.
// Amplitudes are millimetre micro-motions: small enough that the beat line
// stays put while its temporal texture carries the expression.
struct ClassSignature {
  int count;
  double freq[5];    // Hz
  double amp[5];     // m
  double offset[5];  // m, patch distance relative to the face center
  double phase[5];   // rad
  double refl[5];
};

constexpr ClassSignature kSignatures[kNumClasses] = {
    // anger: brisk, broad motion
    {4,
     {5.0, 7.0, 9.0, 6.0, 0.0},
     {0.0011, 0.0013, 0.0012, 0.0010, 0.0},
     {0.000, 0.030, 0.060, 0.090, 0.0},
     {0.4, 1.1, 1.8, 2.5, 0.0},
     {1.00, 0.85, 0.80, 1.10, 0.0}},
    // disgust: mid-rate, nose-centred, few patches
    {3,
     {3.0, 8.5, 5.5, 0.0, 0.0},
     {0.0014, 0.0008, 0.0011, 0.0, 0.0},
     {0.000, 0.045, 0.075, 0.0, 0.0},
     {0.7, 1.5, 2.2, 0.0, 0.0},
     {0.90, 1.00, 0.75, 0.0, 0.0}},
    // fear: fast whole-face tremor, many patches
    {5,
     {10.0, 12.0, 7.0, 9.0, 11.0},
     {0.0015, 0.0013, 0.0009, 0.0008, 0.0011},
     {0.015, 0.030, 0.055, 0.075, 0.090},
     {1.0, 0.3, 1.9, 2.6, 1.4},
     {1.10, 0.80, 0.90, 0.95, 0.70}},
    // happiness: slow cheeks, strong mouth
    {4,
     {2.5, 5.0, 6.5, 4.0, 0.0},
     {0.0012, 0.0016, 0.0014, 0.0015, 0.0},
     {0.000, 0.015, 0.045, 0.090, 0.0},
     {0.5, 1.3, 2.0, 2.8, 0.0},
     {0.95, 1.05, 1.00, 1.25, 0.0}},
    // sadness: slow, weak, sparse
    {3,
     {1.5, 3.5, 2.5, 0.0, 0.0},
     {0.0006, 0.0007, 0.0008, 0.0, 0.0},
     {0.020, 0.060, 0.085, 0.0, 0.0},
     {0.8, 1.6, 2.4, 0.0, 0.0},
     {0.85, 0.90, 0.95, 0.0, 0.0}},
    // surprise: fastest, everything moves
    {5,
     {12.0, 14.0, 10.5, 13.0, 9.0},
     {0.0017, 0.0015, 0.0016, 0.0014, 0.0012},
     {0.005, 0.035, 0.050, 0.070, 0.088},
     {0.9, 1.7, 0.6, 2.3, 1.2},
     {1.20, 1.00, 1.10, 1.30, 0.90}},
};

// multiplicative +-20% style factor
double perturb(Rng& rng) { return 1.0 + 0.2 * (2.0 * rng.uniform() - 1.0); }

// Scale a white/pink draw sequence to an exact RMS.
void normalize_rms(std::vector<double>& x, double target) {
  double s = 0.0;
  for (double v : x) s += v * v;
  if (s <= 0.0) return;
  const double scale = target / std::sqrt(s / static_cast<double>(x.size()));
  for (double& v : x) v *= scale;
}

}  // namespace

void ReflectorSpec::validate() const {
  if (base_distance <= 0.0)
    throw ConfigError("reflector: base_distance must be > 0");
  if (motion_amplitude < 0.0 || motion_amplitude >= base_distance)
    throw ConfigError("reflector: motion_amplitude must be in [0, base)");
  if (motion_freq < 0.0) throw ConfigError("reflector: negative motion_freq");
  if (reflectivity < 0.0) throw ConfigError("reflector: negative reflectivity");
}

void SceneSpec::validate() const {
  if (face_distance < 0.2 || face_distance > 0.6)
    throw ConfigError("scene: face_distance outside [0.2, 0.6]");
  if (ambient_noise_level < 0.0 || inband_noise_level < 0.0)
    throw ConfigError("scene: negative noise level");
  if (direct_path_gain < 0.0)
    throw ConfigError("scene: negative direct_path_gain");
  for (const ReflectorSpec& r : face_reflectors) r.validate();
  for (const ReflectorSpec& r : clutter_reflectors) r.validate();
}

std::vector<ReflectorSpec> expression_template(ExpressionClass cls,
                                               uint64_t person_seed) {
  const int ci = static_cast<int>(cls);
  if (ci < 0 || ci >= kNumClasses)
    throw ConfigError("expression_template: bad class ordinal");
  const ClassSignature& sig = kSignatures[ci];

  // One stream per (person, class): the same person always shows the same
  // personal variant of each expression.
  Rng rng(hash_combine(person_seed, 0x9e3779b97f4a7c15ull ^
                                        static_cast<uint64_t>(ci)));
  std::vector<ReflectorSpec> out(static_cast<size_t>(sig.count));
  for (int r = 0; r < sig.count; ++r) {
    ReflectorSpec& spec = out[r];
    spec.motion_freq = sig.freq[r] * perturb(rng);
    spec.motion_amplitude = sig.amp[r] * perturb(rng);
    spec.base_distance = kFaceCenter + sig.offset[r] * perturb(rng);
    spec.motion_phase = sig.phase[r] * perturb(rng);
    spec.reflectivity = sig.refl[r] * kReflectivityScale * perturb(rng);
    spec.validate();
  }
  return out;
}

SceneSpec build_scene(const DomainProfile& profile, ExpressionClass cls,
                      const std::string& person_id, uint64_t person_seed,
                      uint64_t scene_seed, const DatasetOptions& opt) {
  SceneSpec scene;
  scene.expression = cls;
  scene.person_id = person_id;
  scene.domain_id = profile.domain_id;
  scene.seed = scene_seed;

  // Person-stable sitting distance inside the comfortable range.
  Rng person_rng(hash_combine(person_seed, 0x5eedull));
  scene.face_distance = 0.30 + 0.08 * person_rng.uniform();

  // Per-recording jitter: nobody holds a pose twice identically.
  Rng rec_rng(hash_combine(scene_seed, 0x7ec0ull));
  scene.face_distance += 0.002 * (2.0 * rec_rng.uniform() - 1.0);

  const ClassOffsets& off = profile.offsets[static_cast<size_t>(cls)];
  scene.face_reflectors = expression_template(cls, person_seed);
  for (ReflectorSpec& r : scene.face_reflectors) {
    r.base_distance += (scene.face_distance - kFaceCenter) + off.distance_delta;
    r.motion_amplitude *= off.amplitude_scale;
    r.motion_phase += off.phase_delta + 0.3 * (2.0 * rec_rng.uniform() - 1.0);
    r.validate();
  }

  if (profile.clutter_intensity > 0.0) {
    // Static obstacles inside the echo band's range window.
    ReflectorSpec near_obj;
    near_obj.base_distance = 0.30 + 0.01 * (2.0 * rec_rng.uniform() - 1.0);
    near_obj.reflectivity = 0.3 * kReflectivityScale * profile.clutter_intensity;
    ReflectorSpec far_obj;
    far_obj.base_distance = 0.45 + 0.01 * (2.0 * rec_rng.uniform() - 1.0);
    far_obj.reflectivity = 0.5 * kReflectivityScale * profile.clutter_intensity;
    scene.clutter_reflectors.push_back(near_obj);
    scene.clutter_reflectors.push_back(far_obj);
  }
  if (profile.mask_layer) {
    // A thin layer 2-4 cm in front of the face: below the range resolution,
    // so it blends into the facial echoes instead of separating from them.
    ReflectorSpec mask;
    mask.base_distance =
        scene.face_distance - (0.02 + 0.02 * rec_rng.uniform());
    mask.reflectivity = 0.5 * kReflectivityScale;
    scene.clutter_reflectors.push_back(mask);
  }

  scene.ambient_noise_level = opt.ambient_noise * profile.ambient_noise_mult;
  scene.inband_noise_level = opt.inband_noise * profile.inband_noise_mult *
                             (profile.mask_layer ? 1.1 : 1.0);
  scene.validate();
  return scene;
}

sigproc::AcousticBuffer simulate_recording(const SceneSpec& scene,
                                           const sigproc::ChirpSpec& chirp,
                                           double duration) {
  scene.validate();
  chirp.validate();
  if (duration < chirp.emission_period)
    throw ConfigError("simulate_recording: duration below one emission period");

  const double fs = chirp.sample_rate;
  const size_t n = static_cast<size_t>(std::llround(duration * fs));
  sigproc::AcousticBuffer out;
  out.sample_rate = fs;
  out.origin = sigproc::BufferOrigin::synthetic;
  out.samples.assign(n, 0.0);

  std::vector<const ReflectorSpec*> reflectors;
  for (const ReflectorSpec& r : scene.face_reflectors)
    reflectors.push_back(&r);
  for (const ReflectorSpec& r : scene.clutter_reflectors)
    reflectors.push_back(&r);

  for (size_t i = 0; i < n; ++i) {
    const double t = static_cast<double>(i) / fs;
    double v = scene.direct_path_gain * sigproc::chirp_train_value(chirp, t);
    for (const ReflectorSpec* r : reflectors) {
      const double range =
          r->base_distance +
          r->motion_amplitude *
              std::sin(2.0 * kPi * r->motion_freq * t + r->motion_phase);
      const double gain = r->reflectivity / (range * range);
      v += gain * sigproc::chirp_train_value(chirp, t - 2.0 * range /
                                                          kSpeedOfSound);
    }
    out.samples[i] = v;
  }

  if (scene.ambient_noise_level > 0.0) {
    // Pink ambient noise, low-passed at 8 kHz: everyday environments rumble
    // far below the probe band.
    Rng rng(hash_combine(scene.seed, 0xa0b1ull));
    std::vector<double> noise(n);
    double b0 = 0.0, b1 = 0.0, b2 = 0.0;
    for (size_t i = 0; i < n; ++i) {
      const double w = rng.gaussian();
      b0 = 0.99765 * b0 + w * 0.0990460;
      b1 = 0.96300 * b1 + w * 0.2965164;
      b2 = 0.57000 * b2 + w * 1.0526913;
      noise[i] = b0 + b1 + b2 + w * 0.1848;
    }
    const SosFilter lp = butter_lowpass(4, 8000.0, fs);
    noise = lp.apply(noise);
    normalize_rms(noise, scene.ambient_noise_level);
    for (size_t i = 0; i < n; ++i) out.samples[i] += noise[i];
  }

  if (scene.inband_noise_level > 0.0) {
    Rng rng(hash_combine(scene.seed, 0x1ba9dull));
    std::vector<double> noise(n);
    for (size_t i = 0; i < n; ++i) noise[i] = rng.gaussian();
    const SosFilter bp = butter_bandpass(4, 19000.0, 23000.0, fs);
    noise = bp.apply(noise);
    normalize_rms(noise, scene.inband_noise_level);
    for (size_t i = 0; i < n; ++i) out.samples[i] += noise[i];
  }

  return out;
}

std::vector<LabeledSample> generate_dataset(
    const std::vector<DomainProfile>& profiles, int persons_per_domain,
    int reps, const sigproc::ChirpSpec& chirp, uint64_t seed,
    const DatasetOptions& opt) {
  if (profiles.empty()) throw ConfigError("generate_dataset: no profiles");
  if (persons_per_domain < 1)
    throw ConfigError("generate_dataset: persons_per_domain must be >= 1");
  if (reps < 1) throw ConfigError("generate_dataset: reps must be >= 1");
  if (opt.person_id_offset < 0)
    throw ConfigError("generate_dataset: person_id_offset must be >= 0");

  std::vector<LabeledSample> out;
  for (size_t di = 0; di < profiles.size(); ++di) {
    const DomainProfile& profile = profiles[di];
    for (int pi = 0; pi < persons_per_domain; ++pi) {
      const int pj = pi + opt.person_id_offset;
      const std::string person_id = "p" + std::to_string(pj);
      // person identity is domain-independent: the same person moves
      // between environments
      const uint64_t person_seed =
          hash_combine(seed, static_cast<uint64_t>(pj) + 1);
      for (int ci = 0; ci < kNumClasses; ++ci) {
        const ExpressionClass cls = static_cast<ExpressionClass>(ci);
        for (int ri = 0; ri < reps; ++ri) {
          const uint64_t scene_seed = hash_combine(
              hash_combine(hash_combine(seed, di + 101),
                           static_cast<uint64_t>(pj) + 211),
              static_cast<uint64_t>(ci) * 31 +
                  static_cast<uint64_t>(ri) + 307);
          const SceneSpec scene = build_scene(profile, cls, person_id,
                                              person_seed, scene_seed, opt);
          // one extra emission period of slack so the synchronization
          // offset never costs a frame
          const sigproc::AcousticBuffer rec = simulate_recording(
              scene, chirp, opt.duration + chirp.emission_period);
          const std::vector<sigproc::Spectrogram> frames =
              sigproc::preprocess(rec, chirp, opt.frame_len);
          for (size_t f = 0; f < frames.size(); ++f) {
            LabeledSample s;
            s.spectrogram = (opt.crop_lo > 0.0 || opt.crop_hi < chirp.sample_rate / 2.0)
                                ? crop_band(frames[f], opt.crop_lo, opt.crop_hi)
                                : frames[f];
            s.label = cls;
            s.person_id = person_id;
            s.domain_id = profile.domain_id;
            s.clutter = profile.clutter_intensity > 0.0 || profile.mask_layer;
            s.frame_index = static_cast<int>(f);
            s.sample_id = profile.domain_id + "/" + person_id + "/" +
                          to_string(cls) + "/r" + std::to_string(ri) + "/f" +
                          std::to_string(f);
            out.push_back(std::move(s));
          }
        }
      }
    }
  }
  return out;
}

}  // namespace efl::echosim
