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

#ifndef EFL_ECHOSIM_HPP
#define EFL_ECHOSIM_HPP

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "efl/dataset.hpp"
#include "efl/sigproc.hpp"

namespace efl::echosim {

// One reflecting patch with sinusoidal micro-motion:
// R(t) = base_distance + motion_amplitude * sin(2 pi motion_freq t + phase).
struct ReflectorSpec {
  double base_distance = 0.35;   // m
  double motion_amplitude = 0.0; // m
  double motion_freq = 0.0;      // Hz
  double motion_phase = 0.0;     // rad
  double reflectivity = 1.0;     // >= 0, echo amplitude is reflectivity/R^2

  void validate() const;
};

struct SceneSpec {
  ExpressionClass expression = ExpressionClass::anger;
  std::vector<ReflectorSpec> face_reflectors;
  std::vector<ReflectorSpec> clutter_reflectors;
  double face_distance = 0.35;      // m, comfortable range [0.25, 0.5]
  double direct_path_gain = 1.0;
  double ambient_noise_level = 0.0; // RMS
  double inband_noise_level = 0.0;  // RMS
  std::string person_id;
  std::string domain_id;
  uint64_t seed = 0;

  void validate() const;
};

// Per-class deltas a recording environment applies on top of the person's
// expression template.
struct ClassOffsets {
  double distance_delta = 0.0;  // m
  double amplitude_scale = 1.0;
  double phase_delta = 0.0;     // rad
};

// An environment ("domain"): systematic offsets, clutter, and noise floor.
struct DomainProfile {
  std::string domain_id = "domain0";
  std::array<ClassOffsets, kNumClasses> offsets{};
  double clutter_intensity = 0.0;  // > 0 adds static in-band obstacles
  bool mask_layer = false;         // thin occluder a few cm before the face
  double ambient_noise_mult = 1.0;
  double inband_noise_mult = 1.0;

  // convenience: apply the same offsets to every class
  void set_uniform_offsets(const ClassOffsets& o) { offsets.fill(o); }
};

struct DatasetOptions {
  double duration = 1.0;        // seconds per recording
  double frame_len = 0.25;      // seconds per spectrogram frame
  double ambient_noise = 0.002; // base ambient RMS before domain multiplier
  double inband_noise = 0.001;  // base in-band RMS before domain multiplier
  double crop_lo = 90.0;        // model-input band crop, Hz
  double crop_hi = 850.0;       // set 0 / Nyquist to keep everything
  int person_id_offset = 0;     // first person is "p{offset}"; offsetting
                                // yields disjoint individuals across calls
};

// Deterministic per (class, person_seed): a distinct canonical micro-motion
// signature per class, with every parameter perturbed within +-20% to model
// person-specific expression style.
std::vector<ReflectorSpec> expression_template(ExpressionClass cls,
                                               uint64_t person_seed);

// Full scene assembly: template + domain offsets + per-recording jitter,
// clutter/mask reflectors, and noise levels.
SceneSpec build_scene(const DomainProfile& profile, ExpressionClass cls,
                      const std::string& person_id, uint64_t person_seed,
                      uint64_t scene_seed, const DatasetOptions& opt = {});

// direct_path_gain * train(t) + sum_r reflectivity/R(t)^2 * train(t - 2R/v0)
// + pink ambient noise (< 8 kHz) + band-limited in-band noise (19-23 kHz).
sigproc::AcousticBuffer simulate_recording(const SceneSpec& scene,
                                           const sigproc::ChirpSpec& chirp,
                                           double duration);

// domains x persons x classes x reps recordings, preprocessed into labeled
// spectrogram frames. Persons are shared across domains (same individuals,
// different environments); everything is reproducible from `seed`.
std::vector<LabeledSample> generate_dataset(
    const std::vector<DomainProfile>& profiles, int persons_per_domain,
    int reps, const sigproc::ChirpSpec& chirp, uint64_t seed,
    const DatasetOptions& opt = {});

}  // namespace efl::echosim

#endif  // EFL_ECHOSIM_HPP
