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

#ifndef EFL_AUGMENT_HPP
#define EFL_AUGMENT_HPP

#include <cstdint>
#include <string>
#include <vector>

#include "efl/dataset.hpp"

namespace efl::augment {

enum class AugmentMode { intra, inter };

struct AugmentConfig {
  AugmentMode mode = AugmentMode::intra;
  int Dis = 1;     // simulated distance steps, >= 1
  int K = 4;       // DTW neighbours, even, >= 2
  double w = 0.5;  // anchor weight in [0, 1]
  uint64_t seed = 0;
  // Exponent of the distance attenuation D/d^e. The procedure's pseudocode
  // says 1/sqrt(d) while its prose says inverse-square; the pseudocode wins
  // by default and the exponent stays configurable.
  double distance_exponent = 0.5;

  void validate() const;
};

// A 1-D training series (flattened spectrogram) with labels and provenance.
struct SampleSeries {
  std::vector<double> values;
  ExpressionClass label = ExpressionClass::anger;
  std::string person_id;
  std::string sample_id;

  // provenance, populated for augmented outputs
  bool augmented = false;
  AugmentMode mode = AugmentMode::intra;
  std::string source_sample_id;
  std::vector<std::string> neighbor_ids;
};

// Classic DTW: |x - y| local cost, unconstrained monotone alignment.
double dtw_distance(const SampleSeries& a, const SampleSeries& b);

// w*D + ((1-w)/Dis) * sum_{d=1..Dis} D/d^exponent  (distance-scaled mixing)
SampleSeries intra_augment(const SampleSeries& d, int Dis, double w,
                           double distance_exponent = 0.5);

// The K pool members closest to the anchor under DTW; ties break by stable
// pool order. The pool must already be restricted to same-class samples of
// other persons.
std::vector<SampleSeries> knn_dtw(const SampleSeries& anchor,
                                  const std::vector<SampleSeries>& pool,
                                  int K);

// Weighted neighbour mixing given an already-chosen neighbour subset:
// w*anchor + ((1-w)/n) * sum of neighbours resampled to the anchor length.
SampleSeries mix_neighbors(const SampleSeries& anchor,
                           const std::vector<SampleSeries>& chosen, double w);

// Chooses K/2 of the K neighbours uniformly at random (seeded), then mixes.
SampleSeries inter_augment(const SampleSeries& anchor,
                           const std::vector<SampleSeries>& neighbors,
                           double w, uint64_t seed);

// Runs the configured branch over every sample: originals first, then one
// augmented output per eligible input. Inter-mode anchors without a big
// enough cross-person pool are skipped with a recorded warning.
std::vector<SampleSeries> augment_dataset(
    const std::vector<SampleSeries>& data, const AugmentConfig& cfg,
    std::vector<std::string>* warnings = nullptr);

// Linear resampling to a target length (used for neighbour length
// alignment; DTW itself is only used to pick neighbours).
std::vector<double> resample_linear(const std::vector<double>& x,
                                    size_t target_len);

// Bridges between spectrogram samples and 1-D series.
SampleSeries series_from_sample(const LabeledSample& s);
LabeledSample sample_from_series(const SampleSeries& series,
                                 const sigproc::Spectrogram& reference);

}  // namespace efl::augment

#endif  // EFL_AUGMENT_HPP
