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

#ifndef EFL_DATASET_HPP
#define EFL_DATASET_HPP

#include <string>
#include <vector>

#include "efl/sigproc.hpp"

namespace efl {

// The six expression classes, fixed ordinal order. The ordinals index
// confusion matrices, centroids, and classifier outputs everywhere.
enum class ExpressionClass : int {
  anger = 0,
  disgust = 1,
  fear = 2,
  happiness = 3,
  sadness = 4,
  surprise = 5,
};

inline constexpr int kNumClasses = 6;

const char* to_string(ExpressionClass c);
ExpressionClass expression_from_string(const std::string& name);

// One model input: a spectrogram frame plus its provenance labels.
struct LabeledSample {
  sigproc::Spectrogram spectrogram;
  ExpressionClass label = ExpressionClass::anger;
  std::string person_id;
  std::string domain_id;
  bool clutter = false;
  std::string sample_id;
  int frame_index = 0;
};

// Rows of `sp` whose frequency lies in [lo_hz, hi_hz]; the model input crop.
sigproc::Spectrogram crop_band(const sigproc::Spectrogram& sp, double lo_hz,
                               double hi_hz);

// Column-major flattening (time-major walk: all frequencies of column 0,
// then column 1, ...) used wherever a sample becomes a 1-D series.
std::vector<double> flatten_column_major(const sigproc::Spectrogram& sp);

}  // namespace efl

#endif  // EFL_DATASET_HPP
