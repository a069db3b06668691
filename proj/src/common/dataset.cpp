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

#include "efl/dataset.hpp"

#include "efl/errors.hpp"

namespace efl {

const char* to_string(ExpressionClass c) {
  switch (c) {
    case ExpressionClass::anger: return "anger";
    case ExpressionClass::disgust: return "disgust";
    case ExpressionClass::fear: return "fear";
    case ExpressionClass::happiness: return "happiness";
    case ExpressionClass::sadness: return "sadness";
    case ExpressionClass::surprise: return "surprise";
  }
  throw ConfigError("unknown expression class ordinal");
}

ExpressionClass expression_from_string(const std::string& name) {
  for (int i = 0; i < kNumClasses; ++i) {
    const ExpressionClass c = static_cast<ExpressionClass>(i);
    if (name == to_string(c)) return c;
  }
  throw ConfigError("unknown expression class name: " + name);
}

sigproc::Spectrogram crop_band(const sigproc::Spectrogram& sp, double lo_hz,
                               double hi_hz) {
  if (lo_hz > hi_hz) throw ConfigError("crop_band: lo > hi");
  sigproc::Spectrogram out;
  out.window_len = sp.window_len;
  out.hop = sp.hop;
  out.time_axis = sp.time_axis;
  for (size_t f = 0; f < sp.n_freq(); ++f) {
    if (sp.freq_axis[f] < lo_hz || sp.freq_axis[f] > hi_hz) continue;
    out.freq_axis.push_back(sp.freq_axis[f]);
    for (size_t t = 0; t < sp.n_time(); ++t)
      out.magnitudes.push_back(sp.at(f, t));
  }
  if (out.freq_axis.empty())
    throw DataError("crop_band: no frequency rows in requested band");
  return out;
}

std::vector<double> flatten_column_major(const sigproc::Spectrogram& sp) {
  std::vector<double> out;
  out.reserve(sp.magnitudes.size());
  for (size_t t = 0; t < sp.n_time(); ++t)
    for (size_t f = 0; f < sp.n_freq(); ++f) out.push_back(sp.at(f, t));
  return out;
}

}  // namespace efl
