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

#ifndef EFL_WAVE_IO_HPP
#define EFL_WAVE_IO_HPP

#include <string>

#include "efl/sigproc.hpp"

namespace efl::sigproc {

// Native waveform container: 16-byte header (magic "EFLB", u32 sample_rate,
// u32 sample_count, u32 reserved; little-endian) followed by 32-bit
// little-endian IEEE-754 float samples, mono.
void save_waveform(const std::string& path, const AcousticBuffer& buf);
AcousticBuffer load_waveform(const std::string& path);

// Standard 16-bit PCM WAV reader for external recordings. Multi-channel
// input keeps channel 0. Samples are scaled to [-1, 1).
AcousticBuffer load_wav(const std::string& path);

// CSV spectrogram: rows are frequency bins (ascending), columns time bins;
// the first row and the first column carry the axis values.
void save_spectrogram_csv(const std::string& path, const Spectrogram& sp);
Spectrogram load_spectrogram_csv(const std::string& path);

}  // namespace efl::sigproc

#endif  // EFL_WAVE_IO_HPP
