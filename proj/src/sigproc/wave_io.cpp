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

#include "efl/wave_io.hpp"

#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <iomanip>
#include <sstream>
#include <vector>

#include "efl/errors.hpp"

namespace efl::sigproc {

namespace {

void put_u32_le(std::ostream& os, uint32_t v) {
  unsigned char b[4] = {static_cast<unsigned char>(v & 0xff),
                        static_cast<unsigned char>((v >> 8) & 0xff),
                        static_cast<unsigned char>((v >> 16) & 0xff),
                        static_cast<unsigned char>((v >> 24) & 0xff)};
  os.write(reinterpret_cast<const char*>(b), 4);
}

uint32_t get_u32_le(std::istream& is) {
  unsigned char b[4];
  is.read(reinterpret_cast<char*>(b), 4);
  if (!is) throw DataError("waveform: truncated header");
  return static_cast<uint32_t>(b[0]) | (static_cast<uint32_t>(b[1]) << 8) |
         (static_cast<uint32_t>(b[2]) << 16) |
         (static_cast<uint32_t>(b[3]) << 24);
}

uint16_t get_u16_le(std::istream& is) {
  unsigned char b[2];
  is.read(reinterpret_cast<char*>(b), 2);
  if (!is) throw DataError("wav: truncated chunk");
  return static_cast<uint16_t>(b[0] | (b[1] << 8));
}

}  // namespace

void save_waveform(const std::string& path, const AcousticBuffer& buf) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw DataError("waveform: cannot open for writing: " + path);
  os.write("EFLB", 4);
  put_u32_le(os, static_cast<uint32_t>(std::llround(buf.sample_rate)));
  put_u32_le(os, static_cast<uint32_t>(buf.samples.size()));
  put_u32_le(os, 0u);  // reserved
  for (double v : buf.samples) {
    const float f = static_cast<float>(v);
    uint32_t bits = 0;
    std::memcpy(&bits, &f, 4);
    put_u32_le(os, bits);
  }
  if (!os) throw DataError("waveform: write failed: " + path);
}

AcousticBuffer load_waveform(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw DataError("waveform: cannot open: " + path);
  char magic[4];
  is.read(magic, 4);
  if (!is || std::memcmp(magic, "EFLB", 4) != 0)
    throw DataError("waveform: bad magic: " + path);
  const uint32_t rate = get_u32_le(is);
  const uint32_t count = get_u32_le(is);
  get_u32_le(is);  // reserved
  if (rate == 0) throw DataError("waveform: zero sample rate: " + path);

  AcousticBuffer buf;
  buf.sample_rate = static_cast<double>(rate);
  buf.origin = BufferOrigin::file;
  buf.samples.resize(count);
  for (uint32_t i = 0; i < count; ++i) {
    const uint32_t bits = get_u32_le(is);
    float f = 0.0f;
    std::memcpy(&f, &bits, 4);
    buf.samples[i] = static_cast<double>(f);
  }
  return buf;
}

AcousticBuffer load_wav(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw DataError("wav: cannot open: " + path);
  char tag[4];
  is.read(tag, 4);
  if (!is || std::memcmp(tag, "RIFF", 4) != 0)
    throw DataError("wav: not a RIFF file: " + path);
  get_u32_le(is);  // riff size
  is.read(tag, 4);
  if (!is || std::memcmp(tag, "WAVE", 4) != 0)
    throw DataError("wav: not a WAVE file: " + path);

  uint16_t channels = 0;
  uint32_t rate = 0;
  uint16_t bits = 0;
  bool have_fmt = false;
  AcousticBuffer buf;
  buf.origin = BufferOrigin::file;

  while (is.peek() != EOF) {
    is.read(tag, 4);
    if (!is) break;
    const uint32_t chunk_size = get_u32_le(is);
    if (std::memcmp(tag, "fmt ", 4) == 0) {
      const uint16_t format = get_u16_le(is);
      channels = get_u16_le(is);
      rate = get_u32_le(is);
      get_u32_le(is);  // byte rate
      get_u16_le(is);  // block align
      bits = get_u16_le(is);
      if (format != 1) throw DataError("wav: only PCM supported: " + path);
      if (bits != 16) throw DataError("wav: only 16-bit supported: " + path);
      if (channels == 0) throw DataError("wav: zero channels: " + path);
      if (chunk_size > 16)
        is.seekg(chunk_size - 16 + (chunk_size & 1), std::ios::cur);
      else if (chunk_size & 1)
        is.seekg(1, std::ios::cur);
      have_fmt = true;
    } else if (std::memcmp(tag, "data", 4) == 0) {
      if (!have_fmt) throw DataError("wav: data before fmt: " + path);
      const uint32_t n_frames = chunk_size / (2u * channels);
      buf.samples.resize(n_frames);
      for (uint32_t i = 0; i < n_frames; ++i) {
        const int16_t s = static_cast<int16_t>(get_u16_le(is));
        buf.samples[i] = static_cast<double>(s) / 32768.0;
        for (uint16_t c = 1; c < channels; ++c) get_u16_le(is);
      }
      buf.sample_rate = static_cast<double>(rate);
      return buf;
    } else {
      is.seekg(chunk_size + (chunk_size & 1), std::ios::cur);
    }
  }
  throw DataError("wav: no data chunk: " + path);
}

void save_spectrogram_csv(const std::string& path, const Spectrogram& sp) {
  std::ofstream os(path);
  if (!os) throw DataError("spectrogram: cannot open for writing: " + path);
  os << std::setprecision(17);
  os << 0;
  for (double t : sp.time_axis) os << ',' << t;
  os << '\n';
  for (size_t f = 0; f < sp.n_freq(); ++f) {
    os << sp.freq_axis[f];
    for (size_t t = 0; t < sp.n_time(); ++t) os << ',' << sp.at(f, t);
    os << '\n';
  }
  if (!os) throw DataError("spectrogram: write failed: " + path);
}

Spectrogram load_spectrogram_csv(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw DataError("spectrogram: cannot open: " + path);

  auto split = [](const std::string& line) {
    std::vector<double> out;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) {
      try {
        out.push_back(std::stod(cell));
      } catch (const std::exception&) {
        throw DataError("spectrogram: bad cell '" + cell + "'");
      }
    }
    return out;
  };

  std::string line;
  if (!std::getline(is, line))
    throw DataError("spectrogram: empty file: " + path);
  const std::vector<double> header = split(line);
  if (header.size() < 2) throw DataError("spectrogram: no time axis: " + path);

  Spectrogram sp;
  sp.time_axis.assign(header.begin() + 1, header.end());
  std::vector<double> mags;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    const std::vector<double> row = split(line);
    if (row.size() != header.size())
      throw DataError("spectrogram: ragged row: " + path);
    sp.freq_axis.push_back(row[0]);
    mags.insert(mags.end(), row.begin() + 1, row.end());
  }
  if (sp.freq_axis.empty())
    throw DataError("spectrogram: no frequency rows: " + path);
  sp.magnitudes = std::move(mags);
  return sp;
}

}  // namespace efl::sigproc
