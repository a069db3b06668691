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

#include "efl/augment.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "efl/errors.hpp"
#include "efl/parallel.hpp"
#include "efl/rng.hpp"

namespace efl::augment {

void AugmentConfig::validate() const {
  if (Dis < 1) throw ConfigError("augment: Dis must be >= 1");
  if (K < 2) throw ConfigError("augment: K must be >= 2");
  if (K % 2 != 0) throw ConfigError("augment: K must be even (K/2 selected)");
  if (w < 0.0 || w > 1.0) throw ConfigError("augment: w must be in [0, 1]");
  if (distance_exponent < 0.0)
    throw ConfigError("augment: negative distance exponent");
}

double dtw_distance(const SampleSeries& a, const SampleSeries& b) {
  const std::vector<double>& x = a.values;
  const std::vector<double>& y = b.values;
  if (x.empty() || y.empty()) throw ShapeError("dtw: empty series");

  const size_t n = x.size(), m = y.size();
  constexpr double kInf = std::numeric_limits<double>::infinity();
  std::vector<double> prev(m + 1, kInf), cur(m + 1, kInf);
  prev[0] = 0.0;
  for (size_t i = 1; i <= n; ++i) {
    cur[0] = kInf;
    for (size_t j = 1; j <= m; ++j) {
      const double cost = std::abs(x[i - 1] - y[j - 1]);
      cur[j] = cost + std::min({prev[j - 1], prev[j], cur[j - 1]});
    }
    std::swap(prev, cur);
  }
  return prev[m];
}

SampleSeries intra_augment(const SampleSeries& d, int Dis, double w,
                           double distance_exponent) {
  if (Dis < 1) throw ConfigError("intra_augment: Dis must be >= 1");
  if (w < 0.0 || w > 1.0) throw ConfigError("intra_augment: w outside [0,1]");
  if (d.values.empty()) throw ShapeError("intra_augment: empty series");

  // w + (1-w)/Dis * sum d^{-e}, applied element-wise: the mixing is a pure
  // scalar coefficient on the series.
  double atten_sum = 0.0;
  for (int dd = 1; dd <= Dis; ++dd)
    atten_sum += std::pow(static_cast<double>(dd), -distance_exponent);
  const double coeff =
      w + (1.0 - w) / static_cast<double>(Dis) * atten_sum;

  SampleSeries out = d;
  for (double& v : out.values) v *= coeff;
  out.augmented = true;
  out.mode = AugmentMode::intra;
  out.source_sample_id = d.sample_id;
  out.sample_id = d.sample_id + "#intra";
  return out;
}

std::vector<SampleSeries> knn_dtw(const SampleSeries& anchor,
                                  const std::vector<SampleSeries>& pool,
                                  int K) {
  if (K < 1) throw ConfigError("knn_dtw: K must be >= 1");
  if (pool.size() < static_cast<size_t>(K))
    throw InsufficientDataError("knn_dtw: pool smaller than K");

  std::vector<double> dist(pool.size());
  parallel_for(pool.size(),
               [&](size_t i) { dist[i] = dtw_distance(anchor, pool[i]); });

  std::vector<size_t> order(pool.size());
  std::iota(order.begin(), order.end(), size_t{0});
  std::stable_sort(order.begin(), order.end(),
                   [&](size_t i, size_t j) { return dist[i] < dist[j]; });

  std::vector<SampleSeries> out;
  out.reserve(static_cast<size_t>(K));
  for (int k = 0; k < K; ++k) out.push_back(pool[order[static_cast<size_t>(k)]]);
  return out;
}

std::vector<double> resample_linear(const std::vector<double>& x,
                                    size_t target_len) {
  if (x.empty()) throw ShapeError("resample: empty input");
  if (target_len == 0) throw ConfigError("resample: zero target length");
  if (x.size() == target_len) return x;
  std::vector<double> out(target_len);
  if (x.size() == 1) {
    std::fill(out.begin(), out.end(), x[0]);
    return out;
  }
  const double step = static_cast<double>(x.size() - 1) /
                      static_cast<double>(target_len - 1);
  for (size_t i = 0; i < target_len; ++i) {
    const double pos = (target_len == 1) ? 0.0 : static_cast<double>(i) * step;
    const size_t lo = std::min(static_cast<size_t>(pos), x.size() - 2);
    const double frac = pos - static_cast<double>(lo);
    out[i] = x[lo] * (1.0 - frac) + x[lo + 1] * frac;
  }
  return out;
}

SampleSeries mix_neighbors(const SampleSeries& anchor,
                           const std::vector<SampleSeries>& chosen,
                           double w) {
  if (anchor.values.empty()) throw ShapeError("mix: empty anchor");
  if (chosen.empty()) throw ConfigError("mix: no neighbours chosen");
  if (w < 0.0 || w > 1.0) throw ConfigError("mix: w outside [0,1]");

  SampleSeries out = anchor;
  for (double& v : out.values) v *= w;
  const double nw = (1.0 - w) / static_cast<double>(chosen.size());
  for (const SampleSeries& nb : chosen) {
    const std::vector<double> r = resample_linear(nb.values,
                                                  anchor.values.size());
    for (size_t i = 0; i < out.values.size(); ++i) out.values[i] += nw * r[i];
    out.neighbor_ids.push_back(nb.sample_id);
  }
  out.augmented = true;
  out.mode = AugmentMode::inter;
  out.source_sample_id = anchor.sample_id;
  out.sample_id = anchor.sample_id + "#inter";
  return out;
}

SampleSeries inter_augment(const SampleSeries& anchor,
                           const std::vector<SampleSeries>& neighbors,
                           double w, uint64_t seed) {
  if (neighbors.empty() || neighbors.size() % 2 != 0)
    throw ConfigError("inter_augment: neighbour count must be even");

  Rng rng(seed);
  const std::vector<size_t> pick =
      rng.sample_without_replacement(neighbors.size(), neighbors.size() / 2);
  std::vector<SampleSeries> chosen;
  chosen.reserve(pick.size());
  for (size_t idx : pick) chosen.push_back(neighbors[idx]);
  return mix_neighbors(anchor, chosen, w);
}

std::vector<SampleSeries> augment_dataset(
    const std::vector<SampleSeries>& data, const AugmentConfig& cfg,
    std::vector<std::string>* warnings) {
  cfg.validate();
  std::vector<SampleSeries> out = data;

  for (size_t i = 0; i < data.size(); ++i) {
    const SampleSeries& anchor = data[i];
    if (cfg.mode == AugmentMode::intra) {
      out.push_back(intra_augment(anchor, cfg.Dis, cfg.w,
                                  cfg.distance_exponent));
      continue;
    }

    // D_inter: same class, other persons.
    std::vector<SampleSeries> pool;
    for (size_t j = 0; j < data.size(); ++j) {
      if (j == i) continue;
      if (data[j].label != anchor.label) continue;
      if (data[j].person_id == anchor.person_id) continue;
      pool.push_back(data[j]);
    }
    if (pool.size() < static_cast<size_t>(cfg.K)) {
      if (warnings)
        warnings->push_back("augment: skipped " + anchor.sample_id +
                            ": cross-person pool has " +
                            std::to_string(pool.size()) + " samples, need " +
                            std::to_string(cfg.K));
      continue;
    }
    const std::vector<SampleSeries> nearest = knn_dtw(anchor, pool, cfg.K);
    out.push_back(inter_augment(anchor, nearest, cfg.w,
                                hash_combine(cfg.seed, i)));
  }
  return out;
}

SampleSeries series_from_sample(const LabeledSample& s) {
  SampleSeries out;
  out.values = flatten_column_major(s.spectrogram);
  out.label = s.label;
  out.person_id = s.person_id;
  out.sample_id = s.sample_id;
  if (out.values.empty()) throw ShapeError("series_from_sample: empty");
  return out;
}

LabeledSample sample_from_series(const SampleSeries& series,
                                 const sigproc::Spectrogram& reference) {
  if (series.values.size() != reference.magnitudes.size())
    throw ShapeError("sample_from_series: size mismatch with reference grid");
  LabeledSample out;
  out.spectrogram = reference;
  const size_t nf = reference.n_freq();
  const size_t nt = reference.n_time();
  for (size_t t = 0; t < nt; ++t)
    for (size_t f = 0; f < nf; ++f)
      out.spectrogram.at(f, t) = series.values[t * nf + f];
  out.label = series.label;
  out.person_id = series.person_id;
  out.sample_id = series.sample_id;
  return out;
}

}  // namespace efl::augment
