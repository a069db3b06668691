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

#include "efl/evalcli.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <set>
#include <sstream>
#include <unordered_map>
#include <unordered_set>

#include <json.hpp>

#include "efl/errors.hpp"
#include "efl/rng.hpp"
#include "efl/wave_io.hpp"

namespace efl::evalcli {
namespace {

using njson = nlohmann::json;

// ---------------------------------------------------------------------------
// Small file helpers
// ---------------------------------------------------------------------------

void write_text_file(const std::string& path, const std::string& content) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write " + path);
  out << content;
  if (!out) throw DataError("failed while writing " + path);
}

std::string read_text_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot read " + path);
  std::ostringstream buf;
  buf << in.rdbuf();
  return buf.str();
}

// Sample ids contain '/' and augmented ids '#'; flatten both for filenames.
std::string file_stem(const std::string& sample_id) {
  std::string s = sample_id;
  for (char& c : s)
    if (c == '/' || c == '#') c = '_';
  return s;
}

}  // namespace

// ---------------------------------------------------------------------------
// Manifests
// ---------------------------------------------------------------------------

Manifest manifest_from_samples(const std::vector<LabeledSample>& samples) {
  Manifest m;
  m.reserve(samples.size());
  for (const LabeledSample& s : samples) {
    ManifestEntry e;
    e.sample_id = s.sample_id;
    e.label = s.label;
    e.person_id = s.person_id;
    e.domain_id = s.domain_id;
    e.clutter = s.clutter;
    e.frame_index = s.frame_index;
    m.push_back(std::move(e));
  }
  return m;
}

void save_manifest(const std::string& path, const Manifest& manifest) {
  std::ostringstream out;
  for (const ManifestEntry& e : manifest) {
    njson row;
    row["sample_id"] = e.sample_id;
    row["class"] = to_string(e.label);
    row["person_id"] = e.person_id;
    row["domain_id"] = e.domain_id;
    row["clutter"] = e.clutter;
    row["spectrogram_path"] = e.spectrogram_path;
    row["frame_index"] = e.frame_index;
    if (e.augmented) {
      row["augmented"] = true;
      row["mode"] = e.aug_mode;
      row["source_sample_id"] = e.source_sample_id;
      row["neighbor_ids"] = e.neighbor_ids;
    }
    out << row.dump() << '\n';
  }
  write_text_file(path, out.str());
}

namespace {

const std::set<std::string> kManifestKeys = {
    "sample_id", "class",     "person_id",        "domain_id",
    "clutter",   "spectrogram_path", "frame_index",
    "augmented", "mode",      "source_sample_id", "neighbor_ids"};

ManifestEntry entry_from_json(const njson& row, size_t line_no) {
  const std::string where = "manifest line " + std::to_string(line_no);
  if (!row.is_object()) throw DataError(where + ": not a JSON object");
  for (const auto& [key, _] : row.items())
    if (!kManifestKeys.count(key))
      throw DataError(where + ": unknown key \"" + key + "\"");
  auto need = [&](const char* key) -> const njson& {
    const auto it = row.find(key);
    if (it == row.end())
      throw DataError(where + ": missing key \"" + key + "\"");
    return *it;
  };
  auto str = [&](const char* key) {
    const njson& v = need(key);
    if (!v.is_string())
      throw DataError(where + ": \"" + key + "\" must be a string");
    return v.get<std::string>();
  };

  ManifestEntry e;
  e.sample_id = str("sample_id");
  try {
    e.label = expression_from_string(str("class"));
  } catch (const ConfigError& ex) {
    throw DataError(where + ": " + ex.what());
  }
  e.person_id = str("person_id");
  e.domain_id = str("domain_id");
  if (!need("clutter").is_boolean())
    throw DataError(where + ": \"clutter\" must be a boolean");
  e.clutter = row["clutter"].get<bool>();
  e.spectrogram_path = str("spectrogram_path");
  if (!need("frame_index").is_number_integer())
    throw DataError(where + ": \"frame_index\" must be an integer");
  e.frame_index = row["frame_index"].get<int>();

  if (row.contains("augmented")) {
    if (!row["augmented"].is_boolean())
      throw DataError(where + ": \"augmented\" must be a boolean");
    e.augmented = row["augmented"].get<bool>();
  }
  if (e.augmented) {
    e.aug_mode = str("mode");
    if (e.aug_mode != "intra" && e.aug_mode != "inter")
      throw DataError(where + ": \"mode\" must be \"intra\" or \"inter\"");
    e.source_sample_id = str("source_sample_id");
    const njson& ids = need("neighbor_ids");
    if (!ids.is_array())
      throw DataError(where + ": \"neighbor_ids\" must be an array");
    for (const njson& v : ids) {
      if (!v.is_string())
        throw DataError(where + ": neighbor ids must be strings");
      e.neighbor_ids.push_back(v.get<std::string>());
    }
  }
  return e;
}

}  // namespace

Manifest load_manifest(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot read " + path);
  Manifest m;
  std::string line;
  size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    njson row;
    try {
      row = njson::parse(line);
    } catch (const njson::parse_error& e) {
      throw DataError("manifest line " + std::to_string(line_no) + ": " +
                      e.what());
    }
    m.push_back(entry_from_json(row, line_no));
  }
  return m;
}

std::vector<LabeledSample> match_samples(
    const Manifest& manifest, const std::vector<LabeledSample>& pool) {
  std::unordered_map<std::string, const LabeledSample*> by_id;
  for (const LabeledSample& s : pool) by_id.emplace(s.sample_id, &s);
  std::vector<LabeledSample> out;
  out.reserve(manifest.size());
  for (const ManifestEntry& e : manifest) {
    const auto it = by_id.find(e.sample_id);
    if (it == by_id.end())
      throw DataError("manifest row \"" + e.sample_id +
                      "\" has no match in the sample pool");
    out.push_back(*it->second);
  }
  return out;
}

std::vector<LabeledSample> load_samples(const Manifest& manifest) {
  std::vector<LabeledSample> out;
  out.reserve(manifest.size());
  for (const ManifestEntry& e : manifest) {
    if (e.spectrogram_path.empty())
      throw DataError("manifest row \"" + e.sample_id +
                      "\" has no spectrogram_path");
    LabeledSample s;
    s.spectrogram = sigproc::load_spectrogram_csv(e.spectrogram_path);
    s.label = e.label;
    s.person_id = e.person_id;
    s.domain_id = e.domain_id;
    s.clutter = e.clutter;
    s.sample_id = e.sample_id;
    s.frame_index = e.frame_index;
    out.push_back(std::move(s));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Evaluation-protocol splits
// ---------------------------------------------------------------------------

const char* to_string(CaseName name) {
  switch (name) {
    case CaseName::mix: return "mix";
    case CaseName::leave_one_user_out: return "leave_one_user_out";
    case CaseName::leave_one_place_out: return "leave_one_place_out";
    case CaseName::cross_group: return "cross_group";
    case CaseName::small_train_cross_group: return "small_train_cross_group";
    case CaseName::plain_to_clutter: return "plain_to_clutter";
    case CaseName::clutter_to_plain: return "clutter_to_plain";
  }
  throw ConfigError("unknown case name");
}

CaseName case_from_string(const std::string& name) {
  static const std::map<std::string, CaseName> table = {
      {"mix", CaseName::mix},
      {"leave_one_user_out", CaseName::leave_one_user_out},
      {"louo", CaseName::leave_one_user_out},
      {"leave_one_place_out", CaseName::leave_one_place_out},
      {"lopo", CaseName::leave_one_place_out},
      {"cross_group", CaseName::cross_group},
      {"cross-group", CaseName::cross_group},
      {"small_train_cross_group", CaseName::small_train_cross_group},
      {"small-train-cross-group", CaseName::small_train_cross_group},
      {"plain_to_clutter", CaseName::plain_to_clutter},
      {"plain-to-clutter", CaseName::plain_to_clutter},
      {"clutter_to_plain", CaseName::clutter_to_plain},
      {"clutter-to-plain", CaseName::clutter_to_plain},
  };
  const auto it = table.find(name);
  if (it == table.end())
    throw ConfigError("unknown evaluation case \"" + name + "\"");
  return it->second;
}

void CaseSpec::validate() const {
  if (!(train_fraction > 0.0) || !(train_fraction < 1.0))
    throw ConfigError("case: train_fraction must be in (0, 1)");
  if (!(small_train_fraction > 0.0) || !(small_train_fraction <= 1.0))
    throw ConfigError("case: small_train_fraction must be in (0, 1]");
  if ((name == CaseName::leave_one_user_out ||
       name == CaseName::leave_one_place_out) &&
      held_out_id.empty())
    throw ConfigError(std::string("case ") + evalcli::to_string(name) +
                      " requires held_out_id");
  if (group_a.empty() != group_b.empty())
    throw ConfigError("case: give both person groups or neither");
  for (const std::string& p : group_a)
    if (std::find(group_b.begin(), group_b.end(), p) != group_b.end())
      throw ConfigError("case: person \"" + p + "\" is in both groups");
}

namespace {

// Largest-remainder apportionment of `target` picks across the class
// buckets: per-class counts stay within one of the exact proportional
// share while the total is exact.
std::array<size_t, kNumClasses> apportion(
    const std::array<std::vector<size_t>, kNumClasses>& buckets,
    double fraction, size_t target) {
  std::array<size_t, kNumClasses> take{};
  std::array<double, kNumClasses> remainder{};
  size_t assigned = 0;
  for (int c = 0; c < kNumClasses; ++c) {
    const double exact = fraction * static_cast<double>(buckets[c].size());
    take[c] = static_cast<size_t>(std::floor(exact));
    remainder[c] = exact - std::floor(exact);
    assigned += take[c];
  }
  std::array<int, kNumClasses> order{};
  for (int c = 0; c < kNumClasses; ++c) order[c] = c;
  std::sort(order.begin(), order.end(), [&](int a, int b) {
    if (remainder[a] != remainder[b]) return remainder[a] > remainder[b];
    return a < b;
  });
  // Hand out the deficit by remainder; a full bucket passes its slot on.
  size_t deficit = target > assigned ? target - assigned : 0;
  for (int round = 0; deficit > 0 && round < 2; ++round)
    for (int c : order) {
      if (deficit == 0) break;
      if (take[c] < buckets[c].size() && (round > 0 || remainder[c] > 0.0)) {
        ++take[c];
        --deficit;
      }
    }
  return take;
}

// Class-stratified draw of round(fraction * n) rows. Returns row indices.
std::vector<size_t> stratified_pick(const Manifest& rows,
                                    const std::vector<size_t>& eligible,
                                    double fraction, Rng& rng) {
  std::array<std::vector<size_t>, kNumClasses> buckets;
  for (size_t i : eligible)
    buckets[static_cast<int>(rows[i].label)].push_back(i);
  const size_t target = static_cast<size_t>(
      std::llround(fraction * static_cast<double>(eligible.size())));
  const auto take = apportion(buckets, fraction, target);
  std::vector<size_t> picked;
  for (int c = 0; c < kNumClasses; ++c) {
    rng.shuffle(buckets[c]);
    picked.insert(picked.end(), buckets[c].begin(),
                  buckets[c].begin() + take[c]);
  }
  std::sort(picked.begin(), picked.end());  // manifest order
  return picked;
}

std::vector<std::string> sorted_unique_values(
    const Manifest& m, const std::vector<size_t>& rows,
    const std::string ManifestEntry::*field) {
  std::set<std::string> seen;
  for (size_t i : rows) seen.insert(m[i].*field);
  return {seen.begin(), seen.end()};
}

}  // namespace

std::pair<Manifest, Manifest> build_case_split(const Manifest& manifest,
                                               const CaseSpec& spec,
                                               std::uint64_t seed) {
  spec.validate();
  if (manifest.empty())
    throw InsufficientDataError("case split: empty manifest");

  // Raw rows split directly; augmented rows follow their source.
  std::vector<size_t> raw;
  for (size_t i = 0; i < manifest.size(); ++i)
    if (!manifest[i].augmented) raw.push_back(i);
  if (raw.empty())
    throw InsufficientDataError("case split: no raw rows in manifest");

  Rng rng(hash_combine(seed, 0x5b117u));
  std::vector<char> in_train(manifest.size(), 0);
  auto mark = [&](const std::vector<size_t>& rows) {
    for (size_t i : rows) in_train[i] = 1;
  };

  std::vector<size_t> test_rows;  // rows explicitly on the test side
  switch (spec.name) {
    case CaseName::mix: {
      mark(stratified_pick(manifest, raw, spec.train_fraction, rng));
      for (size_t i : raw)
        if (!in_train[i]) test_rows.push_back(i);
      break;
    }
    case CaseName::leave_one_user_out:
    case CaseName::leave_one_place_out: {
      const auto field = spec.name == CaseName::leave_one_user_out
                             ? &ManifestEntry::person_id
                             : &ManifestEntry::domain_id;
      const char* kind =
          spec.name == CaseName::leave_one_user_out ? "person" : "domain";
      const auto ids = sorted_unique_values(manifest, raw, field);
      if (std::find(ids.begin(), ids.end(), spec.held_out_id) == ids.end())
        throw DataError(std::string("case split: ") + kind + " \"" +
                        spec.held_out_id + "\" not in manifest");
      if (ids.size() < 2)
        throw InsufficientDataError(
            std::string("case split: leave-one-out needs at least two ") +
            kind + "s");
      for (size_t i : raw) {
        if (manifest[i].*field == spec.held_out_id)
          test_rows.push_back(i);
        else
          in_train[i] = 1;
      }
      break;
    }
    case CaseName::cross_group:
    case CaseName::small_train_cross_group: {
      const auto persons =
          sorted_unique_values(manifest, raw, &ManifestEntry::person_id);
      if (persons.size() < 2)
        throw InsufficientDataError(
            "case split: a group split needs at least two persons");
      std::vector<std::string> a = spec.group_a, b = spec.group_b;
      if (a.empty()) {
        const size_t half = (persons.size() + 1) / 2;
        a.assign(persons.begin(), persons.begin() + half);
        b.assign(persons.begin() + half, persons.end());
      } else {
        for (const std::string& p : a)
          if (std::find(persons.begin(), persons.end(), p) == persons.end())
            throw DataError("case split: person \"" + p +
                            "\" not in manifest");
        for (const std::string& p : b)
          if (std::find(persons.begin(), persons.end(), p) == persons.end())
            throw DataError("case split: person \"" + p +
                            "\" not in manifest");
      }
      std::vector<size_t> train_rows;
      for (size_t i : raw) {
        const std::string& p = manifest[i].person_id;
        if (std::find(a.begin(), a.end(), p) != a.end())
          train_rows.push_back(i);
        else if (std::find(b.begin(), b.end(), p) != b.end())
          test_rows.push_back(i);
      }
      if (spec.name == CaseName::small_train_cross_group &&
          spec.small_train_fraction < 1.0)
        train_rows =
            stratified_pick(manifest, train_rows, spec.small_train_fraction,
                            rng);
      mark(train_rows);
      break;
    }
    case CaseName::plain_to_clutter:
    case CaseName::clutter_to_plain: {
      const bool train_clutter = spec.name == CaseName::clutter_to_plain;
      for (size_t i : raw) {
        if (manifest[i].clutter == train_clutter)
          in_train[i] = 1;
        else
          test_rows.push_back(i);
      }
      break;
    }
  }

  // Augmented rows: into train iff the source row went to train.
  std::unordered_map<std::string, size_t> index_of;
  for (size_t i = 0; i < manifest.size(); ++i)
    index_of.emplace(manifest[i].sample_id, i);
  for (size_t i = 0; i < manifest.size(); ++i) {
    if (!manifest[i].augmented) continue;
    const auto it = index_of.find(manifest[i].source_sample_id);
    if (it == index_of.end())
      throw DataError("case split: augmented row \"" +
                      manifest[i].sample_id + "\" references unknown source \"" +
                      manifest[i].source_sample_id + "\"");
    in_train[i] = in_train[it->second];
  }

  Manifest train, test;
  for (size_t i = 0; i < manifest.size(); ++i)
    if (in_train[i]) train.push_back(manifest[i]);
  for (size_t i : test_rows) test.push_back(manifest[i]);
  if (train.empty() || test.empty())
    throw InsufficientDataError(
        std::string("case split: ") + evalcli::to_string(spec.name) +
        " leaves an empty side for this manifest");
  return {std::move(train), std::move(test)};
}

// ---------------------------------------------------------------------------
// Metrics
// ---------------------------------------------------------------------------

namespace {

// One-vs-rest ranking curves by descending-score threshold sweep with tied
// scores grouped. Returns {average precision, ROC-AUC}.
std::pair<double, double> ranking_metrics(const std::vector<double>& score,
                                          const std::vector<char>& positive) {
  const size_t n = score.size();
  size_t pos = 0;
  for (char p : positive) pos += p ? 1 : 0;
  const size_t neg = n - pos;
  if (pos == 0) return {0.0, 0.5};
  if (neg == 0) return {1.0, 0.5};

  std::vector<size_t> order(n);
  for (size_t i = 0; i < n; ++i) order[i] = i;
  std::sort(order.begin(), order.end(), [&](size_t a, size_t b) {
    if (score[a] != score[b]) return score[a] > score[b];
    return a < b;
  });

  double ap = 0.0, auc = 0.0;
  double tp = 0.0, fp = 0.0, prev_recall = 0.0;
  double prev_tpr = 0.0, prev_fpr = 0.0;
  size_t i = 0;
  while (i < n) {
    size_t j = i;
    while (j < n && score[order[j]] == score[order[i]]) {
      if (positive[order[j]]) tp += 1.0;
      else fp += 1.0;
      ++j;
    }
    const double recall = tp / static_cast<double>(pos);
    const double precision = tp / (tp + fp);
    ap += (recall - prev_recall) * precision;
    const double tpr = recall;
    const double fpr = fp / static_cast<double>(neg);
    auc += (fpr - prev_fpr) * 0.5 * (tpr + prev_tpr);
    prev_recall = recall;
    prev_tpr = tpr;
    prev_fpr = fpr;
    i = j;
  }
  return {ap, auc};
}

}  // namespace

std::array<std::array<double, kNumClasses>, kNumClasses>
MetricsReport::confusion_row_normalized() const {
  std::array<std::array<double, kNumClasses>, kNumClasses> out{};
  for (int t = 0; t < kNumClasses; ++t) {
    size_t row = 0;
    for (int p = 0; p < kNumClasses; ++p) row += confusion[t][p];
    if (row == 0) continue;
    for (int p = 0; p < kNumClasses; ++p)
      out[t][p] = static_cast<double>(confusion[t][p]) /
                  static_cast<double>(row);
  }
  return out;
}

MetricsReport compute_metrics(
    const std::vector<int>& predictions,
    const std::vector<std::array<double, kNumClasses>>& scores,
    const std::vector<int>& truths) {
  if (truths.empty()) throw DegenerateInputError("compute_metrics: empty input");
  if (predictions.size() != truths.size() || scores.size() != truths.size())
    throw ShapeError("compute_metrics: predictions, scores, and truths must "
                     "have equal lengths");
  for (size_t i = 0; i < truths.size(); ++i)
    if (truths[i] < 0 || truths[i] >= kNumClasses || predictions[i] < 0 ||
        predictions[i] >= kNumClasses)
      throw DataError("compute_metrics: class ordinal out of range");

  MetricsReport r;
  r.n = truths.size();
  size_t correct = 0;
  for (size_t i = 0; i < truths.size(); ++i) {
    r.confusion[truths[i]][predictions[i]] += 1;
    correct += predictions[i] == truths[i] ? 1 : 0;
  }
  r.accuracy = static_cast<double>(correct) / static_cast<double>(r.n);

  double f1_sum = 0.0;
  for (int c = 0; c < kNumClasses; ++c) {
    size_t tp = r.confusion[c][c], fp = 0, fn = 0, support = 0;
    for (int t = 0; t < kNumClasses; ++t)
      if (t != c) fp += r.confusion[t][c];
    for (int p = 0; p < kNumClasses; ++p) {
      support += r.confusion[c][p];
      if (p != c) fn += r.confusion[c][p];
    }
    ClassMetrics& m = r.per_class[c];
    m.support = support;
    m.precision = tp + fp > 0
                      ? static_cast<double>(tp) / static_cast<double>(tp + fp)
                      : 0.0;
    m.recall = tp + fn > 0
                   ? static_cast<double>(tp) / static_cast<double>(tp + fn)
                   : 0.0;
    m.f1 = m.precision + m.recall > 0.0
               ? 2.0 * m.precision * m.recall / (m.precision + m.recall)
               : 0.0;
    f1_sum += m.f1;

    std::vector<double> class_scores(r.n);
    std::vector<char> positive(r.n);
    for (size_t i = 0; i < r.n; ++i) {
      class_scores[i] = scores[i][c];
      positive[i] = truths[i] == c ? 1 : 0;
    }
    const auto [ap, auc] = ranking_metrics(class_scores, positive);
    m.average_precision = ap;
    m.roc_auc = auc;
  }
  r.macro_f1 = f1_sum / static_cast<double>(kNumClasses);
  return r;
}

std::string recording_id_of(const std::string& sample_id) {
  const size_t at = sample_id.rfind("/f");
  if (at == std::string::npos || at + 2 >= sample_id.size())
    return sample_id;
  for (size_t i = at + 2; i < sample_id.size(); ++i)
    if (!std::isdigit(static_cast<unsigned char>(sample_id[i])))
      return sample_id;
  return sample_id.substr(0, at);
}

MetricsReport compute_recording_metrics(
    const std::vector<std::string>& sample_ids,
    const std::vector<int>& predictions,
    const std::vector<std::array<double, kNumClasses>>& scores,
    const std::vector<int>& truths) {
  if (sample_ids.size() != truths.size())
    throw ShapeError("compute_recording_metrics: sample_ids and truths must "
                     "have equal lengths");
  if (truths.empty())
    throw DegenerateInputError("compute_recording_metrics: empty input");
  if (predictions.size() != truths.size() || scores.size() != truths.size())
    throw ShapeError("compute_recording_metrics: predictions, scores, and "
                     "truths must have equal lengths");

  struct Group {
    std::array<size_t, kNumClasses> votes{};
    std::array<double, kNumClasses> score_sum{};
    size_t frames = 0;
    int truth = -1;
  };
  std::vector<std::string> order;
  std::unordered_map<std::string, Group> groups;
  for (size_t i = 0; i < truths.size(); ++i) {
    const std::string rec = recording_id_of(sample_ids[i]);
    auto [it, inserted] = groups.try_emplace(rec);
    if (inserted) order.push_back(rec);
    Group& g = it->second;
    if (g.truth >= 0 && g.truth != truths[i])
      throw DataError("recording \"" + rec +
                      "\" has frames with conflicting labels");
    g.truth = truths[i];
    if (predictions[i] < 0 || predictions[i] >= kNumClasses)
      throw DataError("compute_recording_metrics: class ordinal out of range");
    g.votes[predictions[i]] += 1;
    for (int c = 0; c < kNumClasses; ++c) g.score_sum[c] += scores[i][c];
    g.frames += 1;
  }

  std::vector<int> rec_pred, rec_truth;
  std::vector<std::array<double, kNumClasses>> rec_scores;
  for (const std::string& rec : order) {
    const Group& g = groups.at(rec);
    int best = 0;
    for (int c = 1; c < kNumClasses; ++c)
      if (g.votes[c] > g.votes[best]) best = c;
    rec_pred.push_back(best);
    rec_truth.push_back(g.truth);
    std::array<double, kNumClasses> mean{};
    for (int c = 0; c < kNumClasses; ++c)
      mean[c] = g.score_sum[c] / static_cast<double>(g.frames);
    rec_scores.push_back(mean);
  }
  return compute_metrics(rec_pred, rec_scores, rec_truth);
}

namespace {

std::string format_double(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.4f", v);
  return buf;
}

}  // namespace

std::string MetricsReport::to_json() const {
  njson j;
  j["n"] = n;
  j["accuracy"] = accuracy;
  j["macro_f1"] = macro_f1;
  njson per;
  for (int c = 0; c < kNumClasses; ++c) {
    const ClassMetrics& m = per_class[c];
    njson cls;
    cls["support"] = m.support;
    cls["precision"] = m.precision;
    cls["recall"] = m.recall;
    cls["f1"] = m.f1;
    cls["average_precision"] = m.average_precision;
    cls["roc_auc"] = m.roc_auc;
    per[to_string(static_cast<ExpressionClass>(c))] = cls;
  }
  j["per_class"] = per;
  njson conf = njson::array();
  for (int t = 0; t < kNumClasses; ++t) {
    njson row = njson::array();
    for (int p = 0; p < kNumClasses; ++p) row.push_back(confusion[t][p]);
    conf.push_back(row);
  }
  j["confusion"] = conf;
  return j.dump(2) + "\n";
}

std::string MetricsReport::to_text() const {
  std::ostringstream out;
  char line[160];
  std::snprintf(line, sizeof line, "%-10s %8s %10s %8s %8s %8s %8s\n",
                "class", "support", "precision", "recall", "F1", "AP", "AUC");
  out << line;
  for (int c = 0; c < kNumClasses; ++c) {
    const ClassMetrics& m = per_class[c];
    std::snprintf(line, sizeof line,
                  "%-10s %8zu %10.4f %8.4f %8.4f %8.4f %8.4f\n",
                  to_string(static_cast<ExpressionClass>(c)), m.support,
                  m.precision, m.recall, m.f1, m.average_precision, m.roc_auc);
    out << line;
  }
  out << "\naccuracy " << format_double(accuracy) << " over " << n
      << " samples, macro-F1 " << format_double(macro_f1) << "\n";
  out << "\nconfusion (rows = truth):\n";
  std::snprintf(line, sizeof line, "%-10s", "");
  out << line;
  for (int p = 0; p < kNumClasses; ++p) {
    std::snprintf(line, sizeof line, " %9s",
                  to_string(static_cast<ExpressionClass>(p)));
    out << line;
  }
  out << '\n';
  for (int t = 0; t < kNumClasses; ++t) {
    std::snprintf(line, sizeof line, "%-10s",
                  to_string(static_cast<ExpressionClass>(t)));
    out << line;
    for (int p = 0; p < kNumClasses; ++p) {
      std::snprintf(line, sizeof line, " %9zu", confusion[t][p]);
      out << line;
    }
    out << '\n';
  }
  return out.str();
}

// ---------------------------------------------------------------------------
// Experiment configuration
// ---------------------------------------------------------------------------

namespace {

void expect_keys(const njson& j, const std::string& where,
                 const std::set<std::string>& allowed) {
  if (!j.is_object())
    throw ConfigError("config: " + where + " must be a JSON object");
  for (const auto& [key, _] : j.items())
    if (!allowed.count(key))
      throw ConfigError("config: unknown key \"" + key + "\" in " + where);
}

double get_num(const njson& j, const std::string& where, const char* key,
               double fallback) {
  const auto it = j.find(key);
  if (it == j.end()) return fallback;
  if (!it->is_number())
    throw ConfigError("config: " + where + "." + key + " must be a number");
  return it->get<double>();
}

int get_int(const njson& j, const std::string& where, const char* key,
            int fallback) {
  const auto it = j.find(key);
  if (it == j.end()) return fallback;
  if (!it->is_number_integer())
    throw ConfigError("config: " + where + "." + key + " must be an integer");
  return it->get<int>();
}

bool get_bool(const njson& j, const std::string& where, const char* key,
              bool fallback) {
  const auto it = j.find(key);
  if (it == j.end()) return fallback;
  if (!it->is_boolean())
    throw ConfigError("config: " + where + "." + key + " must be a boolean");
  return it->get<bool>();
}

std::string get_str(const njson& j, const std::string& where, const char* key,
                    const std::string& fallback) {
  const auto it = j.find(key);
  if (it == j.end()) return fallback;
  if (!it->is_string())
    throw ConfigError("config: " + where + "." + key + " must be a string");
  return it->get<std::string>();
}

echosim::ClassOffsets parse_offsets_entry(const njson& j,
                                          const std::string& where) {
  expect_keys(j, where, {"distance_delta", "amplitude_scale", "phase_delta"});
  echosim::ClassOffsets o;
  o.distance_delta = get_num(j, where, "distance_delta", 0.0);
  o.amplitude_scale = get_num(j, where, "amplitude_scale", 1.0);
  o.phase_delta = get_num(j, where, "phase_delta", 0.0);
  return o;
}

echosim::DomainProfile parse_domain(const njson& j, const std::string& where) {
  expect_keys(j, where,
              {"domain_id", "clutter_intensity", "mask_layer",
               "ambient_noise_mult", "inband_noise_mult", "offsets"});
  echosim::DomainProfile d;
  d.domain_id = get_str(j, where, "domain_id", d.domain_id);
  d.clutter_intensity =
      get_num(j, where, "clutter_intensity", d.clutter_intensity);
  d.mask_layer = get_bool(j, where, "mask_layer", d.mask_layer);
  d.ambient_noise_mult =
      get_num(j, where, "ambient_noise_mult", d.ambient_noise_mult);
  d.inband_noise_mult =
      get_num(j, where, "inband_noise_mult", d.inband_noise_mult);
  if (j.contains("offsets")) {
    const njson& off = j["offsets"];
    if (off.is_object()) {
      d.set_uniform_offsets(parse_offsets_entry(off, where + ".offsets"));
    } else if (off.is_array()) {
      if (off.size() != kNumClasses)
        throw ConfigError("config: " + where + ".offsets must have " +
                          std::to_string(kNumClasses) + " entries");
      for (int c = 0; c < kNumClasses; ++c)
        d.offsets[c] = parse_offsets_entry(
            off[c], where + ".offsets[" + std::to_string(c) + "]");
    } else {
      throw ConfigError("config: " + where +
                        ".offsets must be an object or an array");
    }
  }
  return d;
}

adapt::LossMode loss_mode_from_string(const std::string& s) {
  if (s == "ce_only") return adapt::LossMode::ce_only;
  if (s == "supcon_only") return adapt::LossMode::supcon_only;
  if (s == "combined") return adapt::LossMode::combined;
  throw ConfigError("config: unknown loss_mode \"" + s + "\"");
}

const char* to_string(adapt::LossMode m) {
  switch (m) {
    case adapt::LossMode::ce_only: return "ce_only";
    case adapt::LossMode::supcon_only: return "supcon_only";
    case adapt::LossMode::combined: return "combined";
  }
  throw ConfigError("unknown loss mode");
}

}  // namespace

ExperimentConfig parse_experiment_config(const std::string& json_text) {
  njson j;
  try {
    j = njson::parse(json_text);
  } catch (const njson::parse_error& e) {
    throw ConfigError(std::string("config: ") + e.what());
  }
  expect_keys(j, "config",
              {"name", "seed", "out_dir", "pools", "dataset", "chirp", "case",
               "augment", "encoder", "adapt"});

  ExperimentConfig cfg;
  cfg.name = get_str(j, "config", "name", cfg.name);
  if (j.contains("seed")) {
    if (!j["seed"].is_number_unsigned() && !j["seed"].is_number_integer())
      throw ConfigError("config: seed must be a non-negative integer");
    const auto s = j["seed"].get<long long>();
    if (s < 0) throw ConfigError("config: seed must be a non-negative integer");
    cfg.seed = static_cast<std::uint64_t>(s);
  }
  cfg.out_dir = get_str(j, "config", "out_dir", "");

  if (j.contains("pools")) {
    if (!j["pools"].is_array())
      throw ConfigError("config: pools must be an array");
    for (size_t i = 0; i < j["pools"].size(); ++i) {
      const std::string where = "pools[" + std::to_string(i) + "]";
      const njson& p = j["pools"][i];
      expect_keys(p, where, {"domain", "persons", "person_id_offset", "reps"});
      PoolConfig pool;
      if (p.contains("domain"))
        pool.domain = parse_domain(p["domain"], where + ".domain");
      pool.persons = get_int(p, where, "persons", pool.persons);
      pool.person_id_offset =
          get_int(p, where, "person_id_offset", pool.person_id_offset);
      pool.reps = get_int(p, where, "reps", pool.reps);
      cfg.pools.push_back(std::move(pool));
    }
  }

  if (j.contains("dataset")) {
    const njson& d = j["dataset"];
    expect_keys(d, "dataset",
                {"duration", "frame_len", "ambient_noise", "inband_noise",
                 "crop_lo", "crop_hi"});
    cfg.dataset.duration = get_num(d, "dataset", "duration",
                                   cfg.dataset.duration);
    cfg.dataset.frame_len =
        get_num(d, "dataset", "frame_len", cfg.dataset.frame_len);
    cfg.dataset.ambient_noise =
        get_num(d, "dataset", "ambient_noise", cfg.dataset.ambient_noise);
    cfg.dataset.inband_noise =
        get_num(d, "dataset", "inband_noise", cfg.dataset.inband_noise);
    cfg.dataset.crop_lo = get_num(d, "dataset", "crop_lo", cfg.dataset.crop_lo);
    cfg.dataset.crop_hi = get_num(d, "dataset", "crop_hi", cfg.dataset.crop_hi);
  }

  if (j.contains("chirp")) {
    const njson& c = j["chirp"];
    expect_keys(c, "chirp",
                {"f_start", "f_end", "sweep_duration", "emission_period",
                 "sample_rate", "amplitude"});
    cfg.chirp.f_start = get_num(c, "chirp", "f_start", cfg.chirp.f_start);
    cfg.chirp.f_end = get_num(c, "chirp", "f_end", cfg.chirp.f_end);
    cfg.chirp.sweep_duration =
        get_num(c, "chirp", "sweep_duration", cfg.chirp.sweep_duration);
    cfg.chirp.emission_period =
        get_num(c, "chirp", "emission_period", cfg.chirp.emission_period);
    cfg.chirp.sample_rate =
        get_num(c, "chirp", "sample_rate", cfg.chirp.sample_rate);
    cfg.chirp.amplitude = get_num(c, "chirp", "amplitude", cfg.chirp.amplitude);
  }

  if (j.contains("case")) {
    const njson& c = j["case"];
    expect_keys(c, "case",
                {"name", "train_fraction", "small_train_fraction",
                 "held_out_id", "group_a", "group_b"});
    if (c.contains("name"))
      cfg.split.name = case_from_string(get_str(c, "case", "name", "mix"));
    cfg.split.train_fraction =
        get_num(c, "case", "train_fraction", cfg.split.train_fraction);
    cfg.split.small_train_fraction = get_num(
        c, "case", "small_train_fraction", cfg.split.small_train_fraction);
    cfg.split.held_out_id =
        get_str(c, "case", "held_out_id", cfg.split.held_out_id);
    auto read_group = [&](const char* key, std::vector<std::string>& out) {
      if (!c.contains(key)) return;
      if (!c[key].is_array())
        throw ConfigError(std::string("config: case.") + key +
                          " must be an array of person ids");
      for (const njson& v : c[key]) {
        if (!v.is_string())
          throw ConfigError(std::string("config: case.") + key +
                            " must be an array of person ids");
        out.push_back(v.get<std::string>());
      }
    };
    read_group("group_a", cfg.split.group_a);
    read_group("group_b", cfg.split.group_b);
  }

  if (j.contains("augment")) {
    const njson& a = j["augment"];
    expect_keys(a, "augment",
                {"enabled", "mode", "Dis", "K", "w", "distance_exponent"});
    cfg.augment.enabled = get_bool(a, "augment", "enabled", false);
    const std::string mode = get_str(a, "augment", "mode", "intra");
    if (mode == "intra")
      cfg.augment.params.mode = augment::AugmentMode::intra;
    else if (mode == "inter")
      cfg.augment.params.mode = augment::AugmentMode::inter;
    else
      throw ConfigError("config: augment.mode must be \"intra\" or \"inter\"");
    cfg.augment.params.Dis = get_int(a, "augment", "Dis", cfg.augment.params.Dis);
    cfg.augment.params.K = get_int(a, "augment", "K", cfg.augment.params.K);
    cfg.augment.params.w = get_num(a, "augment", "w", cfg.augment.params.w);
    cfg.augment.params.distance_exponent =
        get_num(a, "augment", "distance_exponent",
                cfg.augment.params.distance_exponent);
  }

  if (j.contains("encoder")) {
    const njson& e = j["encoder"];
    expect_keys(e, "encoder",
                {"n_freq", "n_time", "conv", "attention_slots",
                 "attention_dim", "embed_dim", "proj_dim", "norm",
                 "log_compress"});
    cfg.encoder.n_freq = static_cast<size_t>(
        get_int(e, "encoder", "n_freq", static_cast<int>(cfg.encoder.n_freq)));
    cfg.encoder.n_time = static_cast<size_t>(
        get_int(e, "encoder", "n_time", static_cast<int>(cfg.encoder.n_time)));
    if (e.contains("conv")) {
      if (!e["conv"].is_array())
        throw ConfigError("config: encoder.conv must be an array");
      cfg.encoder.conv.clear();
      for (const njson& l : e["conv"]) {
        if (!l.is_array() || l.size() != 5)
          throw ConfigError(
              "config: each encoder.conv entry must be an array "
              "[channels, kernel_h, kernel_w, stride_h, stride_w]");
        for (const njson& v : l)
          if (!v.is_number_integer() || v.get<int>() < 1)
            throw ConfigError(
                "config: encoder.conv entries must be positive integers");
        cfg.encoder.conv.push_back({l[0].get<size_t>(), l[1].get<size_t>(),
                                    l[2].get<size_t>(), l[3].get<size_t>(),
                                    l[4].get<size_t>()});
      }
    }
    cfg.encoder.attention_slots = static_cast<size_t>(get_int(
        e, "encoder", "attention_slots",
        static_cast<int>(cfg.encoder.attention_slots)));
    cfg.encoder.attention_dim = static_cast<size_t>(get_int(
        e, "encoder", "attention_dim",
        static_cast<int>(cfg.encoder.attention_dim)));
    cfg.encoder.embed_dim = static_cast<size_t>(get_int(
        e, "encoder", "embed_dim", static_cast<int>(cfg.encoder.embed_dim)));
    cfg.encoder.proj_dim = static_cast<size_t>(get_int(
        e, "encoder", "proj_dim", static_cast<int>(cfg.encoder.proj_dim)));
    const std::string norm = get_str(e, "encoder", "norm", "double_norm");
    if (norm == "double_norm")
      cfg.encoder.norm = nnet::AttentionNorm::double_norm;
    else if (norm == "softmax_only")
      cfg.encoder.norm = nnet::AttentionNorm::softmax_only;
    else
      throw ConfigError(
          "config: encoder.norm must be \"double_norm\" or \"softmax_only\"");
    cfg.encoder.log_compress =
        get_bool(e, "encoder", "log_compress", cfg.encoder.log_compress);
  }

  if (j.contains("adapt")) {
    const njson& a = j["adapt"];
    expect_keys(a, "adapt",
                {"epochs", "iters_per_epoch", "batch_source", "batch_target",
                 "tau", "mad_threshold", "lr", "momentum", "loss_mode",
                 "pretrain_max_epochs", "pretrain_batch",
                 "pretrain_plateau_rel", "pretrain_plateau_window"});
    adapt::AdaptConfig& c = cfg.adapt;
    c.epochs = get_int(a, "adapt", "epochs", c.epochs);
    c.iters_per_epoch =
        get_int(a, "adapt", "iters_per_epoch", c.iters_per_epoch);
    c.batch_source = static_cast<size_t>(get_int(
        a, "adapt", "batch_source", static_cast<int>(c.batch_source)));
    c.batch_target = static_cast<size_t>(get_int(
        a, "adapt", "batch_target", static_cast<int>(c.batch_target)));
    c.tau = get_num(a, "adapt", "tau", c.tau);
    c.mad_threshold = get_num(a, "adapt", "mad_threshold", c.mad_threshold);
    c.lr = get_num(a, "adapt", "lr", c.lr);
    c.momentum = get_num(a, "adapt", "momentum", c.momentum);
    if (a.contains("loss_mode"))
      c.loss_mode = loss_mode_from_string(get_str(a, "adapt", "loss_mode", ""));
    c.pretrain_max_epochs =
        get_int(a, "adapt", "pretrain_max_epochs", c.pretrain_max_epochs);
    c.pretrain_batch = static_cast<size_t>(get_int(
        a, "adapt", "pretrain_batch", static_cast<int>(c.pretrain_batch)));
    c.pretrain_plateau_rel =
        get_num(a, "adapt", "pretrain_plateau_rel", c.pretrain_plateau_rel);
    c.pretrain_plateau_window = get_int(a, "adapt", "pretrain_plateau_window",
                                        c.pretrain_plateau_window);
  }

  cfg.validate();
  return cfg;
}

ExperimentConfig load_experiment_config(const std::string& path) {
  return parse_experiment_config(read_text_file(path));
}

void ExperimentConfig::validate() const {
  if (name.empty()) throw ConfigError("config: name must not be empty");
  if (pools.empty()) throw ConfigError("config: at least one pool required");
  for (const PoolConfig& p : pools) {
    if (p.persons < 1) throw ConfigError("config: pool persons must be >= 1");
    if (p.reps < 1) throw ConfigError("config: pool reps must be >= 1");
    if (p.person_id_offset < 0)
      throw ConfigError("config: pool person_id_offset must be >= 0");
  }
  chirp.validate();
  split.validate();
  encoder.validate();
  adapt.validate();
  if (augment.enabled) augment.params.validate();
}

// ---------------------------------------------------------------------------
// Experiment runner
// ---------------------------------------------------------------------------

namespace {

// Rethrows any library error with a "[stage]" prefix, keeping its type (the
// CLI maps types to exit codes).
template <typename Fn>
auto stage(const char* name, Fn&& fn) {
  const auto tag = [&](const std::string& msg) {
    return "[" + std::string(name) + "] " + msg;
  };
  try {
    return fn();
  } catch (const ConfigError& e) {
    throw ConfigError(tag(e.what()));
  } catch (const ShapeError& e) {
    throw ShapeError(tag(e.what()));
  } catch (const DegenerateInputError& e) {
    throw DegenerateInputError(tag(e.what()));
  } catch (const InsufficientDataError& e) {
    throw InsufficientDataError(tag(e.what()));
  } catch (const NumericError& e) {
    throw NumericError(tag(e.what()));
  } catch (const DataError& e) {
    throw DataError(tag(e.what()));
  } catch (const std::exception& e) {
    throw DataError(tag(e.what()));
  }
}

std::vector<int> labels_of(const std::vector<LabeledSample>& samples) {
  std::vector<int> out(samples.size());
  for (size_t i = 0; i < samples.size(); ++i)
    out[i] = static_cast<int>(samples[i].label);
  return out;
}

// Batched forward pass; row i of the result is sample i's embedding.
Tensor embed_all(nnet::ParamStore& store, const nnet::EncoderConfig& enc,
                 const std::vector<LabeledSample>& samples) {
  constexpr size_t kSlice = 256;
  Tensor out = Tensor::zeros({samples.size(), enc.embed_dim});
  for (size_t at = 0; at < samples.size(); at += kSlice) {
    const size_t take = std::min(kSlice, samples.size() - at);
    std::vector<const sigproc::Spectrogram*> batch(take);
    for (size_t i = 0; i < take; ++i)
      batch[i] = &samples[at + i].spectrogram;
    const auto [emb, proj] = nnet::encode_batch(batch, store, enc);
    (void)proj;
    std::copy(emb.values.begin(), emb.values.end(),
              out.values.begin() + at * enc.embed_dim);
  }
  return out;
}

std::vector<std::array<double, kNumClasses>> scores_to_rows(const Tensor& t) {
  std::vector<std::array<double, kNumClasses>> rows(t.dim(0));
  for (size_t i = 0; i < t.dim(0); ++i)
    for (int c = 0; c < kNumClasses; ++c)
      rows[i][c] = t.values[i * kNumClasses + c];
  return rows;
}

std::string confusion_csv(const MetricsReport& r) {
  std::ostringstream out;
  out << "truth";
  for (int p = 0; p < kNumClasses; ++p)
    out << ',' << to_string(static_cast<ExpressionClass>(p));
  out << '\n';
  for (int t = 0; t < kNumClasses; ++t) {
    out << to_string(static_cast<ExpressionClass>(t));
    for (int p = 0; p < kNumClasses; ++p) out << ',' << r.confusion[t][p];
    out << '\n';
  }
  return out.str();
}

struct EvalOutput {
  MetricsReport frame;
  MetricsReport recording;
};

EvalOutput evaluate_model(nnet::ParamStore& store,
                          const nnet::EncoderConfig& enc,
                          const std::vector<LabeledSample>& test) {
  const Tensor emb = embed_all(store, enc, test);
  const std::vector<int> preds = nnet::classifier_predict(store, emb);
  const auto scores = scores_to_rows(nnet::classifier_scores(store, emb));
  const std::vector<int> truths = labels_of(test);
  std::vector<std::string> ids(test.size());
  for (size_t i = 0; i < test.size(); ++i) ids[i] = test[i].sample_id;
  EvalOutput out;
  out.frame = compute_metrics(preds, scores, truths);
  out.recording = compute_recording_metrics(ids, preds, scores, truths);
  return out;
}

}  // namespace

ExperimentResult run_experiment(const ExperimentConfig& config,
                                const std::string& out_dir,
                                const std::string& config_text) {
  config.validate();
  const std::string dir = !out_dir.empty() ? out_dir : config.out_dir;
  if (dir.empty())
    throw ConfigError("run_experiment: no output directory (config out_dir "
                      "or --out)");

  namespace fs = std::filesystem;
  for (const char* sub :
       {"", "/manifests", "/spectrograms", "/checkpoints", "/logs",
        "/reports"})
    fs::create_directories(dir + sub);
  write_text_file(dir + "/config.copy", config_text);

  ExperimentResult result;
  result.artifacts_dir = dir;

  // -- simulate ------------------------------------------------------------
  std::vector<LabeledSample> all;
  Manifest full;
  stage("simulate", [&] {
    for (const PoolConfig& pool : config.pools) {
      echosim::DatasetOptions opt = config.dataset;
      opt.person_id_offset = pool.person_id_offset;
      auto part = echosim::generate_dataset({pool.domain}, pool.persons,
                                            pool.reps, config.chirp,
                                            config.seed, opt);
      std::move(part.begin(), part.end(), std::back_inserter(all));
    }
    full = manifest_from_samples(all);
    for (size_t i = 0; i < all.size(); ++i) {
      const std::string path =
          dir + "/spectrograms/" + file_stem(all[i].sample_id) + ".csv";
      sigproc::save_spectrogram_csv(path, all[i].spectrogram);
      full[i].spectrogram_path = path;
    }
    save_manifest(dir + "/manifests/full.jsonl", full);
  });

  // -- split ---------------------------------------------------------------
  Manifest train_m, test_m;
  stage("split", [&] {
    std::tie(train_m, test_m) = build_case_split(full, config.split,
                                                 config.seed);
    save_manifest(dir + "/manifests/train.jsonl", train_m);
    save_manifest(dir + "/manifests/test.jsonl", test_m);
  });
  std::vector<LabeledSample> train = match_samples(train_m, all);
  const std::vector<LabeledSample> test = match_samples(test_m, all);

  // -- augment -------------------------------------------------------------
  if (config.augment.enabled) {
    stage("augment", [&] {
      std::unordered_map<std::string, const LabeledSample*> by_id;
      for (const LabeledSample& s : train) by_id.emplace(s.sample_id, &s);
      std::vector<augment::SampleSeries> series;
      series.reserve(train.size());
      for (const LabeledSample& s : train)
        series.push_back(augment::series_from_sample(s));
      augment::AugmentConfig acfg = config.augment.params;
      acfg.seed = hash_combine(config.seed, 0xa06u);
      const auto augmented =
          augment::augment_dataset(series, acfg, &result.warnings);

      Manifest train_aug = train_m;
      std::vector<LabeledSample> extended = train;
      for (size_t i = train.size(); i < augmented.size(); ++i) {
        const augment::SampleSeries& s = augmented[i];
        const LabeledSample& src = *by_id.at(s.source_sample_id);
        LabeledSample sample =
            augment::sample_from_series(s, src.spectrogram);
        sample.domain_id = src.domain_id;
        sample.clutter = src.clutter;
        sample.frame_index = src.frame_index;

        ManifestEntry e;
        e.sample_id = sample.sample_id;
        e.label = sample.label;
        e.person_id = sample.person_id;
        e.domain_id = sample.domain_id;
        e.clutter = sample.clutter;
        e.frame_index = sample.frame_index;
        e.augmented = true;
        e.aug_mode =
            s.mode == augment::AugmentMode::intra ? "intra" : "inter";
        e.source_sample_id = s.source_sample_id;
        e.neighbor_ids = s.neighbor_ids;
        e.spectrogram_path =
            dir + "/spectrograms/" + file_stem(sample.sample_id) + ".csv";
        sigproc::save_spectrogram_csv(e.spectrogram_path, sample.spectrogram);

        train_aug.push_back(std::move(e));
        extended.push_back(std::move(sample));
      }
      save_manifest(dir + "/manifests/train_augmented.jsonl", train_aug);
      train = std::move(extended);
    });
  }

  // -- pretrain ------------------------------------------------------------
  adapt::AdaptConfig acfg = config.adapt;
  acfg.seed = config.seed;
  nnet::ParamStore store;
  stage("pretrain", [&] {
    nnet::TrainingLogger logger(dir + "/logs/pretrain.csv");
    result.source_train_accuracy =
        adapt::pretrain_source(store, config.encoder, train, acfg, &logger);
    nnet::save_checkpoint(store, dir + "/checkpoints/pretrained.efck");
  });

  // -- evaluate the pretrained baseline ------------------------------------
  stage("evaluate_baseline", [&] {
    const EvalOutput out = evaluate_model(store, config.encoder, test);
    result.baseline = out.frame;
    result.baseline_recording = out.recording;
    write_text_file(dir + "/reports/baseline.json", out.frame.to_json());
    write_text_file(dir + "/reports/baseline_recording.json",
                    out.recording.to_json());
    write_text_file(dir + "/reports/confusion_baseline.csv",
                    confusion_csv(out.frame));
  });

  // -- adapt ---------------------------------------------------------------
  stage("adapt", [&] {
    nnet::TrainingLogger logger(dir + "/logs/adapt.csv");
    adapt::PseudoLabelAudit audit(dir + "/logs/pseudo_labels.csv");
    const adapt::AdaptReport report = adapt::adaptation_loop(
        store, config.encoder, train, test, acfg, &logger, &audit, nullptr);
    result.warnings.insert(result.warnings.end(), report.warnings.begin(),
                           report.warnings.end());
    nnet::save_checkpoint(store, dir + "/checkpoints/adapted.efck");
  });

  // -- evaluate the adapted model ------------------------------------------
  stage("evaluate_adapted", [&] {
    const EvalOutput out = evaluate_model(store, config.encoder, test);
    result.adapted = out.frame;
    result.adapted_recording = out.recording;
    write_text_file(dir + "/reports/adapted.json", out.frame.to_json());
    write_text_file(dir + "/reports/adapted_recording.json",
                    out.recording.to_json());
    write_text_file(dir + "/reports/confusion_adapted.csv",
                    confusion_csv(out.frame));
  });

  // -- summary -------------------------------------------------------------
  stage("report", [&] {
    size_t train_raw = 0;
    for (const ManifestEntry& e : train_m) train_raw += e.augmented ? 0 : 1;
    njson s;
    s["name"] = config.name;
    s["seed"] = config.seed;
    s["case"] = evalcli::to_string(config.split.name);
    s["loss_mode"] = to_string(config.adapt.loss_mode);
    s["augment"] = config.augment.enabled;
    s["n_train_raw"] = train_raw;
    s["n_train"] = train.size();
    s["n_test"] = test.size();
    s["source_train_accuracy"] = result.source_train_accuracy;
    s["baseline_accuracy"] = result.baseline.accuracy;
    s["baseline_macro_f1"] = result.baseline.macro_f1;
    s["baseline_recording_accuracy"] = result.baseline_recording.accuracy;
    s["adapted_accuracy"] = result.adapted.accuracy;
    s["adapted_macro_f1"] = result.adapted.macro_f1;
    s["adapted_recording_accuracy"] = result.adapted_recording.accuracy;
    s["adaptation_gain_pp"] =
        100.0 * (result.adapted.accuracy - result.baseline.accuracy);
    s["warnings"] = result.warnings;
    write_text_file(dir + "/reports/summary.json", s.dump(2) + "\n");

    std::ostringstream txt;
    txt << "experiment " << config.name << " (case "
        << evalcli::to_string(config.split.name) << ", seed " << config.seed
        << ")\n"
        << "train " << train.size() << " samples (" << train_raw
        << " raw), test " << test.size() << " samples\n"
        << "source train accuracy " << format_double(
               result.source_train_accuracy)
        << "\n\n== baseline (per frame) ==\n"
        << result.baseline.to_text()
        << "\n== adapted (per frame) ==\n"
        << result.adapted.to_text()
        << "\nper-recording accuracy: baseline "
        << format_double(result.baseline_recording.accuracy) << ", adapted "
        << format_double(result.adapted_recording.accuracy) << "\n"
        << "adaptation gain "
        << format_double(100.0 *
                         (result.adapted.accuracy - result.baseline.accuracy))
        << " percentage points\n";
    write_text_file(dir + "/reports/summary.txt", txt.str());
  });

  return result;
}

ExperimentResult run_experiment(const std::string& config_path,
                                const std::string& out_dir) {
  const std::string text = read_text_file(config_path);
  const ExperimentConfig config = parse_experiment_config(text);
  return run_experiment(config, out_dir, text);
}

// ---------------------------------------------------------------------------
// Ablations
// ---------------------------------------------------------------------------

const AblationCell& AblationTable::cell(bool augment,
                                        adapt::LossMode mode) const {
  const int loss_idx = mode == adapt::LossMode::ce_only ? 0
                       : mode == adapt::LossMode::supcon_only ? 1
                                                              : 2;
  return cells[(augment ? 3 : 0) + loss_idx];
}

std::string AblationTable::to_json() const {
  njson rows = njson::array();
  for (const AblationCell& c : cells) {
    njson row;
    row["augment"] = c.augment;
    row["loss_mode"] = to_string(c.loss_mode);
    row["baseline_accuracy"] = c.baseline_accuracy;
    row["adapted_accuracy"] = c.adapted_accuracy;
    row["adapted_macro_f1"] = c.adapted_macro_f1;
    rows.push_back(row);
  }
  njson j;
  j["cells"] = rows;
  return j.dump(2) + "\n";
}

std::string AblationTable::to_text() const {
  std::ostringstream out;
  char line[120];
  std::snprintf(line, sizeof line, "%-8s %-12s %12s %12s %12s\n", "augment",
                "objective", "baseline", "adapted", "macro-F1");
  out << line;
  for (const AblationCell& c : cells) {
    std::snprintf(line, sizeof line, "%-8s %-12s %12.4f %12.4f %12.4f\n",
                  c.augment ? "on" : "off", to_string(c.loss_mode),
                  c.baseline_accuracy, c.adapted_accuracy, c.adapted_macro_f1);
    out << line;
  }
  return out.str();
}

AblationTable ablation_suite(const std::string& config_path,
                             const std::string& out_root) {
  const std::string base_text = read_text_file(config_path);
  const ExperimentConfig base = parse_experiment_config(base_text);
  if (out_root.empty())
    throw ConfigError("ablation_suite: output directory required");
  std::filesystem::create_directories(out_root);

  const adapt::LossMode modes[] = {adapt::LossMode::ce_only,
                                   adapt::LossMode::supcon_only,
                                   adapt::LossMode::combined};
  const char* mode_names[] = {"ce_only", "supcon_only", "combined"};

  AblationTable table;
  int idx = 0;
  for (const bool aug : {false, true}) {
    for (int m = 0; m < 3; ++m, ++idx) {
      njson j = njson::parse(base_text);
      j["name"] = base.name + (aug ? "-aug-" : "-noaug-") + mode_names[m];
      j["augment"]["enabled"] = aug;
      if (aug && !j["augment"].contains("mode"))
        j["augment"]["mode"] = "inter";
      j["adapt"]["loss_mode"] = mode_names[m];
      const std::string cell_text = j.dump(2) + "\n";
      const ExperimentConfig cell_cfg = parse_experiment_config(cell_text);
      const std::string cell_dir = out_root + "/" +
                                   (aug ? "aug_" : "noaug_") + mode_names[m];
      const ExperimentResult r =
          run_experiment(cell_cfg, cell_dir, cell_text);

      AblationCell& cell = table.cells[idx];
      cell.augment = aug;
      cell.loss_mode = modes[m];
      cell.baseline_accuracy = r.baseline.accuracy;
      cell.adapted_accuracy = r.adapted.accuracy;
      cell.adapted_macro_f1 = r.adapted.macro_f1;
    }
  }
  write_text_file(out_root + "/ablation.json", table.to_json());
  write_text_file(out_root + "/ablation.txt", table.to_text());
  return table;
}

}  // namespace efl::evalcli
