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

#ifndef EFL_EVALCLI_HPP
#define EFL_EVALCLI_HPP

#include <array>
#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "efl/adapt.hpp"
#include "efl/augment.hpp"
#include "efl/dataset.hpp"
#include "efl/echosim.hpp"
#include "efl/nnet.hpp"

// Experiment harness: dataset manifests, evaluation-protocol splits,
// classification metrics, and the end-to-end experiment runner behind the
// `efl` command-line tool.
namespace efl::evalcli {

using nnet::Tensor;

// ---------------------------------------------------------------------------
// Manifests
// ---------------------------------------------------------------------------

// One dataset row, serialized as a JSON-lines record. `spectrogram_path` is
// empty for rows that only exist in memory. Augmented rows carry their
// provenance; raw rows leave those fields at their defaults.
struct ManifestEntry {
  std::string sample_id;
  ExpressionClass label = ExpressionClass::anger;
  std::string person_id;
  std::string domain_id;
  bool clutter = false;
  std::string spectrogram_path;
  int frame_index = 0;

  bool augmented = false;
  std::string aug_mode;  // "intra" | "inter" when augmented
  std::string source_sample_id;
  std::vector<std::string> neighbor_ids;
};

using Manifest = std::vector<ManifestEntry>;

// Rows for an in-memory dataset, in the same order; paths left empty.
Manifest manifest_from_samples(const std::vector<LabeledSample>& samples);

// JSON-lines round trip. Loading validates every field's type and rejects
// unknown keys so manifest typos fail loudly.
void save_manifest(const std::string& path, const Manifest& manifest);
Manifest load_manifest(const std::string& path);

// Materializes manifest rows back into samples from an in-memory pool,
// matched by sample_id (DataError if a row has no pool match). Row order is
// the manifest's.
std::vector<LabeledSample> match_samples(
    const Manifest& manifest, const std::vector<LabeledSample>& pool);

// Materializes manifest rows by reading each row's spectrogram_path
// (DataError on an empty path or unreadable file).
std::vector<LabeledSample> load_samples(const Manifest& manifest);

// ---------------------------------------------------------------------------
// Evaluation-protocol splits
// ---------------------------------------------------------------------------

enum class CaseName {
  mix,                     // stratified sample split, train_fraction
  leave_one_user_out,      // held_out_id names the test person
  leave_one_place_out,     // held_out_id names the test domain
  cross_group,             // person groups A (train) and B (test)
  small_train_cross_group, // cross_group with the train side subsampled
  plain_to_clutter,        // clutter=false trains, clutter=true tests
  clutter_to_plain,
};

const char* to_string(CaseName name);
// Accepts the enum spellings plus the CLI shorthands "louo", "lopo",
// "cross-group", "small-train-cross-group", "plain-to-clutter",
// "clutter-to-plain".
CaseName case_from_string(const std::string& name);

struct CaseSpec {
  CaseName name = CaseName::mix;
  double train_fraction = 0.8;         // mix
  double small_train_fraction = 0.25;  // small_train_cross_group
  std::string held_out_id;             // leave_one_*_out
  // cross_group person groups; both empty = sorted persons, first half A.
  std::vector<std::string> group_a, group_b;

  void validate() const;
};

// Splits a manifest into disjoint (train, test) halves per the case
// semantics. Stratified subsets apportion the target count across classes
// by largest remainder, so per-class counts stay within one sample of the
// exact fraction while the total matches it exactly. Augmented rows never
// enter the test side: one follows its source row into train and is dropped
// if the source went to test. Throws InsufficientDataError when the case is
// infeasible for the manifest (one person for leave-one-out, no clutter
// rows, an empty side, ...).
std::pair<Manifest, Manifest> build_case_split(const Manifest& manifest,
                                               const CaseSpec& spec,
                                               std::uint64_t seed);

// ---------------------------------------------------------------------------
// Metrics
// ---------------------------------------------------------------------------

struct ClassMetrics {
  std::size_t support = 0;  // truth count
  double precision = 0.0;   // tp/(tp+fp); 0 when the denominator is 0
  double recall = 0.0;      // tp/(tp+fn); 0 when the denominator is 0
  double f1 = 0.0;          // harmonic mean; 0 when precision+recall = 0
  double average_precision = 0.0;  // step-wise AP over score thresholds
  double roc_auc = 0.0;            // trapezoidal AUC; 0.5 if degenerate
};

struct MetricsReport {
  std::size_t n = 0;
  double accuracy = 0.0;
  std::array<ClassMetrics, kNumClasses> per_class{};
  double macro_f1 = 0.0;
  // confusion[truth][predicted]; row sums equal per-class truth counts.
  std::array<std::array<std::size_t, kNumClasses>, kNumClasses> confusion{};

  // Rows scaled to sum to 1; all-zero rows stay all zero.
  std::array<std::array<double, kNumClasses>, kNumClasses>
  confusion_row_normalized() const;

  std::string to_json() const;  // machine form, stable key order
  std::string to_text() const;  // aligned human-readable table
};

// predictions/truths hold class ordinals; scores[i][c] ranks sample i for
// class c (any monotone score — probabilities here). AP and ROC-AUC sweep
// the distinct scores one-vs-rest per class, grouping ties. Throws on empty
// input, length mismatch, or an out-of-range class.
MetricsReport compute_metrics(
    const std::vector<int>& predictions,
    const std::vector<std::array<double, kNumClasses>>& scores,
    const std::vector<int>& truths);

// The recording a frame belongs to: its sample_id with the trailing
// "/f<N>" frame component removed (the full id if there is none).
std::string recording_id_of(const std::string& sample_id);

// Majority vote over each recording's frames (ties toward the lower class
// ordinal), scored by the mean of the frame scores; truths must agree
// within a recording. The report's n is the number of recordings.
MetricsReport compute_recording_metrics(
    const std::vector<std::string>& sample_ids,
    const std::vector<int>& predictions,
    const std::vector<std::array<double, kNumClasses>>& scores,
    const std::vector<int>& truths);

// ---------------------------------------------------------------------------
// Experiment configuration
// ---------------------------------------------------------------------------

// One simulated person pool: `persons` consecutive ids starting at
// person_id_offset, recorded `reps` times per class in one domain.
struct PoolConfig {
  echosim::DomainProfile domain;
  int persons = 2;
  int person_id_offset = 0;
  int reps = 3;
};

struct AugmentStageConfig {
  bool enabled = false;
  augment::AugmentConfig params;
};

struct ExperimentConfig {
  std::string name = "experiment";
  std::uint64_t seed = 0;
  std::string out_dir;  // optional; the CLI --out overrides it
  std::vector<PoolConfig> pools;
  echosim::DatasetOptions dataset;
  sigproc::ChirpSpec chirp;
  CaseSpec split;
  AugmentStageConfig augment;
  nnet::EncoderConfig encoder;
  adapt::AdaptConfig adapt;

  void validate() const;
};

// Strict JSON parse: every key must be known and well-typed (ConfigError
// otherwise), and absent keys keep the defaults above.
ExperimentConfig parse_experiment_config(const std::string& json_text);
ExperimentConfig load_experiment_config(const std::string& path);

// ---------------------------------------------------------------------------
// Experiment runner
// ---------------------------------------------------------------------------

struct ExperimentResult {
  std::string artifacts_dir;
  double source_train_accuracy = 0.0;
  MetricsReport baseline;            // per-frame, before adaptation
  MetricsReport baseline_recording;  // per-recording majority vote
  MetricsReport adapted;
  MetricsReport adapted_recording;
  std::vector<std::string> warnings;
};

// Runs the full pipeline — simulate, split, optional augmentation,
// pre-train, baseline evaluation, adaptation, adapted evaluation — and
// writes the artifacts tree under out_dir:
//
//   config.copy                     byte copy of the config as run
//   manifests/{full,train,test[,train_augmented]}.jsonl
//   spectrograms/*.csv
//   checkpoints/{pretrained,adapted}.efck
//   logs/{pretrain.csv,adapt.csv,pseudo_labels.csv}
//   reports/{baseline,adapted}[_recording].json, confusion_*.csv,
//           summary.json, summary.txt
//
// The train side is the labeled source; the test side doubles as the
// unlabeled adaptation target and the evaluation set (its labels are used
// only for metrics). A stage failure rethrows the error with a
// "[stage]" prefix, leaving the artifacts written so far in place. Reports
// and checkpoints contain no timestamps: a rerun with the same config and
// seed is byte-identical.
ExperimentResult run_experiment(const ExperimentConfig& config,
                                const std::string& out_dir,
                                const std::string& config_text);
// Convenience: load + run; out_dir falls back to config.out_dir.
ExperimentResult run_experiment(const std::string& config_path,
                                const std::string& out_dir = "");

// ---------------------------------------------------------------------------
// Ablations
// ---------------------------------------------------------------------------

struct AblationCell {
  bool augment = false;
  adapt::LossMode loss_mode = adapt::LossMode::combined;
  double baseline_accuracy = 0.0;
  double adapted_accuracy = 0.0;
  double adapted_macro_f1 = 0.0;
};

struct AblationTable {
  std::array<AblationCell, 6> cells{};  // {off,on} x {ce, supcon, combined}

  const AblationCell& cell(bool augment, adapt::LossMode mode) const;
  std::string to_json() const;
  std::string to_text() const;
};

// Runs the 2x3 grid {augment off, on} x {CE-only, SupCon-only, combined}
// over the base config, one artifacts directory per cell under out_root
// plus out_root/{ablation.json,ablation.txt}. Cells run sequentially and
// differ from the base config only in the two ablated fields.
AblationTable ablation_suite(const std::string& config_path,
                             const std::string& out_root);

}  // namespace efl::evalcli

#endif  // EFL_EVALCLI_HPP
