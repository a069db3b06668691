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

#ifndef EFL_ADAPT_HPP
#define EFL_ADAPT_HPP

#include <array>
#include <cstdint>
#include <fstream>
#include <string>
#include <utility>
#include <vector>

#include "efl/dataset.hpp"
#include "efl/nnet.hpp"

// Cross-domain representation learning: pre-train an encoder + classifier on
// labeled source recordings, then adapt the encoder to an unlabeled target
// domain. Each adaptation epoch re-derives per-class source centroids,
// assigns every target sample the nearest centroid as a pseudo label, drops
// drifted samples with a median-absolute-deviation test, and then runs joint
// steps of source cross-entropy and a source/target contrastive loss whose
// mixing weight follows the adaptive schedule in nnet.

namespace efl::adapt {

using nnet::EncoderConfig;
using nnet::ParamStore;
using nnet::Tensor;

// Per-class mean embeddings of the labeled source set.
struct CentroidSet {
  Tensor centroids;                          // [kNumClasses, d_z]
  std::array<size_t, kNumClasses> counts{};  // source samples per class
};

struct PseudoLabelEntry {
  int pseudo_label = 0;      // nearest-centroid class
  double drift_score = 0.0;  // (d_j - median) / MAD for the labeled class
  bool kept = false;         // drift_score <= threshold
};

struct PseudoLabelSet {
  std::vector<PseudoLabelEntry> entries;

  size_t kept_count() const;
};

// Which terms of the joint objective drive the adaptation updates. The
// default mixes source cross-entropy with the target contrastive loss under
// the adaptive weight; the single-term modes exist for ablation runs.
enum class LossMode { ce_only, supcon_only, combined };

struct AdaptConfig {
  int epochs = 5;            // E; 0 is an explicit no-op
  int iters_per_epoch = 10;  // K
  size_t batch_source = 64;  // B_s
  size_t batch_target = 64;  // B_t
  double tau = 0.07;         // contrastive temperature
  double mad_threshold = 3.5;
  double lr = 0.1;
  double momentum = 0.9;
  LossMode loss_mode = LossMode::combined;
  // Source pre-training: stop after `pretrain_max_epochs`, or earlier when
  // the mean epoch loss improves by less than `pretrain_plateau_rel`
  // (relative) over the last `pretrain_plateau_window` epochs.
  int pretrain_max_epochs = 60;
  size_t pretrain_batch = 64;
  double pretrain_plateau_rel = 1e-3;
  int pretrain_plateau_window = 5;
  std::uint64_t seed = 0;

  void validate() const;  // throws ConfigError
};

// Receives adaptation progress as it happens. `optimizer_step` is the
// store's update counter at the moment the epoch's pseudo labels were
// computed, which pins the recomputation to the current model state.
struct AdaptObserver {
  virtual ~AdaptObserver() = default;
  virtual void on_pseudo_labels(int epoch, const PseudoLabelSet& labels,
                                std::uint64_t optimizer_step) {
    (void)epoch, (void)labels, (void)optimizer_step;
  }
  virtual void on_iteration(int epoch, int iter, double l_ce, double l_con_t,
                            double lambda) {
    (void)epoch, (void)iter, (void)l_ce, (void)l_con_t, (void)lambda;
  }
};

// Streams one CSV row per target sample per epoch for post-hoc analysis.
// True labels never feed back into the adaptation; they are carried here
// for evaluation only.
class PseudoLabelAudit {
 public:
  explicit PseudoLabelAudit(const std::string& path);

  void record(int epoch, const std::vector<LabeledSample>& target,
              const PseudoLabelSet& labels);

 private:
  std::ofstream out_;
};

struct AdaptReport {
  std::vector<std::string> warnings;
};

// Cross-entropy training of encoder + classifier head on the labeled source
// set until the plateau criterion or the epoch cap. Creates any missing
// parameters from cfg.seed. Returns the final source training accuracy.
double pretrain_source(ParamStore& store, const EncoderConfig& enc,
                       const std::vector<LabeledSample>& source,
                       const AdaptConfig& cfg,
                       nnet::TrainingLogger* logger = nullptr);

// c_k = mean of the class-k rows of z [N, d]. Every class must be present.
CentroidSet compute_centroids(const Tensor& z, const std::vector<int>& labels);

// Nearest centroid by Euclidean distance; ties break toward the lowest
// class index.
std::vector<int> assign_pseudo_labels(const Tensor& z, const CentroidSet& c);

// Drift filter. Per class k over the train rows: distances to the class
// mean, their median, and the median absolute deviation around it. A test
// row labeled k scores (d_j - median_k) / MAD_k and is kept iff the score
// is <= threshold. A zero MAD falls back to 1e-12, so any distance above
// the median filters.
PseudoLabelSet mad_filter(const Tensor& z_train,
                          const std::vector<int>& labels_train,
                          const Tensor& z_test,
                          const std::vector<int>& labels_test,
                          double threshold = 3.5);

// Adaptation epochs over a pre-trained model. Per epoch: recompute
// centroids, pseudo labels, and the drift filter with the current encoder;
// then iters_per_epoch joint updates on sampled source/target batches. When
// an epoch filters every target sample the contrastive term is skipped for
// that epoch (weight pinned to 1) and a warning is reported.
AdaptReport adaptation_loop(ParamStore& store, const EncoderConfig& enc,
                            const std::vector<LabeledSample>& source,
                            const std::vector<LabeledSample>& target,
                            const AdaptConfig& cfg,
                            nnet::TrainingLogger* logger = nullptr,
                            PseudoLabelAudit* audit = nullptr,
                            AdaptObserver* observer = nullptr);

// Embeddings for both domains, row i aligned with sample i of the inputs.
std::pair<Tensor, Tensor> extract_representations(
    ParamStore& store, const EncoderConfig& enc,
    const std::vector<LabeledSample>& source,
    const std::vector<LabeledSample>& target);

struct KmeansResult {
  std::vector<int> assignments;       // [N], values in 0..k-1
  Tensor centroids;                   // [k, d]
  std::vector<double> wcss_history;   // after every assignment pass
  int iterations = 0;                 // assignment passes run
};

// Lloyd's algorithm with seeded k-means++ initialization, run to an
// assignment fixed point or 300 passes. Assignment ties break toward the
// lowest cluster index; a cluster left empty is re-seeded from the point
// farthest from its current centroid.
KmeansResult kmeans(const Tensor& z, int k, std::uint64_t seed);

}  // namespace efl::adapt

#endif  // EFL_ADAPT_HPP
