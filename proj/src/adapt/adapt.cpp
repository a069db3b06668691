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

#include "efl/adapt.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>

#include "efl/errors.hpp"
#include "efl/rng.hpp"

namespace efl::adapt {

namespace {

constexpr std::uint64_t kPretrainStream = 0x9e7ea11ull;
constexpr std::uint64_t kAdaptStream = 0xada9d7ull;

std::vector<int> labels_of(const std::vector<LabeledSample>& samples) {
  std::vector<int> labels(samples.size());
  for (size_t i = 0; i < samples.size(); ++i)
    labels[i] = static_cast<int>(samples[i].label);
  return labels;
}

// Encoder pass over an arbitrary number of samples, in fixed-size slices so
// graph memory stays bounded. Row order follows `samples`.
std::pair<Tensor, Tensor> encode_all(ParamStore& store,
                                     const EncoderConfig& enc,
                                     const std::vector<LabeledSample>& samples,
                                     size_t slice = 256) {
  const size_t n = samples.size();
  Tensor emb, proj;
  for (size_t at = 0; at < n; at += slice) {
    const size_t take = std::min(slice, n - at);
    std::vector<const sigproc::Spectrogram*> batch(take);
    for (size_t i = 0; i < take; ++i)
      batch[i] = &samples[at + i].spectrogram;
    auto [e, p] = nnet::encode_batch(batch, store, enc);
    if (at == 0) {
      emb = Tensor::zeros({n, e.shape[1]});
      proj = Tensor::zeros({n, p.shape[1]});
    }
    std::copy(e.values.begin(), e.values.end(),
              emb.values.begin() + at * emb.shape[1]);
    std::copy(p.values.begin(), p.values.end(),
              proj.values.begin() + at * proj.shape[1]);
  }
  return {std::move(emb), std::move(proj)};
}

// Draw `want` distinct indices from [0, n); the whole pool, in order, when
// it is not larger than the request.
std::vector<size_t> draw_batch(size_t n, size_t want, Rng& rng) {
  if (n <= want) {
    std::vector<size_t> all(n);
    for (size_t i = 0; i < n; ++i) all[i] = i;
    return all;
  }
  return rng.sample_without_replacement(n, want);
}

double median_inplace(std::vector<double>& v) {
  std::sort(v.begin(), v.end());
  const size_t n = v.size();
  return n % 2 == 1 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

double row_distance(const Tensor& z, size_t row, const double* ref) {
  const size_t d = z.shape[1];
  double acc = 0.0;
  for (size_t c = 0; c < d; ++c) {
    const double diff = z.values[row * d + c] - ref[c];
    acc += diff * diff;
  }
  return std::sqrt(acc);
}

void check_rows(const Tensor& z, const std::vector<int>& labels,
                const char* who) {
  if (z.shape.size() != 2)
    throw ShapeError(std::string(who) + ": embeddings must be [N, d]");
  if (z.shape[0] != labels.size())
    throw ShapeError(std::string(who) +
                     ": one label per embedding row is required");
}

}  // namespace

size_t PseudoLabelSet::kept_count() const {
  size_t n = 0;
  for (const PseudoLabelEntry& e : entries) n += e.kept ? 1 : 0;
  return n;
}

void AdaptConfig::validate() const {
  if (epochs < 0) throw ConfigError("adapt: epochs must be >= 0");
  if (iters_per_epoch < 1)
    throw ConfigError("adapt: iterations per epoch must be >= 1");
  if (batch_source < 1 || batch_target < 1)
    throw ConfigError("adapt: batch sizes must be >= 1");
  if (!(tau > 0.0)) throw ConfigError("adapt: tau must be positive");
  if (!(mad_threshold > 0.0))
    throw ConfigError("adapt: MAD threshold must be positive");
  if (!(lr >= 0.0) || !std::isfinite(lr))
    throw ConfigError("adapt: learning rate must be finite and >= 0");
  if (!(momentum >= 0.0) || momentum >= 1.0)
    throw ConfigError("adapt: momentum must lie in [0, 1)");
  if (pretrain_max_epochs < 0)
    throw ConfigError("adapt: pretrain_max_epochs must be >= 0");
  if (pretrain_batch < 1)
    throw ConfigError("adapt: pretrain_batch must be >= 1");
  if (!(pretrain_plateau_rel > 0.0))
    throw ConfigError("adapt: pretrain_plateau_rel must be positive");
  if (pretrain_plateau_window < 1)
    throw ConfigError("adapt: pretrain_plateau_window must be >= 1");
}

PseudoLabelAudit::PseudoLabelAudit(const std::string& path) : out_(path) {
  if (!out_) throw DataError("cannot open pseudo-label audit file: " + path);
  out_ << "sample_id,epoch,pseudo_label,drift_score,kept,true_label\n";
}

void PseudoLabelAudit::record(int epoch,
                              const std::vector<LabeledSample>& target,
                              const PseudoLabelSet& labels) {
  if (target.size() != labels.entries.size())
    throw ShapeError("audit: one pseudo-label entry per target sample");
  out_.precision(17);
  for (size_t i = 0; i < target.size(); ++i) {
    const PseudoLabelEntry& e = labels.entries[i];
    out_ << target[i].sample_id << ',' << epoch << ',' << e.pseudo_label
         << ',' << e.drift_score << ',' << (e.kept ? 1 : 0) << ','
         << static_cast<int>(target[i].label) << '\n';
  }
  out_.flush();
}

double pretrain_source(ParamStore& store, const EncoderConfig& enc,
                       const std::vector<LabeledSample>& source,
                       const AdaptConfig& cfg, nnet::TrainingLogger* logger) {
  cfg.validate();
  enc.validate();
  if (source.empty())
    throw DegenerateInputError("pretrain_source: source set is empty");

  nnet::init_encoder_params(store, enc, cfg.seed);
  nnet::init_classifier_params(store, enc.embed_dim, 256, kNumClasses,
                               cfg.seed);
  // each training phase runs on a fresh optimizer, exactly as it would
  // after a checkpoint round-trip
  store.reset_velocity();

  const std::vector<int> labels = labels_of(source);
  Rng rng(hash_combine(cfg.seed, kPretrainStream));
  std::vector<size_t> order(source.size());
  for (size_t i = 0; i < order.size(); ++i) order[i] = i;

  std::vector<double> epoch_losses;
  size_t iter = 0;
  for (int epoch = 0; epoch < cfg.pretrain_max_epochs; ++epoch) {
    rng.shuffle(order);
    double loss_sum = 0.0;
    size_t batches = 0;
    for (size_t at = 0; at < order.size(); at += cfg.pretrain_batch) {
      const size_t take = std::min(cfg.pretrain_batch, order.size() - at);
      std::vector<const sigproc::Spectrogram*> batch(take);
      std::vector<int> batch_labels(take);
      for (size_t i = 0; i < take; ++i) {
        batch[i] = &source[order[at + i]].spectrogram;
        batch_labels[i] = labels[order[at + i]];
      }
      nnet::Graph g;
      const auto x = g.input(nnet::batch_from_spectrograms(batch, enc));
      const nnet::EncoderNodes nodes = nnet::encoder_forward(g, x, store, enc);
      const auto logits = nnet::classifier_forward(g, nodes.embedding, store);
      const auto loss = g.ce_loss(logits, batch_labels);
      g.backward(loss);
      nnet::sgd_momentum_step(store, g.param_grads(), cfg.lr, cfg.momentum);
      const double l_ce = g.value(loss).values[0];
      loss_sum += l_ce;
      ++batches;
      ++iter;
      if (logger) logger->log(iter, l_ce, 0.0, 1.0, cfg.lr);
    }
    epoch_losses.push_back(loss_sum / static_cast<double>(batches));
    // Plateau check on adjacent window means rather than single epochs:
    // minibatch losses spike transiently, and an endpoint comparison would
    // read one bad epoch as "no improvement" and stop a healthy run.
    const size_t w = static_cast<size_t>(cfg.pretrain_plateau_window);
    if (epoch_losses.size() >= 2 * w) {
      const size_t n = epoch_losses.size();
      double before = 0.0, now = 0.0;
      for (size_t i = 0; i < w; ++i) {
        before += epoch_losses[n - 2 * w + i];
        now += epoch_losses[n - w + i];
      }
      before /= static_cast<double>(w);
      now /= static_cast<double>(w);
      const double rel = (before - now) / std::max(std::abs(before), 1e-12);
      if (rel < cfg.pretrain_plateau_rel) break;
    }
  }

  const auto [emb, proj] = encode_all(store, enc, source);
  (void)proj;
  const std::vector<int> pred = nnet::classifier_predict(store, emb);
  size_t hits = 0;
  for (size_t i = 0; i < pred.size(); ++i)
    hits += pred[i] == labels[i] ? 1 : 0;
  return static_cast<double>(hits) / static_cast<double>(pred.size());
}

CentroidSet compute_centroids(const Tensor& z,
                              const std::vector<int>& labels) {
  check_rows(z, labels, "compute_centroids");
  const size_t d = z.shape[1];
  CentroidSet set;
  set.centroids = Tensor::zeros({static_cast<size_t>(kNumClasses), d});
  for (size_t i = 0; i < labels.size(); ++i) {
    const int k = labels[i];
    if (k < 0 || k >= kNumClasses)
      throw DataError("compute_centroids: label out of range");
    for (size_t c = 0; c < d; ++c)
      set.centroids.values[k * d + c] += z.values[i * d + c];
    ++set.counts[k];
  }
  for (int k = 0; k < kNumClasses; ++k) {
    if (set.counts[k] == 0)
      throw InsufficientDataError(
          "compute_centroids: no source samples for class " +
          std::string(to_string(static_cast<ExpressionClass>(k))));
    for (size_t c = 0; c < d; ++c)
      set.centroids.values[k * d + c] /= static_cast<double>(set.counts[k]);
  }
  return set;
}

std::vector<int> assign_pseudo_labels(const Tensor& z, const CentroidSet& c) {
  if (z.shape.size() != 2)
    throw ShapeError("assign_pseudo_labels: embeddings must be [N, d]");
  if (c.centroids.shape.size() != 2 ||
      c.centroids.shape[0] != static_cast<size_t>(kNumClasses) ||
      c.centroids.shape[1] != z.shape[1])
    throw ShapeError("assign_pseudo_labels: centroid shape mismatch");
  const size_t n = z.shape[0];
  const size_t d = z.shape[1];
  std::vector<int> out(n);
  for (size_t i = 0; i < n; ++i) {
    int best = 0;
    double best_d = std::numeric_limits<double>::infinity();
    for (int k = 0; k < kNumClasses; ++k) {
      const double dist = row_distance(z, i, &c.centroids.values[k * d]);
      if (dist < best_d) {  // strict: ties keep the lowest class index
        best_d = dist;
        best = k;
      }
    }
    out[i] = best;
  }
  return out;
}

PseudoLabelSet mad_filter(const Tensor& z_train,
                          const std::vector<int>& labels_train,
                          const Tensor& z_test,
                          const std::vector<int>& labels_test,
                          double threshold) {
  check_rows(z_train, labels_train, "mad_filter");
  check_rows(z_test, labels_test, "mad_filter");
  if (z_train.shape[1] != z_test.shape[1])
    throw ShapeError("mad_filter: train/test embedding dims differ");

  const size_t d = z_train.shape[1];
  // Statistics only for the classes the test labels actually reference.
  std::array<bool, kNumClasses> needed{};
  for (const int k : labels_test) {
    if (k < 0 || k >= kNumClasses)
      throw DataError("mad_filter: test label out of range");
    needed[k] = true;
  }
  std::array<std::vector<double>, kNumClasses> mean{};
  std::array<double, kNumClasses> med{}, mad{};
  for (int k = 0; k < kNumClasses; ++k) {
    if (!needed[k]) continue;
    mean[k].assign(d, 0.0);
    size_t count = 0;
    for (size_t i = 0; i < labels_train.size(); ++i) {
      if (labels_train[i] != k) continue;
      for (size_t c = 0; c < d; ++c)
        mean[k][c] += z_train.values[i * d + c];
      ++count;
    }
    if (count == 0)
      throw InsufficientDataError(
          "mad_filter: no train embeddings for class " +
          std::string(to_string(static_cast<ExpressionClass>(k))));
    for (double& v : mean[k]) v /= static_cast<double>(count);
    std::vector<double> dist;
    for (size_t i = 0; i < labels_train.size(); ++i)
      if (labels_train[i] == k)
        dist.push_back(row_distance(z_train, i, mean[k].data()));
    med[k] = median_inplace(dist);
    for (double& v : dist) v = std::abs(v - med[k]);
    mad[k] = median_inplace(dist);
    if (mad[k] == 0.0) mad[k] = 1e-12;  // all train distances equal
  }

  PseudoLabelSet out;
  out.entries.resize(labels_test.size());
  for (size_t j = 0; j < labels_test.size(); ++j) {
    const int k = labels_test[j];
    const double dj = row_distance(z_test, j, mean[k].data());
    PseudoLabelEntry& e = out.entries[j];
    e.pseudo_label = k;
    e.drift_score = (dj - med[k]) / mad[k];
    e.kept = e.drift_score <= threshold;
  }
  return out;
}

AdaptReport adaptation_loop(ParamStore& store, const EncoderConfig& enc,
                            const std::vector<LabeledSample>& source,
                            const std::vector<LabeledSample>& target,
                            const AdaptConfig& cfg,
                            nnet::TrainingLogger* logger,
                            PseudoLabelAudit* audit,
                            AdaptObserver* observer) {
  cfg.validate();
  enc.validate();
  if (source.empty())
    throw DegenerateInputError("adaptation_loop: source set is empty");
  if (target.empty())
    throw DegenerateInputError("adaptation_loop: target set is empty");
  if (!store.contains("enc.conv1.w") || !store.contains("clf.w1"))
    throw DataError(
        "adaptation_loop: the store holds no pre-trained model; run "
        "pretrain_source first");
  store.reset_velocity();

  AdaptReport report;
  const std::vector<int> labels_s = labels_of(source);
  Rng rng(hash_combine(cfg.seed, kAdaptStream));
  nnet::LossHistory history;
  double last_con = 1.0;
  size_t iter = 0;

  for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
    // Pseudo labels always come from the model as it stands right now.
    const auto [z_s, p_s] = encode_all(store, enc, source);
    const auto [z_t, p_t] = encode_all(store, enc, target);
    (void)p_s, (void)p_t;
    const CentroidSet centroids = compute_centroids(z_s, labels_s);
    const std::vector<int> pseudo = assign_pseudo_labels(z_t, centroids);
    PseudoLabelSet filtered =
        mad_filter(z_s, labels_s, z_t, pseudo, cfg.mad_threshold);
    if (audit) audit->record(epoch, target, filtered);
    if (observer) observer->on_pseudo_labels(epoch, filtered, store.step());

    std::vector<size_t> kept;
    for (size_t i = 0; i < filtered.entries.size(); ++i)
      if (filtered.entries[i].kept) kept.push_back(i);
    const bool skip_con = kept.empty();
    if (skip_con) {
      std::ostringstream msg;
      msg << "epoch " << epoch
          << ": every target sample failed the drift filter; contrastive "
             "term skipped for this epoch";
      report.warnings.push_back(msg.str());
      // With no cross-entropy term either, there is nothing to optimize.
      if (cfg.loss_mode == LossMode::supcon_only) continue;
    }

    for (int k = 0; k < cfg.iters_per_epoch; ++k) {
      ++iter;
      const std::vector<size_t> bs =
          draw_batch(source.size(), cfg.batch_source, rng);
      std::vector<const sigproc::Spectrogram*> xb_s(bs.size());
      std::vector<int> yb_s(bs.size());
      for (size_t i = 0; i < bs.size(); ++i) {
        xb_s[i] = &source[bs[i]].spectrogram;
        yb_s[i] = labels_s[bs[i]];
      }

      nnet::Graph g;
      const auto xs = g.input(nnet::batch_from_spectrograms(xb_s, enc));
      const nnet::EncoderNodes src = nnet::encoder_forward(g, xs, store, enc);
      const auto logits = nnet::classifier_forward(g, src.embedding, store);
      const auto lce = g.ce_loss(logits, yb_s);

      const bool use_con = !skip_con && cfg.loss_mode != LossMode::ce_only;
      double l_con_value = 0.0;
      double lambda = 1.0;
      nnet::Graph::NodeId loss = lce;
      if (use_con) {
        const std::vector<size_t> picked =
            draw_batch(kept.size(), cfg.batch_target, rng);
        std::vector<const sigproc::Spectrogram*> xb_t(picked.size());
        std::vector<int> yb_t(picked.size());
        for (size_t i = 0; i < picked.size(); ++i) {
          const size_t t = kept[picked[i]];
          xb_t[i] = &target[t].spectrogram;
          yb_t[i] = filtered.entries[t].pseudo_label;
        }
        const auto xt = g.input(nnet::batch_from_spectrograms(xb_t, enc));
        const nnet::EncoderNodes tgt =
            nnet::encoder_forward(g, xt, store, enc);
        const auto lcon = g.domain_con_loss(tgt.projection, yb_t,
                                            src.projection, yb_s, cfg.tau);
        switch (cfg.loss_mode) {
          case LossMode::ce_only:
            break;  // unreachable: use_con is false
          case LossMode::supcon_only:
            lambda = 0.0;
            break;
          case LossMode::combined:
            lambda = nnet::lambda_schedule(history, iter);
            break;
        }
        loss = g.combine(lce, lcon, lambda);
        l_con_value = g.value(lcon).values[0];
        last_con = l_con_value;
      }

      g.backward(loss);
      nnet::sgd_momentum_step(store, g.param_grads(), cfg.lr, cfg.momentum);
      for (const std::string& w : g.warnings()) report.warnings.push_back(w);

      const double l_ce_value = g.value(lce).values[0];
      // A skipped contrastive term repeats its previous value in the
      // history, which holds that loss ratio at exactly 1.
      history.push(l_ce_value, use_con ? l_con_value : last_con);
      if (logger) logger->log(iter, l_ce_value, l_con_value, lambda, cfg.lr);
      if (observer)
        observer->on_iteration(epoch, k + 1, l_ce_value, l_con_value, lambda);
    }
  }
  return report;
}

std::pair<Tensor, Tensor> extract_representations(
    ParamStore& store, const EncoderConfig& enc,
    const std::vector<LabeledSample>& source,
    const std::vector<LabeledSample>& target) {
  enc.validate();
  if (source.empty() || target.empty())
    throw DegenerateInputError(
        "extract_representations: both domains must be nonempty");
  auto [z_s, p_s] = encode_all(store, enc, source);
  auto [z_t, p_t] = encode_all(store, enc, target);
  (void)p_s, (void)p_t;
  return {std::move(z_s), std::move(z_t)};
}

KmeansResult kmeans(const Tensor& z, int k, std::uint64_t seed) {
  if (z.shape.size() != 2) throw ShapeError("kmeans: points must be [N, d]");
  if (k < 1) throw ConfigError("kmeans: k must be >= 1");
  const size_t n = z.shape[0];
  const size_t d = z.shape[1];
  if (n < static_cast<size_t>(k))
    throw InsufficientDataError("kmeans: fewer points than clusters");

  Rng rng(hash_combine(seed, 0x4b3ea25ull));
  KmeansResult res;
  res.centroids = Tensor::zeros({static_cast<size_t>(k), d});

  // k-means++: first centroid uniform, the rest proportional to the squared
  // distance from the nearest centroid chosen so far.
  std::vector<size_t> chosen;
  chosen.push_back(static_cast<size_t>(rng.below(n)));
  std::vector<double> d2(n);
  while (chosen.size() < static_cast<size_t>(k)) {
    double total = 0.0;
    for (size_t i = 0; i < n; ++i) {
      double best = std::numeric_limits<double>::infinity();
      for (const size_t c : chosen) {
        double acc = 0.0;
        for (size_t col = 0; col < d; ++col) {
          const double diff = z.values[i * d + col] - z.values[c * d + col];
          acc += diff * diff;
        }
        best = std::min(best, acc);
      }
      d2[i] = best;
      total += best;
    }
    size_t pick;
    if (total <= 0.0) {
      pick = static_cast<size_t>(rng.below(n));  // all points coincide
    } else {
      const double r = rng.uniform() * total;
      double cum = 0.0;
      pick = n - 1;
      for (size_t i = 0; i < n; ++i) {
        cum += d2[i];
        if (r < cum) {
          pick = i;
          break;
        }
      }
    }
    chosen.push_back(pick);
  }
  for (int c = 0; c < k; ++c)
    std::copy(z.values.begin() + chosen[c] * d,
              z.values.begin() + (chosen[c] + 1) * d,
              res.centroids.values.begin() + c * d);

  res.assignments.assign(n, -1);
  std::vector<int> next(n);
  for (int pass = 0; pass < 300; ++pass) {
    // assignment step
    double wcss = 0.0;
    for (size_t i = 0; i < n; ++i) {
      int best = 0;
      double best_d = std::numeric_limits<double>::infinity();
      for (int c = 0; c < k; ++c) {
        double acc = 0.0;
        for (size_t col = 0; col < d; ++col) {
          const double diff =
              z.values[i * d + col] - res.centroids.values[c * d + col];
          acc += diff * diff;
        }
        if (acc < best_d) {
          best_d = acc;
          best = c;
        }
      }
      next[i] = best;
      wcss += best_d;
    }
    res.wcss_history.push_back(wcss);
    res.iterations = pass + 1;
    if (next == res.assignments) break;
    res.assignments = next;

    // update step
    Tensor sums = Tensor::zeros({static_cast<size_t>(k), d});
    std::vector<size_t> counts(k, 0);
    for (size_t i = 0; i < n; ++i) {
      const int c = res.assignments[i];
      for (size_t col = 0; col < d; ++col)
        sums.values[c * d + col] += z.values[i * d + col];
      ++counts[c];
    }
    for (int c = 0; c < k; ++c) {
      if (counts[c] > 0) {
        for (size_t col = 0; col < d; ++col)
          res.centroids.values[c * d + col] =
              sums.values[c * d + col] / static_cast<double>(counts[c]);
      } else {
        // re-seed an empty cluster from the point farthest from its
        // current centroid
        size_t far = 0;
        double far_d = -1.0;
        for (size_t i = 0; i < n; ++i) {
          const int a = res.assignments[i];
          double acc = 0.0;
          for (size_t col = 0; col < d; ++col) {
            const double diff =
                z.values[i * d + col] - res.centroids.values[a * d + col];
            acc += diff * diff;
          }
          if (acc > far_d) {
            far_d = acc;
            far = i;
          }
        }
        std::copy(z.values.begin() + far * d, z.values.begin() + (far + 1) * d,
                  res.centroids.values.begin() + c * d);
      }
    }
  }
  return res;
}

}  // namespace efl::adapt
