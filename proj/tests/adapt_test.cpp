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
#include <array>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include <doctest.h>

#include "efl/echosim.hpp"
#include "efl/errors.hpp"
#include "efl/rng.hpp"

using namespace efl;
using namespace efl::adapt;

namespace {

Tensor randt(std::vector<size_t> shape, Rng& rng, double lo = -1.0,
             double hi = 1.0) {
  Tensor t = Tensor::zeros(std::move(shape));
  for (double& v : t.values) v = rng.uniform(lo, hi);
  return t;
}

// A deliberately small encoder so the network-in-the-loop cases stay fast;
// the shape contract (9 x 90 crop) matches the dataset defaults. The second
// layer's kernel spans the full remaining frequency extent, as the default
// stack does by depth: once the frequency axis collapses, channel features
// carry absolute range-bin identity, which mean pooling would otherwise
// discard.
nnet::EncoderConfig tiny_enc() {
  nnet::EncoderConfig enc;
  enc.n_freq = 9;
  enc.n_time = 90;
  enc.conv = {{8, 3, 3, 1, 2}, {16, 7, 3, 1, 2}};
  enc.attention_slots = 16;
  enc.attention_dim = 32;
  enc.embed_dim = 32;
  enc.proj_dim = 16;
  return enc;
}

bool stores_equal(const ParamStore& a, const ParamStore& b) {
  const auto& pa = a.params();
  const auto& pb = b.params();
  if (pa.size() != pb.size()) return false;
  for (const auto& [name, ta] : pa) {
    const auto it = pb.find(name);
    if (it == pb.end()) return false;
    if (ta.shape != it->second.shape || ta.values != it->second.values)
      return false;
  }
  return true;
}

// Noise-free two-person recordings in one clean domain; the last repetition
// is held out as an in-distribution "target".
struct Fixture {
  std::vector<LabeledSample> source, target;
  nnet::EncoderConfig enc = tiny_enc();
  AdaptConfig cfg;
  ParamStore pretrained;
  double train_accuracy = 0.0;
};

const Fixture& fixture() {
  static const Fixture fx = [] {
    Fixture f;
    sigproc::ChirpSpec chirp;
    echosim::DomainProfile clean;
    echosim::DatasetOptions opt;
    opt.ambient_noise = 0.0;
    opt.inband_noise = 0.0;
    auto all = echosim::generate_dataset({clean}, 2, 4, chirp, 42, opt);
    for (auto& s : all) {
      auto& dst =
          s.sample_id.find("/r3/") != std::string::npos ? f.target : f.source;
      dst.push_back(std::move(s));
    }
    f.cfg.seed = 42;
    f.cfg.lr = 0.04;
    f.cfg.pretrain_max_epochs = 150;
    // This encoder spends its first ~20 epochs on a near-flat shelf before
    // the loss drops, so the plateau window must straddle the shelf.
    f.cfg.pretrain_plateau_window = 25;
    f.cfg.pretrain_batch = 32;
    f.cfg.batch_source = 32;
    f.cfg.batch_target = 32;
    f.train_accuracy =
        pretrain_source(f.pretrained, f.enc, f.source, f.cfg);
    return f;
  }();
  return fx;
}

struct Capture : AdaptObserver {
  std::vector<std::pair<int, std::uint64_t>> pseudo_steps;
  std::vector<PseudoLabelSet> pseudo_sets;
  std::vector<double> lambdas;

  void on_pseudo_labels(int epoch, const PseudoLabelSet& labels,
                        std::uint64_t optimizer_step) override {
    pseudo_steps.emplace_back(epoch, optimizer_step);
    pseudo_sets.push_back(labels);
  }
  void on_iteration(int, int, double, double, double lambda) override {
    lambdas.push_back(lambda);
  }
};

}  // namespace

TEST_CASE("adapt config validation") {
  AdaptConfig cfg;
  CHECK_NOTHROW(cfg.validate());
  auto bad = [](auto mutate) {
    AdaptConfig c;
    mutate(c);
    CHECK_THROWS_AS(c.validate(), ConfigError);
  };
  bad([](AdaptConfig& c) { c.epochs = -1; });
  bad([](AdaptConfig& c) { c.iters_per_epoch = 0; });
  bad([](AdaptConfig& c) { c.batch_source = 0; });
  bad([](AdaptConfig& c) { c.batch_target = 0; });
  bad([](AdaptConfig& c) { c.tau = 0.0; });
  bad([](AdaptConfig& c) { c.mad_threshold = 0.0; });
  bad([](AdaptConfig& c) { c.momentum = 1.0; });
  bad([](AdaptConfig& c) { c.lr = -0.1; });
  bad([](AdaptConfig& c) { c.pretrain_batch = 0; });
  bad([](AdaptConfig& c) { c.pretrain_plateau_window = 0; });
}

TEST_CASE("centroids of one sample per class equal the embeddings") {
  Rng rng(11);
  const Tensor z = randt({6, 5}, rng);
  const std::vector<int> labels = {0, 1, 2, 3, 4, 5};
  const CentroidSet set = compute_centroids(z, labels);
  CHECK(set.centroids.shape == std::vector<size_t>{6, 5});
  CHECK(set.centroids.values == z.values);
  for (int k = 0; k < kNumClasses; ++k) CHECK(set.counts[k] == 1);
}

TEST_CASE("centroid of [0,0] and [2,2] is [1,1]") {
  // class 2 holds the pair; every other class has one filler sample
  Tensor z = Tensor::zeros({7, 2});
  std::vector<int> labels = {0, 1, 3, 4, 5, 2, 2};
  for (size_t i = 0; i < 5; ++i) {
    z.values[i * 2] = 9.0 + static_cast<double>(i);
    z.values[i * 2 + 1] = -3.0;
  }
  z.values[5 * 2] = 0.0;
  z.values[5 * 2 + 1] = 0.0;
  z.values[6 * 2] = 2.0;
  z.values[6 * 2 + 1] = 2.0;
  const CentroidSet set = compute_centroids(z, labels);
  CHECK(set.centroids.values[2 * 2] == 1.0);
  CHECK(set.centroids.values[2 * 2 + 1] == 1.0);
  CHECK(set.counts[2] == 2);
}

TEST_CASE("centroids match a per-class mean oracle on 60 random samples") {
  Rng rng(12);
  const size_t n = 60, d = 7;
  const Tensor z = randt({n, d}, rng);
  std::vector<int> labels(n);
  for (size_t i = 0; i < n; ++i)
    labels[i] = static_cast<int>(rng.below(kNumClasses));
  for (int k = 0; k < kNumClasses; ++k) labels[k] = k;  // all present

  const CentroidSet set = compute_centroids(z, labels);
  for (int k = 0; k < kNumClasses; ++k) {
    std::vector<double> mean(d, 0.0);
    size_t count = 0;
    for (size_t i = 0; i < n; ++i) {
      if (labels[i] != k) continue;
      for (size_t c = 0; c < d; ++c) mean[c] += z.values[i * d + c];
      ++count;
    }
    CHECK(set.counts[k] == count);
    for (size_t c = 0; c < d; ++c)
      CHECK(set.centroids.values[k * d + c] ==
            doctest::Approx(mean[c] / static_cast<double>(count))
                .epsilon(1e-9));
  }
}

TEST_CASE("centroids on a missing class name the class") {
  Rng rng(13);
  const Tensor z = randt({4, 3}, rng);
  const std::vector<int> labels = {0, 0, 2, 3};
  try {
    compute_centroids(z, labels);
    FAIL("expected InsufficientDataError");
  } catch (const InsufficientDataError& e) {
    CHECK(std::string(e.what()).find("disgust") != std::string::npos);
  }
  CHECK_THROWS_AS(compute_centroids(z, {0, 1, 2, 6}), DataError);
  CHECK_THROWS_AS(compute_centroids(z, {0, 1, 2}), ShapeError);
}

TEST_CASE("pseudo labels pick the nearest centroid") {
  Rng rng(14);
  CentroidSet set;
  set.centroids = randt({6, 4}, rng);
  set.counts.fill(1);

  SUBCASE("embedding equal to centroid 3 labels 3") {
    Tensor z = Tensor::zeros({1, 4});
    std::copy(set.centroids.values.begin() + 3 * 4,
              set.centroids.values.begin() + 4 * 4, z.values.begin());
    CHECK(assign_pseudo_labels(z, set) == std::vector<int>{3});
  }

  SUBCASE("equidistant tie breaks toward the lower index") {
    CentroidSet tie;
    tie.centroids = Tensor::zeros({6, 2});
    const double far[6][2] = {{10, 10}, {1, 0},   {10, -10},
                              {-10, 10}, {-1, 0}, {-10, -10}};
    for (int k = 0; k < 6; ++k) {
      tie.centroids.values[k * 2] = far[k][0];
      tie.centroids.values[k * 2 + 1] = far[k][1];
    }
    const Tensor z = Tensor::zeros({1, 2});  // equidistant to 1 and 4
    CHECK(assign_pseudo_labels(z, tie) == std::vector<int>{1});
  }

  SUBCASE("random batch matches a brute-force argmin") {
    const Tensor z = randt({40, 4}, rng);
    const std::vector<int> got = assign_pseudo_labels(z, set);
    for (size_t i = 0; i < 40; ++i) {
      std::array<double, 6> dist{};
      for (int k = 0; k < 6; ++k) {
        double acc = 0.0;
        for (size_t c = 0; c < 4; ++c) {
          const double diff =
              z.values[i * 4 + c] - set.centroids.values[k * 4 + c];
          acc += diff * diff;
        }
        dist[k] = acc;
      }
      const int want = static_cast<int>(
          std::min_element(dist.begin(), dist.end()) - dist.begin());
      CHECK(got[i] == want);
    }
  }

  SUBCASE("shape mismatch throws") {
    CHECK_THROWS_AS(assign_pseudo_labels(Tensor::zeros({2, 3}), set),
                    ShapeError);
  }
}

TEST_CASE("well-separated source classes pseudo-label themselves correctly") {
  Rng rng(15);
  const size_t per = 5, d = 3;
  Tensor z = Tensor::zeros({6 * per, d});
  std::vector<int> labels(6 * per);
  for (int k = 0; k < 6; ++k) {
    for (size_t i = 0; i < per; ++i) {
      const size_t row = k * per + i;
      labels[row] = k;
      z.values[row * d] = 10.0 * k + rng.uniform(-1.0, 1.0);
      for (size_t c = 1; c < d; ++c)
        z.values[row * d + c] = rng.uniform(-1.0, 1.0);
    }
  }
  const CentroidSet set = compute_centroids(z, labels);
  CHECK(assign_pseudo_labels(z, set) == labels);
}

TEST_CASE("mad filter reproduces the hand-computed example") {
  // 1-D class-2 embeddings in symmetric pairs around zero: the class mean
  // is exactly 0 and the train distances are {0.5, 0.5, 1, 1, 1.5, 1.5,
  // 2, 2, 2.5, 2.5}, so the median distance is 1.5 and the MAD is 0.5.
  Tensor z_train = Tensor::zeros({10, 1});
  const double half[5] = {0.5, 1.0, 1.5, 2.0, 2.5};
  for (int i = 0; i < 5; ++i) {
    z_train.values[2 * i] = half[i];
    z_train.values[2 * i + 1] = -half[i];
  }
  const std::vector<int> train_labels(10, 2);

  Tensor z_test = Tensor::zeros({3, 1});
  z_test.values = {1.5, 2.0, 4.0};
  const PseudoLabelSet out =
      mad_filter(z_train, train_labels, z_test, {2, 2, 2});

  REQUIRE(out.entries.size() == 3);
  CHECK(out.entries[0].drift_score == 0.0);  // distance equals the median
  CHECK(out.entries[0].kept);
  CHECK(out.entries[1].drift_score == 1.0);
  CHECK(out.entries[1].kept);
  CHECK(out.entries[2].drift_score == 5.0);  // (4 - 1.5) / 0.5
  CHECK_FALSE(out.entries[2].kept);
  CHECK(out.kept_count() == 2);
}

TEST_CASE("mad filter zero-MAD fallback filters anything above the median") {
  // train distances {1, 1, 1, 1}: median 1, MAD 0 -> epsilon fallback
  Tensor z_train = Tensor::zeros({4, 1});
  z_train.values = {1.0, -1.0, 1.0, -1.0};
  const std::vector<int> train_labels(4, 0);

  Tensor z_test = Tensor::zeros({3, 1});
  z_test.values = {100.0, 1.0, 1.001};
  const PseudoLabelSet out =
      mad_filter(z_train, train_labels, z_test, {0, 0, 0});
  CHECK_FALSE(out.entries[0].kept);  // T = 99 / 1e-12
  CHECK(out.entries[0].drift_score > 1e12);
  CHECK(out.entries[1].kept);  // exactly at the median
  CHECK(out.entries[1].drift_score == 0.0);
  CHECK_FALSE(out.entries[2].kept);  // even a 1e-3 excess filters
}

TEST_CASE("mad filter scores are invariant to test permutation") {
  Rng rng(16);
  const size_t n_train = 48, n_test = 20, d = 4;
  const Tensor z_train = randt({n_train, d}, rng);
  std::vector<int> train_labels(n_train);
  for (size_t i = 0; i < n_train; ++i)
    train_labels[i] = static_cast<int>(i % kNumClasses);
  const Tensor z_test = randt({n_test, d}, rng);
  std::vector<int> test_labels(n_test);
  for (size_t i = 0; i < n_test; ++i)
    test_labels[i] = static_cast<int>(rng.below(kNumClasses));

  const PseudoLabelSet direct =
      mad_filter(z_train, train_labels, z_test, test_labels);

  // reverse the test set
  Tensor z_rev = Tensor::zeros({n_test, d});
  std::vector<int> rev_labels(n_test);
  for (size_t i = 0; i < n_test; ++i) {
    rev_labels[i] = test_labels[n_test - 1 - i];
    std::copy(z_test.values.begin() + (n_test - 1 - i) * d,
              z_test.values.begin() + (n_test - i) * d,
              z_rev.values.begin() + i * d);
  }
  const PseudoLabelSet reversed =
      mad_filter(z_train, train_labels, z_rev, rev_labels);
  for (size_t i = 0; i < n_test; ++i) {
    CHECK(reversed.entries[i].drift_score ==
          direct.entries[n_test - 1 - i].drift_score);
    CHECK(reversed.entries[i].kept == direct.entries[n_test - 1 - i].kept);
  }
}

TEST_CASE("mad filter requires train embeddings for referenced classes") {
  Tensor z_train = Tensor::zeros({2, 1});
  z_train.values = {0.0, 1.0};
  Tensor z_test = Tensor::zeros({1, 1});
  try {
    mad_filter(z_train, {0, 0}, z_test, {3});
    FAIL("expected InsufficientDataError");
  } catch (const InsufficientDataError& e) {
    CHECK(std::string(e.what()).find("happiness") != std::string::npos);
  }
  CHECK_THROWS_AS(mad_filter(z_train, {0, 0}, z_test, {6}), DataError);
  CHECK_THROWS_AS(
      mad_filter(z_train, {0, 0}, Tensor::zeros({1, 2}), {0}), ShapeError);
}

TEST_CASE("kmeans with k=1 returns the global mean") {
  Rng rng(17);
  const Tensor z = randt({7, 3}, rng);
  const KmeansResult res = kmeans(z, 1, 5);
  CHECK(res.assignments == std::vector<int>(7, 0));
  for (size_t c = 0; c < 3; ++c) {
    double mean = 0.0;
    for (size_t i = 0; i < 7; ++i) mean += z.values[i * 3 + c];
    mean /= 7.0;
    CHECK(res.centroids.values[c] == doctest::Approx(mean).epsilon(1e-12));
  }
}

TEST_CASE("kmeans recovers three tight blobs exactly") {
  Rng rng(18);
  const double centers[3][2] = {{0.0, 0.0}, {10.0, 0.0}, {0.0, 10.0}};
  const size_t per = 20;
  Tensor z = Tensor::zeros({3 * per, 2});
  std::vector<int> truth(3 * per);
  for (int b = 0; b < 3; ++b) {
    for (size_t i = 0; i < per; ++i) {
      const size_t row = b * per + i;
      truth[row] = b;
      z.values[row * 2] = centers[b][0] + 0.1 * rng.gaussian();
      z.values[row * 2 + 1] = centers[b][1] + 0.1 * rng.gaussian();
    }
  }
  const KmeansResult res = kmeans(z, 3, 7);

  // best assignment-to-truth matching over all 3! relabelings
  std::array<int, 3> perm = {0, 1, 2};
  size_t best = 0;
  std::sort(perm.begin(), perm.end());
  do {
    size_t hits = 0;
    for (size_t i = 0; i < truth.size(); ++i)
      hits += perm[res.assignments[i]] == truth[i] ? 1 : 0;
    best = std::max(best, hits);
  } while (std::next_permutation(perm.begin(), perm.end()));
  CHECK(best == truth.size());

  for (size_t i = 1; i < res.wcss_history.size(); ++i)
    CHECK(res.wcss_history[i] <= res.wcss_history[i - 1]);
}

TEST_CASE("kmeans on identical points collapses to one cluster") {
  Tensor z = Tensor::zeros({8, 2});
  for (double& v : z.values) v = 1.25;
  const KmeansResult res = kmeans(z, 2, 3);
  for (int a : res.assignments) CHECK(a == res.assignments[0]);
}

TEST_CASE("kmeans wcss is non-increasing and runs are deterministic") {
  Rng rng(19);
  const Tensor z = randt({40, 3}, rng);
  const KmeansResult a = kmeans(z, 4, 11);
  const KmeansResult b = kmeans(z, 4, 11);
  CHECK(a.assignments == b.assignments);
  CHECK(a.centroids.values == b.centroids.values);
  CHECK(a.wcss_history == b.wcss_history);
  REQUIRE(a.wcss_history.size() >= 2);
  for (size_t i = 1; i < a.wcss_history.size(); ++i)
    CHECK(a.wcss_history[i] <= a.wcss_history[i - 1]);
  CHECK(a.iterations <= 300);
}

TEST_CASE("kmeans input validation") {
  Rng rng(20);
  const Tensor z = randt({3, 2}, rng);
  CHECK_THROWS_AS(kmeans(z, 4, 0), InsufficientDataError);
  CHECK_THROWS_AS(kmeans(z, 0, 0), ConfigError);
  CHECK_THROWS_AS(kmeans(Tensor::zeros({4}), 2, 0), ShapeError);
}

TEST_CASE("pretraining reaches a high source accuracy on clean data") {
  const Fixture& fx = fixture();
  CHECK(fx.source.size() > 60);
  CHECK(fx.target.size() > 20);
  CHECK(fx.train_accuracy >= 0.99);
}

TEST_CASE("pretraining with zero epochs leaves the model unchanged") {
  const Fixture& fx = fixture();
  ParamStore store = fx.pretrained;
  AdaptConfig cfg = fx.cfg;
  cfg.pretrain_max_epochs = 0;
  const double acc = pretrain_source(store, fx.enc, fx.source, cfg);
  CHECK(stores_equal(store, fx.pretrained));
  CHECK(acc == fx.train_accuracy);
}

TEST_CASE("pretraining is deterministic under a fixed seed") {
  const Fixture& fx = fixture();
  AdaptConfig cfg = fx.cfg;
  cfg.pretrain_max_epochs = 2;
  const std::vector<LabeledSample> subset(fx.source.begin(),
                                          fx.source.begin() + 24);
  ParamStore a, b;
  const double acc_a = pretrain_source(a, fx.enc, subset, cfg);
  const double acc_b = pretrain_source(b, fx.enc, subset, cfg);
  CHECK(acc_a == acc_b);
  CHECK(stores_equal(a, b));
  CHECK_THROWS_AS(pretrain_source(a, fx.enc, {}, cfg),
                  DegenerateInputError);
}

TEST_CASE("adaptation with zero epochs leaves the model unchanged") {
  const Fixture& fx = fixture();
  ParamStore store = fx.pretrained;
  AdaptConfig cfg = fx.cfg;
  cfg.epochs = 0;
  const AdaptReport report =
      adaptation_loop(store, fx.enc, fx.source, fx.target, cfg);
  CHECK(report.warnings.empty());
  CHECK(stores_equal(store, fx.pretrained));
}

TEST_CASE("adaptation requires a pretrained model and nonempty domains") {
  const Fixture& fx = fixture();
  ParamStore empty;
  CHECK_THROWS_AS(
      adaptation_loop(empty, fx.enc, fx.source, fx.target, fx.cfg),
      DataError);
  ParamStore store = fx.pretrained;
  CHECK_THROWS_AS(adaptation_loop(store, fx.enc, {}, fx.target, fx.cfg),
                  DegenerateInputError);
  CHECK_THROWS_AS(adaptation_loop(store, fx.enc, fx.source, {}, fx.cfg),
                  DegenerateInputError);
}

TEST_CASE("each epoch recomputes pseudo labels from the current model") {
  const Fixture& fx = fixture();
  ParamStore store = fx.pretrained;
  AdaptConfig cfg = fx.cfg;
  cfg.epochs = 3;
  cfg.iters_per_epoch = 2;
  Capture cap;
  const std::uint64_t start = store.step();
  adaptation_loop(store, fx.enc, fx.source, fx.target, cfg, nullptr, nullptr,
                  &cap);

  // pseudo labels must be computed after the previous epoch's updates
  REQUIRE(cap.pseudo_steps.size() == 3);
  for (int e = 0; e < 3; ++e) {
    CHECK(cap.pseudo_steps[e].first == e + 1);
    CHECK(cap.pseudo_steps[e].second ==
          start + static_cast<std::uint64_t>(e) * 2);
  }
  CHECK(store.step() == start + 6);

  // the first two joint iterations use the exact 1/2 weight
  REQUIRE(cap.lambdas.size() == 6);
  CHECK(cap.lambdas[0] == 0.5);
  CHECK(cap.lambdas[1] == 0.5);
  for (const double l : cap.lambdas) {
    CHECK(l > 0.0);
    CHECK(l < 1.0);
  }
}

TEST_CASE("in-distribution pseudo labels track the source accuracy") {
  const Fixture& fx = fixture();
  ParamStore store = fx.pretrained;
  AdaptConfig cfg = fx.cfg;
  cfg.epochs = 1;
  cfg.iters_per_epoch = 1;
  Capture cap;
  adaptation_loop(store, fx.enc, fx.source, fx.target, cfg, nullptr, nullptr,
                  &cap);
  REQUIRE(cap.pseudo_sets.size() == 1);
  const PseudoLabelSet& ps = cap.pseudo_sets[0];
  REQUIRE(ps.entries.size() == fx.target.size());
  size_t hits = 0;
  for (size_t i = 0; i < fx.target.size(); ++i)
    hits += ps.entries[i].pseudo_label == static_cast<int>(fx.target[i].label)
                ? 1
                : 0;
  const double pseudo_acc =
      static_cast<double>(hits) / static_cast<double>(fx.target.size());
  CHECK(pseudo_acc >= fx.train_accuracy - 0.05);
}

TEST_CASE("an epoch that filters every target skips the contrastive term") {
  const Fixture& fx = fixture();
  // push the whole target far out of distribution
  std::vector<LabeledSample> drifted = fx.target;
  for (LabeledSample& s : drifted)
    for (double& v : s.spectrogram.magnitudes) v = v * 1000.0 + 10.0;

  ParamStore store = fx.pretrained;
  AdaptConfig cfg = fx.cfg;
  cfg.epochs = 2;
  cfg.iters_per_epoch = 2;
  const std::string log_path = "adapt_test_skip_log.csv";
  nnet::TrainingLogger logger(log_path);
  Capture cap;
  const std::uint64_t start = store.step();
  const AdaptReport report = adaptation_loop(store, fx.enc, fx.source,
                                             drifted, cfg, &logger, nullptr,
                                             &cap);

  REQUIRE(cap.pseudo_sets.size() == 2);
  for (const PseudoLabelSet& ps : cap.pseudo_sets)
    CHECK(ps.kept_count() == 0);
  REQUIRE(report.warnings.size() == 2);
  for (const std::string& w : report.warnings)
    CHECK(w.find("drift filter") != std::string::npos);
  // cross-entropy training still runs, with the weight pinned to 1
  CHECK(store.step() == start + 4);
  std::ifstream log(log_path);
  std::string line;
  std::getline(log, line);  // header
  size_t rows = 0;
  while (std::getline(log, line)) {
    ++rows;
    std::istringstream ss(line);
    std::string iter, lce, lcon, lambda;
    std::getline(ss, iter, ',');
    std::getline(ss, lce, ',');
    std::getline(ss, lcon, ',');
    std::getline(ss, lambda, ',');
    CHECK(std::stod(lcon) == 0.0);
    CHECK(std::stod(lambda) == 1.0);
  }
  CHECK(rows == 4);
  std::remove(log_path.c_str());
}

TEST_CASE("single-term modes only update their own parameters") {
  const Fixture& fx = fixture();

  SUBCASE("supcon-only never touches the classifier head") {
    ParamStore store = fx.pretrained;
    AdaptConfig cfg = fx.cfg;
    cfg.epochs = 1;
    cfg.iters_per_epoch = 2;
    cfg.loss_mode = LossMode::supcon_only;
    adaptation_loop(store, fx.enc, fx.source, fx.target, cfg);
    CHECK(store.at("clf.w1").values == fx.pretrained.at("clf.w1").values);
    CHECK(store.at("enc.conv1.w").values !=
          fx.pretrained.at("enc.conv1.w").values);
  }

  SUBCASE("ce-only trains without a contrastive term") {
    ParamStore store = fx.pretrained;
    AdaptConfig cfg = fx.cfg;
    cfg.epochs = 1;
    cfg.iters_per_epoch = 2;
    cfg.loss_mode = LossMode::ce_only;
    const std::string log_path = "adapt_test_ce_log.csv";
    nnet::TrainingLogger logger(log_path);
    adaptation_loop(store, fx.enc, fx.source, fx.target, cfg, &logger);
    CHECK(store.at("clf.w1").values != fx.pretrained.at("clf.w1").values);
    std::ifstream log(log_path);
    std::string line;
    std::getline(log, line);
    while (std::getline(log, line)) {
      std::istringstream ss(line);
      std::string iter, lce, lcon, lambda;
      std::getline(ss, iter, ',');
      std::getline(ss, lce, ',');
      std::getline(ss, lcon, ',');
      std::getline(ss, lambda, ',');
      CHECK(std::stod(lcon) == 0.0);
      CHECK(std::stod(lambda) == 1.0);
    }
    std::remove(log_path.c_str());
  }
}

TEST_CASE("the pseudo-label audit records every target sample per epoch") {
  const Fixture& fx = fixture();
  const std::vector<LabeledSample> subset(fx.target.begin(),
                                          fx.target.begin() + 10);
  ParamStore store = fx.pretrained;
  AdaptConfig cfg = fx.cfg;
  cfg.epochs = 2;
  cfg.iters_per_epoch = 1;
  const std::string audit_path = "adapt_test_audit.csv";
  {
    PseudoLabelAudit audit(audit_path);
    adaptation_loop(store, fx.enc, fx.source, subset, cfg, nullptr, &audit);
  }
  std::ifstream in(audit_path);
  std::string line;
  REQUIRE(std::getline(in, line));
  CHECK(line == "sample_id,epoch,pseudo_label,drift_score,kept,true_label");
  size_t row = 0;
  while (std::getline(in, line)) {
    std::istringstream ss(line);
    std::string id, epoch, pseudo, drift, kept, truth;
    std::getline(ss, id, ',');
    std::getline(ss, epoch, ',');
    std::getline(ss, pseudo, ',');
    std::getline(ss, drift, ',');
    std::getline(ss, kept, ',');
    std::getline(ss, truth, ',');
    const size_t i = row % subset.size();
    CHECK(id == subset[i].sample_id);
    CHECK(std::stoi(epoch) == static_cast<int>(row / subset.size()) + 1);
    const int p = std::stoi(pseudo);
    CHECK(p >= 0);
    CHECK(p < kNumClasses);
    CHECK((kept == "0" || kept == "1"));
    CHECK(std::stoi(truth) == static_cast<int>(subset[i].label));
    ++row;
  }
  CHECK(row == 2 * subset.size());
  std::remove(audit_path.c_str());
}

TEST_CASE("extracted representations align with the sample order") {
  const Fixture& fx = fixture();
  ParamStore store = fx.pretrained;
  const auto [z_s, z_t] =
      extract_representations(store, fx.enc, fx.source, fx.target);
  CHECK(z_s.shape == std::vector<size_t>{fx.source.size(), fx.enc.embed_dim});
  CHECK(z_t.shape == std::vector<size_t>{fx.target.size(), fx.enc.embed_dim});

  // bit-identical on a second run
  const auto [z_s2, z_t2] =
      extract_representations(store, fx.enc, fx.source, fx.target);
  CHECK(z_s.values == z_s2.values);
  CHECK(z_t.values == z_t2.values);

  // row i belongs to sample i: a single-sample batch reproduces it
  const size_t d = fx.enc.embed_dim;
  for (const size_t probe : {size_t{0}, fx.target.size() - 1}) {
    auto [emb, proj] = nnet::encode_batch(
        {&fx.target[probe].spectrogram}, store, fx.enc);
    (void)proj;
    for (size_t c = 0; c < d; ++c)
      CHECK(emb.values[c] == z_t.values[probe * d + c]);
  }

  // reversing the target reverses the rows
  std::vector<LabeledSample> rev(fx.target.rbegin(), fx.target.rend());
  const auto [z_s3, z_rev] =
      extract_representations(store, fx.enc, fx.source, rev);
  (void)z_s3;
  for (size_t i = 0; i < rev.size(); ++i)
    for (size_t c = 0; c < d; ++c)
      CHECK(z_rev.values[i * d + c] ==
            z_t.values[(rev.size() - 1 - i) * d + c]);
}
