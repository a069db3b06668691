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

#ifndef EFL_NNET_HPP
#define EFL_NNET_HPP

#include <cstdint>
#include <functional>
#include <map>
#include <string>
#include <vector>

#include "efl/dataset.hpp"
#include "efl/rng.hpp"
#include "efl/sigproc.hpp"

namespace efl::nnet {

using sigproc::Spectrogram;

// ---------------------------------------------------------------------------
// Tensor
// ---------------------------------------------------------------------------

// Dense row-major tensor of doubles. The last dimension varies fastest.
struct Tensor {
  std::vector<size_t> shape;
  std::vector<double> values;

  Tensor() = default;
  Tensor(std::vector<size_t> s, std::vector<double> v);

  static Tensor zeros(std::vector<size_t> shape);
  static Tensor full(std::vector<size_t> shape, double value);

  size_t numel() const;
  size_t dim(size_t i) const { return shape.at(i); }
  size_t rank() const { return shape.size(); }
  bool same_shape(const Tensor& other) const { return shape == other.shape; }
  // Throws NumericError if any entry is non-finite.
  void check_finite(const std::string& context) const;
};

// ---------------------------------------------------------------------------
// Parameter store
// ---------------------------------------------------------------------------

// Named parameter tensors with per-tensor momentum buffers. Iteration
// order is the lexicographic name order of std::map, which keeps optimizer
// sweeps and checkpoint files deterministic.
class ParamStore {
 public:
  // Inserts the tensor if the name is absent; returns the stored tensor.
  Tensor& emplace(const std::string& name, Tensor init);
  Tensor& at(const std::string& name);
  const Tensor& at(const std::string& name) const;
  bool contains(const std::string& name) const;
  Tensor& velocity(const std::string& name);
  // Drops all momentum buffers; the next optimizer step starts cold, as
  // after a checkpoint round-trip.
  void reset_velocity() { velocity_.clear(); }

  const std::map<std::string, Tensor>& params() const { return params_; }
  std::uint64_t step() const { return step_; }
  void bump_step() { ++step_; }
  size_t parameter_count() const;

 private:
  std::map<std::string, Tensor> params_;
  std::map<std::string, Tensor> velocity_;
  std::uint64_t step_ = 0;
};

using GradMap = std::map<std::string, Tensor>;

// ---------------------------------------------------------------------------
// Autodiff graph
// ---------------------------------------------------------------------------

enum class AttentionNorm {
  softmax_only,  // Norm(A) = row-wise softmax
  double_norm,   // row-wise softmax followed by column-wise L1 normalization
};

// Tape-style reverse-mode autodiff over the operators this model needs.
// Nodes are appended in topological order; backward() walks the tape in
// reverse. All reductions sum in a fixed index order, so results are
// identical for every thread count.
class Graph {
 public:
  using NodeId = size_t;

  // Leaf that does not receive a gradient.
  NodeId input(Tensor value);
  // Leaf registered under a parameter name; its gradient is collected by
  // param_grads() after backward().
  NodeId param(const std::string& name, const Tensor& value);

  // C = A.B for 2-D a:[N,K], b:[K,M].
  NodeId matmul(NodeId a, NodeId b);
  // x:[N,M] + row-broadcast bias b:[M].
  NodeId add_rowbias(NodeId x, NodeId b);
  // Elementwise sum of two same-shape nodes.
  NodeId add(NodeId a, NodeId b);
  NodeId relu(NodeId x);
  NodeId tanh(NodeId x);
  // x:[B,Cin,H,W], w:[Cout,Cin,kh,kw], b:[Cout]; valid padding.
  NodeId conv2d(NodeId x, NodeId w, NodeId b, size_t stride_h,
                size_t stride_w);
  // [B,C,h,w] -> [B, h*w, C]: one row per spatial position.
  NodeId to_positions(NodeId x);
  // Batched product with a shared matrix: x:[B,N,K] . m:[K,M] -> [B,N,M].
  NodeId bmm_shared(NodeId x, NodeId m);
  // x:[B,N,K] . m:[M,K]^T -> [B,N,M].
  NodeId bmm_shared_nt(NodeId x, NodeId m);
  // Softmax over the last dimension (rank 2 or 3).
  NodeId row_softmax(NodeId x);
  // [B,N,S]: scale each column so sum_n |x[b,n,s]| = 1.
  NodeId col_l1norm(NodeId x);
  // [B,N,d] -> [B,d], mean over positions.
  NodeId mean_positions(NodeId x);
  // [B,d]: scale each row to unit L2 norm.
  NodeId l2norm_rows(NodeId x);

  // Mean negative log-softmax of the true class. logits:[B,K].
  NodeId ce_loss(NodeId logits, const std::vector<int>& labels);
  // Supervised contrastive loss over one batch of L2-normalized
  // projections z:[B,d]. Anchors without positives are dropped; if every
  // anchor drops the node evaluates to 0 and a warning is recorded.
  NodeId supcon_loss(NodeId z, const std::vector<int>& labels, double tau);
  // Cross-domain contrastive loss: target anchors against the source
  // batch. Positives are source samples matching the anchor's pseudo
  // label; the denominator runs over every source sample.
  NodeId domain_con_loss(NodeId z_target, const std::vector<int>& pseudo,
                         NodeId z_source, const std::vector<int>& labels_s,
                         double tau);
  // lambda*a + (1-lambda)*b for scalar nodes; lambda is a constant.
  NodeId combine(NodeId a, NodeId b, double lambda);
  // sum(x * weights) -> scalar; the generic reduction head used to probe
  // intermediate tensors (finite-difference checks, diagnostics).
  NodeId weighted_sum(NodeId x, const Tensor& weights);

  // Reverse-mode pass from a scalar node. May be called once per graph.
  void backward(NodeId loss);

  const Tensor& value(NodeId id) const;
  const Tensor& grad(NodeId id) const;
  double scalar(NodeId id) const;
  // Gradients for every node created via param(), zero-filled when the
  // parameter never influenced the loss.
  GradMap param_grads() const;
  const std::vector<std::string>& warnings() const { return warnings_; }

 private:
  struct Node {
    Tensor value;
    Tensor grad;
    bool requires_grad = false;
    std::string param_name;  // empty unless a param leaf
    std::vector<NodeId> inputs;
    std::function<void(Graph&, Node&)> backward_fn;
  };

  NodeId push(Node node);
  Node& node(NodeId id) { return nodes_[id]; }

  std::vector<Node> nodes_;
  std::vector<std::string> warnings_;
  bool backward_done_ = false;
};

// ---------------------------------------------------------------------------
// External attention
// ---------------------------------------------------------------------------

struct ExternalAttentionParams {
  Tensor w_q;  // [d, d_head]
  Tensor m_k;  // [slots, d_head]
  Tensor m_v;  // [slots, d_head]
  AttentionNorm norm = AttentionNorm::double_norm;
  void validate() const;
};

// Intermediate stages, exposed so tests can check the normalization
// contract without re-deriving it from the output.
struct AttentionTrace {
  Tensor scores;      // Q.M_k^T, [N, slots]
  Tensor row_soft;    // after row softmax
  Tensor normalized;  // after the configured Norm(.)
  Tensor output;      // [N, d_head]
};

// F:[N,d] -> [N,d_head]. Cost is linear in N.
Tensor external_attention(const Tensor& f, const ExternalAttentionParams& p);
AttentionTrace external_attention_trace(const Tensor& f,
                                        const ExternalAttentionParams& p);

// Quadratic-cost reference: softmax((F.Wq)(F.Wk)^T).(F.Wv). Used by tests
// to contrast scaling behaviour; not part of the trained model.
Tensor self_attention_reference(const Tensor& f, const Tensor& w_q,
                                const Tensor& w_k, const Tensor& w_v);

// ---------------------------------------------------------------------------
// Encoder and classifier
// ---------------------------------------------------------------------------

struct ConvLayerSpec {
  size_t channels = 8;
  size_t kernel_h = 3;
  size_t kernel_w = 3;
  size_t stride_h = 1;
  size_t stride_w = 2;
};

struct EncoderConfig {
  size_t n_freq = 9;   // input rows
  size_t n_time = 90;  // input columns
  std::vector<ConvLayerSpec> conv = {
      {8, 3, 3, 1, 2}, {16, 3, 3, 1, 2}, {32, 3, 3, 1, 2}, {64, 3, 3, 1, 2}};
  size_t attention_slots = 64;  // S
  size_t attention_dim = 128;   // d'; the pooled attention output is the
                                // embedding, so this must equal embed_dim
  size_t embed_dim = 128;       // d_z
  size_t proj_dim = 64;         // d_p
  AttentionNorm norm = AttentionNorm::double_norm;
  // log1p-compress spectrogram magnitudes when batching; raw STFT magnitudes
  // span several orders of magnitude, which first-order SGD handles poorly
  bool log_compress = true;

  void validate() const;
  // Spatial extent after the conv stack; throws ShapeError if a layer
  // consumes more rows/columns than remain.
  std::pair<size_t, size_t> conv_output_hw() const;
};

// Creates every encoder parameter (prefix "enc.") that is missing from the
// store, Glorot-initialized from the given seed. Existing tensors are kept.
void init_encoder_params(ParamStore& store, const EncoderConfig& cfg,
                         std::uint64_t seed);
void init_classifier_params(ParamStore& store, size_t in_dim, size_t hidden,
                            size_t n_classes, std::uint64_t seed);

struct EncoderNodes {
  Graph::NodeId embedding;   // g(x), [B, d_z]
  Graph::NodeId projection;  // z, [B, d_p], unit rows
};

// Packs spectrograms into a [B,1,n_freq,n_time] tensor. Every spectrogram
// must match the config's input shape.
Tensor batch_from_spectrograms(const std::vector<const Spectrogram*>& batch,
                               const EncoderConfig& cfg);

EncoderNodes encoder_forward(Graph& g, Graph::NodeId x, ParamStore& store,
                             const EncoderConfig& cfg);
// Hidden layer of 256 ReLU units, then a linear map to n_classes logits.
Graph::NodeId classifier_forward(Graph& g, Graph::NodeId embeddings,
                                 ParamStore& store, size_t hidden = 256,
                                 size_t n_classes = kNumClasses);

// Convenience forward pass with no gradient bookkeeping kept around:
// returns {embeddings [B,d_z], projections [B,d_p]}.
std::pair<Tensor, Tensor> encode_batch(
    const std::vector<const Spectrogram*>& batch, ParamStore& store,
    const EncoderConfig& cfg);

// Full-batch gradient descent of the classifier head on fixed embeddings.
// Returns the final cross-entropy loss.
double classifier_train(ParamStore& store, const Tensor& embeddings,
                        const std::vector<int>& labels, size_t steps,
                        double lr, double momentum, size_t hidden = 256,
                        size_t n_classes = kNumClasses);
// Argmax class predictions for a batch of embeddings.
std::vector<int> classifier_predict(ParamStore& store,
                                    const Tensor& embeddings,
                                    size_t hidden = 256,
                                    size_t n_classes = kNumClasses);
// Softmax class probabilities for a batch of embeddings, [B, n_classes].
Tensor classifier_scores(ParamStore& store, const Tensor& embeddings,
                         size_t hidden = 256, size_t n_classes = kNumClasses);

// ---------------------------------------------------------------------------
// Loss schedule and optimizer
// ---------------------------------------------------------------------------

// Ring buffer of recent per-iteration loss values, indexed by iteration
// (1-based). Only the most recent entries needed by the schedule are kept.
class LossHistory {
 public:
  explicit LossHistory(size_t capacity = 3);
  void push(double l_ce, double l_con_t);
  size_t iterations() const { return count_; }
  // L_ce(i) / L_con_t(i); only the last `capacity` iterations are held.
  double ce_at(size_t i) const;
  double con_at(size_t i) const;

 private:
  double fetch(const std::vector<double>& ring, size_t i) const;
  std::vector<double> ce_, con_;
  size_t capacity_;
  size_t count_ = 0;
};

// Adaptive weight for iteration i (1-based): softmax over the loss-ratio
// pair w1 = L_ce(i-1)/L_ce(i-2), w2 = L_con_t(i-1)/L_con_t(i-2). For
// i <= 2 both ratios are defined as 1, so lambda = 1/2 exactly. A ratio
// with denominator <= 1e-12 is clamped to 1. Always in (0, 1).
double lambda_schedule(const LossHistory& history, size_t iteration);

double combined_loss(double l_ce, double l_con_t, double lambda);

// v <- momentum*v + g; theta <- theta - lr*v. Parameters absent from
// `grads` are untouched.
void sgd_momentum_step(ParamStore& store, const GradMap& grads, double lr,
                       double momentum);

// ---------------------------------------------------------------------------
// Checkpoints and logs
// ---------------------------------------------------------------------------

// Binary checkpoint: magic "EFCK", u32 version, then one record per
// parameter {name_len, name, ndims, dims, f64 values}, little-endian.
// Values round-trip bit-exact. Momentum buffers are transient optimizer
// state and are not stored; a loaded store starts with zero velocity.
void save_checkpoint(const ParamStore& store, const std::string& path);
ParamStore load_checkpoint(const std::string& path);

// Appends per-iteration training rows to a CSV file.
class TrainingLogger {
 public:
  // Truncates and writes the header row "iter,L_ce,L_con_t,lambda,lr".
  explicit TrainingLogger(const std::string& path);
  void log(size_t iter, double l_ce, double l_con_t, double lambda,
           double lr);

 private:
  std::string path_;
};

}  // namespace efl::nnet

#endif  // EFL_NNET_HPP
