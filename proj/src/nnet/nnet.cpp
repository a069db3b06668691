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

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <sstream>

#include "efl/errors.hpp"
#include "efl/nnet.hpp"

namespace efl::nnet {

namespace {

// Glorot-uniform initialization keeps activations in a sane range for both
// narrow test models and the full encoder.
Tensor glorot(std::vector<size_t> shape, size_t fan_in, size_t fan_out,
              Rng& rng) {
  const double bound =
      std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
  Tensor t = Tensor::zeros(std::move(shape));
  for (double& v : t.values) v = rng.uniform(-bound, bound);
  return t;
}

std::string conv_name(size_t layer, const char* which) {
  std::ostringstream os;
  os << "enc.conv" << (layer + 1) << "." << which;
  return os.str();
}

}  // namespace

// ---------------------------------------------------------------------------
// External attention
// ---------------------------------------------------------------------------

void ExternalAttentionParams::validate() const {
  if (w_q.rank() != 2 || m_k.rank() != 2 || m_v.rank() != 2)
    throw ShapeError("attention parameters must be 2-D");
  if (w_q.dim(1) != m_k.dim(1))
    throw ShapeError("W_q head dim does not match M_k");
  if (!m_k.same_shape(m_v))
    throw ShapeError("M_k and M_v must have identical shapes");
  if (m_k.dim(0) < 1) throw ShapeError("attention needs at least one slot");
}

AttentionTrace external_attention_trace(const Tensor& f,
                                        const ExternalAttentionParams& p) {
  p.validate();
  if (f.rank() != 2 || f.dim(1) != p.w_q.dim(0))
    throw ShapeError("attention input must be [N,d] matching W_q");

  Graph g;
  const auto fid = g.input(Tensor({1, f.dim(0), f.dim(1)}, f.values));
  const auto q = g.bmm_shared(fid, g.input(p.w_q));
  const auto scores = g.bmm_shared_nt(q, g.input(p.m_k));
  const auto soft = g.row_softmax(scores);
  const auto norm =
      p.norm == AttentionNorm::double_norm ? g.col_l1norm(soft) : soft;
  const auto out = g.bmm_shared(norm, g.input(p.m_v));

  AttentionTrace trace;
  const size_t n = f.dim(0), s = p.m_k.dim(0), dh = p.m_k.dim(1);
  trace.scores = Tensor({n, s}, g.value(scores).values);
  trace.row_soft = Tensor({n, s}, g.value(soft).values);
  trace.normalized = Tensor({n, s}, g.value(norm).values);
  trace.output = Tensor({n, dh}, g.value(out).values);
  return trace;
}

Tensor external_attention(const Tensor& f, const ExternalAttentionParams& p) {
  return external_attention_trace(f, p).output;
}

Tensor self_attention_reference(const Tensor& f, const Tensor& w_q,
                                const Tensor& w_k, const Tensor& w_v) {
  if (f.rank() != 2 || w_q.rank() != 2 || w_k.rank() != 2 || w_v.rank() != 2)
    throw ShapeError("self attention expects 2-D tensors");
  if (f.dim(1) != w_q.dim(0) || f.dim(1) != w_k.dim(0) ||
      f.dim(1) != w_v.dim(0))
    throw ShapeError("projection input dims must match feature dim");
  if (w_q.dim(1) != w_k.dim(1))
    throw ShapeError("query and key head dims must match");

  Graph g;
  const auto fid = g.input(f);
  const auto q = g.matmul(fid, g.input(w_q));
  const auto k = g.matmul(fid, g.input(w_k));
  const auto v = g.matmul(fid, g.input(w_v));
  // scores = Q.K^T via the batched transpose product with batch size 1.
  const auto qb = g.input(
      Tensor({1, f.dim(0), w_q.dim(1)}, g.value(q).values));
  const auto scores = g.bmm_shared_nt(qb, g.input(g.value(k)));
  const auto soft = g.row_softmax(scores);
  const auto out = g.bmm_shared(soft, g.input(g.value(v)));
  return Tensor({f.dim(0), w_v.dim(1)}, g.value(out).values);
}

// ---------------------------------------------------------------------------
// Encoder
// ---------------------------------------------------------------------------

void EncoderConfig::validate() const {
  if (n_freq < 1 || n_time < 1)
    throw ConfigError("encoder input shape must be at least 1x1");
  if (conv.empty()) throw ConfigError("encoder needs at least one conv layer");
  for (const ConvLayerSpec& l : conv)
    if (l.channels < 1 || l.kernel_h < 1 || l.kernel_w < 1 ||
        l.stride_h < 1 || l.stride_w < 1)
      throw ConfigError("conv layer dims and strides must be >= 1");
  if (attention_slots < 1 || attention_dim < 1 || embed_dim < 1 ||
      proj_dim < 1)
    throw ConfigError("encoder dims must be >= 1");
  if (attention_dim != embed_dim)
    throw ConfigError(
        "the pooled attention output is the embedding, so attention_dim "
        "must equal embed_dim");
  conv_output_hw();
}

std::pair<size_t, size_t> EncoderConfig::conv_output_hw() const {
  size_t h = n_freq, w = n_time;
  for (const ConvLayerSpec& l : conv) {
    if (h < l.kernel_h || w < l.kernel_w)
      throw ShapeError("conv stack shrinks the input below the kernel size");
    h = (h - l.kernel_h) / l.stride_h + 1;
    w = (w - l.kernel_w) / l.stride_w + 1;
  }
  return {h, w};
}

void init_encoder_params(ParamStore& store, const EncoderConfig& cfg,
                         std::uint64_t seed) {
  cfg.validate();
  Rng rng(hash_combine(seed, 0xe2c0de));
  size_t cin = 1;
  for (size_t li = 0; li < cfg.conv.size(); ++li) {
    const ConvLayerSpec& l = cfg.conv[li];
    const size_t fan_in = cin * l.kernel_h * l.kernel_w;
    const size_t fan_out = l.channels * l.kernel_h * l.kernel_w;
    store.emplace(conv_name(li, "w"),
                  glorot({l.channels, cin, l.kernel_h, l.kernel_w}, fan_in,
                         fan_out, rng));
    store.emplace(conv_name(li, "b"), Tensor::zeros({l.channels}));
    cin = l.channels;
  }
  store.emplace("enc.attn.wq",
                glorot({cin, cfg.attention_dim}, cin, cfg.attention_dim, rng));
  store.emplace("enc.attn.mk",
                glorot({cfg.attention_slots, cfg.attention_dim},
                       cfg.attention_slots, cfg.attention_dim, rng));
  store.emplace("enc.attn.mv",
                glorot({cfg.attention_slots, cfg.attention_dim},
                       cfg.attention_slots, cfg.attention_dim, rng));
  store.emplace("enc.proj.w1", glorot({cfg.embed_dim, cfg.embed_dim},
                                      cfg.embed_dim, cfg.embed_dim, rng));
  store.emplace("enc.proj.b1", Tensor::zeros({cfg.embed_dim}));
  store.emplace("enc.proj.w2", glorot({cfg.embed_dim, cfg.proj_dim},
                                      cfg.embed_dim, cfg.proj_dim, rng));
  store.emplace("enc.proj.b2", Tensor::zeros({cfg.proj_dim}));
}

void init_classifier_params(ParamStore& store, size_t in_dim, size_t hidden,
                            size_t n_classes, std::uint64_t seed) {
  Rng rng(hash_combine(seed, 0xc1a55));
  store.emplace("clf.w1", glorot({in_dim, hidden}, in_dim, hidden, rng));
  store.emplace("clf.b1", Tensor::zeros({hidden}));
  store.emplace("clf.w2", glorot({hidden, n_classes}, hidden, n_classes, rng));
  store.emplace("clf.b2", Tensor::zeros({n_classes}));
}

Tensor batch_from_spectrograms(const std::vector<const Spectrogram*>& batch,
                               const EncoderConfig& cfg) {
  if (batch.empty())
    throw DegenerateInputError("cannot build a batch from zero spectrograms");
  Tensor x = Tensor::zeros({batch.size(), 1, cfg.n_freq, cfg.n_time});
  const size_t plane = cfg.n_freq * cfg.n_time;
  for (size_t b = 0; b < batch.size(); ++b) {
    const Spectrogram& sp = *batch[b];
    if (sp.n_freq() != cfg.n_freq || sp.n_time() != cfg.n_time)
      throw ShapeError("spectrogram shape does not match the encoder config");
    std::copy(sp.magnitudes.begin(), sp.magnitudes.end(),
              x.values.begin() + b * plane);
  }
  if (cfg.log_compress)
    for (double& v : x.values) v = std::log1p(v);
  return x;
}

EncoderNodes encoder_forward(Graph& g, Graph::NodeId x, ParamStore& store,
                             const EncoderConfig& cfg) {
  cfg.validate();
  Graph::NodeId cur = x;
  for (size_t li = 0; li < cfg.conv.size(); ++li) {
    const ConvLayerSpec& l = cfg.conv[li];
    const auto w = g.param(conv_name(li, "w"), store.at(conv_name(li, "w")));
    const auto b = g.param(conv_name(li, "b"), store.at(conv_name(li, "b")));
    cur = g.relu(g.conv2d(cur, w, b, l.stride_h, l.stride_w));
  }
  const auto positions = g.to_positions(cur);
  const auto wq = g.param("enc.attn.wq", store.at("enc.attn.wq"));
  const auto mk = g.param("enc.attn.mk", store.at("enc.attn.mk"));
  const auto mv = g.param("enc.attn.mv", store.at("enc.attn.mv"));
  const auto q = g.bmm_shared(positions, wq);
  const auto scores = g.bmm_shared_nt(q, mk);
  const auto soft = g.row_softmax(scores);
  const auto norm =
      cfg.norm == AttentionNorm::double_norm ? g.col_l1norm(soft) : soft;
  const auto attended = g.bmm_shared(norm, mv);
  // Residual around the attention term, then a pointwise nonlinearity
  // before pooling. Both are load-bearing: every column of the
  // double-normalized attention map sums to 1 across positions, so a
  // *linear* mean pool of the bare attention output collapses to a
  // constant vector for any input, and even with the residual the
  // attention term would only contribute that constant.
  const auto mixed = g.tanh(g.add(q, attended));
  const auto embedding = g.mean_positions(mixed);

  const auto w1 = g.param("enc.proj.w1", store.at("enc.proj.w1"));
  const auto b1 = g.param("enc.proj.b1", store.at("enc.proj.b1"));
  const auto w2 = g.param("enc.proj.w2", store.at("enc.proj.w2"));
  const auto b2 = g.param("enc.proj.b2", store.at("enc.proj.b2"));
  // tanh rather than relu: a relu hidden row can die completely, which
  // would hand the row normalization an exact-zero vector and a useless
  // clamped gradient
  const auto hidden = g.tanh(g.add_rowbias(g.matmul(embedding, w1), b1));
  const auto proj = g.add_rowbias(g.matmul(hidden, w2), b2);
  return {embedding, g.l2norm_rows(proj)};
}

Graph::NodeId classifier_forward(Graph& g, Graph::NodeId embeddings,
                                 ParamStore& store, size_t hidden,
                                 size_t n_classes) {
  const size_t in_dim = g.value(embeddings).dim(1);
  if (!store.contains("clf.w1"))
    init_classifier_params(store, in_dim, hidden, n_classes, 0);
  const auto w1 = g.param("clf.w1", store.at("clf.w1"));
  const auto b1 = g.param("clf.b1", store.at("clf.b1"));
  const auto w2 = g.param("clf.w2", store.at("clf.w2"));
  const auto b2 = g.param("clf.b2", store.at("clf.b2"));
  const auto h = g.relu(g.add_rowbias(g.matmul(embeddings, w1), b1));
  return g.add_rowbias(g.matmul(h, w2), b2);
}

std::pair<Tensor, Tensor> encode_batch(
    const std::vector<const Spectrogram*>& batch, ParamStore& store,
    const EncoderConfig& cfg) {
  Graph g;
  const auto x = g.input(batch_from_spectrograms(batch, cfg));
  const EncoderNodes nodes = encoder_forward(g, x, store, cfg);
  return {g.value(nodes.embedding), g.value(nodes.projection)};
}

double classifier_train(ParamStore& store, const Tensor& embeddings,
                        const std::vector<int>& labels, size_t steps,
                        double lr, double momentum, size_t hidden,
                        size_t n_classes) {
  if (embeddings.rank() != 2 || embeddings.dim(0) == 0)
    throw DegenerateInputError("classifier_train needs a non-empty batch");
  double loss = 0.0;
  for (size_t it = 0; it < steps; ++it) {
    Graph g;
    const auto x = g.input(embeddings);
    const auto logits = classifier_forward(g, x, store, hidden, n_classes);
    const auto l = g.ce_loss(logits, labels);
    g.backward(l);
    loss = g.scalar(l);
    sgd_momentum_step(store, g.param_grads(), lr, momentum);
  }
  return loss;
}

std::vector<int> classifier_predict(ParamStore& store,
                                    const Tensor& embeddings, size_t hidden,
                                    size_t n_classes) {
  Graph g;
  const auto x = g.input(embeddings);
  const auto logits = classifier_forward(g, x, store, hidden, n_classes);
  const Tensor& t = g.value(logits);
  std::vector<int> preds(t.dim(0));
  for (size_t i = 0; i < t.dim(0); ++i) {
    const double* row = t.values.data() + i * n_classes;
    preds[i] = static_cast<int>(
        std::max_element(row, row + n_classes) - row);
  }
  return preds;
}

Tensor classifier_scores(ParamStore& store, const Tensor& embeddings,
                         size_t hidden, size_t n_classes) {
  Graph g;
  const auto x = g.input(embeddings);
  const auto logits = classifier_forward(g, x, store, hidden, n_classes);
  return g.value(g.row_softmax(logits));
}

// ---------------------------------------------------------------------------
// Loss schedule
// ---------------------------------------------------------------------------

LossHistory::LossHistory(size_t capacity) : capacity_(capacity) {
  if (capacity_ < 3)
    throw ConfigError("loss history needs capacity >= 3");
  ce_.resize(capacity_, 0.0);
  con_.resize(capacity_, 0.0);
}

void LossHistory::push(double l_ce, double l_con_t) {
  if (!std::isfinite(l_ce) || !std::isfinite(l_con_t))
    throw NumericError("loss history rejects non-finite entries");
  ce_[count_ % capacity_] = l_ce;
  con_[count_ % capacity_] = l_con_t;
  ++count_;
}

double LossHistory::fetch(const std::vector<double>& ring, size_t i) const {
  if (i < 1 || i > count_)
    throw DataError("loss history has no entry for that iteration");
  if (count_ - i >= capacity_)
    throw DataError("loss history entry has been evicted");
  return ring[(i - 1) % capacity_];
}

double LossHistory::ce_at(size_t i) const { return fetch(ce_, i); }
double LossHistory::con_at(size_t i) const { return fetch(con_, i); }

double lambda_schedule(const LossHistory& history, size_t iteration) {
  if (iteration < 1) throw ConfigError("iterations are 1-based");
  double w1 = 1.0, w2 = 1.0;
  if (iteration > 2) {
    const double ce_prev = history.ce_at(iteration - 1);
    const double ce_prev2 = history.ce_at(iteration - 2);
    const double con_prev = history.con_at(iteration - 1);
    const double con_prev2 = history.con_at(iteration - 2);
    w1 = ce_prev2 <= 1e-12 ? 1.0 : ce_prev / ce_prev2;
    w2 = con_prev2 <= 1e-12 ? 1.0 : con_prev / con_prev2;
  }
  // exp(w1)/(exp(w1)+exp(w2)) computed in the overflow-safe form. The
  // clamp keeps lambda strictly inside (0,1) in double arithmetic even
  // for wild ratios: 1/(1+exp(-36)) still rounds below 1.
  const double diff = std::clamp(w2 - w1, -36.0, 36.0);
  return 1.0 / (1.0 + std::exp(diff));
}

double combined_loss(double l_ce, double l_con_t, double lambda) {
  if (lambda < 0.0 || lambda > 1.0)
    throw ConfigError("lambda must lie in [0,1]");
  return lambda * l_ce + (1.0 - lambda) * l_con_t;
}

// ---------------------------------------------------------------------------
// Optimizer
// ---------------------------------------------------------------------------

void sgd_momentum_step(ParamStore& store, const GradMap& grads, double lr,
                       double momentum) {
  for (const auto& [name, g] : grads) {
    Tensor& p = store.at(name);
    if (!p.same_shape(g))
      throw ShapeError("gradient shape does not match parameter " + name);
    Tensor& v = store.velocity(name);
    for (size_t i = 0; i < p.numel(); ++i) {
      v.values[i] = momentum * v.values[i] + g.values[i];
      p.values[i] -= lr * v.values[i];
    }
  }
  store.bump_step();
}

// ---------------------------------------------------------------------------
// Checkpoints
// ---------------------------------------------------------------------------

namespace {

constexpr std::uint32_t kCheckpointVersion = 1;

void put_u32(std::ofstream& f, std::uint32_t v) {
  unsigned char b[4] = {static_cast<unsigned char>(v & 0xff),
                        static_cast<unsigned char>((v >> 8) & 0xff),
                        static_cast<unsigned char>((v >> 16) & 0xff),
                        static_cast<unsigned char>((v >> 24) & 0xff)};
  f.write(reinterpret_cast<const char*>(b), 4);
}

std::uint32_t get_u32(std::ifstream& f) {
  unsigned char b[4];
  if (!f.read(reinterpret_cast<char*>(b), 4))
    throw DataError("truncated checkpoint file");
  return static_cast<std::uint32_t>(b[0]) |
         (static_cast<std::uint32_t>(b[1]) << 8) |
         (static_cast<std::uint32_t>(b[2]) << 16) |
         (static_cast<std::uint32_t>(b[3]) << 24);
}

void put_f64(std::ofstream& f, double v) {
  std::uint64_t bits;
  std::memcpy(&bits, &v, 8);
  unsigned char b[8];
  for (int i = 0; i < 8; ++i)
    b[i] = static_cast<unsigned char>((bits >> (8 * i)) & 0xff);
  f.write(reinterpret_cast<const char*>(b), 8);
}

double get_f64(std::ifstream& f) {
  unsigned char b[8];
  if (!f.read(reinterpret_cast<char*>(b), 8))
    throw DataError("truncated checkpoint file");
  std::uint64_t bits = 0;
  for (int i = 0; i < 8; ++i)
    bits |= static_cast<std::uint64_t>(b[i]) << (8 * i);
  double v;
  std::memcpy(&v, &bits, 8);
  return v;
}

}  // namespace

void save_checkpoint(const ParamStore& store, const std::string& path) {
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw DataError("cannot open checkpoint for writing: " + path);
  f.write("EFCK", 4);
  put_u32(f, kCheckpointVersion);
  for (const auto& [name, t] : store.params()) {
    put_u32(f, static_cast<std::uint32_t>(name.size()));
    f.write(name.data(), static_cast<std::streamsize>(name.size()));
    put_u32(f, static_cast<std::uint32_t>(t.rank()));
    for (size_t d : t.shape) put_u32(f, static_cast<std::uint32_t>(d));
    for (double v : t.values) put_f64(f, v);
  }
  if (!f) throw DataError("write failure on checkpoint: " + path);
}

ParamStore load_checkpoint(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw DataError("cannot open checkpoint: " + path);
  char magic[4];
  if (!f.read(magic, 4) || std::memcmp(magic, "EFCK", 4) != 0)
    throw DataError("not a checkpoint file: " + path);
  const std::uint32_t version = get_u32(f);
  if (version != kCheckpointVersion)
    throw DataError("unsupported checkpoint version");

  ParamStore store;
  while (true) {
    f.peek();
    if (f.eof()) break;
    const std::uint32_t name_len = get_u32(f);
    std::string name(name_len, '\0');
    if (!f.read(name.data(), name_len))
      throw DataError("truncated checkpoint file");
    const std::uint32_t ndims = get_u32(f);
    std::vector<size_t> shape(ndims);
    for (std::uint32_t i = 0; i < ndims; ++i) shape[i] = get_u32(f);
    Tensor t = Tensor::zeros(shape);
    for (double& v : t.values) v = get_f64(f);
    store.emplace(name, std::move(t));
  }
  return store;
}

// ---------------------------------------------------------------------------
// Training log
// ---------------------------------------------------------------------------

TrainingLogger::TrainingLogger(const std::string& path) : path_(path) {
  std::ofstream f(path_, std::ios::trunc);
  if (!f) throw DataError("cannot open training log: " + path_);
  f << "iter,L_ce,L_con_t,lambda,lr\n";
}

void TrainingLogger::log(size_t iter, double l_ce, double l_con_t,
                         double lambda, double lr) {
  std::ofstream f(path_, std::ios::app);
  if (!f) throw DataError("cannot append to training log: " + path_);
  f.precision(17);
  f << iter << "," << l_ce << "," << l_con_t << "," << lambda << "," << lr
    << "\n";
}

}  // namespace efl::nnet
