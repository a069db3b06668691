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
#include <numeric>
#include <stdexcept>

#include "efl/errors.hpp"
#include "efl/nnet.hpp"
#include "efl/parallel.hpp"

namespace efl::nnet {

namespace {

size_t shape_numel(const std::vector<size_t>& shape) {
  size_t n = 1;
  for (size_t d : shape) n *= d;
  return n;
}

void require(bool ok, const std::string& msg) {
  if (!ok) throw ShapeError(msg);
}

}  // namespace

// ---------------------------------------------------------------------------
// Tensor
// ---------------------------------------------------------------------------

Tensor::Tensor(std::vector<size_t> s, std::vector<double> v)
    : shape(std::move(s)), values(std::move(v)) {
  if (values.size() != shape_numel(shape))
    throw ShapeError("tensor value count does not match its shape");
}

Tensor Tensor::zeros(std::vector<size_t> shape) {
  const size_t n = shape_numel(shape);
  return Tensor(std::move(shape), std::vector<double>(n, 0.0));
}

Tensor Tensor::full(std::vector<size_t> shape, double value) {
  const size_t n = shape_numel(shape);
  return Tensor(std::move(shape), std::vector<double>(n, value));
}

size_t Tensor::numel() const { return values.size(); }

void Tensor::check_finite(const std::string& context) const {
  for (double v : values)
    if (!std::isfinite(v))
      throw NumericError(context + ": non-finite value encountered");
}

// ---------------------------------------------------------------------------
// ParamStore
// ---------------------------------------------------------------------------

Tensor& ParamStore::emplace(const std::string& name, Tensor init) {
  auto it = params_.find(name);
  if (it == params_.end())
    it = params_.emplace(name, std::move(init)).first;
  return it->second;
}

Tensor& ParamStore::at(const std::string& name) {
  auto it = params_.find(name);
  if (it == params_.end())
    throw DataError("unknown parameter: " + name);
  return it->second;
}

const Tensor& ParamStore::at(const std::string& name) const {
  auto it = params_.find(name);
  if (it == params_.end())
    throw DataError("unknown parameter: " + name);
  return it->second;
}

bool ParamStore::contains(const std::string& name) const {
  return params_.count(name) != 0;
}

Tensor& ParamStore::velocity(const std::string& name) {
  const Tensor& p = at(name);
  auto it = velocity_.find(name);
  if (it == velocity_.end())
    it = velocity_.emplace(name, Tensor::zeros(p.shape)).first;
  else if (!it->second.same_shape(p))
    throw ShapeError("velocity shape does not match parameter " + name);
  return it->second;
}

size_t ParamStore::parameter_count() const {
  size_t n = 0;
  for (const auto& [name, t] : params_) n += t.numel();
  return n;
}

// ---------------------------------------------------------------------------
// Graph plumbing
// ---------------------------------------------------------------------------

Graph::NodeId Graph::push(Node node) {
  nodes_.push_back(std::move(node));
  return nodes_.size() - 1;
}

Graph::NodeId Graph::input(Tensor value) {
  Node n;
  n.value = std::move(value);
  n.requires_grad = false;
  return push(std::move(n));
}

Graph::NodeId Graph::param(const std::string& name, const Tensor& value) {
  Node n;
  n.value = value;
  n.requires_grad = true;
  n.param_name = name;
  return push(std::move(n));
}

const Tensor& Graph::value(NodeId id) const { return nodes_.at(id).value; }

const Tensor& Graph::grad(NodeId id) const {
  if (!backward_done_)
    throw std::logic_error("grad() queried before backward()");
  return nodes_.at(id).grad;
}

double Graph::scalar(NodeId id) const {
  const Tensor& t = nodes_.at(id).value;
  require(t.numel() == 1, "scalar() on a non-scalar node");
  return t.values[0];
}

GradMap Graph::param_grads() const {
  if (!backward_done_)
    throw std::logic_error("param_grads() queried before backward()");
  GradMap out;
  for (const Node& n : nodes_) {
    if (n.param_name.empty()) continue;
    auto it = out.find(n.param_name);
    if (it == out.end()) {
      out.emplace(n.param_name, n.grad);
    } else {
      // The same parameter may appear as several leaves (e.g. one graph
      // evaluating two batches); their gradients add.
      for (size_t i = 0; i < n.grad.numel(); ++i)
        it->second.values[i] += n.grad.values[i];
    }
  }
  return out;
}

void Graph::backward(NodeId loss) {
  if (backward_done_)
    throw std::logic_error("backward() may only run once per graph");
  require(nodes_.at(loss).value.numel() == 1,
          "backward() requires a scalar loss node");

  // Mark ancestors of the loss so unrelated nodes are skipped.
  std::vector<char> on_path(nodes_.size(), 0);
  std::vector<NodeId> stack = {loss};
  while (!stack.empty()) {
    const NodeId id = stack.back();
    stack.pop_back();
    if (on_path[id]) continue;
    on_path[id] = 1;
    for (NodeId in : nodes_[id].inputs) stack.push_back(in);
  }

  for (Node& n : nodes_) n.grad = Tensor::zeros(n.value.shape);
  nodes_[loss].grad.values[0] = 1.0;

  for (size_t i = loss + 1; i-- > 0;) {
    Node& n = nodes_[i];
    if (!on_path[i] || !n.backward_fn || !n.requires_grad) continue;
    n.backward_fn(*this, n);
  }
  backward_done_ = true;
}

// ---------------------------------------------------------------------------
// Linear algebra nodes
// ---------------------------------------------------------------------------

Graph::NodeId Graph::matmul(NodeId a, NodeId b) {
  const Tensor& ta = nodes_.at(a).value;
  const Tensor& tb = nodes_.at(b).value;
  require(ta.rank() == 2 && tb.rank() == 2, "matmul expects 2-D tensors");
  require(ta.dim(1) == tb.dim(0), "matmul inner dimensions differ");
  const size_t n = ta.dim(0), k = ta.dim(1), m = tb.dim(1);

  Node out;
  out.value = Tensor::zeros({n, m});
  const double* pa = ta.values.data();
  const double* pb = tb.values.data();
  double* pc = out.value.values.data();
  parallel_for(n, [&](size_t i) {
    for (size_t j = 0; j < m; ++j) {
      double acc = 0.0;
      for (size_t t = 0; t < k; ++t) acc += pa[i * k + t] * pb[t * m + j];
      pc[i * m + j] = acc;
    }
  });

  out.inputs = {a, b};
  out.requires_grad = nodes_[a].requires_grad || nodes_[b].requires_grad;
  out.backward_fn = [a, b, n, k, m](Graph& g, Node& self) {
    const double* dc = self.grad.values.data();
    Node& na = g.node(a);
    Node& nb = g.node(b);
    if (na.requires_grad) {
      double* da = na.grad.values.data();
      const double* pb2 = nb.value.values.data();
      parallel_for(n, [&](size_t i) {
        for (size_t t = 0; t < k; ++t) {
          double acc = 0.0;
          for (size_t j = 0; j < m; ++j)
            acc += dc[i * m + j] * pb2[t * m + j];
          da[i * k + t] += acc;
        }
      });
    }
    if (nb.requires_grad) {
      double* db = nb.grad.values.data();
      const double* pa2 = na.value.values.data();
      parallel_for(k, [&](size_t t) {
        for (size_t j = 0; j < m; ++j) {
          double acc = 0.0;
          for (size_t i = 0; i < n; ++i)
            acc += pa2[i * k + t] * dc[i * m + j];
          db[t * m + j] += acc;
        }
      });
    }
  };
  return push(std::move(out));
}

Graph::NodeId Graph::add_rowbias(NodeId x, NodeId bias) {
  const Tensor& tx = nodes_.at(x).value;
  const Tensor& tb = nodes_.at(bias).value;
  require(tx.rank() == 2 && tb.rank() == 1, "add_rowbias expects [N,M] + [M]");
  require(tx.dim(1) == tb.dim(0), "bias length does not match columns");
  const size_t n = tx.dim(0), m = tx.dim(1);

  Node out;
  out.value = tx;
  for (size_t i = 0; i < n; ++i)
    for (size_t j = 0; j < m; ++j)
      out.value.values[i * m + j] += tb.values[j];

  out.inputs = {x, bias};
  out.requires_grad =
      nodes_[x].requires_grad || nodes_[bias].requires_grad;
  out.backward_fn = [x, bias, n, m](Graph& g, Node& self) {
    Node& nx = g.node(x);
    Node& nb = g.node(bias);
    if (nx.requires_grad)
      for (size_t i = 0; i < self.grad.numel(); ++i)
        nx.grad.values[i] += self.grad.values[i];
    if (nb.requires_grad)
      for (size_t j = 0; j < m; ++j) {
        double acc = 0.0;
        for (size_t i = 0; i < n; ++i) acc += self.grad.values[i * m + j];
        nb.grad.values[j] += acc;
      }
  };
  return push(std::move(out));
}

Graph::NodeId Graph::add(NodeId a, NodeId b) {
  const Tensor& ta = nodes_.at(a).value;
  const Tensor& tb = nodes_.at(b).value;
  require(ta.shape == tb.shape, "add() operands must share a shape");
  Node out;
  out.value = ta;
  for (size_t i = 0; i < out.value.numel(); ++i)
    out.value.values[i] += tb.values[i];
  out.inputs = {a, b};
  out.requires_grad = nodes_[a].requires_grad || nodes_[b].requires_grad;
  out.backward_fn = [a, b](Graph& g, Node& self) {
    for (const NodeId in : {a, b}) {
      Node& n = g.node(in);
      if (!n.requires_grad) continue;
      for (size_t i = 0; i < self.grad.numel(); ++i)
        n.grad.values[i] += self.grad.values[i];
    }
  };
  return push(std::move(out));
}

Graph::NodeId Graph::relu(NodeId x) {
  const Tensor& tx = nodes_.at(x).value;
  Node out;
  out.value = tx;
  for (double& v : out.value.values) v = std::max(v, 0.0);
  out.inputs = {x};
  out.requires_grad = nodes_[x].requires_grad;
  out.backward_fn = [x](Graph& g, Node& self) {
    Node& nx = g.node(x);
    if (!nx.requires_grad) return;
    for (size_t i = 0; i < self.grad.numel(); ++i)
      if (nx.value.values[i] > 0.0)
        nx.grad.values[i] += self.grad.values[i];
  };
  return push(std::move(out));
}

Graph::NodeId Graph::tanh(NodeId x) {
  const Tensor& tx = nodes_.at(x).value;
  Node out;
  out.value = tx;
  for (double& v : out.value.values) v = std::tanh(v);
  out.inputs = {x};
  out.requires_grad = nodes_[x].requires_grad;
  out.backward_fn = [x](Graph& g, Node& self) {
    Node& nx = g.node(x);
    if (!nx.requires_grad) return;
    for (size_t i = 0; i < self.grad.numel(); ++i) {
      const double t = self.value.values[i];
      nx.grad.values[i] += (1.0 - t * t) * self.grad.values[i];
    }
  };
  return push(std::move(out));
}

Graph::NodeId Graph::conv2d(NodeId x, NodeId w, NodeId b, size_t stride_h,
                            size_t stride_w) {
  const Tensor& tx = nodes_.at(x).value;
  const Tensor& tw = nodes_.at(w).value;
  const Tensor& tb = nodes_.at(b).value;
  require(tx.rank() == 4, "conv2d input must be [B,Cin,H,W]");
  require(tw.rank() == 4, "conv2d weight must be [Cout,Cin,kh,kw]");
  require(tb.rank() == 1 && tb.dim(0) == tw.dim(0),
          "conv2d bias must be [Cout]");
  require(tx.dim(1) == tw.dim(1), "conv2d channel mismatch");
  require(stride_h >= 1 && stride_w >= 1, "conv2d stride must be >= 1");
  const size_t bs = tx.dim(0), cin = tx.dim(1), h = tx.dim(2), wd = tx.dim(3);
  const size_t cout = tw.dim(0), kh = tw.dim(2), kw = tw.dim(3);
  require(h >= kh && wd >= kw, "conv2d kernel larger than input");
  const size_t oh = (h - kh) / stride_h + 1;
  const size_t ow = (wd - kw) / stride_w + 1;

  Node out;
  out.value = Tensor::zeros({bs, cout, oh, ow});
  const double* px = tx.values.data();
  const double* pw = tw.values.data();
  double* py = out.value.values.data();
  parallel_for(bs * cout, [&](size_t bc) {
    const size_t bi = bc / cout, co = bc % cout;
    for (size_t oy = 0; oy < oh; ++oy)
      for (size_t ox = 0; ox < ow; ++ox) {
        double acc = tb.values[co];
        for (size_t ci = 0; ci < cin; ++ci)
          for (size_t ky = 0; ky < kh; ++ky)
            for (size_t kx = 0; kx < kw; ++kx)
              acc += px[((bi * cin + ci) * h + oy * stride_h + ky) * wd +
                        ox * stride_w + kx] *
                     pw[((co * cin + ci) * kh + ky) * kw + kx];
        py[((bi * cout + co) * oh + oy) * ow + ox] = acc;
      }
  });

  out.inputs = {x, w, b};
  out.requires_grad = nodes_[x].requires_grad || nodes_[w].requires_grad ||
                      nodes_[b].requires_grad;
  out.backward_fn = [=](Graph& g, Node& self) {
    Node& nx = g.node(x);
    Node& nw = g.node(w);
    Node& nb = g.node(b);
    const double* dy = self.grad.values.data();
    if (nb.requires_grad) {
      for (size_t co = 0; co < cout; ++co) {
        double acc = 0.0;
        for (size_t bi = 0; bi < bs; ++bi)
          for (size_t oy = 0; oy < oh; ++oy)
            for (size_t ox = 0; ox < ow; ++ox)
              acc += dy[((bi * cout + co) * oh + oy) * ow + ox];
        nb.grad.values[co] += acc;
      }
    }
    if (nw.requires_grad) {
      const double* px2 = nx.value.values.data();
      double* dw = nw.grad.values.data();
      parallel_for(cout * cin, [&](size_t cc) {
        const size_t co = cc / cin, ci = cc % cin;
        for (size_t ky = 0; ky < kh; ++ky)
          for (size_t kx = 0; kx < kw; ++kx) {
            double acc = 0.0;
            for (size_t bi = 0; bi < bs; ++bi)
              for (size_t oy = 0; oy < oh; ++oy)
                for (size_t ox = 0; ox < ow; ++ox)
                  acc += px2[((bi * cin + ci) * h + oy * stride_h + ky) * wd +
                             ox * stride_w + kx] *
                         dy[((bi * cout + co) * oh + oy) * ow + ox];
            dw[((co * cin + ci) * kh + ky) * kw + kx] += acc;
          }
      });
    }
    if (nx.requires_grad) {
      const double* pw2 = nw.value.values.data();
      double* dx = nx.grad.values.data();
      // Gather form: each input cell sums over the output cells whose
      // receptive field covers it, in fixed order.
      parallel_for(bs * cin, [&](size_t bc) {
        const size_t bi = bc / cin, ci = bc % cin;
        for (size_t y = 0; y < h; ++y)
          for (size_t xx = 0; xx < wd; ++xx) {
            double acc = 0.0;
            for (size_t co = 0; co < cout; ++co)
              for (size_t ky = 0; ky < kh; ++ky) {
                if (y < ky || (y - ky) % stride_h != 0) continue;
                const size_t oy = (y - ky) / stride_h;
                if (oy >= oh) continue;
                for (size_t kx = 0; kx < kw; ++kx) {
                  if (xx < kx || (xx - kx) % stride_w != 0) continue;
                  const size_t ox = (xx - kx) / stride_w;
                  if (ox >= ow) continue;
                  acc += pw2[((co * cin + ci) * kh + ky) * kw + kx] *
                         dy[((bi * cout + co) * oh + oy) * ow + ox];
                }
              }
            dx[(bc * h + y) * wd + xx] += acc;
          }
      });
    }
  };
  return push(std::move(out));
}

Graph::NodeId Graph::to_positions(NodeId x) {
  const Tensor& tx = nodes_.at(x).value;
  require(tx.rank() == 4, "to_positions expects [B,C,h,w]");
  const size_t bs = tx.dim(0), c = tx.dim(1), h = tx.dim(2), w = tx.dim(3);
  const size_t pos = h * w;

  Node out;
  out.value = Tensor::zeros({bs, pos, c});
  for (size_t bi = 0; bi < bs; ++bi)
    for (size_t ci = 0; ci < c; ++ci)
      for (size_t p = 0; p < pos; ++p)
        out.value.values[(bi * pos + p) * c + ci] =
            tx.values[(bi * c + ci) * pos + p];

  out.inputs = {x};
  out.requires_grad = nodes_[x].requires_grad;
  out.backward_fn = [x, bs, c, pos](Graph& g, Node& self) {
    Node& nx = g.node(x);
    if (!nx.requires_grad) return;
    for (size_t bi = 0; bi < bs; ++bi)
      for (size_t ci = 0; ci < c; ++ci)
        for (size_t p = 0; p < pos; ++p)
          nx.grad.values[(bi * c + ci) * pos + p] +=
              self.grad.values[(bi * pos + p) * c + ci];
  };
  return push(std::move(out));
}

Graph::NodeId Graph::bmm_shared(NodeId x, NodeId m) {
  const Tensor& tx = nodes_.at(x).value;
  const Tensor& tm = nodes_.at(m).value;
  require(tx.rank() == 3 && tm.rank() == 2, "bmm_shared expects [B,N,K].[K,M]");
  require(tx.dim(2) == tm.dim(0), "bmm_shared inner dimensions differ");
  const size_t bs = tx.dim(0), n = tx.dim(1), k = tx.dim(2), mm = tm.dim(1);

  Node out;
  out.value = Tensor::zeros({bs, n, mm});
  parallel_for(bs * n, [&](size_t bn) {
    const double* row = tx.values.data() + bn * k;
    double* dst = out.value.values.data() + bn * mm;
    for (size_t j = 0; j < mm; ++j) {
      double acc = 0.0;
      for (size_t t = 0; t < k; ++t) acc += row[t] * tm.values[t * mm + j];
      dst[j] = acc;
    }
  });

  out.inputs = {x, m};
  out.requires_grad = nodes_[x].requires_grad || nodes_[m].requires_grad;
  out.backward_fn = [x, m, bs, n, k, mm](Graph& g, Node& self) {
    Node& nx = g.node(x);
    Node& nm = g.node(m);
    if (nx.requires_grad) {
      parallel_for(bs * n, [&](size_t bn) {
        const double* drow = self.grad.values.data() + bn * mm;
        double* dst = nx.grad.values.data() + bn * k;
        for (size_t t = 0; t < k; ++t) {
          double acc = 0.0;
          for (size_t j = 0; j < mm; ++j)
            acc += drow[j] * nm.value.values[t * mm + j];
          dst[t] += acc;
        }
      });
    }
    if (nm.requires_grad) {
      parallel_for(k, [&](size_t t) {
        for (size_t j = 0; j < mm; ++j) {
          double acc = 0.0;
          for (size_t bn = 0; bn < bs * n; ++bn)
            acc += nx.value.values[bn * k + t] *
                   self.grad.values[bn * mm + j];
          nm.grad.values[t * mm + j] += acc;
        }
      });
    }
  };
  return push(std::move(out));
}

Graph::NodeId Graph::bmm_shared_nt(NodeId x, NodeId m) {
  const Tensor& tx = nodes_.at(x).value;
  const Tensor& tm = nodes_.at(m).value;
  require(tx.rank() == 3 && tm.rank() == 2,
          "bmm_shared_nt expects [B,N,K].[M,K]^T");
  require(tx.dim(2) == tm.dim(1), "bmm_shared_nt inner dimensions differ");
  const size_t bs = tx.dim(0), n = tx.dim(1), k = tx.dim(2), mm = tm.dim(0);

  Node out;
  out.value = Tensor::zeros({bs, n, mm});
  parallel_for(bs * n, [&](size_t bn) {
    const double* row = tx.values.data() + bn * k;
    double* dst = out.value.values.data() + bn * mm;
    for (size_t j = 0; j < mm; ++j) {
      double acc = 0.0;
      const double* mrow = tm.values.data() + j * k;
      for (size_t t = 0; t < k; ++t) acc += row[t] * mrow[t];
      dst[j] = acc;
    }
  });

  out.inputs = {x, m};
  out.requires_grad = nodes_[x].requires_grad || nodes_[m].requires_grad;
  out.backward_fn = [x, m, bs, n, k, mm](Graph& g, Node& self) {
    Node& nx = g.node(x);
    Node& nm = g.node(m);
    if (nx.requires_grad) {
      parallel_for(bs * n, [&](size_t bn) {
        const double* drow = self.grad.values.data() + bn * mm;
        double* dst = nx.grad.values.data() + bn * k;
        for (size_t t = 0; t < k; ++t) {
          double acc = 0.0;
          for (size_t j = 0; j < mm; ++j)
            acc += drow[j] * nm.value.values[j * k + t];
          dst[t] += acc;
        }
      });
    }
    if (nm.requires_grad) {
      parallel_for(mm, [&](size_t j) {
        for (size_t t = 0; t < k; ++t) {
          double acc = 0.0;
          for (size_t bn = 0; bn < bs * n; ++bn)
            acc += self.grad.values[bn * mm + j] *
                   nx.value.values[bn * k + t];
          nm.grad.values[j * k + t] += acc;
        }
      });
    }
  };
  return push(std::move(out));
}

// ---------------------------------------------------------------------------
// Normalization nodes
// ---------------------------------------------------------------------------

Graph::NodeId Graph::row_softmax(NodeId x) {
  const Tensor& tx = nodes_.at(x).value;
  require(tx.rank() >= 2, "row_softmax expects rank >= 2");
  const size_t cols = tx.shape.back();
  const size_t rows = tx.numel() / cols;

  Node out;
  out.value = tx;
  for (size_t r = 0; r < rows; ++r) {
    double* row = out.value.values.data() + r * cols;
    const double mx = *std::max_element(row, row + cols);
    double sum = 0.0;
    for (size_t j = 0; j < cols; ++j) {
      row[j] = std::exp(row[j] - mx);
      sum += row[j];
    }
    for (size_t j = 0; j < cols; ++j) row[j] /= sum;
  }

  out.inputs = {x};
  out.requires_grad = nodes_[x].requires_grad;
  out.backward_fn = [x, rows, cols](Graph& g, Node& self) {
    Node& nx = g.node(x);
    if (!nx.requires_grad) return;
    for (size_t r = 0; r < rows; ++r) {
      const double* y = self.value.values.data() + r * cols;
      const double* dy = self.grad.values.data() + r * cols;
      double dot = 0.0;
      for (size_t j = 0; j < cols; ++j) dot += y[j] * dy[j];
      double* dx = nx.grad.values.data() + r * cols;
      for (size_t j = 0; j < cols; ++j) dx[j] += y[j] * (dy[j] - dot);
    }
  };
  return push(std::move(out));
}

Graph::NodeId Graph::col_l1norm(NodeId x) {
  const Tensor& tx = nodes_.at(x).value;
  require(tx.rank() == 3, "col_l1norm expects [B,N,S]");
  const size_t bs = tx.dim(0), n = tx.dim(1), s = tx.dim(2);

  Node out;
  out.value = tx;
  std::vector<double> sums(bs * s, 0.0);
  for (size_t bi = 0; bi < bs; ++bi)
    for (size_t c = 0; c < s; ++c) {
      double sum = 0.0;
      for (size_t r = 0; r < n; ++r)
        sum += std::abs(tx.values[(bi * n + r) * s + c]);
      sum = std::max(sum, 1e-300);
      sums[bi * s + c] = sum;
      for (size_t r = 0; r < n; ++r)
        out.value.values[(bi * n + r) * s + c] /= sum;
    }

  out.inputs = {x};
  out.requires_grad = nodes_[x].requires_grad;
  out.backward_fn = [x, bs, n, s, sums](Graph& g, Node& self) {
    Node& nx = g.node(x);
    if (!nx.requires_grad) return;
    for (size_t bi = 0; bi < bs; ++bi)
      for (size_t c = 0; c < s; ++c) {
        // y_r = x_r / sum(|x|); dx_m = (dy_m - sign(x_m).sum_r dy_r y_r)/sum
        const double sum = sums[bi * s + c];
        double dot = 0.0;
        for (size_t r = 0; r < n; ++r)
          dot += self.grad.values[(bi * n + r) * s + c] *
                 self.value.values[(bi * n + r) * s + c];
        for (size_t r = 0; r < n; ++r) {
          const double xv = nx.value.values[(bi * n + r) * s + c];
          const double sign = xv > 0.0 ? 1.0 : (xv < 0.0 ? -1.0 : 0.0);
          nx.grad.values[(bi * n + r) * s + c] +=
              (self.grad.values[(bi * n + r) * s + c] - sign * dot) / sum;
        }
      }
  };
  return push(std::move(out));
}

Graph::NodeId Graph::mean_positions(NodeId x) {
  const Tensor& tx = nodes_.at(x).value;
  require(tx.rank() == 3, "mean_positions expects [B,N,d]");
  const size_t bs = tx.dim(0), n = tx.dim(1), d = tx.dim(2);

  Node out;
  out.value = Tensor::zeros({bs, d});
  for (size_t bi = 0; bi < bs; ++bi)
    for (size_t j = 0; j < d; ++j) {
      double acc = 0.0;
      for (size_t p = 0; p < n; ++p)
        acc += tx.values[(bi * n + p) * d + j];
      out.value.values[bi * d + j] = acc / static_cast<double>(n);
    }

  out.inputs = {x};
  out.requires_grad = nodes_[x].requires_grad;
  out.backward_fn = [x, bs, n, d](Graph& g, Node& self) {
    Node& nx = g.node(x);
    if (!nx.requires_grad) return;
    const double inv = 1.0 / static_cast<double>(n);
    for (size_t bi = 0; bi < bs; ++bi)
      for (size_t p = 0; p < n; ++p)
        for (size_t j = 0; j < d; ++j)
          nx.grad.values[(bi * n + p) * d + j] +=
              self.grad.values[bi * d + j] * inv;
  };
  return push(std::move(out));
}

Graph::NodeId Graph::l2norm_rows(NodeId x) {
  const Tensor& tx = nodes_.at(x).value;
  require(tx.rank() == 2, "l2norm_rows expects [B,d]");
  const size_t bs = tx.dim(0), d = tx.dim(1);

  Node out;
  out.value = tx;
  std::vector<double> norms(bs, 0.0);
  for (size_t bi = 0; bi < bs; ++bi) {
    double sq = 0.0;
    for (size_t j = 0; j < d; ++j) {
      const double v = tx.values[bi * d + j];
      sq += v * v;
    }
    // Guard against an exactly dead row; never hit with trained weights.
    const double r = std::max(std::sqrt(sq), 1e-12);
    norms[bi] = r;
    for (size_t j = 0; j < d; ++j) out.value.values[bi * d + j] /= r;
  }

  out.inputs = {x};
  out.requires_grad = nodes_[x].requires_grad;
  out.backward_fn = [x, bs, d, norms](Graph& g, Node& self) {
    Node& nx = g.node(x);
    if (!nx.requires_grad) return;
    for (size_t bi = 0; bi < bs; ++bi) {
      // y = x/r; dx = (dy - y (y.dy)) / r
      const double* y = self.value.values.data() + bi * d;
      const double* dy = self.grad.values.data() + bi * d;
      double dot = 0.0;
      for (size_t j = 0; j < d; ++j) dot += y[j] * dy[j];
      for (size_t j = 0; j < d; ++j)
        nx.grad.values[bi * d + j] += (dy[j] - y[j] * dot) / norms[bi];
    }
  };
  return push(std::move(out));
}

// ---------------------------------------------------------------------------
// Loss nodes
// ---------------------------------------------------------------------------

Graph::NodeId Graph::ce_loss(NodeId logits, const std::vector<int>& labels) {
  const Tensor& tl = nodes_.at(logits).value;
  require(tl.rank() == 2, "ce_loss expects [B,K] logits");
  const size_t bs = tl.dim(0), k = tl.dim(1);
  require(labels.size() == bs, "ce_loss label count mismatch");
  for (int y : labels)
    if (y < 0 || static_cast<size_t>(y) >= k)
      throw DataError("ce_loss label out of range");
  if (bs == 0) throw DegenerateInputError("ce_loss on an empty batch");

  // Cache softmax probabilities for the backward pass.
  std::vector<double> probs(bs * k);
  double loss = 0.0;
  for (size_t i = 0; i < bs; ++i) {
    const double* row = tl.values.data() + i * k;
    const double mx = *std::max_element(row, row + k);
    double sum = 0.0;
    for (size_t j = 0; j < k; ++j) {
      probs[i * k + j] = std::exp(row[j] - mx);
      sum += probs[i * k + j];
    }
    for (size_t j = 0; j < k; ++j) probs[i * k + j] /= sum;
    loss -= std::log(probs[i * k + labels[i]]);
  }
  loss /= static_cast<double>(bs);
  if (!std::isfinite(loss)) throw NumericError("ce_loss diverged");

  Node out;
  out.value = Tensor({1}, {loss});
  out.inputs = {logits};
  out.requires_grad = nodes_[logits].requires_grad;
  out.backward_fn = [logits, bs, k, labels, probs](Graph& g, Node& self) {
    Node& nl = g.node(logits);
    if (!nl.requires_grad) return;
    const double up = self.grad.values[0] / static_cast<double>(bs);
    for (size_t i = 0; i < bs; ++i)
      for (size_t j = 0; j < k; ++j) {
        double gr = probs[i * k + j];
        if (static_cast<size_t>(labels[i]) == j) gr -= 1.0;
        nl.grad.values[i * k + j] += up * gr;
      }
  };
  return push(std::move(out));
}

Graph::NodeId Graph::supcon_loss(NodeId z, const std::vector<int>& labels,
                                 double tau) {
  const Tensor& tz = nodes_.at(z).value;
  require(tz.rank() == 2, "supcon_loss expects [B,d] embeddings");
  const size_t bs = tz.dim(0), d = tz.dim(1);
  require(labels.size() == bs, "supcon_loss label count mismatch");
  if (tau <= 0.0) throw ConfigError("supcon_loss temperature must be > 0");
  if (bs < 2)
    throw DegenerateInputError(
        "supcon_loss needs at least two samples so every anchor has a "
        "contrast set");

  // Pairwise similarities s_ij = z_i . z_j.
  std::vector<double> sim(bs * bs, 0.0);
  for (size_t i = 0; i < bs; ++i)
    for (size_t j = 0; j < bs; ++j) {
      double acc = 0.0;
      for (size_t t = 0; t < d; ++t)
        acc += tz.values[i * d + t] * tz.values[j * d + t];
      sim[i * bs + j] = acc;
    }

  std::vector<size_t> pos_count(bs, 0);
  size_t kept = 0;
  for (size_t i = 0; i < bs; ++i) {
    for (size_t j = 0; j < bs; ++j)
      if (j != i && labels[j] == labels[i]) ++pos_count[i];
    if (pos_count[i] > 0) ++kept;
  }
  if (kept == 0) {
    warnings_.push_back(
        "supcon_loss: no anchor has a positive; batch contributes 0");
    Node out;
    out.value = Tensor({1}, {0.0});
    out.inputs = {z};
    out.requires_grad = nodes_[z].requires_grad;
    return push(std::move(out));
  }

  // Loss and the pair-gradient matrix G in one sweep.
  std::vector<double> gmat(bs * bs, 0.0);
  const double inv_kept = 1.0 / static_cast<double>(kept);
  double loss = 0.0;
  for (size_t i = 0; i < bs; ++i) {
    if (pos_count[i] == 0) continue;
    double mx = -1e300;
    for (size_t a = 0; a < bs; ++a)
      if (a != i) mx = std::max(mx, sim[i * bs + a] / tau);
    double denom = 0.0;
    for (size_t a = 0; a < bs; ++a)
      if (a != i) denom += std::exp(sim[i * bs + a] / tau - mx);
    const double lse = mx + std::log(denom);
    double pos_mean = 0.0;
    for (size_t p = 0; p < bs; ++p)
      if (p != i && labels[p] == labels[i]) pos_mean += sim[i * bs + p] / tau;
    pos_mean /= static_cast<double>(pos_count[i]);
    loss += inv_kept * (lse - pos_mean);
    for (size_t a = 0; a < bs; ++a) {
      if (a == i) continue;
      const double soft = std::exp(sim[i * bs + a] / tau - mx) / denom;
      const double ind =
          labels[a] == labels[i]
              ? 1.0 / static_cast<double>(pos_count[i])
              : 0.0;
      gmat[i * bs + a] = inv_kept / tau * (soft - ind);
    }
  }
  if (!std::isfinite(loss)) throw NumericError("supcon_loss diverged");

  Node out;
  out.value = Tensor({1}, {loss});
  out.inputs = {z};
  out.requires_grad = nodes_[z].requires_grad;
  out.backward_fn = [z, bs, d, gmat](Graph& g, Node& self) {
    Node& nz = g.node(z);
    if (!nz.requires_grad) return;
    const double up = self.grad.values[0];
    // dZ = (G + G^T) Z since s_ij = z_i.z_j touches rows i and j.
    for (size_t i = 0; i < bs; ++i)
      for (size_t j = 0; j < bs; ++j) {
        const double coeff = gmat[i * bs + j] + gmat[j * bs + i];
        if (coeff == 0.0) continue;
        for (size_t t = 0; t < d; ++t)
          nz.grad.values[i * d + t] +=
              up * coeff * nz.value.values[j * d + t];
      }
  };
  return push(std::move(out));
}

Graph::NodeId Graph::domain_con_loss(NodeId z_target,
                                     const std::vector<int>& pseudo,
                                     NodeId z_source,
                                     const std::vector<int>& labels_s,
                                     double tau) {
  const Tensor& tt = nodes_.at(z_target).value;
  const Tensor& ts = nodes_.at(z_source).value;
  require(tt.rank() == 2 && ts.rank() == 2,
          "domain_con_loss expects 2-D embedding batches");
  require(tt.dim(1) == ts.dim(1), "domain_con_loss embedding dims differ");
  const size_t bt = tt.dim(0), bs = ts.dim(0), d = tt.dim(1);
  require(pseudo.size() == bt && labels_s.size() == bs,
          "domain_con_loss label count mismatch");
  if (tau <= 0.0)
    throw ConfigError("domain_con_loss temperature must be > 0");
  if (bt == 0 || bs == 0)
    throw DegenerateInputError(
        "domain_con_loss requires non-empty target and source batches");

  std::vector<double> sim(bt * bs, 0.0);
  for (size_t i = 0; i < bt; ++i)
    for (size_t j = 0; j < bs; ++j) {
      double acc = 0.0;
      for (size_t t = 0; t < d; ++t)
        acc += tt.values[i * d + t] * ts.values[j * d + t];
      sim[i * bs + j] = acc;
    }

  std::vector<size_t> pos_count(bt, 0);
  size_t kept = 0;
  for (size_t i = 0; i < bt; ++i) {
    for (size_t j = 0; j < bs; ++j)
      if (labels_s[j] == pseudo[i]) ++pos_count[i];
    if (pos_count[i] > 0) ++kept;
  }
  if (kept == 0) {
    warnings_.push_back(
        "domain_con_loss: no target anchor has a source positive; batch "
        "contributes 0");
    Node out;
    out.value = Tensor({1}, {0.0});
    out.inputs = {z_target, z_source};
    out.requires_grad =
        nodes_[z_target].requires_grad || nodes_[z_source].requires_grad;
    return push(std::move(out));
  }

  std::vector<double> gmat(bt * bs, 0.0);
  const double inv_kept = 1.0 / static_cast<double>(kept);
  double loss = 0.0;
  for (size_t i = 0; i < bt; ++i) {
    if (pos_count[i] == 0) continue;
    double mx = -1e300;
    for (size_t j = 0; j < bs; ++j) mx = std::max(mx, sim[i * bs + j] / tau);
    double denom = 0.0;
    for (size_t j = 0; j < bs; ++j)
      denom += std::exp(sim[i * bs + j] / tau - mx);
    const double lse = mx + std::log(denom);
    double pos_mean = 0.0;
    for (size_t j = 0; j < bs; ++j)
      if (labels_s[j] == pseudo[i]) pos_mean += sim[i * bs + j] / tau;
    pos_mean /= static_cast<double>(pos_count[i]);
    loss += inv_kept * (lse - pos_mean);
    for (size_t j = 0; j < bs; ++j) {
      const double soft = std::exp(sim[i * bs + j] / tau - mx) / denom;
      const double ind = labels_s[j] == pseudo[i]
                             ? 1.0 / static_cast<double>(pos_count[i])
                             : 0.0;
      gmat[i * bs + j] = inv_kept / tau * (soft - ind);
    }
  }
  if (!std::isfinite(loss)) throw NumericError("domain_con_loss diverged");

  Node out;
  out.value = Tensor({1}, {loss});
  out.inputs = {z_target, z_source};
  out.requires_grad =
      nodes_[z_target].requires_grad || nodes_[z_source].requires_grad;
  out.backward_fn = [z_target, z_source, bt, bs, d, gmat](Graph& g,
                                                          Node& self) {
    Node& nt = g.node(z_target);
    Node& ns = g.node(z_source);
    const double up = self.grad.values[0];
    if (nt.requires_grad) {
      for (size_t i = 0; i < bt; ++i)
        for (size_t j = 0; j < bs; ++j) {
          const double coeff = gmat[i * bs + j];
          if (coeff == 0.0) continue;
          for (size_t t = 0; t < d; ++t)
            nt.grad.values[i * d + t] +=
                up * coeff * ns.value.values[j * d + t];
        }
    }
    if (ns.requires_grad) {
      for (size_t i = 0; i < bt; ++i)
        for (size_t j = 0; j < bs; ++j) {
          const double coeff = gmat[i * bs + j];
          if (coeff == 0.0) continue;
          for (size_t t = 0; t < d; ++t)
            ns.grad.values[j * d + t] +=
                up * coeff * nt.value.values[i * d + t];
        }
    }
  };
  return push(std::move(out));
}

Graph::NodeId Graph::weighted_sum(NodeId x, const Tensor& weights) {
  const Tensor& tx = nodes_.at(x).value;
  require(tx.same_shape(weights), "weighted_sum shape mismatch");
  double acc = 0.0;
  for (size_t i = 0; i < tx.numel(); ++i)
    acc += tx.values[i] * weights.values[i];

  Node out;
  out.value = Tensor({1}, {acc});
  out.inputs = {x};
  out.requires_grad = nodes_[x].requires_grad;
  out.backward_fn = [x, weights](Graph& g, Node& self) {
    Node& nx = g.node(x);
    if (!nx.requires_grad) return;
    for (size_t i = 0; i < weights.numel(); ++i)
      nx.grad.values[i] += self.grad.values[0] * weights.values[i];
  };
  return push(std::move(out));
}

Graph::NodeId Graph::combine(NodeId a, NodeId b, double lambda) {
  if (lambda < 0.0 || lambda > 1.0)
    throw ConfigError("combine() weight must lie in [0,1]");
  const Tensor& ta = nodes_.at(a).value;
  const Tensor& tb = nodes_.at(b).value;
  require(ta.numel() == 1 && tb.numel() == 1,
          "combine() expects scalar loss nodes");

  Node out;
  out.value =
      Tensor({1}, {lambda * ta.values[0] + (1.0 - lambda) * tb.values[0]});
  out.inputs = {a, b};
  out.requires_grad = nodes_[a].requires_grad || nodes_[b].requires_grad;
  out.backward_fn = [a, b, lambda](Graph& g, Node& self) {
    Node& na = g.node(a);
    Node& nb = g.node(b);
    if (na.requires_grad)
      na.grad.values[0] += lambda * self.grad.values[0];
    if (nb.requires_grad)
      nb.grad.values[0] += (1.0 - lambda) * self.grad.values[0];
  };
  return push(std::move(out));
}

}  // namespace efl::nnet
