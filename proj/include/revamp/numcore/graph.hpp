#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <string>
#include <utility>
#include <vector>

#include "revamp/common.hpp"
#include "revamp/numcore/tensor.hpp"

namespace revamp::nc {

using NodeId = std::size_t;

enum class Op : std::uint8_t {
  kLeaf,
  kAdd,
  kAddRow,        // matrix + broadcast row vector
  kMulRow,        // matrix * broadcast row vector (elementwise)
  kScalarMul,
  kMatMul,        // A(m,k) x B(k,n)
  kMatMulNT,      // A(m,k) x B(n,k)^T
  kConcatLast,
  kSliceLast,
  kRelu,
  kSigmoid,
  kLog,
  kLogSigmoid,
  kSoftmax,       // last axis; optional exclusion mask as second input
  kMean,          // one axis of a rank-2 tensor
  kLookup,        // embedding rows by integer index array
  kLayerNormCore, // (x - mean) / sqrt(var + eps) along last axis
  kDot,           // full contraction to a {1} scalar
  kRowsDot,       // rowwise dot of two equal-shape matrices -> {rows}
  kSquaredError,  // sum((a-b)^2) -> {1}
  kPairwiseDot,   // q(R,D) . s(R,C,D) -> (R,C)
  kPairwiseMix,   // w(R,C) . s(R,C,D) -> (R,D)
  kDropout,
  kReshape,
};

// Gradients keyed by node id. backward() fills an entry for every
// requires-grad leaf (zeros if the leaf never influenced the loss).
struct GradMap {
  std::vector<Tensor> grads;

  bool has(NodeId id) const { return id < grads.size() && !grads[id].shape.empty(); }

  const Tensor& at(NodeId id) const {
    if (!has(id)) throw UsageError("GradMap: no gradient recorded for node " + std::to_string(id));
    return grads[id];
  }
};

// Dynamic reverse-mode tape. Build a scalar loss with the op methods, then
// call backward() once; the tape is consumed. Ops validate shapes and reject
// non-finite outputs immediately so a NaN is caught where it is born.
class Graph {
 public:
  explicit Graph(bool training = false, std::uint64_t dropout_seed = 0)
      : training_(training), rng_(dropout_seed) {}

  bool training() const { return training_; }
  std::size_t size() const { return nodes_.size(); }

  const Tensor& val(NodeId id) const { return nodes_.at(id).value; }

  // Leaf honoring t.requires_grad (frozen tensors enter as constants).
  NodeId input(Tensor t) {
    bool rg = t.requires_grad;
    return push(Op::kLeaf, {}, std::move(t), rg);
  }

  NodeId constant(Tensor t) {
    t.requires_grad = false;
    return push(Op::kLeaf, {}, std::move(t), false);
  }

  NodeId add(NodeId a, NodeId b) {
    const Tensor& x = val(a);
    const Tensor& y = val(b);
    if (!x.same_shape(y))
      throw DimensionError("add: shape mismatch " + x.shape_str() + " vs " + y.shape_str());
    Tensor out = x;
    out.requires_grad = false;
    for (std::size_t i = 0; i < out.numel(); ++i) out.data[i] += y.data[i];
    return push(Op::kAdd, {a, b}, std::move(out), rg(a) || rg(b));
  }

  NodeId add_row(NodeId m, NodeId row) {
    const Tensor& x = val(m);
    const Tensor& v = val(row);
    require(x.rank() == 2, "add_row: matrix must be rank 2");
    require(v.rank() == 2 && v.shape[0] == 1 && v.shape[1] == x.shape[1],
            "add_row: row must be 1 x cols");
    Tensor out = clone_data(x);
    for (std::size_t i = 0; i < x.shape[0]; ++i)
      for (std::size_t j = 0; j < x.shape[1]; ++j) out.at(i, j) += v.data[j];
    return push(Op::kAddRow, {m, row}, std::move(out), rg(m) || rg(row));
  }

  NodeId mul_row(NodeId m, NodeId row) {
    const Tensor& x = val(m);
    const Tensor& v = val(row);
    require(x.rank() == 2, "mul_row: matrix must be rank 2");
    require(v.rank() == 2 && v.shape[0] == 1 && v.shape[1] == x.shape[1],
            "mul_row: row must be 1 x cols");
    Tensor out = clone_data(x);
    for (std::size_t i = 0; i < x.shape[0]; ++i)
      for (std::size_t j = 0; j < x.shape[1]; ++j) out.at(i, j) *= v.data[j];
    return push(Op::kMulRow, {m, row}, std::move(out), rg(m) || rg(row));
  }

  NodeId scalar_mul(NodeId a, double c) {
    Tensor out = clone_data(val(a));
    for (Real& v : out.data) v *= c;
    NodeId id = push(Op::kScalarMul, {a}, std::move(out), rg(a));
    nodes_[id].aux = {c};
    return id;
  }

  NodeId matmul(NodeId a, NodeId b) {
    const Tensor& x = val(a);
    const Tensor& y = val(b);
    require(x.rank() == 2 && y.rank() == 2, "matmul: both operands must be rank 2");
    if (x.shape[1] != y.shape[0])
      throw DimensionError("matmul: inner dims " + x.shape_str() + " vs " + y.shape_str());
    Tensor out({x.shape[0], y.shape[1]});
    const std::size_t m = x.shape[0], k = x.shape[1], n = y.shape[1];
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t p = 0; p < k; ++p) {
        Real xv = x.data[i * k + p];
        if (xv == 0.0) continue;
        const Real* yrow = &y.data[p * n];
        Real* orow = &out.data[i * n];
        for (std::size_t j = 0; j < n; ++j) orow[j] += xv * yrow[j];
      }
    return push(Op::kMatMul, {a, b}, std::move(out), rg(a) || rg(b));
  }

  NodeId matmul_nt(NodeId a, NodeId b) {
    const Tensor& x = val(a);
    const Tensor& y = val(b);
    require(x.rank() == 2 && y.rank() == 2, "matmul_nt: both operands must be rank 2");
    if (x.shape[1] != y.shape[1])
      throw DimensionError("matmul_nt: inner dims " + x.shape_str() + " vs " + y.shape_str());
    const std::size_t m = x.shape[0], k = x.shape[1], n = y.shape[0];
    Tensor out({m, n});
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t j = 0; j < n; ++j) {
        Real acc = 0.0;
        const Real* xr = &x.data[i * k];
        const Real* yr = &y.data[j * k];
        for (std::size_t p = 0; p < k; ++p) acc += xr[p] * yr[p];
        out.data[i * n + j] = acc;
      }
    return push(Op::kMatMulNT, {a, b}, std::move(out), rg(a) || rg(b));
  }

  NodeId concat_last(NodeId a, NodeId b) {
    const Tensor& x = val(a);
    const Tensor& y = val(b);
    require(x.rank() == y.rank() && x.rank() >= 1, "concat_last: rank mismatch");
    for (std::size_t i = 0; i + 1 < x.rank(); ++i)
      require(x.shape[i] == y.shape[i], "concat_last: leading dims differ");
    std::vector<std::size_t> s = x.shape;
    const std::size_t wa = x.shape.back(), wb = y.shape.back();
    s.back() = wa + wb;
    Tensor out(s);
    const std::size_t lead = x.numel() / wa;
    for (std::size_t r = 0; r < lead; ++r) {
      for (std::size_t j = 0; j < wa; ++j) out.data[r * (wa + wb) + j] = x.data[r * wa + j];
      for (std::size_t j = 0; j < wb; ++j) out.data[r * (wa + wb) + wa + j] = y.data[r * wb + j];
    }
    return push(Op::kConcatLast, {a, b}, std::move(out), rg(a) || rg(b));
  }

  NodeId slice_last(NodeId a, std::size_t from, std::size_t to) {
    const Tensor& x = val(a);
    require(x.rank() >= 1, "slice_last: rank 0 input");
    const std::size_t w = x.shape.back();
    require(from < to && to <= w, "slice_last: bad range");
    std::vector<std::size_t> s = x.shape;
    s.back() = to - from;
    Tensor out(s);
    const std::size_t lead = x.numel() / w, ww = to - from;
    for (std::size_t r = 0; r < lead; ++r)
      for (std::size_t j = 0; j < ww; ++j) out.data[r * ww + j] = x.data[r * w + from + j];
    NodeId id = push(Op::kSliceLast, {a}, std::move(out), rg(a));
    nodes_[id].iaux = {from, to};
    return id;
  }

  NodeId relu(NodeId a) {
    Tensor out = clone_data(val(a));
    for (Real& v : out.data) v = v > 0.0 ? v : 0.0;
    return push(Op::kRelu, {a}, std::move(out), rg(a));
  }

  NodeId sigmoid(NodeId a) {
    Tensor out = clone_data(val(a));
    for (Real& v : out.data) v = sigmoid_scalar(v);
    return push(Op::kSigmoid, {a}, std::move(out), rg(a));
  }

  NodeId log(NodeId a) {
    Tensor out = clone_data(val(a));
    for (Real& v : out.data) v = std::log(v);
    return push(Op::kLog, {a}, std::move(out), rg(a));
  }

  // log(sigmoid(x)) computed stably; the composition through log() would
  // hit -inf near x = -745.
  NodeId log_sigmoid(NodeId a) {
    Tensor out = clone_data(val(a));
    for (Real& v : out.data) v = v >= 0.0 ? -std::log1p(std::exp(-v)) : v - std::log1p(std::exp(v));
    return push(Op::kLogSigmoid, {a}, std::move(out), rg(a));
  }

  NodeId softmax(NodeId a) { return softmax_impl(a, static_cast<NodeId>(-1)); }

  // mask entries != 0 are excluded: they come out exactly 0 and a fully
  // masked row is defined to be all zeros (keeps pad-query rows inert).
  NodeId softmax_masked(NodeId a, NodeId mask) {
    require(val(a).same_shape(val(mask)), "softmax_masked: mask shape mismatch");
    return softmax_impl(a, mask);
  }

  NodeId mean(NodeId a, std::size_t axis) {
    const Tensor& x = val(a);
    require(x.rank() == 2, "mean: rank-2 input required");
    require(axis < 2, "mean: axis out of range");
    const std::size_t r = x.shape[0], c = x.shape[1];
    Tensor out(axis == 0 ? std::vector<std::size_t>{c} : std::vector<std::size_t>{r});
    if (axis == 0) {
      for (std::size_t i = 0; i < r; ++i)
        for (std::size_t j = 0; j < c; ++j) out.data[j] += x.at(i, j);
      for (Real& v : out.data) v /= static_cast<Real>(r);
    } else {
      for (std::size_t i = 0; i < r; ++i) {
        Real acc = 0.0;
        for (std::size_t j = 0; j < c; ++j) acc += x.at(i, j);
        out.data[i] = acc / static_cast<Real>(c);
      }
    }
    NodeId id = push(Op::kMean, {a}, std::move(out), rg(a));
    nodes_[id].iaux = {axis};
    return id;
  }

  // Gathers table rows; idx_shape gives the layout of the index array and the
  // output shape is idx_shape + [D]. Backward scatter-adds into the table.
  NodeId lookup(NodeId table, const std::vector<std::size_t>& idx,
                std::vector<std::size_t> idx_shape) {
    const Tensor& t = val(table);
    require(t.rank() == 2, "lookup: table must be rank 2");
    if (Tensor::count(idx_shape) != idx.size())
      throw DimensionError("lookup: index count does not match index shape");
    const std::size_t rows = t.shape[0], d = t.shape[1];
    for (std::size_t i : idx)
      if (i >= rows)
        throw UsageError("lookup: index " + std::to_string(i) + " out of range (rows=" +
                         std::to_string(rows) + ")");
    std::vector<std::size_t> s = std::move(idx_shape);
    s.push_back(d);
    Tensor out(s);
    for (std::size_t i = 0; i < idx.size(); ++i)
      for (std::size_t j = 0; j < d; ++j) out.data[i * d + j] = t.data[idx[i] * d + j];
    NodeId id = push(Op::kLookup, {table}, std::move(out), rg(table));
    nodes_[id].iaux = idx;
    return id;
  }

  // Normalization core of layer norm: (x - mean) / sqrt(var + eps) per row
  // of the last axis. Scale and shift are separate mul_row/add_row ops.
  NodeId layer_norm_core(NodeId a, double eps) {
    const Tensor& x = val(a);
    require(x.rank() >= 1, "layer_norm_core: rank 0 input");
    const std::size_t w = x.shape.back();
    require(w >= 1, "layer_norm_core: empty last axis");
    const std::size_t lead = x.numel() / w;
    Tensor out = clone_data(x);
    std::vector<double> inv_std(lead);
    for (std::size_t r = 0; r < lead; ++r) {
      Real* row = &out.data[r * w];
      Real mu = 0.0;
      for (std::size_t j = 0; j < w; ++j) mu += row[j];
      mu /= static_cast<Real>(w);
      Real var = 0.0;
      for (std::size_t j = 0; j < w; ++j) {
        Real dvv = row[j] - mu;
        var += dvv * dvv;
      }
      var /= static_cast<Real>(w);
      Real is = 1.0 / std::sqrt(var + eps);
      inv_std[r] = is;
      for (std::size_t j = 0; j < w; ++j) row[j] = (row[j] - mu) * is;
    }
    NodeId id = push(Op::kLayerNormCore, {a}, std::move(out), rg(a));
    nodes_[id].aux = std::move(inv_std);
    return id;
  }

  NodeId dot(NodeId a, NodeId b) {
    const Tensor& x = val(a);
    const Tensor& y = val(b);
    if (!x.same_shape(y))
      throw DimensionError("dot: shape mismatch " + x.shape_str() + " vs " + y.shape_str());
    Real acc = 0.0;
    for (std::size_t i = 0; i < x.numel(); ++i) acc += x.data[i] * y.data[i];
    return push(Op::kDot, {a, b}, Tensor::scalar(acc), rg(a) || rg(b));
  }

  NodeId rows_dot(NodeId a, NodeId b) {
    const Tensor& x = val(a);
    const Tensor& y = val(b);
    require(x.rank() == 2 && x.same_shape(y), "rows_dot: equal rank-2 shapes required");
    const std::size_t r = x.shape[0], c = x.shape[1];
    Tensor out({r});
    for (std::size_t i = 0; i < r; ++i) {
      Real acc = 0.0;
      for (std::size_t j = 0; j < c; ++j) acc += x.at(i, j) * y.at(i, j);
      out.data[i] = acc;
    }
    return push(Op::kRowsDot, {a, b}, std::move(out), rg(a) || rg(b));
  }

  NodeId squared_error(NodeId a, NodeId b) {
    const Tensor& x = val(a);
    const Tensor& y = val(b);
    if (!x.same_shape(y))
      throw DimensionError("squared_error: shape mismatch");
    Real acc = 0.0;
    for (std::size_t i = 0; i < x.numel(); ++i) {
      Real dvv = x.data[i] - y.data[i];
      acc += dvv * dvv;
    }
    return push(Op::kSquaredError, {a, b}, Tensor::scalar(acc), rg(a) || rg(b));
  }

  NodeId pairwise_dot(NodeId q, NodeId s) {
    const Tensor& x = val(q);
    const Tensor& y = val(s);
    require(x.rank() == 2 && y.rank() == 3, "pairwise_dot: want (R,D) and (R,C,D)");
    require(x.shape[0] == y.shape[0] && x.shape[1] == y.shape[2],
            "pairwise_dot: shape mismatch");
    const std::size_t r = y.shape[0], c = y.shape[1], d = y.shape[2];
    Tensor out({r, c});
    for (std::size_t i = 0; i < r; ++i)
      for (std::size_t j = 0; j < c; ++j) {
        Real acc = 0.0;
        const Real* xr = &x.data[i * d];
        const Real* yr = &y.data[(i * c + j) * d];
        for (std::size_t k = 0; k < d; ++k) acc += xr[k] * yr[k];
        out.at(i, j) = acc;
      }
    return push(Op::kPairwiseDot, {q, s}, std::move(out), rg(q) || rg(s));
  }

  NodeId pairwise_mix(NodeId w, NodeId s) {
    const Tensor& x = val(w);
    const Tensor& y = val(s);
    require(x.rank() == 2 && y.rank() == 3, "pairwise_mix: want (R,C) and (R,C,D)");
    require(x.shape[0] == y.shape[0] && x.shape[1] == y.shape[1],
            "pairwise_mix: shape mismatch");
    const std::size_t r = y.shape[0], c = y.shape[1], d = y.shape[2];
    Tensor out({r, d});
    for (std::size_t i = 0; i < r; ++i)
      for (std::size_t j = 0; j < c; ++j) {
        Real wv = x.at(i, j);
        if (wv == 0.0) continue;
        const Real* yr = &y.data[(i * c + j) * d];
        Real* orow = &out.data[i * d];
        for (std::size_t k = 0; k < d; ++k) orow[k] += wv * yr[k];
      }
    return push(Op::kPairwiseMix, {w, s}, std::move(out), rg(w) || rg(s));
  }

  // Inverted dropout: train mode scales kept entries by 1/(1-p) so eval is a
  // plain identity with no rescaling and no RNG draws.
  NodeId dropout(NodeId a, double p) {
    if (p < 0.0 || p >= 1.0) throw ConfigError("dropout: p must be in [0, 1)");
    Tensor out = clone_data(val(a));
    std::vector<double> mult;
    if (training_ && p > 0.0) {
      mult.resize(out.numel());
      const double keep = 1.0 / (1.0 - p);
      for (std::size_t i = 0; i < out.numel(); ++i) {
        mult[i] = rng_.uniform() < p ? 0.0 : keep;
        out.data[i] *= mult[i];
      }
    }
    NodeId id = push(Op::kDropout, {a}, std::move(out), rg(a));
    nodes_[id].aux = std::move(mult);
    return id;
  }

  NodeId reshape(NodeId a, std::vector<std::size_t> s) {
    const Tensor& x = val(a);
    if (Tensor::count(s) != x.numel()) throw DimensionError("reshape: element count mismatch");
    Tensor out = clone_data(x);
    out.shape = std::move(s);
    return push(Op::kReshape, {a}, std::move(out), rg(a));
  }

  // Reverse pass from a scalar loss. Consumes the tape: the graph is reset
  // before returning, so node values are gone but the returned map keeps the
  // leaf ids recorded during construction valid as keys.
  GradMap backward(NodeId loss) {
    if (loss >= nodes_.size()) throw UsageError("backward: unknown node");
    if (val(loss).numel() != 1) throw UsageError("backward: loss must be scalar");
    GradMap gm;
    gm.grads.resize(nodes_.size());
    // Every requires-grad leaf gets a slot up front, zeros if unreached.
    for (std::size_t i = 0; i < nodes_.size(); ++i)
      if (nodes_[i].op == Op::kLeaf && nodes_[i].requires_grad)
        gm.grads[i] = Tensor(nodes_[i].value.shape);
    if (nodes_[loss].requires_grad) {
      Tensor seed(val(loss).shape);
      seed.data[0] = 1.0;
      accumulate(gm, loss, seed);
      for (std::size_t i = nodes_.size(); i-- > 0;) {
        Node& n = nodes_[i];
        if (!n.requires_grad || !gm.has(i) || n.op == Op::kLeaf) continue;
        backward_node(gm, i);
      }
    }
    // Drop op-node gradients; callers only consume leaf entries.
    for (std::size_t i = 0; i < nodes_.size(); ++i)
      if (nodes_[i].op != Op::kLeaf) gm.grads[i] = Tensor();
    reset();
    return gm;
  }

  void reset() { nodes_.clear(); }

 private:
  struct Node {
    Op op = Op::kLeaf;
    std::vector<NodeId> inputs;
    Tensor value;
    bool requires_grad = false;
    std::vector<double> aux;        // op-specific saved doubles
    std::vector<std::size_t> iaux;  // op-specific saved indices
  };

  std::vector<Node> nodes_;
  bool training_ = false;
  Rng rng_;

  static void require(bool ok, const char* msg) {
    if (!ok) throw DimensionError(msg);
  }

  static Real sigmoid_scalar(Real x) {
    return x >= 0.0 ? 1.0 / (1.0 + std::exp(-x)) : std::exp(x) / (1.0 + std::exp(x));
  }

  static Tensor clone_data(const Tensor& t) {
    Tensor out = t;
    out.requires_grad = false;
    return out;
  }

  bool rg(NodeId id) const { return nodes_[id].requires_grad; }

  NodeId push(Op op, std::vector<NodeId> inputs, Tensor value, bool requires_grad) {
    if (!value.all_finite())
      throw NumericError(std::string("non-finite value produced by op ") +
                         std::to_string(static_cast<int>(op)));
    Node n;
    n.op = op;
    n.inputs = std::move(inputs);
    n.value = std::move(value);
    n.requires_grad = requires_grad;
    nodes_.push_back(std::move(n));
    return nodes_.size() - 1;
  }

  NodeId softmax_impl(NodeId a, NodeId mask) {
    const Tensor& x = val(a);
    require(x.rank() >= 1, "softmax: rank 0 input");
    const std::size_t w = x.shape.back();
    const std::size_t lead = x.numel() / w;
    const Tensor* m = mask == static_cast<NodeId>(-1) ? nullptr : &val(mask);
    Tensor out(x.shape);
    for (std::size_t r = 0; r < lead; ++r) {
      const Real* row = &x.data[r * w];
      Real* orow = &out.data[r * w];
      Real mx = -std::numeric_limits<Real>::infinity();
      for (std::size_t j = 0; j < w; ++j)
        if ((!m || m->data[r * w + j] == 0.0) && row[j] > mx) mx = row[j];
      if (mx == -std::numeric_limits<Real>::infinity()) continue;  // fully masked -> zeros
      Real sum = 0.0;
      for (std::size_t j = 0; j < w; ++j) {
        if (m && m->data[r * w + j] != 0.0) {
          orow[j] = 0.0;
          continue;
        }
        orow[j] = std::exp(row[j] - mx);
        sum += orow[j];
      }
      for (std::size_t j = 0; j < w; ++j) orow[j] /= sum;
    }
    std::vector<NodeId> in = {a};
    bool g = rg(a);
    if (m) in.push_back(mask);  // excluded from differentiation
    return push(Op::kSoftmax, std::move(in), std::move(out), g);
  }

  void accumulate(GradMap& gm, NodeId id, const Tensor& g) {
    if (!nodes_[id].requires_grad) return;
    Tensor& slot = gm.grads[id];
    if (slot.shape.empty()) slot = Tensor(nodes_[id].value.shape);
    for (std::size_t i = 0; i < g.numel(); ++i) slot.data[i] += g.data[i];
  }

  void backward_node(GradMap& gm, NodeId id) {
    Node& n = nodes_[id];
    const Tensor& g = gm.grads[id];
    const Tensor& out = n.value;
    switch (n.op) {
      case Op::kLeaf:
        break;
      case Op::kAdd: {
        accumulate(gm, n.inputs[0], g);
        accumulate(gm, n.inputs[1], g);
        break;
      }
      case Op::kAddRow: {
        accumulate(gm, n.inputs[0], g);
        if (rg(n.inputs[1])) {
          const std::size_t r = out.shape[0], c = out.shape[1];
          Tensor gr({1, c});
          for (std::size_t i = 0; i < r; ++i)
            for (std::size_t j = 0; j < c; ++j) gr.data[j] += g.at(i, j);
          accumulate(gm, n.inputs[1], gr);
        }
        break;
      }
      case Op::kMulRow: {
        const Tensor& x = val(n.inputs[0]);
        const Tensor& v = val(n.inputs[1]);
        const std::size_t r = x.shape[0], c = x.shape[1];
        if (rg(n.inputs[0])) {
          Tensor gx(x.shape);
          for (std::size_t i = 0; i < r; ++i)
            for (std::size_t j = 0; j < c; ++j) gx.at(i, j) = g.at(i, j) * v.data[j];
          accumulate(gm, n.inputs[0], gx);
        }
        if (rg(n.inputs[1])) {
          Tensor gv({1, c});
          for (std::size_t i = 0; i < r; ++i)
            for (std::size_t j = 0; j < c; ++j) gv.data[j] += g.at(i, j) * x.at(i, j);
          accumulate(gm, n.inputs[1], gv);
        }
        break;
      }
      case Op::kScalarMul: {
        Tensor gx = g;
        for (Real& v : gx.data) v *= n.aux[0];
        accumulate(gm, n.inputs[0], gx);
        break;
      }
      case Op::kMatMul: {
        const Tensor& x = val(n.inputs[0]);
        const Tensor& y = val(n.inputs[1]);
        const std::size_t m = x.shape[0], k = x.shape[1], c = y.shape[1];
        if (rg(n.inputs[0])) {
          Tensor gx(x.shape);
          for (std::size_t i = 0; i < m; ++i)
            for (std::size_t j = 0; j < c; ++j) {
              Real gv = g.data[i * c + j];
              if (gv == 0.0) continue;
              const Real* yrow = &y.data[0] + j;
              for (std::size_t p = 0; p < k; ++p) gx.data[i * k + p] += gv * yrow[p * c];
            }
          accumulate(gm, n.inputs[0], gx);
        }
        if (rg(n.inputs[1])) {
          Tensor gy(y.shape);
          for (std::size_t i = 0; i < m; ++i)
            for (std::size_t p = 0; p < k; ++p) {
              Real xv = x.data[i * k + p];
              if (xv == 0.0) continue;
              const Real* grow = &g.data[i * c];
              Real* gyr = &gy.data[p * c];
              for (std::size_t j = 0; j < c; ++j) gyr[j] += xv * grow[j];
            }
          accumulate(gm, n.inputs[1], gy);
        }
        break;
      }
      case Op::kMatMulNT: {
        const Tensor& x = val(n.inputs[0]);
        const Tensor& y = val(n.inputs[1]);
        const std::size_t m = x.shape[0], k = x.shape[1], c = y.shape[0];
        if (rg(n.inputs[0])) {
          Tensor gx(x.shape);
          for (std::size_t i = 0; i < m; ++i)
            for (std::size_t j = 0; j < c; ++j) {
              Real gv = g.data[i * c + j];
              if (gv == 0.0) continue;
              const Real* yr = &y.data[j * k];
              Real* gxr = &gx.data[i * k];
              for (std::size_t p = 0; p < k; ++p) gxr[p] += gv * yr[p];
            }
          accumulate(gm, n.inputs[0], gx);
        }
        if (rg(n.inputs[1])) {
          Tensor gy(y.shape);
          for (std::size_t i = 0; i < m; ++i)
            for (std::size_t j = 0; j < c; ++j) {
              Real gv = g.data[i * c + j];
              if (gv == 0.0) continue;
              const Real* xr = &x.data[i * k];
              Real* gyr = &gy.data[j * k];
              for (std::size_t p = 0; p < k; ++p) gyr[p] += gv * xr[p];
            }
          accumulate(gm, n.inputs[1], gy);
        }
        break;
      }
      case Op::kConcatLast: {
        const Tensor& x = val(n.inputs[0]);
        const Tensor& y = val(n.inputs[1]);
        const std::size_t wa = x.shape.back(), wb = y.shape.back();
        const std::size_t lead = x.numel() / wa;
        if (rg(n.inputs[0])) {
          Tensor gx(x.shape);
          for (std::size_t r = 0; r < lead; ++r)
            for (std::size_t j = 0; j < wa; ++j)
              gx.data[r * wa + j] = g.data[r * (wa + wb) + j];
          accumulate(gm, n.inputs[0], gx);
        }
        if (rg(n.inputs[1])) {
          Tensor gy(y.shape);
          for (std::size_t r = 0; r < lead; ++r)
            for (std::size_t j = 0; j < wb; ++j)
              gy.data[r * wb + j] = g.data[r * (wa + wb) + wa + j];
          accumulate(gm, n.inputs[1], gy);
        }
        break;
      }
      case Op::kSliceLast: {
        const Tensor& x = val(n.inputs[0]);
        const std::size_t w = x.shape.back();
        const std::size_t from = n.iaux[0], to = n.iaux[1], ww = to - from;
        const std::size_t lead = x.numel() / w;
        Tensor gx(x.shape);
        for (std::size_t r = 0; r < lead; ++r)
          for (std::size_t j = 0; j < ww; ++j)
            gx.data[r * w + from + j] = g.data[r * ww + j];
        accumulate(gm, n.inputs[0], gx);
        break;
      }
      case Op::kRelu: {
        const Tensor& x = val(n.inputs[0]);
        Tensor gx = g;
        for (std::size_t i = 0; i < gx.numel(); ++i)
          if (x.data[i] <= 0.0) gx.data[i] = 0.0;
        accumulate(gm, n.inputs[0], gx);
        break;
      }
      case Op::kSigmoid: {
        Tensor gx = g;
        for (std::size_t i = 0; i < gx.numel(); ++i)
          gx.data[i] *= out.data[i] * (1.0 - out.data[i]);
        accumulate(gm, n.inputs[0], gx);
        break;
      }
      case Op::kLog: {
        const Tensor& x = val(n.inputs[0]);
        Tensor gx = g;
        for (std::size_t i = 0; i < gx.numel(); ++i) gx.data[i] /= x.data[i];
        accumulate(gm, n.inputs[0], gx);
        break;
      }
      case Op::kLogSigmoid: {
        const Tensor& x = val(n.inputs[0]);
        Tensor gx = g;
        for (std::size_t i = 0; i < gx.numel(); ++i)
          gx.data[i] *= sigmoid_scalar(-x.data[i]);  // d/dx log sigma(x) = sigma(-x)
        accumulate(gm, n.inputs[0], gx);
        break;
      }
      case Op::kSoftmax: {
        const std::size_t w = out.shape.back();
        const std::size_t lead = out.numel() / w;
        Tensor gx(out.shape);
        for (std::size_t r = 0; r < lead; ++r) {
          const Real* y = &out.data[r * w];
          const Real* gr = &g.data[r * w];
          Real dotgy = 0.0;
          for (std::size_t j = 0; j < w; ++j) dotgy += gr[j] * y[j];
          for (std::size_t j = 0; j < w; ++j) gx.data[r * w + j] = y[j] * (gr[j] - dotgy);
        }
        accumulate(gm, n.inputs[0], gx);
        break;
      }
      case Op::kMean: {
        const Tensor& x = val(n.inputs[0]);
        const std::size_t r = x.shape[0], c = x.shape[1];
        Tensor gx(x.shape);
        if (n.iaux[0] == 0) {
          for (std::size_t i = 0; i < r; ++i)
            for (std::size_t j = 0; j < c; ++j) gx.at(i, j) = g.data[j] / static_cast<Real>(r);
        } else {
          for (std::size_t i = 0; i < r; ++i)
            for (std::size_t j = 0; j < c; ++j) gx.at(i, j) = g.data[i] / static_cast<Real>(c);
        }
        accumulate(gm, n.inputs[0], gx);
        break;
      }
      case Op::kLookup: {
        const Tensor& t = val(n.inputs[0]);
        const std::size_t d = t.shape[1];
        Tensor gt(t.shape);
        for (std::size_t i = 0; i < n.iaux.size(); ++i) {
          const Real* gr = &g.data[i * d];
          Real* tr = &gt.data[n.iaux[i] * d];
          for (std::size_t j = 0; j < d; ++j) tr[j] += gr[j];
        }
        accumulate(gm, n.inputs[0], gt);
        break;
      }
      case Op::kLayerNormCore: {
        // out holds xhat; aux holds 1/sqrt(var+eps) per row.
        const std::size_t w = out.shape.back();
        const std::size_t lead = out.numel() / w;
        Tensor gx(out.shape);
        for (std::size_t r = 0; r < lead; ++r) {
          const Real* y = &out.data[r * w];
          const Real* gr = &g.data[r * w];
          Real mg = 0.0, mgy = 0.0;
          for (std::size_t j = 0; j < w; ++j) {
            mg += gr[j];
            mgy += gr[j] * y[j];
          }
          mg /= static_cast<Real>(w);
          mgy /= static_cast<Real>(w);
          const Real is = n.aux[r];
          for (std::size_t j = 0; j < w; ++j)
            gx.data[r * w + j] = is * (gr[j] - mg - y[j] * mgy);
        }
        accumulate(gm, n.inputs[0], gx);
        break;
      }
      case Op::kDot: {
        const Tensor& x = val(n.inputs[0]);
        const Tensor& y = val(n.inputs[1]);
        const Real gs = g.data[0];
        if (rg(n.inputs[0])) {
          Tensor gx = y;
          gx.requires_grad = false;
          for (Real& v : gx.data) v *= gs;
          accumulate(gm, n.inputs[0], gx);
        }
        if (rg(n.inputs[1])) {
          Tensor gy = x;
          gy.requires_grad = false;
          for (Real& v : gy.data) v *= gs;
          accumulate(gm, n.inputs[1], gy);
        }
        break;
      }
      case Op::kRowsDot: {
        const Tensor& x = val(n.inputs[0]);
        const Tensor& y = val(n.inputs[1]);
        const std::size_t r = x.shape[0], c = x.shape[1];
        if (rg(n.inputs[0])) {
          Tensor gx(x.shape);
          for (std::size_t i = 0; i < r; ++i)
            for (std::size_t j = 0; j < c; ++j) gx.at(i, j) = g.data[i] * y.at(i, j);
          accumulate(gm, n.inputs[0], gx);
        }
        if (rg(n.inputs[1])) {
          Tensor gy(y.shape);
          for (std::size_t i = 0; i < r; ++i)
            for (std::size_t j = 0; j < c; ++j) gy.at(i, j) = g.data[i] * x.at(i, j);
          accumulate(gm, n.inputs[1], gy);
        }
        break;
      }
      case Op::kSquaredError: {
        const Tensor& x = val(n.inputs[0]);
        const Tensor& y = val(n.inputs[1]);
        const Real gs = g.data[0];
        if (rg(n.inputs[0])) {
          Tensor gx(x.shape);
          for (std::size_t i = 0; i < x.numel(); ++i)
            gx.data[i] = gs * 2.0 * (x.data[i] - y.data[i]);
          accumulate(gm, n.inputs[0], gx);
        }
        if (rg(n.inputs[1])) {
          Tensor gy(y.shape);
          for (std::size_t i = 0; i < y.numel(); ++i)
            gy.data[i] = gs * 2.0 * (y.data[i] - x.data[i]);
          accumulate(gm, n.inputs[1], gy);
        }
        break;
      }
      case Op::kPairwiseDot: {
        const Tensor& q = val(n.inputs[0]);
        const Tensor& s = val(n.inputs[1]);
        const std::size_t r = s.shape[0], c = s.shape[1], d = s.shape[2];
        if (rg(n.inputs[0])) {
          Tensor gq(q.shape);
          for (std::size_t i = 0; i < r; ++i)
            for (std::size_t j = 0; j < c; ++j) {
              Real gv = g.at(i, j);
              if (gv == 0.0) continue;
              const Real* sr = &s.data[(i * c + j) * d];
              Real* gqr = &gq.data[i * d];
              for (std::size_t k = 0; k < d; ++k) gqr[k] += gv * sr[k];
            }
          accumulate(gm, n.inputs[0], gq);
        }
        if (rg(n.inputs[1])) {
          Tensor gsT(s.shape);
          for (std::size_t i = 0; i < r; ++i)
            for (std::size_t j = 0; j < c; ++j) {
              Real gv = g.at(i, j);
              if (gv == 0.0) continue;
              const Real* qr = &q.data[i * d];
              Real* gsr = &gsT.data[(i * c + j) * d];
              for (std::size_t k = 0; k < d; ++k) gsr[k] += gv * qr[k];
            }
          accumulate(gm, n.inputs[1], gsT);
        }
        break;
      }
      case Op::kPairwiseMix: {
        const Tensor& w = val(n.inputs[0]);
        const Tensor& s = val(n.inputs[1]);
        const std::size_t r = s.shape[0], c = s.shape[1], d = s.shape[2];
        if (rg(n.inputs[0])) {
          Tensor gw(w.shape);
          for (std::size_t i = 0; i < r; ++i)
            for (std::size_t j = 0; j < c; ++j) {
              Real acc = 0.0;
              const Real* gr = &g.data[i * d];
              const Real* sr = &s.data[(i * c + j) * d];
              for (std::size_t k = 0; k < d; ++k) acc += gr[k] * sr[k];
              gw.at(i, j) = acc;
            }
          accumulate(gm, n.inputs[0], gw);
        }
        if (rg(n.inputs[1])) {
          Tensor gsT(s.shape);
          for (std::size_t i = 0; i < r; ++i)
            for (std::size_t j = 0; j < c; ++j) {
              Real wv = w.at(i, j);
              if (wv == 0.0) continue;
              const Real* gr = &g.data[i * d];
              Real* gsr = &gsT.data[(i * c + j) * d];
              for (std::size_t k = 0; k < d; ++k) gsr[k] += wv * gr[k];
            }
          accumulate(gm, n.inputs[1], gsT);
        }
        break;
      }
      case Op::kDropout: {
        Tensor gx = g;
        if (!n.aux.empty())
          for (std::size_t i = 0; i < gx.numel(); ++i) gx.data[i] *= n.aux[i];
        accumulate(gm, n.inputs[0], gx);
        break;
      }
      case Op::kReshape: {
        Tensor gx = g;
        gx.shape = val(n.inputs[0]).shape;
        accumulate(gm, n.inputs[0], gx);
        break;
      }
    }
  }
};

}  // namespace revamp::nc
