#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "revamp/sr/model.hpp"

namespace revamp::sr {

// One window as the model consumes it: ids and reality flags from the data
// window, mean category embeddings and relative index matrices precomputed
// against the frozen tables.
struct WindowInput {
  std::vector<int> poi_ids;
  std::vector<bool> real;
  Tensor mu_app, mu_poi;  // N x D constants, pad rows zero
  relenc::RelMatrices rel;
};

// Optional capture of per-block attention internals, indexed [block][head].
// Scores are post-scale, pre-mask.
struct Trace {
  std::vector<std::vector<Tensor>> scores;
  std::vector<std::vector<Tensor>> alphas;
  Tensor z;
};

// Combined key/value relative encoding stacks (N x N x D), the sum of the
// enabled channels' table rows gathered by their index matrices.
struct RelStacks {
  NodeId app_key = kNoNode, app_val = kNoNode;
  NodeId poi_key = kNoNode, poi_val = kNoNode;
  NodeId time_key = kNoNode, time_val = kNoNode;
  NodeId key_sum = kNoNode, val_sum = kNoNode;
};

namespace detail {

inline std::vector<std::size_t> flat_indices(const std::vector<int>& m, const char* channel) {
  std::vector<std::size_t> idx(m.size());
  for (std::size_t i = 0; i < m.size(); ++i) {
    if (m[i] < 0)
      throw UsageError(std::string("relative ") + channel + " index is negative");
    idx[i] = static_cast<std::size_t>(m[i]);
  }
  return idx;
}

}  // namespace detail

inline RelStacks retrieve_relative(Graph& g, const Bound& b, const SrConfig& cfg,
                                   const relenc::RelMatrices& rel) {
  const std::size_t n = rel.n;
  RelStacks s;
  auto combine = [&](NodeId& sum, NodeId piece) {
    sum = sum == kNoNode ? piece : g.add(sum, piece);
  };
  if (cfg.use_app) {
    auto idx = detail::flat_indices(rel.app, "app");
    s.app_key = g.lookup(b.rel_app_key, idx, {n, n});
    s.app_val = g.lookup(b.rel_app_val, idx, {n, n});
    combine(s.key_sum, s.app_key);
    combine(s.val_sum, s.app_val);
  }
  if (cfg.use_poi) {
    auto idx = detail::flat_indices(rel.poi, "poi");
    s.poi_key = g.lookup(b.rel_poi_key, idx, {n, n});
    s.poi_val = g.lookup(b.rel_poi_val, idx, {n, n});
    combine(s.key_sum, s.poi_key);
    combine(s.val_sum, s.poi_val);
  }
  if (cfg.use_time) {
    auto idx = detail::flat_indices(rel.time, "time");
    s.time_key = g.lookup(b.rel_time_key, idx, {n, n});
    s.time_val = g.lookup(b.rel_time_val, idx, {n, n});
    combine(s.key_sum, s.time_key);
    combine(s.val_sum, s.time_val);
  }
  return s;
}

// Exclusion mask for the attention softmax: future keys, pad keys and rows
// of pad queries are all shut out (a fully masked row softmaxes to zeros).
inline Tensor attention_mask(const std::vector<bool>& real) {
  const std::size_t n = real.size();
  Tensor mask({n, n});
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j)
      mask.at(i, j) = (j > i || !real[j] || !real[i]) ? 1.0 : 0.0;
  return mask;
}

// Causal self-attention stack over one window; returns the final N x D
// representation node.
inline NodeId forward_window(Graph& g, const Bound& b, const SrConfig& cfg,
                             const WindowInput& w, Trace* trace = nullptr) {
  const std::size_t n = cfg.window, d = cfg.dim;
  const std::size_t heads = cfg.heads, dh = cfg.head_dim();
  if (w.poi_ids.size() != n || w.real.size() != n)
    throw DimensionError("forward_window: window size != configured N");
  if (w.rel.n != n) throw DimensionError("forward_window: relative matrices sized differently");
  if (w.mu_app.shape != std::vector<std::size_t>{n, d} ||
      w.mu_poi.shape != std::vector<std::size_t>{n, d})
    throw DimensionError("forward_window: mean embedding shape mismatch");

  std::vector<std::size_t> ids(n);
  for (std::size_t i = 0; i < n; ++i) {
    if (w.poi_ids[i] < 0 || w.poi_ids[i] > cfg.pad_id())
      throw UsageError("forward_window: POI id outside table");
    ids[i] = static_cast<std::size_t>(w.poi_ids[i]);
  }

  NodeId mask_id = g.constant(attention_mask(w.real));
  Tensor mu_bar({n, d});
  for (std::size_t i = 0; i < mu_bar.numel(); ++i)
    mu_bar.data[i] = w.mu_app.data[i] + w.mu_poi.data[i];
  NodeId mu_bar_id = g.constant(std::move(mu_bar));

  RelStacks rel = retrieve_relative(g, b, cfg, w.rel);
  const double scale = 1.0 / std::sqrt(static_cast<double>(dh));

  NodeId h = g.lookup(b.poi_table, ids, {n});
  if (trace) {
    trace->scores.assign(cfg.blocks, {});
    trace->alphas.assign(cfg.blocks, {});
  }

  for (std::size_t r = 0; r < cfg.blocks; ++r) {
    const BoundBlock& blk = b.blocks[r];
    NodeId x1 = g.add_row(g.mul_row(g.layer_norm_core(h, kLayerNormEps), blk.ln1_scale),
                          blk.ln1_bias);
    NodeId q = g.matmul(x1, blk.w_q);
    NodeId k = g.matmul(x1, blk.w_k);
    NodeId v = g.matmul(x1, blk.w_v);
    if (cfg.use_abs) {
      k = g.add(k, b.pos_key);
      v = g.add(v, b.pos_val);
    }
    v = g.add(v, mu_bar_id);

    NodeId attn = kNoNode;
    for (std::size_t hh = 0; hh < heads; ++hh) {
      const std::size_t from = hh * dh, to = (hh + 1) * dh;
      NodeId qh = heads == 1 ? q : g.slice_last(q, from, to);
      NodeId kh = heads == 1 ? k : g.slice_last(k, from, to);
      NodeId vh = heads == 1 ? v : g.slice_last(v, from, to);
      NodeId sc = g.matmul_nt(qh, kh);
      if (rel.key_sum != kNoNode) {
        NodeId stack = heads == 1 ? rel.key_sum : g.slice_last(rel.key_sum, from, to);
        sc = g.add(sc, g.pairwise_dot(qh, stack));
      }
      sc = g.scalar_mul(sc, scale);
      NodeId al = g.softmax_masked(sc, mask_id);
      NodeId zh = g.matmul(al, vh);
      if (rel.val_sum != kNoNode) {
        NodeId stack = heads == 1 ? rel.val_sum : g.slice_last(rel.val_sum, from, to);
        zh = g.add(zh, g.pairwise_mix(al, stack));
      }
      if (trace) {
        trace->scores[r].push_back(g.val(sc));
        trace->alphas[r].push_back(g.val(al));
      }
      attn = attn == kNoNode ? zh : g.concat_last(attn, zh);
    }
    h = g.add(h, g.dropout(attn, cfg.dropout));

    NodeId x2 = g.add_row(g.mul_row(g.layer_norm_core(h, kLayerNormEps), blk.ln2_scale),
                          blk.ln2_bias);
    NodeId ffn = g.add_row(
        g.matmul(g.relu(g.add_row(g.matmul(x2, blk.ffn_w1), blk.ffn_b1)), blk.ffn_w2),
        blk.ffn_b2);
    h = g.add(h, g.dropout(ffn, cfg.dropout));
  }
  if (trace) trace->z = g.val(h);
  return h;
}

// Inference convenience: run one window against frozen-in-place parameters
// and hand back the final representation values.
inline Tensor forward_values(ModelParams& m, const WindowInput& w, Trace* trace = nullptr) {
  Graph g;
  Bound b = bind(g, m);
  NodeId z = forward_window(g, b, m.cfg, w, trace);
  return g.val(z);
}

// Dot products between one representation row and candidate POI embeddings.
inline std::vector<Real> predict_scores(const Tensor& z, std::size_t query_pos,
                                        const std::vector<int>& candidates,
                                        const ModelParams& m) {
  if (z.rank() != 2 || z.cols() != m.cfg.dim)
    throw DimensionError("predict_scores: representation shape mismatch");
  if (query_pos >= z.rows()) throw UsageError("predict_scores: query position out of range");
  std::vector<Real> out;
  out.reserve(candidates.size());
  for (int c : candidates) {
    if (c < 0 || c >= static_cast<int>(m.cfg.num_pois))
      throw UsageError("predict_scores: candidate " + std::to_string(c) +
                       " is pad or out of range");
    Real acc = 0.0;
    for (std::size_t k = 0; k < m.cfg.dim; ++k)
      acc += z.at(query_pos, k) * m.poi_table.value.at(static_cast<std::size_t>(c), k);
    out.push_back(acc);
  }
  return out;
}

// Per-slot supervision: the next check-in's POI id (or -1 when the slot has
// no successor), one sampled negative POI, and the mean category embeddings
// of the true and one sampled negative category per head.
struct WindowTargets {
  std::vector<int> pos_poi;
  std::vector<int> neg_poi;
  Tensor pos_mu_app, pos_mu_poi;  // N x D, zero rows where no target
  Tensor neg_mu_app, neg_mu_poi;
};

// Binary cross-entropy over the three heads of one window:
// recommendation on POI embeddings plus kappa-weighted app and POI category
// prediction against mean category embeddings. The L2 penalty is a separate
// per-step term (see l2_penalty).
inline NodeId loss_sr_window(Graph& g, const Bound& b, const SrConfig& cfg,
                             const WindowInput& w, const WindowTargets& t,
                             Trace* trace = nullptr) {
  const std::size_t n = cfg.window;
  if (t.pos_poi.size() != n || t.neg_poi.size() != n)
    throw DimensionError("loss_sr_window: target size != window");
  NodeId z = forward_window(g, b, cfg, w, trace);

  Tensor maskv({n});
  std::vector<std::size_t> pos_ids(n, 0), neg_ids(n, 0);
  for (std::size_t i = 0; i < n; ++i) {
    if (t.pos_poi[i] < 0) continue;
    if (!w.real[i]) throw UsageError("loss_sr_window: target at a pad slot");
    if (t.pos_poi[i] >= static_cast<int>(cfg.num_pois) || t.neg_poi[i] < 0 ||
        t.neg_poi[i] >= static_cast<int>(cfg.num_pois))
      throw UsageError("loss_sr_window: target POI outside range");
    maskv.data[i] = 1.0;
    pos_ids[i] = static_cast<std::size_t>(t.pos_poi[i]);
    neg_ids[i] = static_cast<std::size_t>(t.neg_poi[i]);
  }
  NodeId mask_id = g.constant(std::move(maskv));

  auto bce = [&](NodeId pos_rows, NodeId neg_rows) {
    NodeId ps = g.dot(g.log_sigmoid(g.rows_dot(z, pos_rows)), mask_id);
    NodeId ns = g.dot(g.log_sigmoid(g.scalar_mul(g.rows_dot(z, neg_rows), -1.0)), mask_id);
    return g.scalar_mul(g.add(ps, ns), -1.0);
  };

  NodeId rec = bce(g.lookup(b.poi_table, pos_ids, {n}), g.lookup(b.poi_table, neg_ids, {n}));
  NodeId app = bce(g.constant(t.pos_mu_app), g.constant(t.neg_mu_app));
  NodeId poi = bce(g.constant(t.pos_mu_poi), g.constant(t.neg_mu_poi));
  return g.add(rec, g.scalar_mul(g.add(app, poi), cfg.kappa));
}

}  // namespace revamp::sr
