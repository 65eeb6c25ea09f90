#pragma once

#include <cmath>
#include <cstdint>
#include <fstream>
#include <string>
#include <utility>
#include <vector>

#include "revamp/common.hpp"
#include "revamp/ei/initiator.hpp"
#include "revamp/numcore/graph.hpp"
#include "revamp/numcore/tensor.hpp"
#include "revamp/relenc/relative.hpp"

namespace revamp::sr {

using nc::Graph;
using nc::NodeId;
using nc::Parameter;
using nc::Real;
using nc::Tensor;

constexpr NodeId kNoNode = static_cast<NodeId>(-1);
constexpr double kLayerNormEps = 1e-8;

struct SrConfig {
  std::size_t dim = 64;     // D, shared with the category embeddings
  std::size_t window = 200; // N
  std::size_t blocks = 2;   // M_b
  std::size_t heads = 1;
  std::size_t num_pois = 0; // |L|; the table reserves one extra pad row
  std::size_t clip_app = 64;
  std::size_t clip_poi = 64;
  std::size_t clip_time = 64;
  relenc::TimeMode time_mode = relenc::TimeMode::kClippedQuotient;
  bool use_app = true;   // J channel
  bool use_poi = true;   // K channel
  bool use_time = true;  // T channel
  bool use_abs = true;   // absolute positional tables
  double dropout = 0.2;
  double kappa = 0.5;    // weight of the category prediction losses
  double lambda = 0.002; // L2 strength
  std::uint64_t seed = 1;

  void validate() const {
    if (dim == 0) throw ConfigError("sr: dim must be positive");
    if (window == 0) throw ConfigError("sr: window must be positive");
    if (blocks == 0) throw ConfigError("sr: at least one block required");
    if (heads == 0 || dim % heads != 0) throw ConfigError("sr: dim must divide across heads");
    if (num_pois == 0) throw ConfigError("sr: POI count must be positive");
    if (dropout < 0.0 || dropout >= 1.0) throw ConfigError("sr: dropout must be in [0, 1)");
    if (kappa < 0.0) throw ConfigError("sr: kappa must be non-negative");
    if (lambda < 0.0) throw ConfigError("sr: lambda must be non-negative");
  }

  std::size_t head_dim() const { return dim / heads; }
  int pad_id() const { return static_cast<int>(num_pois); }
};

struct BlockParams {
  Parameter w_q, w_k, w_v;
  Parameter ffn_w1, ffn_b1, ffn_w2, ffn_b2;
  Parameter ln1_scale, ln1_bias, ln2_scale, ln2_bias;
};

// All model state. The frozen category tables ride along as constants so a
// checkpoint is self-contained.
struct ModelParams {
  SrConfig cfg;
  Parameter poi_table;                  // (|L|+1) x D, last row = pad, kept zero
  Parameter pos_key, pos_val;           // N x D
  Parameter rel_app_key, rel_app_val;   // (clip_app+1) x D
  Parameter rel_poi_key, rel_poi_val;   // (clip_poi+1) x D
  Parameter rel_time_key, rel_time_val; // (clip_time+1) x D
  std::vector<BlockParams> blocks;
  Tensor cat_app, cat_poi;              // frozen category embeddings, |A| x D and |S| x D

  static ModelParams init(const SrConfig& cfg, const ei::CategoryEmbeddingTable& table) {
    cfg.validate();
    if (!table.frozen) throw UsageError("sr: category table must be frozen before use");
    if (table.dim != cfg.dim)
      throw DimensionError("sr: category embedding dim " + std::to_string(table.dim) +
                           " != model dim " + std::to_string(cfg.dim));

    ModelParams m;
    m.cfg = cfg;
    auto normal = [&](const std::string& name, std::vector<std::size_t> shape, double scale,
                      bool l2) {
      Parameter p{name, Tensor(std::move(shape)), l2};
      Rng rng(derive_seed(cfg.seed, "init", fnv1a(name)));
      for (auto& v : p.value.data) v = rng.normal() * scale;
      p.value.requires_grad = true;
      return p;
    };
    auto fixed = [&](const std::string& name, std::vector<std::size_t> shape, double fill) {
      Parameter p{name, Tensor(std::move(shape), fill), false};
      p.value.requires_grad = true;
      return p;
    };

    const std::size_t d = cfg.dim;
    const double emb = 0.1;
    const double proj = 1.0 / std::sqrt(static_cast<double>(d));

    m.poi_table = normal("sr.poi_table", {cfg.num_pois + 1, d}, emb, true);
    for (std::size_t k = 0; k < d; ++k) m.poi_table.value.at(cfg.num_pois, k) = 0.0;

    m.pos_key = normal("sr.pos_key", {cfg.window, d}, emb, true);
    m.pos_val = normal("sr.pos_val", {cfg.window, d}, emb, true);
    m.rel_app_key = normal("sr.rel_app_key", {cfg.clip_app + 1, d}, emb, true);
    m.rel_app_val = normal("sr.rel_app_val", {cfg.clip_app + 1, d}, emb, true);
    m.rel_poi_key = normal("sr.rel_poi_key", {cfg.clip_poi + 1, d}, emb, true);
    m.rel_poi_val = normal("sr.rel_poi_val", {cfg.clip_poi + 1, d}, emb, true);
    m.rel_time_key = normal("sr.rel_time_key", {cfg.clip_time + 1, d}, emb, true);
    m.rel_time_val = normal("sr.rel_time_val", {cfg.clip_time + 1, d}, emb, true);

    m.blocks.resize(cfg.blocks);
    for (std::size_t r = 0; r < cfg.blocks; ++r) {
      const std::string p = "sr.block" + std::to_string(r) + ".";
      BlockParams& b = m.blocks[r];
      b.w_q = normal(p + "w_q", {d, d}, proj, true);
      b.w_k = normal(p + "w_k", {d, d}, proj, true);
      b.w_v = normal(p + "w_v", {d, d}, proj, true);
      b.ffn_w1 = normal(p + "ffn_w1", {d, d}, proj, true);
      b.ffn_b1 = fixed(p + "ffn_b1", {1, d}, 0.0);
      b.ffn_w2 = normal(p + "ffn_w2", {d, d}, proj, true);
      b.ffn_b2 = fixed(p + "ffn_b2", {1, d}, 0.0);
      b.ln1_scale = fixed(p + "ln1_scale", {1, d}, 1.0);
      b.ln1_bias = fixed(p + "ln1_bias", {1, d}, 0.0);
      b.ln2_scale = fixed(p + "ln2_scale", {1, d}, 1.0);
      b.ln2_bias = fixed(p + "ln2_bias", {1, d}, 0.0);
    }

    m.cat_app = table.app;
    m.cat_poi = table.poi;
    m.cat_app.requires_grad = false;
    m.cat_poi.requires_grad = false;
    return m;
  }

  // Tensors the optimizer sees, honoring the channel flags: a disabled
  // channel's tables are neither bound nor updated.
  std::vector<Parameter*> trainable() {
    std::vector<Parameter*> out{&poi_table};
    if (cfg.use_abs) {
      out.push_back(&pos_key);
      out.push_back(&pos_val);
    }
    if (cfg.use_app) {
      out.push_back(&rel_app_key);
      out.push_back(&rel_app_val);
    }
    if (cfg.use_poi) {
      out.push_back(&rel_poi_key);
      out.push_back(&rel_poi_val);
    }
    if (cfg.use_time) {
      out.push_back(&rel_time_key);
      out.push_back(&rel_time_val);
    }
    for (auto& b : blocks)
      for (Parameter* p : {&b.w_q, &b.w_k, &b.w_v, &b.ffn_w1, &b.ffn_b1, &b.ffn_w2, &b.ffn_b2,
                           &b.ln1_scale, &b.ln1_bias, &b.ln2_scale, &b.ln2_bias})
        out.push_back(p);
    return out;
  }

  // Every named tensor, for serialization (flags do not shrink a checkpoint).
  std::vector<Parameter*> all_tensors() {
    std::vector<Parameter*> out{&poi_table,    &pos_key,      &pos_val,      &rel_app_key,
                                &rel_app_val,  &rel_poi_key,  &rel_poi_val,  &rel_time_key,
                                &rel_time_val};
    for (auto& b : blocks)
      for (Parameter* p : {&b.w_q, &b.w_k, &b.w_v, &b.ffn_w1, &b.ffn_b1, &b.ffn_w2, &b.ffn_b2,
                           &b.ln1_scale, &b.ln1_bias, &b.ln2_scale, &b.ln2_bias})
        out.push_back(p);
    return out;
  }
};

struct BoundBlock {
  NodeId w_q, w_k, w_v;
  NodeId ffn_w1, ffn_b1, ffn_w2, ffn_b2;
  NodeId ln1_scale, ln1_bias, ln2_scale, ln2_bias;
};

// Per-step leaf bindings of the trainable tensors. Disabled channels stay at
// kNoNode and never enter the graph.
struct Bound {
  NodeId poi_table = kNoNode;
  NodeId pos_key = kNoNode, pos_val = kNoNode;
  NodeId rel_app_key = kNoNode, rel_app_val = kNoNode;
  NodeId rel_poi_key = kNoNode, rel_poi_val = kNoNode;
  NodeId rel_time_key = kNoNode, rel_time_val = kNoNode;
  std::vector<BoundBlock> blocks;
  std::vector<std::pair<Parameter*, NodeId>> pairs;
};

inline Bound bind(Graph& g, ModelParams& m) {
  Bound b;
  auto reg = [&](Parameter& p) {
    NodeId id = g.input(p.value);
    b.pairs.emplace_back(&p, id);
    return id;
  };
  b.poi_table = reg(m.poi_table);
  if (m.cfg.use_abs) {
    b.pos_key = reg(m.pos_key);
    b.pos_val = reg(m.pos_val);
  }
  if (m.cfg.use_app) {
    b.rel_app_key = reg(m.rel_app_key);
    b.rel_app_val = reg(m.rel_app_val);
  }
  if (m.cfg.use_poi) {
    b.rel_poi_key = reg(m.rel_poi_key);
    b.rel_poi_val = reg(m.rel_poi_val);
  }
  if (m.cfg.use_time) {
    b.rel_time_key = reg(m.rel_time_key);
    b.rel_time_val = reg(m.rel_time_val);
  }
  for (auto& blk : m.blocks) {
    BoundBlock bb;
    bb.w_q = reg(blk.w_q);
    bb.w_k = reg(blk.w_k);
    bb.w_v = reg(blk.w_v);
    bb.ffn_w1 = reg(blk.ffn_w1);
    bb.ffn_b1 = reg(blk.ffn_b1);
    bb.ffn_w2 = reg(blk.ffn_w2);
    bb.ffn_b2 = reg(blk.ffn_b2);
    bb.ln1_scale = reg(blk.ln1_scale);
    bb.ln1_bias = reg(blk.ln1_bias);
    bb.ln2_scale = reg(blk.ln2_scale);
    bb.ln2_bias = reg(blk.ln2_bias);
    b.blocks.push_back(bb);
  }
  return b;
}

// Frobenius penalty over the bound tensors flagged for weight decay.
inline NodeId l2_penalty(Graph& g, const Bound& b) {
  NodeId total = g.constant(Tensor::scalar(0.0));
  for (const auto& [param, id] : b.pairs)
    if (param->l2) total = g.add(total, g.dot(id, id));
  return total;
}

// --- checkpoint: header + named tensor blocks, all little-endian f64 ---

namespace detail {

constexpr std::uint32_t kSrMagic = 0x52565352;  // "RVSR"
constexpr std::uint32_t kSrVersion = 1;

template <typename T>
void put(std::ofstream& out, T v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T take(std::ifstream& in) {
  T v{};
  in.read(reinterpret_cast<char*>(&v), sizeof(T));
  if (!in) throw IoError("model checkpoint: short read");
  return v;
}

inline void put_tensor(std::ofstream& out, const std::string& name, const Tensor& t) {
  put(out, static_cast<std::uint32_t>(name.size()));
  out.write(name.data(), static_cast<std::streamsize>(name.size()));
  put(out, static_cast<std::uint32_t>(t.rank()));
  for (std::size_t d : t.shape) put(out, static_cast<std::uint32_t>(d));
  out.write(reinterpret_cast<const char*>(t.data.data()),
            static_cast<std::streamsize>(t.data.size() * sizeof(double)));
}

inline std::pair<std::string, Tensor> take_tensor(std::ifstream& in) {
  const std::uint32_t len = take<std::uint32_t>(in);
  if (len > 4096) throw ParseError("model checkpoint: implausible tensor name length");
  std::string name(len, '\0');
  in.read(name.data(), len);
  if (!in) throw IoError("model checkpoint: short read");
  const std::uint32_t ndim = take<std::uint32_t>(in);
  if (ndim > 8) throw ParseError("model checkpoint: implausible tensor rank");
  std::vector<std::size_t> shape(ndim);
  for (auto& d : shape) d = take<std::uint32_t>(in);
  Tensor t(shape);
  in.read(reinterpret_cast<char*>(t.data.data()),
          static_cast<std::streamsize>(t.data.size() * sizeof(double)));
  if (!in) throw IoError("model checkpoint: short read");
  return {std::move(name), std::move(t)};
}

}  // namespace detail

inline void save_sr_checkpoint(const std::string& path, ModelParams& m) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write model checkpoint: " + path);
  detail::put(out, detail::kSrMagic);
  detail::put(out, detail::kSrVersion);
  const SrConfig& c = m.cfg;
  for (std::size_t v : {c.dim, c.window, c.blocks, c.heads, c.num_pois, m.cat_app.rows(),
                        m.cat_poi.rows(), c.clip_app, c.clip_poi, c.clip_time})
    detail::put(out, static_cast<std::uint32_t>(v));
  std::uint32_t flags = 0;
  if (c.time_mode == relenc::TimeMode::kLiteral) flags |= 1u;
  if (c.use_app) flags |= 2u;
  if (c.use_poi) flags |= 4u;
  if (c.use_time) flags |= 8u;
  if (c.use_abs) flags |= 16u;
  detail::put(out, flags);

  auto tensors = m.all_tensors();
  detail::put(out, static_cast<std::uint32_t>(tensors.size() + 2));
  for (Parameter* p : tensors) detail::put_tensor(out, p->name, p->value);
  detail::put_tensor(out, "ei.app_table", m.cat_app);
  detail::put_tensor(out, "ei.poi_table", m.cat_poi);
  if (!out) throw IoError("model checkpoint write failed: " + path);
}

inline ModelParams load_sr_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open model checkpoint: " + path);
  if (detail::take<std::uint32_t>(in) != detail::kSrMagic)
    throw ParseError("model checkpoint: bad magic: " + path);
  if (detail::take<std::uint32_t>(in) != detail::kSrVersion)
    throw ParseError("model checkpoint: unsupported version: " + path);

  SrConfig c;
  c.dim = detail::take<std::uint32_t>(in);
  c.window = detail::take<std::uint32_t>(in);
  c.blocks = detail::take<std::uint32_t>(in);
  c.heads = detail::take<std::uint32_t>(in);
  c.num_pois = detail::take<std::uint32_t>(in);
  const std::uint32_t num_app = detail::take<std::uint32_t>(in);
  const std::uint32_t num_poi_cat = detail::take<std::uint32_t>(in);
  c.clip_app = detail::take<std::uint32_t>(in);
  c.clip_poi = detail::take<std::uint32_t>(in);
  c.clip_time = detail::take<std::uint32_t>(in);
  const std::uint32_t flags = detail::take<std::uint32_t>(in);
  c.time_mode = (flags & 1u) ? relenc::TimeMode::kLiteral : relenc::TimeMode::kClippedQuotient;
  c.use_app = flags & 2u;
  c.use_poi = flags & 4u;
  c.use_time = flags & 8u;
  c.use_abs = flags & 16u;

  ei::CategoryEmbeddingTable table;
  table.dim = c.dim;
  table.frozen = true;
  table.app = Tensor({num_app, c.dim});
  table.poi = Tensor({num_poi_cat, c.dim});
  ModelParams m = ModelParams::init(c, table);

  const std::uint32_t count = detail::take<std::uint32_t>(in);
  auto tensors = m.all_tensors();
  if (count != tensors.size() + 2)
    throw ParseError("model checkpoint: tensor count mismatch: " + path);
  std::size_t next = 0;
  for (std::uint32_t i = 0; i < count; ++i) {
    auto [name, t] = detail::take_tensor(in);
    if (!t.all_finite()) throw NumericError("model checkpoint: non-finite tensor " + name);
    Tensor* dst = nullptr;
    if (name == "ei.app_table") {
      dst = &m.cat_app;
    } else if (name == "ei.poi_table") {
      dst = &m.cat_poi;
    } else {
      if (next >= tensors.size() || tensors[next]->name != name)
        throw ParseError("model checkpoint: unexpected tensor " + name);
      dst = &tensors[next]->value;
      ++next;
    }
    if (dst->shape != t.shape)
      throw DimensionError("model checkpoint: shape mismatch for " + name);
    bool rg = dst->requires_grad;
    *dst = std::move(t);
    dst->requires_grad = rg;
  }
  if (next != tensors.size()) throw ParseError("model checkpoint: missing tensors: " + path);
  return m;
}

}  // namespace revamp::sr
