#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <functional>
#include <string>
#include <utility>
#include <vector>

#include "revamp/common.hpp"
#include "revamp/data/corpus.hpp"
#include "revamp/data/sampling.hpp"
#include "revamp/ei/pretrained.hpp"
#include "revamp/numcore/adam.hpp"
#include "revamp/numcore/graph.hpp"
#include "revamp/numcore/tensor.hpp"

namespace revamp::ei {

using nc::Graph;
using nc::NodeId;
using nc::Parameter;
using nc::Tensor;

enum class MfActivation { kRelu, kIdentity };

struct EiConfig {
  std::size_t dim = 64;
  double gamma = 0.5;       // weight of the interaction channel vs the semantic channel
  double lr = 1e-3;
  std::size_t epochs = 50;
  std::size_t batch_size = 128;  // check-ins per step
  std::uint64_t seed = 1;
  MfActivation mf_activation = MfActivation::kRelu;
  double early_stop_rel = 1e-5;  // stop when epoch loss improves less than this, relatively
  std::function<void(std::size_t, double)> epoch_logger;

  void validate() const {
    if (dim == 0) throw ConfigError("ei: dim must be positive");
    if (gamma < 0.0 || gamma > 1.0) throw ConfigError("ei: gamma must be in [0, 1]");
    if (lr <= 0.0) throw ConfigError("ei: lr must be positive");
    if (batch_size == 0) throw ConfigError("ei: batch size must be positive");
  }
};

// Frozen product of EI training: the category embedding tables handed to the
// sequential model. requires_grad stays false from here on.
struct CategoryEmbeddingTable {
  Tensor app;  // |A| x D
  Tensor poi;  // |S| x D
  std::size_t dim = 0;
  bool frozen = false;
};

// Trainable state: the two tables, the interaction head and the two
// dimension-normalizing projections for pretrained vectors.
struct EiParams {
  Parameter app_table, poi_table;      // A, S
  Parameter mf_weight, mf_bias;        // w_v (1 x 2D), b_v ({1})
  Parameter app_proj_w, app_proj_b;    // w_1 (D_ext x D), b_1 (1 x D)
  Parameter poi_proj_w, poi_proj_b;    // w_2, b_2

  static EiParams init(std::size_t num_app_cats, std::size_t num_poi_cats, std::size_t dim,
                       std::size_t ext_dim, std::uint64_t seed) {
    auto filled = [&](const std::string& name, std::vector<std::size_t> shape, double scale) {
      Parameter p{name, Tensor(std::move(shape)), false};
      Rng rng(derive_seed(seed, "init", fnv1a(name)));
      for (auto& v : p.value.data) v = rng.normal() * scale;
      p.value.requires_grad = true;
      return p;
    };
    EiParams e;
    e.app_table = filled("ei.app_table", {num_app_cats, dim}, 0.1);
    e.poi_table = filled("ei.poi_table", {num_poi_cats, dim}, 0.1);
    e.mf_weight = filled("ei.mf_weight", {1, 2 * dim}, 1.0 / std::sqrt(2.0 * dim));
    e.mf_bias = filled("ei.mf_bias", {1}, 0.0);
    e.app_proj_w = filled("ei.app_proj_w", {ext_dim, dim}, 1.0 / std::sqrt(double(ext_dim)));
    e.app_proj_b = filled("ei.app_proj_b", {1, dim}, 0.0);
    e.poi_proj_w = filled("ei.poi_proj_w", {ext_dim, dim}, 1.0 / std::sqrt(double(ext_dim)));
    e.poi_proj_b = filled("ei.poi_proj_b", {1, dim}, 0.0);
    return e;
  }

  std::vector<Parameter*> all() {
    return {&app_table, &poi_table, &mf_weight, &mf_bias,
            &app_proj_w, &app_proj_b, &poi_proj_w, &poi_proj_b};
  }
};

// Per-batch leaf bindings.
struct EiBound {
  NodeId app, poi, mfw, mfb, apw, apb, ppw, ppb;
  std::vector<std::pair<Parameter*, NodeId>> pairs;
};

inline EiBound bind(Graph& g, EiParams& p) {
  EiBound b;
  b.app = g.input(p.app_table.value);
  b.poi = g.input(p.poi_table.value);
  b.mfw = g.input(p.mf_weight.value);
  b.mfb = g.input(p.mf_bias.value);
  b.apw = g.input(p.app_proj_w.value);
  b.apb = g.input(p.app_proj_b.value);
  b.ppw = g.input(p.poi_proj_w.value);
  b.ppb = g.input(p.poi_proj_b.value);
  b.pairs = {{&p.app_table, b.app}, {&p.poi_table, b.poi}, {&p.mf_weight, b.mfw},
             {&p.mf_bias, b.mfb},   {&p.app_proj_w, b.apw}, {&p.app_proj_b, b.apb},
             {&p.poi_proj_w, b.ppw}, {&p.poi_proj_b, b.ppb}};
  return b;
}

// Interaction head: act(w_v (a || s) + b_v), a scalar access score for an
// (app category, POI category) pair.
inline NodeId mf_logit(Graph& g, const EiBound& b, int app_cat, int poi_cat,
                       MfActivation act) {
  NodeId a = g.lookup(b.app, {static_cast<std::size_t>(app_cat)}, {1});
  NodeId s = g.lookup(b.poi, {static_cast<std::size_t>(poi_cat)}, {1});
  NodeId pair = g.concat_last(a, s);                       // 1 x 2D
  NodeId score = g.add(g.rows_dot(pair, b.mfw), b.mfb);    // {1}
  return act == MfActivation::kRelu ? g.relu(score) : score;
}

// Convenience value-only evaluation of the head.
inline double mf_logit_value(EiParams& p, int app_cat, int poi_cat, MfActivation act) {
  Graph g;
  EiBound b = bind(g, p);
  return g.val(mf_logit(g, b, app_cat, poi_cat, act)).data[0];
}

using CheckInBatch = std::vector<const data::CheckIn*>;

// One app negative and one POI negative per true (a, s) pair, in batch order.
struct MfNegatives {
  std::vector<std::pair<int, int>> pairs;  // (a', s')
};

inline MfNegatives draw_mf_negatives(const CheckInBatch& batch, std::size_t num_app_cats,
                                     std::size_t num_poi_cats, Rng& rng) {
  MfNegatives neg;
  for (const data::CheckIn* e : batch)
    for (std::size_t i = 0; i < e->app_cats.size() * e->poi_cats.size(); ++i) {
      int an = data::sample_negative_category(num_app_cats, e->app_cats, rng);
      int sn = data::sample_negative_category(num_poi_cats, e->poi_cats, rng);
      neg.pairs.emplace_back(an, sn);
    }
  return neg;
}

// Cross-entropy over true pairs against one corrupted-app and one
// corrupted-POI pair each. Plain sum, no batch normalization.
inline NodeId loss_mf(Graph& g, const EiBound& b, const CheckInBatch& batch,
                      const MfNegatives& neg, MfActivation act) {
  NodeId total = g.constant(Tensor::scalar(0.0));
  std::size_t k = 0;
  for (const data::CheckIn* e : batch)
    for (int a : e->app_cats)
      for (int s : e->poi_cats) {
        const auto [an, sn] = neg.pairs.at(k++);
        NodeId pos = g.log_sigmoid(mf_logit(g, b, a, s, act));
        NodeId neg_s = g.log_sigmoid(g.scalar_mul(mf_logit(g, b, a, sn, act), -1.0));
        NodeId neg_a = g.log_sigmoid(g.scalar_mul(mf_logit(g, b, an, s, act), -1.0));
        total = g.add(total, g.add(pos, g.add(neg_s, neg_a)));
      }
  if (k != neg.pairs.size()) throw UsageError("loss_mf: negative count mismatch");
  return g.scalar_mul(total, -1.0);
}

// Pretrained vectors resolved to constants, one row per category id.
struct ResolvedPretrained {
  std::vector<Tensor> app;  // 1 x D_ext each
  std::vector<Tensor> poi;
  std::size_t ext_dim = 0;

  static ResolvedPretrained resolve(const PretrainedVectors& pv, std::size_t num_app_cats,
                                    std::size_t num_poi_cats) {
    ResolvedPretrained r;
    r.ext_dim = pv.dim;
    auto row = [&](const std::string& name) {
      std::vector<double> v = pv.get(name);
      std::size_t n = v.size();
      return Tensor::from({1, n}, std::move(v));
    };
    for (std::size_t a = 0; a < num_app_cats; ++a) r.app.push_back(row(app_cat_name(int(a))));
    for (std::size_t s = 0; s < num_poi_cats; ++s) r.poi.push_back(row(poi_cat_name(int(s))));
    return r;
  }
};

// Mean squared distance between each table row and the projected pretrained
// vector of the same category, summed over the true pairs of the batch and
// averaged over the batch's check-ins.
inline NodeId loss_bert(Graph& g, const EiBound& b, const CheckInBatch& batch,
                        const ResolvedPretrained& pre) {
  if (batch.empty()) return g.constant(Tensor::scalar(0.0));
  NodeId total = g.constant(Tensor::scalar(0.0));
  for (const data::CheckIn* e : batch)
    for (int a : e->app_cats)
      for (int s : e->poi_cats) {
        NodeId arow = g.lookup(b.app, {static_cast<std::size_t>(a)}, {1});
        NodeId aphi = g.relu(g.add(g.matmul(g.constant(pre.app.at(a)), b.apw), b.apb));
        NodeId srow = g.lookup(b.poi, {static_cast<std::size_t>(s)}, {1});
        NodeId sphi = g.relu(g.add(g.matmul(g.constant(pre.poi.at(s)), b.ppw), b.ppb));
        total = g.add(total, g.add(g.squared_error(arow, aphi), g.squared_error(srow, sphi)));
      }
  return g.scalar_mul(total, 1.0 / static_cast<double>(batch.size()));
}

// Literal convex combination; both channels are always built so gamma = 0 or
// 1 still yields (zero) gradients for the silenced channel's parameters.
inline NodeId loss_ei(Graph& g, const EiBound& b, const CheckInBatch& batch,
                      const MfNegatives& neg, const ResolvedPretrained& pre,
                      const EiConfig& cfg) {
  NodeId mf = loss_mf(g, b, batch, neg, cfg.mf_activation);
  NodeId bert = loss_bert(g, b, batch, pre);
  return g.add(g.scalar_mul(mf, cfg.gamma), g.scalar_mul(bert, 1.0 - cfg.gamma));
}

// Adam over shuffled check-in batches until the epoch budget or an
// improvement below the early-stop threshold. Returns frozen tables.
inline CategoryEmbeddingTable train_ei(const data::Corpus& corpus, const EiConfig& cfg,
                                       const PretrainedVectors& pretrained,
                                       EiParams* out_params = nullptr) {
  cfg.validate();
  if (corpus.num_app_cats == 0 || corpus.num_poi_cats == 0)
    throw UsageError("train_ei: corpus has no categories");

  EiParams params = EiParams::init(corpus.num_app_cats, corpus.num_poi_cats, cfg.dim,
                                   pretrained.dim, cfg.seed);
  ResolvedPretrained pre =
      ResolvedPretrained::resolve(pretrained, corpus.num_app_cats, corpus.num_poi_cats);

  std::vector<const data::CheckIn*> all;
  for (const auto& u : corpus.users)
    for (const auto& e : u.checkins) all.push_back(&e);

  nc::Adam opt(params.all(), nc::AdamConfig{cfg.lr});
  Rng neg_rng(derive_seed(cfg.seed, "ei-neg"));
  double prev_loss = 0.0;
  bool have_prev = false;
  for (std::size_t epoch = 0; epoch < cfg.epochs && !all.empty(); ++epoch) {
    Rng shuffle_rng(derive_seed(cfg.seed, "ei-shuffle", epoch));
    for (std::size_t i = 0; i + 1 < all.size(); ++i) {
      std::size_t j = i + shuffle_rng.uniform_index(all.size() - i);
      std::swap(all[i], all[j]);
    }
    double epoch_loss = 0.0;
    for (std::size_t start = 0; start < all.size(); start += cfg.batch_size) {
      CheckInBatch batch(all.begin() + start,
                         all.begin() + std::min(all.size(), start + cfg.batch_size));
      MfNegatives neg =
          draw_mf_negatives(batch, corpus.num_app_cats, corpus.num_poi_cats, neg_rng);
      Graph g(true);
      EiBound b = bind(g, params);
      NodeId loss = loss_ei(g, b, batch, neg, pre, cfg);
      epoch_loss += g.val(loss).data[0];
      nc::GradMap gm = g.backward(loss);
      opt.step(b.pairs, gm);
    }
    if (cfg.epoch_logger) cfg.epoch_logger(epoch, epoch_loss);
    if (have_prev && prev_loss - epoch_loss < cfg.early_stop_rel * std::abs(prev_loss)) break;
    prev_loss = epoch_loss;
    have_prev = true;
  }

  if (out_params) *out_params = params;
  CategoryEmbeddingTable table;
  table.app = params.app_table.value;
  table.poi = params.poi_table.value;
  table.app.requires_grad = false;
  table.poi.requires_grad = false;
  table.dim = cfg.dim;
  table.frozen = true;
  return table;
}

// --- checkpoint: magic, version, |A|, |S|, D, then A rows, then S rows ---

namespace detail {

constexpr std::uint32_t kEiMagic = 0x52564549;  // "RVEI"
constexpr std::uint32_t kEiVersion = 1;

template <typename T>
void put(std::ofstream& out, T v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T take(std::ifstream& in) {
  T v{};
  in.read(reinterpret_cast<char*>(&v), sizeof(T));
  if (!in) throw IoError("checkpoint: short read");
  return v;
}

}  // namespace detail

inline void save_ei_checkpoint(const std::string& path, const CategoryEmbeddingTable& t) {
  if (!t.frozen) throw UsageError("save_ei_checkpoint: table is not frozen");
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write checkpoint: " + path);
  detail::put(out, detail::kEiMagic);
  detail::put(out, detail::kEiVersion);
  detail::put(out, static_cast<std::uint32_t>(t.app.shape[0]));
  detail::put(out, static_cast<std::uint32_t>(t.poi.shape[0]));
  detail::put(out, static_cast<std::uint32_t>(t.dim));
  out.write(reinterpret_cast<const char*>(t.app.data.data()),
            static_cast<std::streamsize>(t.app.data.size() * sizeof(double)));
  out.write(reinterpret_cast<const char*>(t.poi.data.data()),
            static_cast<std::streamsize>(t.poi.data.size() * sizeof(double)));
  if (!out) throw IoError("checkpoint write failed: " + path);
}

inline CategoryEmbeddingTable load_ei_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open checkpoint: " + path);
  if (detail::take<std::uint32_t>(in) != detail::kEiMagic)
    throw ParseError("checkpoint: bad magic: " + path);
  if (detail::take<std::uint32_t>(in) != detail::kEiVersion)
    throw ParseError("checkpoint: unsupported version: " + path);
  std::uint32_t na = detail::take<std::uint32_t>(in);
  std::uint32_t ns = detail::take<std::uint32_t>(in);
  std::uint32_t d = detail::take<std::uint32_t>(in);
  CategoryEmbeddingTable t;
  t.dim = d;
  t.frozen = true;
  t.app = Tensor({na, d});
  t.poi = Tensor({ns, d});
  in.read(reinterpret_cast<char*>(t.app.data.data()),
          static_cast<std::streamsize>(t.app.data.size() * sizeof(double)));
  in.read(reinterpret_cast<char*>(t.poi.data.data()),
          static_cast<std::streamsize>(t.poi.data.size() * sizeof(double)));
  if (!in) throw IoError("checkpoint: short read: " + path);
  if (!t.app.all_finite() || !t.poi.all_finite())
    throw NumericError("checkpoint: non-finite embedding values: " + path);
  return t;
}

}  // namespace revamp::ei
