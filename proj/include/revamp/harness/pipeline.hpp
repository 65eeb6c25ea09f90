#pragma once

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <functional>
#include <string>
#include <unordered_set>
#include <utility>
#include <vector>

#include "revamp/common.hpp"
#include "revamp/data/corpus.hpp"
#include "revamp/data/sampling.hpp"
#include "revamp/data/window.hpp"
#include "revamp/ei/initiator.hpp"
#include "revamp/ei/pretrained.hpp"
#include "revamp/harness/config.hpp"
#include "revamp/harness/eval.hpp"
#include "revamp/numcore/adam.hpp"
#include "revamp/relenc/relative.hpp"
#include "revamp/sr/forward.hpp"
#include "revamp/sr/model.hpp"

namespace revamp::harness {

using nc::Graph;
using nc::Tensor;

// --- training workspace ---

// One user's training window: the train prefix minus its last check-in as
// input, each slot labeled with the next train check-in. Positives are fixed;
// negatives are redrawn every epoch.
struct TrainExample {
  sr::WindowInput input;
  std::vector<int> pos_poi;  // -1 at pad slots
  Tensor pos_mu_app, pos_mu_poi;
  std::vector<std::vector<int>> target_app_cats, target_poi_cats;
  std::unordered_set<int> visited;  // full history; negatives avoid all of it
};

struct Workspace {
  std::vector<TrainExample> examples;
  std::vector<EvalEntry> val_entries;
  std::vector<EvalEntry> test_entries;
};

inline Workspace build_workspace(const SplitCorpus& s, const sr::SrConfig& cfg,
                                 const ei::CategoryEmbeddingTable& table) {
  Workspace ws;
  ws.val_entries = build_eval_entries(s, cfg, table, EvalSplit::kVal);
  ws.test_entries = build_eval_entries(s, cfg, table, EvalSplit::kTest);
  const std::size_t n = cfg.window;
  for (const auto& u : s.users) {
    if (u.train.size() < 2) continue;  // nothing to predict from an empty prefix
    std::vector<data::CheckIn> inputs(u.train.begin(), u.train.end() - 1);
    TrainExample ex;
    ex.input = window_input_for(inputs, cfg, table);
    ex.pos_poi.assign(n, -1);
    ex.pos_mu_app = Tensor({n, cfg.dim});
    ex.pos_mu_poi = Tensor({n, cfg.dim});
    ex.target_app_cats.assign(n, {});
    ex.target_poi_cats.assign(n, {});
    const std::size_t take = std::min(inputs.size(), n);
    const std::size_t offset = n - take;
    const std::size_t first_kept = inputs.size() - take;
    for (std::size_t slot = offset; slot < n; ++slot) {
      const data::CheckIn& target = u.train[first_kept + (slot - offset) + 1];
      ex.pos_poi[slot] = target.poi_id;
      std::vector<nc::Real> ma = relenc::net_embedding(target.app_cats, table.app);
      std::vector<nc::Real> mp = relenc::net_embedding(target.poi_cats, table.poi);
      for (std::size_t k = 0; k < cfg.dim; ++k) {
        ex.pos_mu_app.at(slot, k) = ma[k];
        ex.pos_mu_poi.at(slot, k) = mp[k];
      }
      ex.target_app_cats[slot] = target.app_cats;
      ex.target_poi_cats[slot] = target.poi_cats;
    }
    for (const auto& ci : u.train) ex.visited.insert(ci.poi_id);
    ex.visited.insert(u.val.poi_id);
    ex.visited.insert(u.test.poi_id);
    ws.examples.push_back(std::move(ex));
  }
  return ws;
}

namespace detail {

// Visited-set exclusion when possible. A user who has visited every POI (tiny
// synthetic corpora) falls back to any POI other than the target, so training
// never aborts on a degenerate fixture.
inline int train_negative_poi(std::size_t num_pois, const std::unordered_set<int>& visited,
                              int pos, Rng& rng) {
  if (visited.size() < num_pois) return data::sample_negative_poi(num_pois, visited, rng);
  if (num_pois < 2)
    throw SamplingError("training negatives: corpus has a single POI");
  for (;;) {
    int cand = static_cast<int>(rng.uniform_index(num_pois));
    if (cand != pos) return cand;
  }
}

}  // namespace detail

// Fresh negatives for one example: a POI the user never visits plus one
// category outside each target's set per channel (its embedding row is the
// singleton-mean). Draw order is fixed, so a seeded rng makes this
// reproducible.
inline sr::WindowTargets draw_targets(const TrainExample& ex, const SplitCorpus& s,
                                      const sr::SrConfig& cfg,
                                      const ei::CategoryEmbeddingTable& table, Rng& rng) {
  const std::size_t n = cfg.window;
  sr::WindowTargets t;
  t.pos_poi = ex.pos_poi;
  t.neg_poi.assign(n, -1);
  t.pos_mu_app = ex.pos_mu_app;
  t.pos_mu_poi = ex.pos_mu_poi;
  t.neg_mu_app = Tensor({n, cfg.dim});
  t.neg_mu_poi = Tensor({n, cfg.dim});
  for (std::size_t slot = 0; slot < n; ++slot) {
    if (ex.pos_poi[slot] < 0) continue;
    t.neg_poi[slot] =
        detail::train_negative_poi(s.num_pois, ex.visited, ex.pos_poi[slot], rng);
    int na = data::sample_negative_category(s.num_app_cats, ex.target_app_cats[slot], rng);
    int np = data::sample_negative_category(s.num_poi_cats, ex.target_poi_cats[slot], rng);
    for (std::size_t k = 0; k < cfg.dim; ++k) {
      t.neg_mu_app.at(slot, k) = table.app.at(static_cast<std::size_t>(na), k);
      t.neg_mu_poi.at(slot, k) = table.poi.at(static_cast<std::size_t>(np), k);
    }
  }
  return t;
}

// --- end-to-end pipeline ---

struct EpochLog {
  std::size_t epoch = 0;
  double train_loss = 0.0;
  EvalReport val;
};

struct PipelineResult {
  ei::CategoryEmbeddingTable table;
  sr::ModelParams model;  // best-validation checkpoint
  std::vector<EpochLog> epochs;
  std::size_t best_epoch = 0;
  double best_val_ndcg10 = 0.0;
  EvalReport test;
  RmsProbe rms;
};

struct PipelineHooks {
  std::function<void(std::size_t, double)> ei_epoch;
  std::function<void(std::size_t, double, const EvalReport&)> sr_epoch;
};

inline ei::PretrainedVectors resolve_pretrained_source(const RunConfig& rc) {
  const std::uint64_t fb = derive_seed(rc.seed, "pretrained-fallback");
  if (!rc.pretrained_path.empty()) return ei::PretrainedVectors::load(rc.pretrained_path, fb);
  return ei::PretrainedVectors::fallback_only(rc.pretrained_dim, fb);
}

// Phase one on the train prefixes, freeze, derive windows and relative
// matrices once, then phase two with per-epoch validation; returns the
// checkpoint with the best validation NDCG@10 and its test-set report.
inline PipelineResult train_pipeline(const data::Corpus& corpus, const RunConfig& rc,
                                     const ei::PretrainedVectors* pretrained = nullptr,
                                     const PipelineHooks& hooks = {}) {
  rc.validate();
  SplitCorpus sc = split(corpus);
  if (sc.users.empty()) throw UsageError("train_pipeline: corpus has no users");

  data::Corpus train_only;
  train_only.num_pois = corpus.num_pois;
  train_only.num_app_cats = corpus.num_app_cats;
  train_only.num_poi_cats = corpus.num_poi_cats;
  for (const auto& u : sc.users) train_only.users.push_back({u.user_id, u.train});

  ei::EiConfig ecfg = rc.ei_config();
  if (hooks.ei_epoch) ecfg.epoch_logger = hooks.ei_epoch;
  ei::PretrainedVectors fallback;
  const ei::PretrainedVectors* pv = pretrained;
  if (!pv) {
    fallback = resolve_pretrained_source(rc);
    pv = &fallback;
  }

  PipelineResult res;
  res.table = ei::train_ei(train_only, ecfg, *pv);

  sr::SrConfig scfg = rc.sr_config(corpus.num_pois);
  sr::ModelParams m = sr::ModelParams::init(scfg, res.table);
  Workspace ws = build_workspace(sc, scfg, res.table);

  EvalOptions val_opt;
  val_opt.split = EvalSplit::kVal;
  val_opt.negatives = rc.eval_negatives;
  val_opt.seed = rc.seed;
  val_opt.threads = rc.threads;

  nc::Adam opt(m.trainable(), nc::AdamConfig{rc.sr_lr});
  Rng neg_rng(derive_seed(rc.seed, "sr-neg"));

  sr::ModelParams best = m;
  bool have_best = false;

  std::vector<std::size_t> order(ws.examples.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;

  for (std::size_t epoch = 0; epoch < rc.sr_epochs; ++epoch) {
    Rng shuffle_rng(derive_seed(rc.seed, "sr-shuffle", epoch));
    for (std::size_t i = 0; i + 1 < order.size(); ++i) {
      std::size_t j = i + shuffle_rng.uniform_index(order.size() - i);
      std::swap(order[i], order[j]);
    }

    double epoch_loss = 0.0;
    std::size_t batch_index = 0;
    for (std::size_t start = 0; start < order.size(); start += rc.batch, ++batch_index) {
      const std::size_t stop = std::min(order.size(), start + rc.batch);
      try {
        Graph g(true, derive_seed(rc.seed, "dropout", epoch, batch_index));
        sr::Bound b = sr::bind(g, m);
        nc::NodeId total = sr::kNoNode;
        for (std::size_t i = start; i < stop; ++i) {
          const TrainExample& ex = ws.examples[order[i]];
          sr::WindowTargets t = draw_targets(ex, sc, scfg, res.table, neg_rng);
          nc::NodeId l = sr::loss_sr_window(g, b, scfg, ex.input, t);
          total = total == sr::kNoNode ? l : g.add(total, l);
        }
        if (total == sr::kNoNode) continue;
        total = g.add(total, g.scalar_mul(sr::l2_penalty(g, b), scfg.lambda));
        const double value = g.val(total).data[0];
        if (!std::isfinite(value))
          throw NumericError("non-finite training loss");
        epoch_loss += value;
        nc::GradMap gm = g.backward(total);
        opt.step(b.pairs, gm);
      } catch (const NumericError& e) {
        throw NumericError("sr training diverged at epoch " + std::to_string(epoch) +
                           ", batch " + std::to_string(batch_index) + ": " + e.what());
      }
    }

    EpochLog log;
    log.epoch = epoch;
    log.train_loss = epoch_loss;
    log.val = evaluate_entries(m, ws.val_entries, sc.num_pois, val_opt);
    if (hooks.sr_epoch) hooks.sr_epoch(epoch, epoch_loss, log.val);
    const double score = log.val.ndcg_at_k(10);
    if (!have_best || score > res.best_val_ndcg10) {
      res.best_val_ndcg10 = score;
      res.best_epoch = epoch;
      best = m;
      have_best = true;
    }
    res.epochs.push_back(std::move(log));
  }
  if (!have_best) best = m;  // zero-epoch run keeps the initial parameters

  res.model = std::move(best);
  EvalOptions test_opt = val_opt;
  test_opt.split = EvalSplit::kTest;
  res.test = evaluate_entries(res.model, ws.test_entries, sc.num_pois, test_opt);
  res.rms = category_rms_probe(res.model, sc);
  return res;
}

// --- ablation grid ---

// The three relative channels toggle; absolute positions stay on everywhere.
struct AblationVariant {
  std::string name;
  bool use_app, use_poi, use_time;
};

inline const std::vector<AblationVariant>& ablation_grid() {
  static const std::vector<AblationVariant> grid{
      {"full", true, true, true}, {"-t", false, false, true}, {"-a", true, false, false},
      {"-l", false, true, false}, {"none", false, false, false},
  };
  return grid;
}

struct AblationRun {
  std::string variant;
  PipelineResult result;
};

inline std::vector<AblationRun> run_ablation(const data::Corpus& corpus, const RunConfig& base,
                                             const ei::PretrainedVectors* pretrained = nullptr,
                                             const PipelineHooks& hooks = {}) {
  std::vector<AblationRun> out;
  for (const auto& v : ablation_grid()) {
    RunConfig rc = base;
    rc.use_app = v.use_app;
    rc.use_poi = v.use_poi;
    rc.use_time = v.use_time;
    out.push_back({v.name, train_pipeline(corpus, rc, pretrained, hooks)});
  }
  return out;
}

// --- metrics CSV ---

struct MetricRow {
  std::string variant;
  std::size_t epoch = 0;
  std::string split_name;  // train / val / test
  std::string metric;      // loss / hits / ndcg / mrr
  std::size_t k = 0;       // 0 where the cutoff does not apply
  double value = 0.0;
  std::uint64_t seed = 0;
};

// Shortest round-trip formatting keeps identical runs byte-identical.
inline std::string format_metric_value(double v) {
  char buf[64];
  auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), v);
  if (ec != std::errc{}) throw NumericError("metric value not formattable");
  return std::string(buf, ptr);
}

inline void append_report_rows(std::vector<MetricRow>& out, const EvalReport& r,
                               const std::string& variant, std::size_t epoch,
                               const std::string& split_name, std::uint64_t seed) {
  for (std::size_t i = 0; i < r.ks.size(); ++i)
    out.push_back({variant, epoch, split_name, "hits", r.ks[i], r.hits[i], seed});
  for (std::size_t i = 0; i < r.ks.size(); ++i)
    out.push_back({variant, epoch, split_name, "ndcg", r.ks[i], r.ndcg[i], seed});
  out.push_back({variant, epoch, split_name, "mrr", 0, r.mrr, seed});
}

inline std::vector<MetricRow> pipeline_rows(const PipelineResult& res, const std::string& variant,
                                            std::uint64_t seed) {
  std::vector<MetricRow> rows;
  for (const auto& log : res.epochs) {
    rows.push_back({variant, log.epoch, "train", "loss", 0, log.train_loss, seed});
    append_report_rows(rows, log.val, variant, log.epoch, "val", seed);
  }
  append_report_rows(rows, res.test, variant, res.best_epoch, "test", seed);
  return rows;
}

inline void write_metrics_csv(const std::string& path, const std::vector<MetricRow>& rows) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write metrics csv: " + path);
  out << "variant,epoch,split,metric,k,value,seed\n";
  for (const auto& r : rows)
    out << r.variant << ',' << r.epoch << ',' << r.split_name << ',' << r.metric << ',' << r.k
        << ',' << format_metric_value(r.value) << ',' << r.seed << '\n';
  if (!out) throw IoError("metrics csv write failed: " + path);
}

}  // namespace revamp::harness
