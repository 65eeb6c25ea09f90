#pragma once

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <exception>
#include <mutex>
#include <sstream>
#include <string>
#include <thread>
#include <unordered_set>
#include <vector>

#include "revamp/common.hpp"
#include "revamp/data/corpus.hpp"
#include "revamp/data/sampling.hpp"
#include "revamp/data/window.hpp"
#include "revamp/relenc/relative.hpp"
#include "revamp/sr/forward.hpp"
#include "revamp/sr/model.hpp"

namespace revamp::harness {

using nc::Tensor;

// --- leave-one-out split ---

struct SplitUser {
  long long user_id = 0;
  std::vector<data::CheckIn> train;  // everything before the last two
  data::CheckIn val;                 // second to last
  data::CheckIn test;                // last
};

struct SplitCorpus {
  std::vector<SplitUser> users;
  std::size_t num_pois = 0;
  std::size_t num_app_cats = 0;
  std::size_t num_poi_cats = 0;
};

inline SplitCorpus split(const data::Corpus& c) {
  SplitCorpus s;
  s.num_pois = c.num_pois;
  s.num_app_cats = c.num_app_cats;
  s.num_poi_cats = c.num_poi_cats;
  s.users.reserve(c.users.size());
  for (const auto& u : c.users) {
    if (u.checkins.size() < 3)
      throw SplitError("split: user " + std::to_string(u.user_id) + " has " +
                       std::to_string(u.checkins.size()) + " check-ins; at least 3 required");
    SplitUser su;
    su.user_id = u.user_id;
    su.train.assign(u.checkins.begin(), u.checkins.end() - 2);
    su.val = u.checkins[u.checkins.size() - 2];
    su.test = u.checkins.back();
    s.users.push_back(std::move(su));
  }
  return s;
}

// --- ranking metrics ---

// 1-based rank of the true item among itself plus the negatives. Ties count
// against the true item (it sorts last among equals), which is deterministic
// and never flatters the model.
inline std::size_t rank_of_true(double true_score, const std::vector<double>& negative_scores) {
  std::size_t rank = 1;
  for (double s : negative_scores)
    if (s >= true_score) ++rank;
  return rank;
}

inline double hits_at(std::size_t rank, std::size_t k) { return rank <= k ? 1.0 : 0.0; }

inline double ndcg_at(std::size_t rank, std::size_t k) {
  return rank <= k ? 1.0 / std::log2(static_cast<double>(rank) + 1.0) : 0.0;
}

inline double reciprocal_rank(std::size_t rank) { return 1.0 / static_cast<double>(rank); }

struct EvalReport {
  std::vector<std::size_t> ks{1, 5, 10};
  std::vector<double> hits;   // parallel to ks
  std::vector<double> ndcg;   // parallel to ks
  double mrr = 0.0;
  std::vector<std::size_t> ranks;           // per user, 1-based
  std::vector<std::size_t> negatives_used;  // per user; may fall short of the request
  std::size_t negatives_requested = 0;
  bool reduced_negatives = false;
  std::string tie_policy = "true-item-last-among-equals";
  std::string config_snapshot;
  double wall_seconds = 0.0;

  double hits_at_k(std::size_t k) const { return at(hits, k); }
  double ndcg_at_k(std::size_t k) const { return at(ndcg, k); }

 private:
  double at(const std::vector<double>& v, std::size_t k) const {
    for (std::size_t i = 0; i < ks.size(); ++i)
      if (ks[i] == k) return v[i];
    throw UsageError("EvalReport: cutoff " + std::to_string(k) + " was not evaluated");
  }
};

// Aggregates per-user ranks into the report's metric fields.
inline void finalize_report(EvalReport& r) {
  r.hits.assign(r.ks.size(), 0.0);
  r.ndcg.assign(r.ks.size(), 0.0);
  r.mrr = 0.0;
  if (r.ranks.empty()) return;
  for (std::size_t rank : r.ranks) {
    for (std::size_t i = 0; i < r.ks.size(); ++i) {
      r.hits[i] += hits_at(rank, r.ks[i]);
      r.ndcg[i] += ndcg_at(rank, r.ks[i]);
    }
    r.mrr += reciprocal_rank(rank);
  }
  const double n = static_cast<double>(r.ranks.size());
  for (std::size_t i = 0; i < r.ks.size(); ++i) {
    r.hits[i] /= n;
    r.ndcg[i] /= n;
  }
  r.mrr /= n;
  for (std::size_t used : r.negatives_used)
    if (used < r.negatives_requested) r.reduced_negatives = true;
}

// --- evaluation over a frozen model ---

enum class EvalSplit { kVal, kTest };

struct EvalOptions {
  EvalSplit split = EvalSplit::kTest;
  std::size_t negatives = 100;
  std::uint64_t seed = 1;
  std::size_t threads = 0;  // 0 = hardware concurrency
  std::vector<std::size_t> ks{1, 5, 10};
};

// Everything evaluation needs about one user, precomputed so per-epoch
// validation does not rebuild windows or relative matrices.
struct EvalEntry {
  sr::WindowInput input;
  std::size_t query_pos = 0;  // last real slot
  int true_poi = 0;
  std::unordered_set<int> visited;  // full history, negatives never collide
};

inline ei::CategoryEmbeddingTable category_table_of(const sr::ModelParams& m) {
  ei::CategoryEmbeddingTable t;
  t.app = m.cat_app;
  t.poi = m.cat_poi;
  t.dim = m.cfg.dim;
  t.frozen = true;
  return t;
}

inline relenc::RelConfig rel_config_of(const sr::SrConfig& c) {
  relenc::RelConfig rc;
  rc.clip_app = c.clip_app;
  rc.clip_poi = c.clip_poi;
  rc.clip_time = c.clip_time;
  rc.time_mode = c.time_mode;
  rc.use_app = c.use_app;
  rc.use_poi = c.use_poi;
  rc.use_time = c.use_time;
  return rc;
}

inline sr::WindowInput window_input_for(const std::vector<data::CheckIn>& seq,
                                        const sr::SrConfig& cfg,
                                        const ei::CategoryEmbeddingTable& table) {
  data::Window dw = data::window(seq, cfg.window, cfg.pad_id());
  relenc::NetEmbeddings emb = relenc::net_embeddings(dw, table);
  sr::WindowInput w;
  w.poi_ids = dw.poi_ids;
  w.real = dw.real;
  w.rel = relenc::build_relative(dw, emb, rel_config_of(cfg));
  w.mu_app = std::move(emb.mu_app);
  w.mu_poi = std::move(emb.mu_poi);
  return w;
}

// The validation query sees the train prefix; the test query additionally
// sees the validation check-in.
inline std::vector<EvalEntry> build_eval_entries(const SplitCorpus& s, const sr::SrConfig& cfg,
                                                 const ei::CategoryEmbeddingTable& table,
                                                 EvalSplit which) {
  std::vector<EvalEntry> entries;
  entries.reserve(s.users.size());
  for (const auto& u : s.users) {
    EvalEntry e;
    std::vector<data::CheckIn> seq = u.train;
    if (which == EvalSplit::kTest) seq.push_back(u.val);
    e.true_poi = which == EvalSplit::kTest ? u.test.poi_id : u.val.poi_id;
    e.input = window_input_for(seq, cfg, table);
    e.query_pos = cfg.window - 1;  // windows are right-aligned
    for (const auto& ci : u.train) e.visited.insert(ci.poi_id);
    e.visited.insert(u.val.poi_id);
    e.visited.insert(u.test.poi_id);
    entries.push_back(std::move(e));
  }
  return entries;
}

// Scores each user's true item against per-user seeded negatives and ranks
// it pessimistically. Users fan out across threads; the model is read-only.
inline EvalReport evaluate_entries(sr::ModelParams& m, const std::vector<EvalEntry>& entries,
                                   std::size_t num_pois, const EvalOptions& opt) {
  const auto t0 = std::chrono::steady_clock::now();
  EvalReport r;
  r.ks = opt.ks;
  r.negatives_requested = opt.negatives;
  r.ranks.assign(entries.size(), 0);
  r.negatives_used.assign(entries.size(), 0);

  const char* stream = opt.split == EvalSplit::kVal ? "val-neg" : "test-neg";
  auto eval_user = [&](std::size_t u) {
    const EvalEntry& e = entries[u];
    Rng rng(derive_seed(opt.seed, stream, u));
    std::vector<int> negs =
        data::sample_eval_negatives(num_pois, e.visited, opt.negatives, rng);
    r.negatives_used[u] = negs.size();

    Tensor z = sr::forward_values(m, e.input);
    std::vector<int> cands;
    cands.reserve(negs.size() + 1);
    cands.push_back(e.true_poi);
    cands.insert(cands.end(), negs.begin(), negs.end());
    std::vector<nc::Real> scores = sr::predict_scores(z, e.query_pos, cands, m);
    std::vector<double> neg_scores(scores.begin() + 1, scores.end());
    r.ranks[u] = rank_of_true(scores[0], neg_scores);
  };

  std::size_t workers = opt.threads ? opt.threads : std::thread::hardware_concurrency();
  workers = std::max<std::size_t>(1, std::min(workers, entries.size()));
  if (workers <= 1) {
    for (std::size_t u = 0; u < entries.size(); ++u) eval_user(u);
  } else {
    std::exception_ptr first_error;
    std::mutex error_mu;
    std::vector<std::thread> pool;
    pool.reserve(workers);
    for (std::size_t w = 0; w < workers; ++w) {
      pool.emplace_back([&, w]() {
        try {
          for (std::size_t u = w; u < entries.size(); u += workers) eval_user(u);
        } catch (...) {
          std::lock_guard<std::mutex> lock(error_mu);
          if (!first_error) first_error = std::current_exception();
        }
      });
    }
    for (auto& th : pool) th.join();
    if (first_error) std::rethrow_exception(first_error);
  }

  finalize_report(r);
  std::ostringstream snap;
  snap << "split=" << (opt.split == EvalSplit::kVal ? "val" : "test")
       << " negatives=" << opt.negatives << " seed=" << opt.seed << " dim=" << m.cfg.dim
       << " window=" << m.cfg.window << " blocks=" << m.cfg.blocks << " heads=" << m.cfg.heads
       << " use_app=" << m.cfg.use_app << " use_poi=" << m.cfg.use_poi
       << " use_time=" << m.cfg.use_time << " use_abs=" << m.cfg.use_abs;
  r.config_snapshot = snap.str();
  r.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return r;
}

inline EvalReport evaluate(sr::ModelParams& m, const SplitCorpus& s, const EvalOptions& opt) {
  auto entries = build_eval_entries(s, m.cfg, category_table_of(m), opt.split);
  return evaluate_entries(m, entries, s.num_pois, opt);
}

// --- category RMS probe ---

// Root-mean-squared distance between the final representation of the test
// query window and the next (test) check-in's mean category embedding, per
// channel. Lower means the model tracks upcoming categories more closely.
struct RmsProbe {
  double app = 0.0;
  double poi = 0.0;
};

inline RmsProbe category_rms_probe(sr::ModelParams& m, const SplitCorpus& s) {
  if (s.users.empty()) return {};
  ei::CategoryEmbeddingTable table = category_table_of(m);
  double sq_app = 0.0, sq_poi = 0.0;
  for (const auto& u : s.users) {
    std::vector<data::CheckIn> seq = u.train;
    seq.push_back(u.val);
    sr::WindowInput w = window_input_for(seq, m.cfg, table);
    Tensor z = sr::forward_values(m, w);
    std::vector<nc::Real> mu_a = relenc::net_embedding(u.test.app_cats, table.app);
    std::vector<nc::Real> mu_p = relenc::net_embedding(u.test.poi_cats, table.poi);
    const std::size_t last = m.cfg.window - 1;
    for (std::size_t k = 0; k < m.cfg.dim; ++k) {
      const double da = z.at(last, k) - mu_a[k];
      const double dp = z.at(last, k) - mu_p[k];
      sq_app += da * da;
      sq_poi += dp * dp;
    }
  }
  const double n = static_cast<double>(s.users.size());
  return {std::sqrt(sq_app / n), std::sqrt(sq_poi / n)};
}

}  // namespace revamp::harness
