#include <cmath>
#include <cstdio>
#include <filesystem>
#include <map>
#include <numeric>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "revamp/data/corpus.hpp"
#include "revamp/data/synth.hpp"
#include "revamp/harness/config.hpp"
#include "revamp/harness/eval.hpp"
#include "revamp/harness/pipeline.hpp"
#include "revamp/sr/model.hpp"

namespace {

using namespace revamp;

data::FileFormat parse_format(const std::string& s) {
  return s == "jsonl" ? data::FileFormat::kJsonl : data::FileFormat::kCsv;
}

std::pair<double, double> mean_std(const std::vector<double>& v) {
  const double n = static_cast<double>(v.size());
  const double mean = std::accumulate(v.begin(), v.end(), 0.0) / n;
  if (v.size() < 2) return {mean, 0.0};
  double ss = 0.0;
  for (double x : v) ss += (x - mean) * (x - mean);
  return {mean, std::sqrt(ss / (n - 1.0))};
}

// Seed for repeat r of a multi-run invocation; run 0 keeps the configured
// seed so a single run is byte-reproducible against `--runs 1`.
std::uint64_t run_seed(const harness::RunConfig& base, int r) {
  return r == 0 ? base.seed : derive_seed(base.seed, "run", static_cast<std::uint64_t>(r));
}

harness::PipelineHooks verbose_hooks(bool verbose) {
  harness::PipelineHooks hooks;
  if (!verbose) return hooks;
  hooks.ei_epoch = [](std::size_t e, double loss) {
    std::fprintf(stderr, "[ei] epoch %zu loss %.6f\n", e, loss);
  };
  hooks.sr_epoch = [](std::size_t e, double loss, const harness::EvalReport& val) {
    std::fprintf(stderr, "[sr] epoch %zu loss %.6f val ndcg@10 %.4f\n", e, loss,
                 val.ndcg_at_k(10));
  };
  return hooks;
}

void print_report(const harness::EvalReport& r, const std::string& label) {
  std::printf("%s users=%zu negatives=%zu%s\n", label.c_str(), r.ranks.size(),
              r.negatives_requested, r.reduced_negatives ? " (reduced for some users)" : "");
  for (std::size_t i = 0; i < r.ks.size(); ++i)
    std::printf("  hits@%zu  %.6f\n", r.ks[i], r.hits[i]);
  for (std::size_t i = 0; i < r.ks.size(); ++i)
    std::printf("  ndcg@%zu  %.6f\n", r.ks[i], r.ndcg[i]);
  std::printf("  mrr     %.6f\n", r.mrr);
}

void print_aggregate(const std::vector<harness::EvalReport>& tests) {
  if (tests.empty()) return;
  std::printf("test metrics over %zu run(s), mean +/- sample std:\n", tests.size());
  auto line = [&](const std::string& name, auto pick) {
    std::vector<double> v;
    for (const auto& t : tests) v.push_back(pick(t));
    auto [m, s] = mean_std(v);
    std::printf("  %-8s %.6f +/- %.6f\n", name.c_str(), m, s);
  };
  for (std::size_t k : tests[0].ks) {
    line("hits@" + std::to_string(k),
         [k](const harness::EvalReport& t) { return t.hits_at_k(k); });
  }
  for (std::size_t k : tests[0].ks) {
    line("ndcg@" + std::to_string(k),
         [k](const harness::EvalReport& t) { return t.ndcg_at_k(k); });
  }
  line("mrr", [](const harness::EvalReport& t) { return t.mrr; });
}

struct CommonArgs {
  std::string data;
  std::string format = "csv";
  std::string config;
  std::string out;
  int runs = 3;
  bool verbose = false;
};

void run_train(const CommonArgs& a) {
  harness::RunConfig base = harness::load_run_config(a.config);
  data::Corpus corpus = data::load_corpus(a.data, parse_format(a.format));
  std::filesystem::create_directories(a.out);

  std::vector<harness::MetricRow> rows;
  std::vector<harness::EvalReport> tests;
  for (int r = 0; r < a.runs; ++r) {
    harness::RunConfig rc = base;
    rc.seed = run_seed(base, r);
    harness::PipelineResult res =
        harness::train_pipeline(corpus, rc, nullptr, verbose_hooks(a.verbose));
    auto rr = harness::pipeline_rows(res, "full", rc.seed);
    rows.insert(rows.end(), rr.begin(), rr.end());
    if (r == 0) {
      const std::string ckpt = (std::filesystem::path(a.out) / "checkpoint.bin").string();
      sr::save_sr_checkpoint(ckpt, res.model);
      std::printf("checkpoint: %s\n", ckpt.c_str());
    }
    std::printf("run %d seed=%llu best_epoch=%zu val_ndcg@10=%.6f rms_app=%.6f rms_poi=%.6f\n",
                r, static_cast<unsigned long long>(rc.seed), res.best_epoch,
                res.best_val_ndcg10, res.rms.app, res.rms.poi);
    tests.push_back(res.test);
  }
  const std::string csv = (std::filesystem::path(a.out) / "metrics.csv").string();
  harness::write_metrics_csv(csv, rows);
  std::printf("metrics: %s\n", csv.c_str());
  print_aggregate(tests);
}

void run_ablate_cmd(const CommonArgs& a) {
  harness::RunConfig base = harness::load_run_config(a.config);
  data::Corpus corpus = data::load_corpus(a.data, parse_format(a.format));
  std::filesystem::create_directories(a.out);

  std::vector<harness::MetricRow> rows;
  std::map<std::string, std::vector<harness::EvalReport>> by_variant;
  for (int r = 0; r < a.runs; ++r) {
    harness::RunConfig rc = base;
    rc.seed = run_seed(base, r);
    auto runs = harness::run_ablation(corpus, rc, nullptr, verbose_hooks(a.verbose));
    for (auto& run : runs) {
      auto rr = harness::pipeline_rows(run.result, run.variant, rc.seed);
      rows.insert(rows.end(), rr.begin(), rr.end());
      by_variant[run.variant].push_back(run.result.test);
    }
  }

  const std::string csv = (std::filesystem::path(a.out) / "metrics.csv").string();
  harness::write_metrics_csv(csv, rows);

  // One summary row per variant, metrics averaged across runs.
  const std::string cmp = (std::filesystem::path(a.out) / "ablation.csv").string();
  std::ofstream out(cmp, std::ios::binary);
  if (!out) throw IoError("cannot write " + cmp);
  out << "variant,runs,hits1,hits1_std,hits5,hits5_std,hits10,hits10_std,"
         "ndcg1,ndcg1_std,ndcg5,ndcg5_std,ndcg10,ndcg10_std,mrr,mrr_std\n";
  for (const auto& v : harness::ablation_grid()) {
    const auto& tests = by_variant[v.name];
    out << v.name << ',' << tests.size();
    auto put = [&](auto pick) {
      std::vector<double> vals;
      for (const auto& t : tests) vals.push_back(pick(t));
      auto [m, s] = mean_std(vals);
      out << ',' << harness::format_metric_value(m) << ','
          << harness::format_metric_value(s);
    };
    for (std::size_t k : {std::size_t{1}, std::size_t{5}, std::size_t{10}})
      put([k](const harness::EvalReport& t) { return t.hits_at_k(k); });
    for (std::size_t k : {std::size_t{1}, std::size_t{5}, std::size_t{10}})
      put([k](const harness::EvalReport& t) { return t.ndcg_at_k(k); });
    put([](const harness::EvalReport& t) { return t.mrr; });
    out << '\n';
  }
  if (!out) throw IoError("write failed: " + cmp);
  out.close();
  std::printf("metrics: %s\nsummary: %s\n", csv.c_str(), cmp.c_str());

  for (const auto& v : harness::ablation_grid()) {
    std::vector<double> vals;
    for (const auto& t : by_variant[v.name]) vals.push_back(t.ndcg_at_k(10));
    auto [m, s] = mean_std(vals);
    std::printf("  %-5s ndcg@10 %.6f +/- %.6f\n", v.name.c_str(), m, s);
  }
}

struct EvalArgs {
  std::string checkpoint;
  std::string data;
  std::string format = "csv";
  std::string config;
  std::string split = "test";
};

void run_eval(const EvalArgs& a) {
  harness::RunConfig rc = harness::load_run_config(a.config);
  sr::ModelParams m = sr::load_sr_checkpoint(a.checkpoint);
  data::Corpus corpus = data::load_corpus(a.data, parse_format(a.format));
  if (m.cfg.num_pois != corpus.num_pois || m.cat_app.rows() != corpus.num_app_cats ||
      m.cat_poi.rows() != corpus.num_poi_cats)
    throw UsageError("checkpoint cardinalities (" + std::to_string(m.cfg.num_pois) + " POIs, " +
                     std::to_string(m.cat_app.rows()) + " app cats, " +
                     std::to_string(m.cat_poi.rows()) + " poi cats) do not match the corpus (" +
                     std::to_string(corpus.num_pois) + ", " +
                     std::to_string(corpus.num_app_cats) + ", " +
                     std::to_string(corpus.num_poi_cats) + ")");

  harness::SplitCorpus s = harness::split(corpus);
  harness::EvalOptions opt;
  opt.split = a.split == "val" ? harness::EvalSplit::kVal : harness::EvalSplit::kTest;
  opt.negatives = rc.eval_negatives;
  opt.seed = rc.seed;
  opt.threads = rc.threads;
  harness::EvalReport rep = harness::evaluate(m, s, opt);
  print_report(rep, a.split);
  std::printf("  wall    %.3fs\n", rep.wall_seconds);
}

struct SynthArgs {
  std::string out;
  std::string format = "csv";
  std::size_t users = 20;
  std::size_t pois = 10;
  std::size_t app_cats = 4;
  std::size_t poi_cats = 5;
  std::size_t seq_len = 20;
  double correlation = 0.5;
  std::uint64_t seed = 1;
};

void run_synth(const SynthArgs& a) {
  data::SynthSpec spec;
  spec.num_users = a.users;
  spec.num_pois = a.pois;
  spec.num_app_cats = a.app_cats;
  spec.num_poi_cats = a.poi_cats;
  spec.seq_len = a.seq_len;
  spec.correlation = a.correlation;
  data::Corpus c = data::synth_corpus(spec, a.seed);
  data::save_corpus(a.out, c, parse_format(a.format));
  std::size_t checkins = 0;
  for (const auto& u : c.users) checkins += u.checkins.size();
  std::printf("wrote %zu users, %zu check-ins to %s\n", c.users.size(), checkins, a.out.c_str());
}

void run_inspect(const std::string& path) {
  sr::ModelParams m = sr::load_sr_checkpoint(path);
  const sr::SrConfig& c = m.cfg;
  std::printf("checkpoint: %s\n", path.c_str());
  std::printf("dim=%zu window=%zu blocks=%zu heads=%zu num_pois=%zu\n", c.dim, c.window, c.blocks,
              c.heads, c.num_pois);
  std::printf("app_cats=%zu poi_cats=%zu\n", m.cat_app.rows(), m.cat_poi.rows());
  std::printf("clips: app=%zu poi=%zu time=%zu\n", c.clip_app, c.clip_poi, c.clip_time);
  std::printf("time_mode=%s use_app=%d use_poi=%d use_time=%d use_abs=%d\n",
              c.time_mode == relenc::TimeMode::kLiteral ? "literal" : "clipped_quotient",
              c.use_app ? 1 : 0, c.use_poi ? 1 : 0, c.use_time ? 1 : 0, c.use_abs ? 1 : 0);
  auto l2 = [](const nc::Tensor& t) {
    double s = 0.0;
    for (double v : t.data) s += v * v;
    return std::sqrt(s);
  };
  std::printf("tensors:\n");
  for (nc::Parameter* p : m.all_tensors())
    std::printf("  %-24s %zux%zu  l2=%.6f\n", p->name.c_str(), p->value.rows(), p->value.cols(),
                l2(p->value));
  std::printf("  %-24s %zux%zu  l2=%.6f\n", "ei.app_table", m.cat_app.rows(), m.cat_app.cols(),
              l2(m.cat_app));
  std::printf("  %-24s %zux%zu  l2=%.6f\n", "ei.poi_table", m.cat_poi.rows(), m.cat_poi.cols(),
              l2(m.cat_poi));
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"sequential POI recommender with relative check-in encodings"};
  app.require_subcommand(1);

  CommonArgs train_args;
  CLI::App* train = app.add_subcommand("train", "train and write checkpoint + metrics CSV");
  train->add_option("--data", train_args.data, "corpus file")->required();
  train->add_option("--format", train_args.format, "corpus format")
      ->check(CLI::IsMember({"csv", "jsonl"}));
  train->add_option("--config", train_args.config, "run config file");
  train->add_option("--out", train_args.out, "output directory")->required();
  train->add_option("--runs", train_args.runs, "independent repeats with derived seeds")
      ->check(CLI::PositiveNumber);
  train->add_flag("-v,--verbose", train_args.verbose, "per-epoch progress on stderr");

  EvalArgs eval_args;
  CLI::App* eval_cmd = app.add_subcommand("eval", "evaluate a checkpoint on a corpus split");
  eval_cmd->add_option("--checkpoint", eval_args.checkpoint, "model checkpoint")->required();
  eval_cmd->add_option("--data", eval_args.data, "corpus file")->required();
  eval_cmd->add_option("--format", eval_args.format, "corpus format")
      ->check(CLI::IsMember({"csv", "jsonl"}));
  eval_cmd->add_option("--config", eval_args.config, "run config file");
  eval_cmd->add_option("--split", eval_args.split, "which held-out item to rank")
      ->check(CLI::IsMember({"val", "test"}));

  CommonArgs ablate_args;
  CLI::App* ablate = app.add_subcommand("ablate", "run the relative-channel ablation grid");
  ablate->add_option("--data", ablate_args.data, "corpus file")->required();
  ablate->add_option("--format", ablate_args.format, "corpus format")
      ->check(CLI::IsMember({"csv", "jsonl"}));
  ablate->add_option("--config", ablate_args.config, "run config file");
  ablate->add_option("--out", ablate_args.out, "output directory")->required();
  ablate->add_option("--runs", ablate_args.runs, "independent repeats with derived seeds")
      ->check(CLI::PositiveNumber);
  ablate->add_flag("-v,--verbose", ablate_args.verbose, "per-epoch progress on stderr");

  SynthArgs synth_args;
  CLI::App* synth = app.add_subcommand("synth", "write a synthetic check-in corpus");
  synth->add_option("--out", synth_args.out, "output file")->required();
  synth->add_option("--format", synth_args.format, "corpus format")
      ->check(CLI::IsMember({"csv", "jsonl"}));
  synth->add_option("--users", synth_args.users, "number of users");
  synth->add_option("--pois", synth_args.pois, "number of POIs");
  synth->add_option("--app-cats", synth_args.app_cats, "number of app categories");
  synth->add_option("--poi-cats", synth_args.poi_cats, "number of POI categories");
  synth->add_option("--seq-len", synth_args.seq_len, "check-ins per user");
  synth->add_option("--correlation", synth_args.correlation,
                    "category-to-next-POI correlation in [0,1]");
  synth->add_option("--seed", synth_args.seed, "generator seed");

  std::string inspect_path;
  CLI::App* inspect = app.add_subcommand("inspect", "dump checkpoint header and tensor norms");
  inspect->add_option("--checkpoint", inspect_path, "model checkpoint")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForVersion& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 2;
  }

  try {
    if (*train) run_train(train_args);
    if (*eval_cmd) run_eval(eval_args);
    if (*ablate) run_ablate_cmd(ablate_args);
    if (*synth) run_synth(synth_args);
    if (*inspect) run_inspect(inspect_path);
    return 0;
  } catch (const revamp::ConfigError& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 2;
  } catch (const revamp::UsageError& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 2;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
}
