#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <cstdio>
#include <fstream>
#include <set>
#include <vector>

#include "revamp/data/synth.hpp"
#include "revamp/ei/initiator.hpp"
#include "revamp/numcore/grad_check.hpp"
#include "test_util.hpp"

using namespace revamp;
using ei::EiBound;
using ei::EiConfig;
using ei::EiParams;
using ei::MfActivation;
using nc::Graph;
using nc::NodeId;
using nc::Tensor;

namespace {

EiParams tiny_params(std::size_t na, std::size_t ns, std::size_t dim, std::size_t ext,
                     std::uint64_t seed = 3) {
  return EiParams::init(na, ns, dim, ext, seed);
}

void zero_all(EiParams& p) {
  for (auto* q : p.all())
    for (auto& v : q->value.data) v = 0.0;
}

data::CheckIn checkin(std::vector<int> apps, std::vector<int> pois) {
  data::CheckIn e;
  e.poi_id = 0;
  e.timestamp = 0;
  e.app_cats = std::move(apps);
  e.poi_cats = std::move(pois);
  return e;
}

}  // namespace

TEST_CASE("interaction head scores zero with zero parameters") {
  EiParams p = tiny_params(2, 2, 3, 4);
  zero_all(p);
  CHECK(ei::mf_logit_value(p, 0, 0, MfActivation::kRelu) == 0.0);
  CHECK(ei::mf_logit_value(p, 1, 1, MfActivation::kIdentity) == 0.0);
}

TEST_CASE("relu activation clips a negative pre-activation to zero") {
  EiParams p = tiny_params(1, 1, 2, 4);
  zero_all(p);
  p.mf_bias.value.data[0] = -1.0;
  CHECK(ei::mf_logit_value(p, 0, 0, MfActivation::kRelu) == 0.0);
  CHECK(ei::mf_logit_value(p, 0, 0, MfActivation::kIdentity) == -1.0);
}

TEST_CASE("interaction head computes w (a||s) + b") {
  EiParams p = tiny_params(1, 1, 1, 4);
  zero_all(p);
  p.app_table.value.data[0] = 2.0;
  p.poi_table.value.data[0] = 3.0;
  p.mf_weight.value.data = {1.0, 1.0};
  CHECK(ei::mf_logit_value(p, 0, 0, MfActivation::kRelu) == 5.0);
}

TEST_CASE("pair loss with all-zero logits is 3 log 2 per pair") {
  EiParams p = tiny_params(3, 3, 2, 4);
  zero_all(p);
  data::CheckIn one = checkin({0}, {0});
  data::CheckIn two = checkin({0, 1}, {2});
  ei::MfNegatives neg_one{{{1, 1}}};
  ei::MfNegatives neg_two{{{2, 0}, {2, 1}}};

  Graph g;
  EiBound b = ei::bind(g, p);
  double l1 = g.val(ei::loss_mf(g, b, {&one}, neg_one, MfActivation::kRelu)).data[0];
  CHECK(l1 == Catch::Approx(3.0 * std::log(2.0)).epsilon(1e-12));

  Graph g2;
  EiBound b2 = ei::bind(g2, p);
  double l2 = g2.val(ei::loss_mf(g2, b2, {&two}, neg_two, MfActivation::kRelu)).data[0];
  CHECK(l2 == Catch::Approx(6.0 * std::log(2.0)).epsilon(1e-12));
}

TEST_CASE("semantic loss measures squared distance to the projected vector") {
  // Projections collapse to zero, app row is [2], poi row is [0]:
  // the single pair contributes 2^2 + 0 = 4 and the batch has one check-in.
  EiParams p = tiny_params(1, 1, 1, 4);
  zero_all(p);
  p.app_table.value.data[0] = 2.0;
  data::CheckIn one = checkin({0}, {0});
  auto pre = ei::ResolvedPretrained::resolve(ei::PretrainedVectors::fallback_only(4, 9), 1, 1);

  Graph g;
  EiBound b = ei::bind(g, p);
  double l = g.val(ei::loss_bert(g, b, {&one}, pre)).data[0];
  CHECK(l == Catch::Approx(4.0).epsilon(1e-12));
}

TEST_CASE("semantic loss averages over the check-ins of the batch") {
  EiParams p = tiny_params(1, 1, 1, 4);
  zero_all(p);
  p.app_table.value.data[0] = 2.0;
  data::CheckIn one = checkin({0}, {0});
  data::CheckIn dup = one;
  auto pre = ei::ResolvedPretrained::resolve(ei::PretrainedVectors::fallback_only(4, 9), 1, 1);

  Graph g;
  EiBound b = ei::bind(g, p);
  double l = g.val(ei::loss_bert(g, b, {&one, &dup}, pre)).data[0];
  CHECK(l == Catch::Approx(4.0).epsilon(1e-12));  // (4 + 4) / 2
}

TEST_CASE("combined loss is the literal convex combination of the channels") {
  EiParams p = tiny_params(3, 3, 2, 4, 11);
  data::CheckIn one = checkin({0, 2}, {1});
  ei::MfNegatives neg{{{1, 0}, {1, 2}}};
  auto pre = ei::ResolvedPretrained::resolve(ei::PretrainedVectors::fallback_only(4, 9), 3, 3);

  double mf, bert;
  {
    Graph g;
    EiBound b = ei::bind(g, p);
    mf = g.val(ei::loss_mf(g, b, {&one}, neg, MfActivation::kRelu)).data[0];
    bert = g.val(ei::loss_bert(g, b, {&one}, pre)).data[0];
  }
  for (double gamma : {0.0, 0.25, 1.0}) {
    EiConfig cfg;
    cfg.gamma = gamma;
    Graph g;
    EiBound b = ei::bind(g, p);
    double l = g.val(ei::loss_ei(g, b, {&one}, neg, pre, cfg)).data[0];
    CHECK(l == gamma * mf + (1.0 - gamma) * bert);
  }
}

TEST_CASE("negative pairs avoid the categories of the check-in") {
  data::CheckIn e = checkin({0, 3}, {1, 2});
  Rng rng(77);
  for (int trial = 0; trial < 50; ++trial) {
    ei::MfNegatives neg = ei::draw_mf_negatives({&e}, 5, 4, rng);
    REQUIRE(neg.pairs.size() == 4);
    for (auto [an, sn] : neg.pairs) {
      CHECK(an != 0);
      CHECK(an != 3);
      CHECK(sn != 1);
      CHECK(sn != 2);
    }
  }
}

TEST_CASE("combined loss gradients match finite differences") {
  const std::size_t na = 2, ns = 2, dim = 2, ext = 3;
  EiParams proto = tiny_params(na, ns, dim, ext, 17);
  data::CheckIn one = checkin({0, 1}, {1});
  ei::MfNegatives neg{{{0, 0}, {0, 0}}};  // fixed; validity does not matter for gradients
  auto pre = ei::ResolvedPretrained::resolve(ei::PretrainedVectors::fallback_only(ext, 9), na, ns);
  EiConfig cfg;
  cfg.gamma = 0.6;

  std::vector<Tensor> params;
  for (auto* q : proto.all()) params.push_back(q->value);
  // Nudge biases off zero so no relu sits exactly at its kink.
  params[3].data[0] = 0.3;
  for (auto& v : params[5].data) v = 0.2;
  for (auto& v : params[7].data) v = -0.1;

  double worst = nc::grad_check(params, [&](Graph& g, const std::vector<NodeId>& ids) {
    EiBound b;
    b.app = ids[0];
    b.poi = ids[1];
    b.mfw = ids[2];
    b.mfb = ids[3];
    b.apw = ids[4];
    b.apb = ids[5];
    b.ppw = ids[6];
    b.ppb = ids[7];
    return ei::loss_ei(g, b, {&one}, neg, pre, cfg);
  });
  CHECK(worst < 1e-4);
}

TEST_CASE("training freezes the tables and is reproducible") {
  data::SynthSpec spec;
  spec.num_users = 8;
  spec.num_pois = 6;
  spec.num_app_cats = 4;
  spec.num_poi_cats = 3;
  spec.seq_len = 8;
  data::Corpus corpus = data::synth_corpus(spec, 5);

  EiConfig cfg;
  cfg.dim = 4;
  cfg.epochs = 3;
  cfg.batch_size = 16;
  cfg.seed = 42;
  auto pre = ei::PretrainedVectors::fallback_only(8, 1);

  ei::CategoryEmbeddingTable t1 = ei::train_ei(corpus, cfg, pre);
  ei::CategoryEmbeddingTable t2 = ei::train_ei(corpus, cfg, pre);

  CHECK(t1.frozen);
  CHECK_FALSE(t1.app.requires_grad);
  CHECK_FALSE(t1.poi.requires_grad);
  CHECK(t1.app.rows() == corpus.num_app_cats);
  CHECK(t1.poi.rows() == corpus.num_poi_cats);
  CHECK(t1.dim == 4);
  CHECK(t1.app.data == t2.app.data);
  CHECK(t1.poi.data == t2.poi.data);

  cfg.seed = 43;
  ei::CategoryEmbeddingTable t3 = ei::train_ei(corpus, cfg, pre);
  CHECK(t1.app.data != t3.app.data);
}

TEST_CASE("semantic-only training pulls table rows onto the projections") {
  data::SynthSpec spec;
  spec.num_users = 6;
  spec.num_pois = 5;
  spec.num_app_cats = 3;
  spec.num_poi_cats = 3;
  spec.seq_len = 6;
  data::Corpus corpus = data::synth_corpus(spec, 2);

  EiConfig cfg;
  cfg.dim = 3;
  cfg.gamma = 0.0;
  cfg.lr = 1e-2;
  cfg.epochs = 2000;
  cfg.batch_size = 256;
  cfg.seed = 7;
  cfg.early_stop_rel = -1.0;  // never stop on the epoch budget's watch
  auto pre = ei::PretrainedVectors::fallback_only(6, 4);

  EiParams trained;
  ei::train_ei(corpus, cfg, pre, &trained);

  // Residual semantic loss over one batch holding every check-in.
  std::vector<const data::CheckIn*> all;
  for (const auto& u : corpus.users)
    for (const auto& e : u.checkins) all.push_back(&e);
  auto res = ei::ResolvedPretrained::resolve(pre, corpus.num_app_cats, corpus.num_poi_cats);
  Graph g;
  EiBound b = ei::bind(g, trained);
  double l = g.val(ei::loss_bert(g, b, all, res)).data[0];
  CHECK(l < 1e-3);
}

TEST_CASE("interaction-only loss ignores the semantic channel") {
  EiParams p = tiny_params(3, 3, 2, 4, 11);
  data::CheckIn one = checkin({0}, {1});
  ei::MfNegatives neg{{{1, 0}}};
  auto pre = ei::ResolvedPretrained::resolve(ei::PretrainedVectors::fallback_only(4, 9), 3, 3);
  EiConfig cfg;
  cfg.gamma = 1.0;

  Graph g;
  EiBound b = ei::bind(g, p);
  double combined = g.val(ei::loss_ei(g, b, {&one}, neg, pre, cfg)).data[0];
  Graph g2;
  EiBound b2 = ei::bind(g2, p);
  double mf = g2.val(ei::loss_mf(g2, b2, {&one}, neg, MfActivation::kRelu)).data[0];
  CHECK(combined == mf);
}

TEST_CASE("early stop halts once improvement falls under the threshold") {
  data::SynthSpec spec;
  spec.num_users = 4;
  spec.num_pois = 4;
  spec.num_app_cats = 3;
  spec.num_poi_cats = 3;
  spec.seq_len = 5;
  data::Corpus corpus = data::synth_corpus(spec, 9);

  EiConfig cfg;
  cfg.dim = 2;
  cfg.epochs = 50;
  cfg.seed = 1;
  cfg.early_stop_rel = 1e9;  // any epoch-to-epoch change triggers the stop
  std::size_t calls = 0;
  cfg.epoch_logger = [&](std::size_t, double) { ++calls; };
  ei::train_ei(corpus, cfg, ei::PretrainedVectors::fallback_only(4, 1));
  CHECK(calls == 2);
}

TEST_CASE("embedding checkpoint round trips bit for bit") {
  data::SynthSpec spec;
  spec.num_users = 5;
  spec.num_pois = 4;
  spec.num_app_cats = 3;
  spec.num_poi_cats = 2;
  spec.seq_len = 5;
  data::Corpus corpus = data::synth_corpus(spec, 8);

  EiConfig cfg;
  cfg.dim = 3;
  cfg.epochs = 2;
  cfg.seed = 6;
  ei::CategoryEmbeddingTable t = ei::train_ei(corpus, cfg, ei::PretrainedVectors::fallback_only(4, 2));

  std::string path = testutil::tmp_file("ei_ckpt.bin");
  ei::save_ei_checkpoint(path, t);
  ei::CategoryEmbeddingTable r = ei::load_ei_checkpoint(path);
  CHECK(r.dim == t.dim);
  CHECK(r.frozen);
  CHECK(r.app.shape == t.app.shape);
  CHECK(r.poi.shape == t.poi.shape);
  CHECK(r.app.data == t.app.data);
  CHECK(r.poi.data == t.poi.data);
  std::remove(path.c_str());
}

TEST_CASE("checkpoint loader rejects foreign and truncated files") {
  std::string bad = testutil::tmp_file("ei_bad.bin");
  testutil::write_text(bad, "definitely not a checkpoint");
  CHECK_THROWS_AS(ei::load_ei_checkpoint(bad), ParseError);
  CHECK_THROWS_AS(ei::load_ei_checkpoint(testutil::tmp_file("ei_missing.bin")), IoError);
  std::remove(bad.c_str());
}

TEST_CASE("pretrained vectors load from name tab floats lines") {
  std::string path = testutil::tmp_file("pre.tsv");
  testutil::write_text(path, "app_0\t0.5 0.25 -1\npoi_1\t1 2 3\n");
  auto pv = ei::PretrainedVectors::load(path, 3);
  CHECK(pv.dim == 3);
  CHECK(pv.get("app_0") == std::vector<double>{0.5, 0.25, -1.0});
  CHECK(pv.get("poi_1") == std::vector<double>{1.0, 2.0, 3.0});
  std::remove(path.c_str());
}

TEST_CASE("pretrained fallback is deterministic and unit norm") {
  auto pv = ei::PretrainedVectors::fallback_only(16, 123);
  auto a = pv.get("app_7");
  auto b = pv.get("app_7");
  auto c = pv.get("poi_7");
  CHECK(a == b);
  CHECK(a != c);
  double norm = 0.0;
  for (double v : a) norm += v * v;
  CHECK(std::sqrt(norm) == Catch::Approx(1.0).epsilon(1e-9));

  auto pv2 = ei::PretrainedVectors::fallback_only(16, 124);
  CHECK(pv.get("app_7") != pv2.get("app_7"));
}

TEST_CASE("pretrained lookup without fallback rejects unknown names") {
  std::string path = testutil::tmp_file("pre2.tsv");
  testutil::write_text(path, "app_0\t1 0\n");
  auto pv = ei::PretrainedVectors::load(path);
  pv.allow_fallback = false;
  CHECK(pv.get("app_0") == std::vector<double>{1.0, 0.0});
  CHECK_THROWS_AS(pv.get("app_1"), LookupError);
  std::remove(path.c_str());
}

TEST_CASE("pretrained loader rejects malformed lines") {
  std::string no_tab = testutil::tmp_file("pre3.tsv");
  testutil::write_text(no_tab, "app_0 1 2 3\n");
  CHECK_THROWS_AS(ei::PretrainedVectors::load(no_tab), ParseError);
  std::remove(no_tab.c_str());

  std::string mixed = testutil::tmp_file("pre4.tsv");
  testutil::write_text(mixed, "app_0\t1 2 3\napp_1\t1 2\n");
  CHECK_THROWS_AS(ei::PretrainedVectors::load(mixed), ParseError);
  std::remove(mixed.c_str());
}
