#pragma once

#include <algorithm>
#include <cstdint>
#include <vector>

#include "revamp/common.hpp"
#include "revamp/data/corpus.hpp"

namespace revamp::data {

// Generator spec for synthetic corpora. `correlation` in [0,1] controls both
// how deterministic a user's POI trajectory is (each user walks a private
// cycle of POIs, deviating uniformly at random with probability
// 1-correlation) and how strongly app categories follow the visited POI's
// category (at 1, each POI category always produces one fixed app category;
// at 0 app categories are drawn independently of the POI).
struct SynthSpec {
  std::size_t num_users = 20;
  std::size_t num_pois = 10;
  std::size_t num_app_cats = 4;
  std::size_t num_poi_cats = 5;
  std::size_t seq_len = 20;
  double correlation = 0.5;
};

inline Corpus synth_corpus(const SynthSpec& spec, std::uint64_t seed) {
  if (spec.num_users == 0 || spec.num_pois == 0 || spec.num_app_cats == 0 ||
      spec.num_poi_cats == 0 || spec.seq_len == 0)
    throw ConfigError("synth_corpus: all sizes must be positive");
  if (spec.correlation < 0.0 || spec.correlation > 1.0)
    throw ConfigError("synth_corpus: correlation must be in [0, 1]");

  Rng rng(derive_seed(seed, "synth"));

  // Static POI metadata: one or two categories per POI.
  std::vector<std::vector<int>> poi_cats(spec.num_pois);
  for (std::size_t p = 0; p < spec.num_pois; ++p) {
    int primary = static_cast<int>(rng.uniform_index(spec.num_poi_cats));
    poi_cats[p].push_back(primary);
    if (spec.num_poi_cats > 1 && rng.uniform() < 0.3) {
      int second = static_cast<int>(rng.uniform_index(spec.num_poi_cats));
      if (second != primary) poi_cats[p].push_back(second);
    }
    std::sort(poi_cats[p].begin(), poi_cats[p].end());
  }

  // Fixed poi-category -> app-category map used at high correlation.
  std::vector<int> cat_map(spec.num_poi_cats);
  for (std::size_t s = 0; s < spec.num_poi_cats; ++s)
    cat_map[s] = static_cast<int>(rng.uniform_index(spec.num_app_cats));

  auto random_app_set = [&]() {
    std::vector<int> cats{static_cast<int>(rng.uniform_index(spec.num_app_cats))};
    if (spec.num_app_cats > 1 && rng.uniform() < 0.3) {
      int second = static_cast<int>(rng.uniform_index(spec.num_app_cats));
      if (second != cats[0]) cats.push_back(second);
    }
    std::sort(cats.begin(), cats.end());
    return cats;
  };

  Corpus c;
  c.num_pois = spec.num_pois;
  c.num_app_cats = spec.num_app_cats;
  c.num_poi_cats = spec.num_poi_cats;
  for (std::size_t u = 0; u < spec.num_users; ++u) {
    UserSeq user;
    user.user_id = static_cast<long long>(u);

    // Private cycle: 3..7 distinct POIs (bounded by the POI universe).
    std::size_t max_cycle = std::min<std::size_t>(7, spec.num_pois);
    std::size_t min_cycle = std::min<std::size_t>(3, max_cycle);
    std::size_t cyc_len = min_cycle + (max_cycle > min_cycle
                                           ? rng.uniform_index(max_cycle - min_cycle + 1)
                                           : 0);
    std::vector<int> pool(spec.num_pois);
    for (std::size_t p = 0; p < spec.num_pois; ++p) pool[p] = static_cast<int>(p);
    for (std::size_t i = 0; i < cyc_len; ++i) {
      std::size_t j = i + rng.uniform_index(pool.size() - i);
      std::swap(pool[i], pool[j]);
    }
    pool.resize(cyc_len);

    long long t = 1000000 + static_cast<long long>(rng.uniform_index(5000));
    for (std::size_t i = 0; i < spec.seq_len; ++i) {
      CheckIn e;
      bool on_cycle = rng.uniform() < spec.correlation;
      e.poi_id = on_cycle ? pool[i % cyc_len]
                          : static_cast<int>(rng.uniform_index(spec.num_pois));
      t += 60 + static_cast<long long>(rng.uniform_index(7200));
      e.timestamp = t;
      e.poi_cats = poi_cats[static_cast<std::size_t>(e.poi_id)];
      bool follow_map = rng.uniform() < spec.correlation;
      e.app_cats = follow_map ? std::vector<int>{cat_map[static_cast<std::size_t>(
                         e.poi_cats.front())]}
                              : random_app_set();
      user.checkins.push_back(std::move(e));
    }
    c.users.push_back(std::move(user));
  }
  return c;
}

}  // namespace revamp::data
