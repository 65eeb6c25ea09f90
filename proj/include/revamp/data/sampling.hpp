#pragma once

#include <algorithm>
#include <cstddef>
#include <unordered_set>
#include <vector>

#include "revamp/common.hpp"
#include "revamp/data/corpus.hpp"

namespace revamp::data {

inline std::unordered_set<int> visited_pois(const UserSeq& u) {
  std::unordered_set<int> v;
  for (const auto& e : u.checkins) v.insert(e.poi_id);
  return v;
}

// Uniform draw over POIs the user never visited (anywhere in the sequence,
// SASRec convention). Rejection sampling when the visited set is small,
// direct indexing into the complement otherwise; both are deterministic for
// a given rng state.
inline int sample_negative_poi(std::size_t num_pois, const std::unordered_set<int>& visited,
                               Rng& rng) {
  if (visited.size() >= num_pois)
    throw SamplingError("negative sampling: user has visited every POI");
  if (visited.size() * 2 < num_pois) {
    for (;;) {
      int cand = static_cast<int>(rng.uniform_index(num_pois));
      if (!visited.count(cand)) return cand;
    }
  }
  std::vector<int> eligible;
  eligible.reserve(num_pois - visited.size());
  for (std::size_t p = 0; p < num_pois; ++p)
    if (!visited.count(static_cast<int>(p))) eligible.push_back(static_cast<int>(p));
  return eligible[rng.uniform_index(eligible.size())];
}

inline int sample_negative(const Corpus& c, std::size_t user_index, Rng& rng) {
  if (user_index >= c.users.size()) throw UsageError("sample_negative: bad user index");
  auto visited = visited_pois(c.users[user_index]);
  return sample_negative_poi(c.num_pois, visited, rng);
}

// Uniform category id outside the given (sorted) set.
inline int sample_negative_category(std::size_t num_cats, const std::vector<int>& used, Rng& rng) {
  if (used.size() >= num_cats)
    throw SamplingError("negative sampling: check-in uses every category");
  for (;;) {
    int cand = static_cast<int>(rng.uniform_index(num_cats));
    if (!std::binary_search(used.begin(), used.end(), cand)) return cand;
  }
}

// Up to `count` distinct unvisited POIs (all of them when fewer exist).
inline std::vector<int> sample_eval_negatives(std::size_t num_pois,
                                              const std::unordered_set<int>& visited,
                                              std::size_t count, Rng& rng) {
  std::vector<int> eligible;
  eligible.reserve(num_pois > visited.size() ? num_pois - visited.size() : 0);
  for (std::size_t p = 0; p < num_pois; ++p)
    if (!visited.count(static_cast<int>(p))) eligible.push_back(static_cast<int>(p));
  if (eligible.size() <= count) return eligible;
  // partial Fisher-Yates: draw `count` without replacement
  for (std::size_t i = 0; i < count; ++i) {
    std::size_t j = i + rng.uniform_index(eligible.size() - i);
    std::swap(eligible[i], eligible[j]);
  }
  eligible.resize(count);
  return eligible;
}

}  // namespace revamp::data
