#pragma once

#include <cstddef>
#include <vector>

#include "revamp/common.hpp"
#include "revamp/data/corpus.hpp"

namespace revamp::data {

// Fixed-length view of the tail of a user sequence, left-padded. Pad slots
// carry the reserved pad POI id, empty category sets and a zero timestamp;
// `real[i]` is false there. The pad id is one past the corpus POI range (the
// embedding table reserves an extra final row for it).
struct Window {
  std::vector<int> poi_ids;
  std::vector<long long> timestamps;
  std::vector<std::vector<int>> app_cats;
  std::vector<std::vector<int>> poi_cats;
  std::vector<bool> real;
  std::size_t n_real = 0;

  std::size_t size() const { return poi_ids.size(); }
};

inline Window window(const std::vector<CheckIn>& seq, std::size_t n, int pad_id) {
  if (n == 0) throw ConfigError("window: length must be positive");
  if (seq.empty()) throw UsageError("window: empty sequence");
  Window w;
  w.poi_ids.assign(n, pad_id);
  w.timestamps.assign(n, 0);
  w.app_cats.assign(n, {});
  w.poi_cats.assign(n, {});
  w.real.assign(n, false);
  const std::size_t take = std::min(seq.size(), n);
  const std::size_t offset = n - take;          // pads occupy the prefix
  const std::size_t from = seq.size() - take;   // keep the most recent events
  for (std::size_t i = 0; i < take; ++i) {
    const CheckIn& e = seq[from + i];
    w.poi_ids[offset + i] = e.poi_id;
    w.timestamps[offset + i] = e.timestamp;
    w.app_cats[offset + i] = e.app_cats;
    w.poi_cats[offset + i] = e.poi_cats;
    w.real[offset + i] = true;
  }
  w.n_real = take;
  return w;
}

}  // namespace revamp::data
