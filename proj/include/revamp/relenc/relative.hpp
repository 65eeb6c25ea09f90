#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <limits>
#include <string>
#include <vector>

#include "revamp/common.hpp"
#include "revamp/data/window.hpp"
#include "revamp/ei/initiator.hpp"
#include "revamp/numcore/tensor.hpp"

namespace revamp::relenc {

using nc::Real;
using nc::Tensor;

enum class TimeMode {
  kClippedQuotient,  // floor(|dt| / t_min), clipped
  kLiteral,          // floor(|dt| / t_min * clip), clipped
};

struct RelConfig {
  std::size_t clip_app = 64;   // largest app-channel index
  std::size_t clip_poi = 64;   // largest POI-channel index
  std::size_t clip_time = 64;  // largest time-channel index
  TimeMode time_mode = TimeMode::kClippedQuotient;
  bool use_app = true;
  bool use_poi = true;
  bool use_time = true;

  void validate() const {
    if (clip_app == 0 || clip_poi == 0 || clip_time == 0)
      throw ConfigError("relenc: clips must be positive");
  }
};

// Mean of the table rows named by a category set; the empty set maps to the
// zero row so pad slots stay inert.
inline std::vector<Real> net_embedding(const std::vector<int>& cats, const Tensor& table) {
  const std::size_t d = table.cols();
  std::vector<Real> mu(d, 0.0);
  if (cats.empty()) return mu;
  for (int c : cats) {
    if (c < 0 || static_cast<std::size_t>(c) >= table.rows())
      throw LookupError("net_embedding: category id " + std::to_string(c) + " outside table");
    for (std::size_t k = 0; k < d; ++k) mu[k] += table.at(static_cast<std::size_t>(c), k);
  }
  for (auto& v : mu) v /= static_cast<Real>(cats.size());
  return mu;
}

// Per-slot mean category embeddings of one window. Pad rows are zero.
struct NetEmbeddings {
  Tensor mu_app;  // N x D
  Tensor mu_poi;  // N x D
};

inline NetEmbeddings net_embeddings(const data::Window& w, const ei::CategoryEmbeddingTable& t) {
  if (!t.frozen) throw UsageError("net_embeddings: embedding table is not frozen");
  const std::size_t n = w.size();
  NetEmbeddings e;
  e.mu_app = Tensor({n, t.dim});
  e.mu_poi = Tensor({n, t.dim});
  for (std::size_t i = 0; i < n; ++i) {
    if (!w.real[i]) continue;
    std::vector<Real> a = net_embedding(w.app_cats[i], t.app);
    std::vector<Real> s = net_embedding(w.poi_cats[i], t.poi);
    for (std::size_t k = 0; k < t.dim; ++k) {
      e.mu_app.at(i, k) = a[k];
      e.mu_poi.at(i, k) = s[k];
    }
  }
  return e;
}

// Discretized pairwise cosine variation of the rows of `mu` over the real
// slots: f = 1 - cos, min/max-normalized over all real pairs (the diagonal
// included, so min is ordinarily 0), scaled to [0, clip] and floored. A
// degenerate window (all f equal, e.g. a single real slot) yields all zeros,
// as does any pair touching a pad slot.
inline std::vector<int> cosine_variance_matrix(const Tensor& mu, const std::vector<bool>& real,
                                               std::size_t clip) {
  const std::size_t n = real.size();
  if (mu.rows() != n) throw DimensionError("cosine_variance_matrix: row count != window size");
  const std::size_t d = mu.cols();
  std::vector<int> out(n * n, 0);

  std::vector<std::vector<Real>> unit(n);
  for (std::size_t i = 0; i < n; ++i) {
    if (!real[i]) continue;
    Real sq = 0.0;
    for (std::size_t k = 0; k < d; ++k) sq += mu.at(i, k) * mu.at(i, k);
    unit[i].assign(d, 0.0);
    if (sq > 0.0) {
      const Real norm = std::sqrt(sq);
      for (std::size_t k = 0; k < d; ++k) unit[i][k] = mu.at(i, k) / norm;
    }
  }

  std::vector<Real> f(n * n, 0.0);
  Real fmin = std::numeric_limits<Real>::infinity();
  Real fmax = -std::numeric_limits<Real>::infinity();
  bool any = false;
  for (std::size_t i = 0; i < n; ++i) {
    if (!real[i]) continue;
    for (std::size_t j = 0; j < n; ++j) {
      if (!real[j]) continue;
      Real dot = 0.0;
      for (std::size_t k = 0; k < d; ++k) dot += unit[i][k] * unit[j][k];
      const Real v = 1.0 - dot;
      f[i * n + j] = v;
      fmin = std::min(fmin, v);
      fmax = std::max(fmax, v);
      any = true;
    }
  }
  if (!any || !(fmax > fmin)) return out;

  const Real range = fmax - fmin;
  for (std::size_t i = 0; i < n; ++i) {
    if (!real[i]) continue;
    for (std::size_t j = 0; j < n; ++j) {
      if (!real[j]) continue;
      const Real scaled = (f[i * n + j] - fmin) / range * static_cast<Real>(clip);
      long long idx = static_cast<long long>(std::floor(scaled));
      idx = std::clamp(idx, 0LL, static_cast<long long>(clip));
      out[i * n + j] = static_cast<int>(idx);
    }
  }
  return out;
}

// Discretized pairwise time distance over the real slots. The unit is the
// smallest positive gap between consecutive real check-ins; if no such gap
// exists the matrix is all zeros. Integer arithmetic keeps both modes exact
// under rescaled clocks.
inline std::vector<int> time_variance_matrix(const std::vector<long long>& ts,
                                             const std::vector<bool>& real, std::size_t clip,
                                             TimeMode mode) {
  const std::size_t n = real.size();
  if (ts.size() != n) throw DimensionError("time_variance_matrix: timestamp count != window size");
  std::vector<int> out(n * n, 0);

  long long tmin = 0;
  for (std::size_t i = 0; i + 1 < n; ++i) {
    if (!real[i] || !real[i + 1]) continue;
    const long long gap = std::llabs(ts[i + 1] - ts[i]);
    if (gap > 0 && (tmin == 0 || gap < tmin)) tmin = gap;
  }
  if (tmin == 0) return out;

  const auto cl = static_cast<long long>(clip);
  for (std::size_t i = 0; i < n; ++i) {
    if (!real[i]) continue;
    for (std::size_t j = 0; j < n; ++j) {
      if (!real[j]) continue;
      const long long dt = std::llabs(ts[i] - ts[j]);
      long long idx;
      if (mode == TimeMode::kClippedQuotient) {
        idx = std::min(dt / tmin, cl);
      } else if (dt >= tmin) {
        idx = cl;
      } else {
        idx = static_cast<long long>(static_cast<__int128>(dt) * cl / tmin);
      }
      out[i * n + j] = static_cast<int>(std::min(idx, cl));
    }
  }
  return out;
}

// The three relative index matrices of one window, row-major n*n.
struct RelMatrices {
  std::size_t n = 0;
  std::vector<int> app;   // J
  std::vector<int> poi;   // K
  std::vector<int> time;  // T

  int at_app(std::size_t i, std::size_t j) const { return app[i * n + j]; }
  int at_poi(std::size_t i, std::size_t j) const { return poi[i * n + j]; }
  int at_time(std::size_t i, std::size_t j) const { return time[i * n + j]; }

  bool operator==(const RelMatrices& o) const {
    return n == o.n && app == o.app && poi == o.poi && time == o.time;
  }
};

// A disabled channel is forced to the all-zero index matrix; retrieval then
// sees table row 0 everywhere, which the consistency contract pins to zero.
inline RelMatrices build_relative(const data::Window& w, const NetEmbeddings& emb,
                                  const RelConfig& cfg) {
  cfg.validate();
  const std::size_t n = w.size();
  RelMatrices m;
  m.n = n;
  m.app = cfg.use_app ? cosine_variance_matrix(emb.mu_app, w.real, cfg.clip_app)
                      : std::vector<int>(n * n, 0);
  m.poi = cfg.use_poi ? cosine_variance_matrix(emb.mu_poi, w.real, cfg.clip_poi)
                      : std::vector<int>(n * n, 0);
  m.time = cfg.use_time ? time_variance_matrix(w.timestamps, w.real, cfg.clip_time, cfg.time_mode)
                        : std::vector<int>(n * n, 0);
  return m;
}

// --- cache: magic, version, config echo, then u16 entries per window ---

namespace detail {

constexpr std::uint32_t kRelMagic = 0x52565243;  // "RVRC"
constexpr std::uint32_t kRelVersion = 1;

template <typename T>
void put(std::ofstream& out, T v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T take(std::ifstream& in) {
  T v{};
  in.read(reinterpret_cast<char*>(&v), sizeof(T));
  if (!in) throw IoError("relative cache: short read");
  return v;
}

inline void put_matrix(std::ofstream& out, const std::vector<int>& m, std::size_t clip) {
  for (int v : m) {
    if (v < 0 || static_cast<std::size_t>(v) > clip)
      throw UsageError("relative cache: index outside [0, clip]");
    put(out, static_cast<std::uint16_t>(v));
  }
}

}  // namespace detail

inline void save_rel_cache(const std::string& path, const std::vector<RelMatrices>& windows,
                           const RelConfig& cfg) {
  if (cfg.clip_app > 0xffff || cfg.clip_poi > 0xffff || cfg.clip_time > 0xffff)
    throw ConfigError("relative cache: clips beyond 16-bit entries");
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write relative cache: " + path);
  detail::put(out, detail::kRelMagic);
  detail::put(out, detail::kRelVersion);
  detail::put(out, static_cast<std::uint32_t>(cfg.clip_app));
  detail::put(out, static_cast<std::uint32_t>(cfg.clip_poi));
  detail::put(out, static_cast<std::uint32_t>(cfg.clip_time));
  detail::put(out, static_cast<std::uint8_t>(cfg.time_mode == TimeMode::kLiteral ? 1 : 0));
  detail::put(out, static_cast<std::uint32_t>(windows.size()));
  for (const auto& m : windows) {
    detail::put(out, static_cast<std::uint32_t>(m.n));
    detail::put_matrix(out, m.app, cfg.clip_app);
    detail::put_matrix(out, m.poi, cfg.clip_poi);
    detail::put_matrix(out, m.time, cfg.clip_time);
  }
  if (!out) throw IoError("relative cache write failed: " + path);
}

struct RelCache {
  RelConfig config;
  std::vector<RelMatrices> windows;
};

inline RelCache load_rel_cache(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open relative cache: " + path);
  if (detail::take<std::uint32_t>(in) != detail::kRelMagic)
    throw ParseError("relative cache: bad magic: " + path);
  if (detail::take<std::uint32_t>(in) != detail::kRelVersion)
    throw ParseError("relative cache: unsupported version: " + path);
  RelCache c;
  c.config.clip_app = detail::take<std::uint32_t>(in);
  c.config.clip_poi = detail::take<std::uint32_t>(in);
  c.config.clip_time = detail::take<std::uint32_t>(in);
  c.config.time_mode =
      detail::take<std::uint8_t>(in) ? TimeMode::kLiteral : TimeMode::kClippedQuotient;
  const std::uint32_t count = detail::take<std::uint32_t>(in);
  c.windows.resize(count);
  for (auto& m : c.windows) {
    m.n = detail::take<std::uint32_t>(in);
    auto read_matrix = [&](std::vector<int>& v, std::size_t clip) {
      v.resize(m.n * m.n);
      for (auto& e : v) {
        const std::uint16_t raw = detail::take<std::uint16_t>(in);
        if (raw > clip) throw ParseError("relative cache: entry beyond clip: " + path);
        e = raw;
      }
    };
    read_matrix(m.app, c.config.clip_app);
    read_matrix(m.poi, c.config.clip_poi);
    read_matrix(m.time, c.config.clip_time);
  }
  return c;
}

}  // namespace revamp::relenc
