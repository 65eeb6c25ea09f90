#pragma once

#include <cmath>
#include <cstdint>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "revamp/common.hpp"

namespace revamp::ei {

inline std::string app_cat_name(int id) { return "app_" + std::to_string(id); }
inline std::string poi_cat_name(int id) { return "poi_" + std::to_string(id); }

// Pretrained sentence-embedding vectors for category names, one per line:
// name<TAB>d floats. Missing names fall back to a deterministic unit-norm
// pseudo-vector derived from the hash of the name, so a run without a vector
// file is still fully reproducible.
struct PretrainedVectors {
  std::size_t dim = 768;
  std::map<std::string, std::vector<double>> vecs;
  bool allow_fallback = true;
  std::uint64_t fallback_seed = 0;

  static PretrainedVectors fallback_only(std::size_t dim = 768, std::uint64_t seed = 0) {
    PretrainedVectors pv;
    pv.dim = dim;
    pv.fallback_seed = seed;
    return pv;
  }

  static PretrainedVectors load(const std::string& path, std::uint64_t fallback_seed = 0) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open pretrained vector file: " + path);
    PretrainedVectors pv;
    pv.fallback_seed = fallback_seed;
    std::string line;
    std::size_t line_no = 0;
    std::size_t dim = 0;
    while (std::getline(in, line)) {
      ++line_no;
      if (line.empty() || line[0] == '#') continue;
      std::size_t tab = line.find('\t');
      if (tab == std::string::npos)
        throw ParseError("vector line " + std::to_string(line_no) + ": missing tab separator");
      std::string name = line.substr(0, tab);
      std::vector<double> v;
      std::stringstream ss(line.substr(tab + 1));
      double x;
      while (ss >> x) v.push_back(x);
      if (v.empty())
        throw ParseError("vector line " + std::to_string(line_no) + ": no components");
      if (dim == 0)
        dim = v.size();
      else if (v.size() != dim)
        throw ParseError("vector line " + std::to_string(line_no) + ": dimension " +
                         std::to_string(v.size()) + " != " + std::to_string(dim));
      pv.vecs[name] = std::move(v);
    }
    pv.dim = dim == 0 ? 768 : dim;
    return pv;
  }

  std::vector<double> get(const std::string& name) const {
    auto it = vecs.find(name);
    if (it != vecs.end()) return it->second;
    if (!allow_fallback)
      throw LookupError("no pretrained vector for category '" + name + "'");
    // unit-norm pseudo-vector seeded by the category name
    Rng rng(derive_seed(fallback_seed, "pretrained-fallback", fnv1a(name)));
    std::vector<double> v(dim);
    double norm2 = 0.0;
    for (double& x : v) {
      x = rng.normal();
      norm2 += x * x;
    }
    double inv = 1.0 / std::sqrt(norm2);
    for (double& x : v) x *= inv;
    return v;
  }
};

}  // namespace revamp::ei
