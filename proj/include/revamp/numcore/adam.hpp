#pragma once

#include <cmath>
#include <cstdint>
#include <unordered_map>
#include <utility>
#include <vector>

#include "revamp/common.hpp"
#include "revamp/numcore/graph.hpp"
#include "revamp/numcore/tensor.hpp"

namespace revamp::nc {

struct AdamConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

// Adam with bias correction, updating parameters in place. First and second
// moments live per registered parameter; the step counter is shared.
class Adam {
 public:
  explicit Adam(std::vector<Parameter*> params, AdamConfig cfg = {})
      : cfg_(cfg), params_(std::move(params)) {
    if (cfg_.lr <= 0.0) throw ConfigError("Adam: lr must be positive");
    for (Parameter* p : params_) {
      if (state_.count(p)) throw UsageError("Adam: parameter registered twice: " + p->name);
      state_.emplace(p, Moments{Tensor(p->value.shape), Tensor(p->value.shape)});
    }
  }

  std::uint64_t step_count() const { return t_; }

  // `bound` pairs each live parameter with the leaf it was bound to when the
  // batch graph was built; `grads` is that graph's backward() result.
  void step(const std::vector<std::pair<Parameter*, NodeId>>& bound, const GradMap& grads) {
    ++t_;
    const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
    const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
    for (const auto& [p, node] : bound) {
      auto it = state_.find(p);
      if (it == state_.end()) throw UsageError("Adam: unregistered parameter: " + p->name);
      if (!grads.has(node))
        throw UsageError("Adam: missing gradient for parameter: " + p->name);
      const Tensor& g = grads.at(node);
      if (!g.same_shape(p->value))
        throw DimensionError("Adam: gradient shape mismatch for " + p->name);
      Moments& mo = it->second;
      for (std::size_t i = 0; i < g.numel(); ++i) {
        const double gi = g.data[i];
        mo.m.data[i] = cfg_.beta1 * mo.m.data[i] + (1.0 - cfg_.beta1) * gi;
        mo.v.data[i] = cfg_.beta2 * mo.v.data[i] + (1.0 - cfg_.beta2) * gi * gi;
        const double mhat = mo.m.data[i] / bc1;
        const double vhat = mo.v.data[i] / bc2;
        p->value.data[i] -= cfg_.lr * mhat / (std::sqrt(vhat) + cfg_.eps);
      }
    }
  }

 private:
  struct Moments {
    Tensor m, v;
  };

  AdamConfig cfg_;
  std::vector<Parameter*> params_;
  std::unordered_map<Parameter*, Moments> state_;
  std::uint64_t t_ = 0;
};

}  // namespace revamp::nc
