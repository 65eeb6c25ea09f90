#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <vector>

#include "revamp/common.hpp"
#include "revamp/numcore/graph.hpp"
#include "revamp/numcore/tensor.hpp"

namespace revamp::nc {

// Builds a scalar loss over the given leaves. Must be deterministic in the
// leaf values (fixed negatives, no dropout), or finite differences lie.
using LossBuilder = std::function<NodeId(Graph&, const std::vector<NodeId>&)>;

// Compares backward() gradients against central finite differences
// (f(x+h) - f(x-h)) / 2h for every element of every parameter and returns the
// worst relative error, with denominator max(1, |g_ad|, |g_fd|) so nearly-zero
// gradients are compared absolutely.
inline double grad_check(std::vector<Tensor> params, const LossBuilder& build, double h = 1e-5) {
  if (params.empty()) throw UsageError("grad_check: no parameters given");

  auto eval = [&](const std::vector<Tensor>& pts) {
    Graph g(false);
    std::vector<NodeId> ids;
    ids.reserve(pts.size());
    for (const Tensor& t : pts) ids.push_back(g.constant(t));
    NodeId loss = build(g, ids);
    if (g.val(loss).numel() != 1) throw UsageError("grad_check: loss is not scalar");
    return g.val(loss).data[0];
  };

  std::vector<Tensor> analytic;
  {
    Graph g(false);
    std::vector<NodeId> ids;
    ids.reserve(params.size());
    for (Tensor& t : params) {
      t.requires_grad = true;
      ids.push_back(g.input(t));
    }
    NodeId loss = build(g, ids);
    GradMap gm = g.backward(loss);
    for (NodeId id : ids) analytic.push_back(gm.at(id));
  }

  double worst = 0.0;
  for (std::size_t p = 0; p < params.size(); ++p) {
    for (std::size_t i = 0; i < params[p].numel(); ++i) {
      const double orig = params[p].data[i];
      params[p].data[i] = orig + h;
      const double fp = eval(params);
      params[p].data[i] = orig - h;
      const double fm = eval(params);
      params[p].data[i] = orig;
      const double fd = (fp - fm) / (2.0 * h);
      const double ad = analytic[p].data[i];
      const double rel =
          std::abs(ad - fd) / std::max({1.0, std::abs(ad), std::abs(fd)});
      worst = std::max(worst, rel);
    }
  }
  return worst;
}

}  // namespace revamp::nc
