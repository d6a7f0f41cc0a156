// SPDX-License-Identifier: Apache-2.0
//
#pragma once

#include <map>
#include <string>
#include <vector>

#include "eva/svdstream.hpp"

namespace eva {

enum class VarianceMeasure { eva, raw, max };

struct ComponentScore {
  std::string layer;
  std::size_t component_index = 0;
  double xi = 0.0;
};

struct RankAllocation {
  std::map<std::string, std::size_t> ranks;
  std::size_t budget = 0;  // nominal N * r
  VarianceMeasure measure = VarianceMeasure::eva;
  bool budget_exceeds_tracked = false;  // budget > total tracked components; everything allocated

  std::size_t total() const;
};

// Per-component scores from the singular values of one layer:
//   eva: sigma_j^2 / ((M - 1) * ||sigma||_1)
//   raw: sigma_j^2 / (M - 1)
//   max: sigma_j^2 / sigma_1^2
// M is the sample count behind the stream; requires M >= 2 and a nonzero
// sigma vector.
std::vector<double> explained_variance_ratio(const std::vector<double>& sigma, std::size_t m_samples,
                                             VarianceMeasure measure);

// Scores every tracked component of every state, sorts globally by
// (xi desc, component index asc, layer index asc) and hands out the top
// N * r ranks. Each layer uses its own samples_seen as M.
RankAllocation redistribute_ranks(const std::vector<SvdState>& states, std::size_t r, double rho,
                                  VarianceMeasure measure);

// Per-layer rank difference b - a; both allocations must cover the same layers.
std::map<std::string, long long> allocation_delta(const RankAllocation& a, const RankAllocation& b);

}  // namespace eva
