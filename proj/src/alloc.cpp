// SPDX-License-Identifier: Apache-2.0
//
#include "eva/alloc.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace eva {

std::size_t RankAllocation::total() const {
  std::size_t t = 0;
  for (const auto& [name, rank] : ranks) t += rank;
  return t;
}

std::vector<double> explained_variance_ratio(const std::vector<double>& sigma, std::size_t m_samples,
                                             VarianceMeasure measure) {
  if (m_samples < 2) throw std::invalid_argument("explained_variance_ratio: needs M >= 2 samples");
  if (sigma.empty()) throw std::invalid_argument("explained_variance_ratio: empty sigma");
  double l1 = 0.0;
  double top = 0.0;
  for (double s : sigma) {
    if (!(s >= 0.0) || !std::isfinite(s)) throw std::invalid_argument("explained_variance_ratio: sigma must be finite and >= 0");
    l1 += s;
    top = std::max(top, s);
  }
  if (l1 == 0.0) throw std::invalid_argument("explained_variance_ratio: all-zero sigma");

  const double m1 = static_cast<double>(m_samples - 1);
  std::vector<double> xi(sigma.size());
  switch (measure) {
    case VarianceMeasure::eva:
      for (std::size_t j = 0; j < sigma.size(); ++j) xi[j] = sigma[j] * sigma[j] / (m1 * l1);
      break;
    case VarianceMeasure::raw:
      for (std::size_t j = 0; j < sigma.size(); ++j) xi[j] = sigma[j] * sigma[j] / m1;
      break;
    case VarianceMeasure::max:
      for (std::size_t j = 0; j < sigma.size(); ++j) xi[j] = (sigma[j] * sigma[j]) / (top * top);
      break;
  }
  return xi;
}

RankAllocation redistribute_ranks(const std::vector<SvdState>& states, std::size_t r, double rho,
                                  VarianceMeasure measure) {
  if (states.empty()) throw std::invalid_argument("redistribute_ranks: no states");
  if (r < 1) throw std::invalid_argument("redistribute_ranks: r must be >= 1");
  if (rho < 1.0) throw std::invalid_argument("redistribute_ranks: rho must be >= 1");

  struct Entry {
    double xi;
    std::size_t component_index;
    std::size_t layer_index;   // position in the network, not enumeration order
    std::size_t state_slot;
  };
  std::vector<Entry> entries;
  for (std::size_t slot = 0; slot < states.size(); ++slot) {
    const SvdState& s = states[slot];
    if (s.m == 0) throw std::invalid_argument("redistribute_ranks: state '" + s.layer + "' was never updated");
    const auto xi = explained_variance_ratio(s.sigma, s.samples_seen, measure);
    for (std::size_t j = 0; j < xi.size(); ++j) entries.push_back({xi[j], j, s.layer_index, slot});
  }

  std::sort(entries.begin(), entries.end(), [](const Entry& a, const Entry& b) {
    if (a.xi != b.xi) return a.xi > b.xi;
    if (a.component_index != b.component_index) return a.component_index < b.component_index;
    return a.layer_index < b.layer_index;
  });

  RankAllocation alloc;
  alloc.measure = measure;
  alloc.budget = states.size() * r;
  for (const SvdState& s : states) alloc.ranks[s.layer] = 0;

  const std::size_t take = std::min(alloc.budget, entries.size());
  alloc.budget_exceeds_tracked = alloc.budget > entries.size();
  for (std::size_t i = 0; i < take; ++i) alloc.ranks[states[entries[i].state_slot].layer] += 1;
  return alloc;
}

std::map<std::string, long long> allocation_delta(const RankAllocation& a, const RankAllocation& b) {
  if (a.ranks.size() != b.ranks.size()) throw std::invalid_argument("allocation_delta: layer sets differ");
  std::map<std::string, long long> delta;
  for (const auto& [name, rank_a] : a.ranks) {
    auto it = b.ranks.find(name);
    if (it == b.ranks.end()) throw std::invalid_argument("allocation_delta: layer sets differ");
    delta[name] = static_cast<long long>(it->second) - static_cast<long long>(rank_a);
  }
  return delta;
}

}  // namespace eva
