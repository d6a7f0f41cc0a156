// SPDX-License-Identifier: Apache-2.0
//
#include "eva/svdstream.hpp"

#include <algorithm>
#include <cmath>
#include <set>
#include <stdexcept>

#include "eva/linalg.hpp"
#include "eva/rng.hpp"

namespace eva {

void StreamConfig::validate() const {
  if (r < 1) throw std::invalid_argument("stream config: r must be >= 1");
  if (rho < 1.0) throw std::invalid_argument("stream config: rho must be >= 1");
  if (!(tau > 0.0 && tau <= 1.0)) throw std::invalid_argument("stream config: tau must be in (0, 1]");
  if (!(delta > 0.0 && delta <= 1.0)) throw std::invalid_argument("stream config: delta must be in (0, 1]");
  if (max_batches < 1) throw std::invalid_argument("stream config: max_batches must be >= 1");
}

std::size_t StreamConfig::tracked_components(std::size_t dim) const {
  const auto target = static_cast<std::size_t>(std::ceil(static_cast<double>(r) * rho));
  return std::min(target, dim);
}

SvdState make_svd_state(const std::string& layer, std::size_t layer_index, std::size_t dim, const StreamConfig& cfg) {
  SvdState s;
  s.layer = layer;
  s.layer_index = layer_index;
  s.dim = dim;
  s.m_target = cfg.tracked_components(dim);
  return s;
}

SvdState svd_update(const SvdState& state, const Matrix& x, const StreamConfig& cfg) {
  if (state.converged) throw std::logic_error("svd_update: state is converged and frozen");
  if (x.empty()) throw std::invalid_argument("svd_update: empty batch");
  if (x.cols() != state.dim) throw std::invalid_argument("svd_update: dimension mismatch");
  x.require_finite("svd_update");

  Matrix batch = x;
  if (cfg.center_activations) {
    for (std::size_t j = 0; j < batch.cols(); ++j) {
      double mean = 0.0;
      for (std::size_t i = 0; i < batch.rows(); ++i) mean += batch.at(i, j);
      mean /= static_cast<double>(batch.rows());
      for (std::size_t i = 0; i < batch.rows(); ++i) batch.at(i, j) -= mean;
    }
  }

  Matrix stacked;
  if (state.m == 0) {
    stacked = std::move(batch);
  } else {
    Matrix weighted = state.v;  // rows scaled by their singular values
    for (std::size_t i = 0; i < weighted.rows(); ++i)
      for (std::size_t j = 0; j < weighted.cols(); ++j) weighted.at(i, j) *= state.sigma[i];
    stacked = vstack(weighted, batch);
  }

  SvdState next = state;
  next.samples_seen = state.samples_seen + x.rows();
  next.updates = state.updates + 1;
  // tracked count grows with the evidence: capped by samples seen so far,
  // the feature dimension, and the ceil(r*rho) target
  next.m = std::min({state.m_target, next.samples_seen, stacked.rows(), stacked.cols()});

  SvdResult res;
  if (cfg.use_randomized && next.m + 4 <= std::min(stacked.rows(), stacked.cols())) {
    const std::uint64_t seed = mix_seed(0x5EED + state.layer_index, next.updates);
    res = svd_randomized(stacked, next.m, 4, seed);
  } else {
    res = svd_truncated(stacked, next.m);
  }

  next.last_similarity.assign(next.m, 0.0);
  const std::size_t comparable = std::min(state.m, next.m);
  if (comparable > 0) {
    const Matrix prev_rows = take_rows(state.v, comparable);
    const Matrix new_rows = take_rows(res.vt, comparable);
    const auto sims = component_cosine_similarity(prev_rows, new_rows);
    std::copy(sims.begin(), sims.end(), next.last_similarity.begin());
  }
  next.v = std::move(res.vt);
  next.sigma = std::move(res.sigma);
  return next;
}

bool check_convergence(const SvdState& state, double tau, bool first_r_only, std::size_t r) {
  if (state.updates < 2) throw std::logic_error("check_convergence: needs at least two updates");
  std::size_t scope = state.last_similarity.size();
  if (first_r_only && r > 0) scope = std::min(scope, r);
  // a state that has not yet reached its tracked-component target keeps
  // growing, so its newest components have no history and cannot pass
  if (state.m < state.m_target) return false;
  for (std::size_t j = 0; j < scope; ++j)
    if (state.last_similarity[j] < tau) return false;
  return scope > 0;
}

InitPassResult run_initialization_pass(const ToyNetwork& net, const BatchProvider& provider, const StreamConfig& cfg) {
  cfg.validate();
  net.validate();
  const auto layers = net.adaptable_layer_names();
  if (layers.empty()) throw std::invalid_argument("initialization pass: every layer is frozen/excluded");

  InitPassResult result;
  for (const std::string& name : layers) {
    const LinearLayer* layer = net.find_layer(name);
    result.states.push_back(make_svd_state(name, net.layer_index(name), layer->w.cols(), cfg));
  }

  const auto converged_count = [&] {
    std::size_t n = 0;
    for (const SvdState& s : result.states) n += s.converged ? 1 : 0;
    return n;
  };

  // generous cap on pulls so a stream of fully-masked batches cannot spin forever
  std::size_t pulls_left = cfg.max_batches * 10 + 100;
  while (result.batches_consumed < cfg.max_batches) {
    if (converged_count() == result.states.size()) break;
    if (pulls_left-- == 0) break;
    std::optional<Batch> maybe = provider();
    if (!maybe) break;  // stream ended

    std::set<std::string> wanted;
    for (const SvdState& s : result.states)
      if (!s.converged) wanted.insert(s.layer);
    const TapResult taps = forward_with_taps(net, *maybe, wanted);
    if (taps.all_rows_masked) continue;  // skipped, does not count toward T

    for (SvdState& s : result.states) {
      if (s.converged) continue;
      s = svd_update(s, taps.taps.at(s.layer), cfg);
      if (s.updates >= 2 && check_convergence(s, cfg.tau, cfg.convergence_first_r_only, cfg.r)) s.converged = true;
    }
    result.batches_consumed += 1;

    const double frac = static_cast<double>(converged_count()) / static_cast<double>(result.states.size());
    if (frac >= cfg.delta) break;
  }

  if (result.batches_consumed == 0) throw std::runtime_error("initialization pass: stream exhausted before any update");
  result.all_converged = converged_count() == result.states.size();
  return result;
}

}  // namespace eva
