// SPDX-License-Identifier: Apache-2.0
//
#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "eva/matrix.hpp"
#include "eva/net.hpp"

namespace eva {

// Streaming summary of the right-singular subspace of one layer's activation
// stream. Tracks up to ceil(r * rho) components; once converged the state is
// frozen and must not be updated again.
struct SvdState {
  std::string layer;
  std::size_t layer_index = 0;   // position in the network's layer order
  Matrix v;                      // m x d, rows are right-singular vectors
  std::vector<double> sigma;     // m, descending
  std::size_t m = 0;             // currently tracked component count
  std::size_t m_target = 0;      // ceil(r * rho) capped at d
  std::size_t dim = 0;           // feature dimension d
  std::size_t samples_seen = 0;  // unmasked rows consumed
  std::size_t updates = 0;
  bool converged = false;
  std::vector<double> last_similarity;  // per tracked component, vs previous update
};

struct StreamConfig {
  std::size_t r = 16;        // base rank
  double rho = 1.0;          // over-provisioning factor, >= 1
  double tau = 0.99;         // per-component cosine convergence threshold
  double delta = 1.0;        // stop once this fraction of layers converged
  std::size_t max_batches = 100;
  bool use_randomized = false;        // randomized instead of exact SVD inside updates
  bool center_activations = false;    // subtract per-batch column means first
  bool convergence_first_r_only = false;  // literal reading: test only the first r components

  void validate() const;
  std::size_t tracked_components(std::size_t dim) const;  // ceil(r*rho) capped at dim
};

SvdState make_svd_state(const std::string& layer, std::size_t layer_index, std::size_t dim, const StreamConfig& cfg);

// Fold one activation batch into the state: re-factor [diag(sigma) V ; X],
// keep the top tracked components, and record per-component |cos| against the
// previous basis (components that appeared this step count as 0).
SvdState svd_update(const SvdState& state, const Matrix& x, const StreamConfig& cfg);

// True when every tracked component moved less than tau allows. Requires at
// least two updates so a previous basis exists.
bool check_convergence(const SvdState& state, double tau, bool first_r_only = false, std::size_t r = 0);

// Pull-based batch stream; nullopt ends the stream.
using BatchProvider = std::function<std::optional<Batch>()>;

struct InitPassResult {
  std::vector<SvdState> states;   // network layer order
  std::size_t batches_consumed = 0;  // T
  bool all_converged = false;
};

// Alg: iterate batches, tap activations of every not-yet-converged layer,
// update its state, freeze converged layers, stop at the delta fraction, all
// converged, or max_batches. Batches whose mask removes every row are skipped
// and do not count toward T.
InitPassResult run_initialization_pass(const ToyNetwork& net, const BatchProvider& provider, const StreamConfig& cfg);

}  // namespace eva
