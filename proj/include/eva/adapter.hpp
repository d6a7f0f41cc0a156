// SPDX-License-Identifier: Apache-2.0
//
#pragma once

#include <cstdint>
#include <map>
#include <string>

#include "eva/alloc.hpp"
#include "eva/net.hpp"

namespace eva {

enum class InitKind { eva, eva_whiten, eva_perm, eva_rot, lora_redist, weight_svd, random };

struct InitMode {
  InitKind kind = InitKind::eva;
  std::uint64_t seed = 0;         // drives perm/rot/random/lora_redist
  double whiten_exponent = 0.5;   // 0.5 or 1.0

  void validate() const;
};

struct LoraAdapter {
  std::string layer;
  Matrix a;       // r x d
  Matrix b;       // k x r, zero at initialization
  double alpha = 1.0;
  std::size_t rank = 0;
  double scaling = 1.0;  // alpha / rank
};

using AdapterMap = std::map<std::string, LoraAdapter>;

// Build one adapter per layer with a nonzero allocated rank. Directions come
// from the converged activation subspaces (eva family), the host weights
// (weight_svd) or a seeded uniform init (random, lora_redist); B is always
// zero so the adapted network starts exactly at the base network.
AdapterMap init_adapters(const ToyNetwork& net, const std::vector<SvdState>& states, const RankAllocation& allocation,
                         const InitMode& mode, double alpha);

// h = W x + (alpha / r) * B (A x)
std::vector<double> adapter_forward(const Matrix& w, const LoraAdapter& adapter, std::span<const double> x);

// W' = W + (alpha / r) * B A
Matrix merge(const Matrix& w, const LoraAdapter& adapter);

// view map for the network forward/backward core
AdapterViews make_views(const AdapterMap& adapters);

InitKind parse_init_kind(const std::string& text);        // throws on unknown
std::string init_kind_name(InitKind kind);

// true for modes whose A comes from the activation-SVD states
bool mode_uses_states(InitKind kind);

}  // namespace eva
