// SPDX-License-Identifier: Apache-2.0
//
#include "eva/adapter.hpp"

#include <cmath>
#include <stdexcept>

#include "eva/linalg.hpp"
#include "eva/rng.hpp"

namespace eva {

namespace {

const SvdState* find_state(const std::vector<SvdState>& states, const std::string& layer) {
  for (const SvdState& s : states)
    if (s.layer == layer) return &s;
  return nullptr;
}

Matrix uniform_lora_init(std::size_t rank, std::size_t dim, std::uint64_t seed) {
  // LoRA-default Kaiming-style range
  const double bound = 1.0 / std::sqrt(static_cast<double>(dim));
  Rng rng(seed);
  Matrix a(rank, dim);
  for (double& v : a.data()) v = rng.uniform(-bound, bound);
  return a;
}

Matrix init_directions(const ToyNetwork& net, const std::vector<SvdState>& states, const InitMode& mode,
                       const std::string& layer_name, std::size_t rank, std::size_t dim) {
  const std::uint64_t layer_seed = mix_seed(mode.seed, net.layer_index(layer_name));

  if (mode.kind == InitKind::random || mode.kind == InitKind::lora_redist)
    return uniform_lora_init(rank, dim, layer_seed);

  if (mode.kind == InitKind::weight_svd) {
    const LinearLayer* layer = net.find_layer(layer_name);
    const std::size_t kmax = std::min(layer->w.rows(), layer->w.cols());
    if (rank > kmax) throw std::invalid_argument("init_adapters: rank exceeds weight rank at '" + layer_name + "'");
    return take_rows(svd_truncated(layer->w, rank).vt, rank);
  }

  const SvdState* state = find_state(states, layer_name);
  if (!state) throw std::invalid_argument("init_adapters: no SVD state for layer '" + layer_name + "'");
  if (rank > state->m)
    throw std::invalid_argument("init_adapters: rank exceeds tracked components at '" + layer_name + "'");
  Matrix a = take_rows(state->v, rank);

  switch (mode.kind) {
    case InitKind::eva:
      break;
    case InitKind::eva_whiten: {
      const double m1 = static_cast<double>(state->samples_seen) - 1.0;
      if (m1 < 1.0) throw std::invalid_argument("init_adapters: whitening needs at least two samples");
      for (std::size_t j = 0; j < rank; ++j) {
        const double eigen = state->sigma[j] * state->sigma[j] / m1;
        if (eigen <= 0.0) throw std::invalid_argument("init_adapters: zero eigenvalue under whitening");
        const double scale = std::pow(eigen, -mode.whiten_exponent);
        for (std::size_t c = 0; c < a.cols(); ++c) a.at(j, c) *= scale;
      }
      break;
    }
    case InitKind::eva_perm: {
      Rng rng(layer_seed);
      const auto perm = rng.permutation(rank);
      Matrix shuffled(rank, a.cols());
      for (std::size_t j = 0; j < rank; ++j)
        for (std::size_t c = 0; c < a.cols(); ++c) shuffled.at(j, c) = a.at(perm[j], c);
      a = std::move(shuffled);
      break;
    }
    case InitKind::eva_rot:
      a = matmul(a, random_orthogonal(dim, layer_seed));
      break;
    default:
      break;
  }
  return a;
}

}  // namespace

void InitMode::validate() const {
  if (whiten_exponent != 0.5 && whiten_exponent != 1.0)
    throw std::invalid_argument("init mode: whiten_exponent must be 0.5 or 1.0");
}

AdapterMap init_adapters(const ToyNetwork& net, const std::vector<SvdState>& states, const RankAllocation& allocation,
                         const InitMode& mode, double alpha) {
  mode.validate();
  AdapterMap adapters;
  for (const auto& [name, rank] : allocation.ranks) {
    if (rank == 0) continue;  // the host weight simply stays frozen
    const LinearLayer* layer = net.find_layer(name);
    if (!layer) throw std::invalid_argument("init_adapters: allocation names unknown layer '" + name + "'");
    const std::size_t k = layer->w.rows();
    const std::size_t d = layer->w.cols();

    LoraAdapter adapter;
    adapter.layer = name;
    adapter.rank = rank;
    adapter.alpha = alpha;
    adapter.scaling = alpha / static_cast<double>(rank);
    adapter.a = init_directions(net, states, mode, name, rank, d);
    adapter.b = Matrix(k, rank);  // zeros: fine-tuning starts from the base model
    adapters.emplace(name, std::move(adapter));
  }
  return adapters;
}

std::vector<double> adapter_forward(const Matrix& w, const LoraAdapter& adapter, std::span<const double> x) {
  if (w.cols() != x.size()) throw std::invalid_argument("adapter_forward: input dimension mismatch");
  if (adapter.a.cols() != w.cols() || adapter.b.rows() != w.rows() || adapter.b.cols() != adapter.a.rows())
    throw std::invalid_argument("adapter_forward: adapter shapes incompatible with W");
  std::vector<double> h = matvec(w, x);
  const std::vector<double> ax = matvec(adapter.a, x);
  const std::vector<double> bax = matvec(adapter.b, ax);
  for (std::size_t i = 0; i < h.size(); ++i) h[i] += adapter.scaling * bax[i];
  return h;
}

Matrix merge(const Matrix& w, const LoraAdapter& adapter) {
  if (adapter.a.cols() != w.cols() || adapter.b.rows() != w.rows() || adapter.b.cols() != adapter.a.rows())
    throw std::invalid_argument("merge: adapter shapes incompatible with W");
  Matrix merged = w;
  add_scaled_in_place(merged, matmul(adapter.b, adapter.a), adapter.scaling);
  return merged;
}

AdapterViews make_views(const AdapterMap& adapters) {
  AdapterViews views;
  for (const auto& [name, adapter] : adapters) views.emplace(name, AdapterView{&adapter.a, &adapter.b, adapter.scaling});
  return views;
}

InitKind parse_init_kind(const std::string& text) {
  if (text == "eva") return InitKind::eva;
  if (text == "eva_whiten") return InitKind::eva_whiten;
  if (text == "eva_perm") return InitKind::eva_perm;
  if (text == "eva_rot") return InitKind::eva_rot;
  if (text == "lora_redist") return InitKind::lora_redist;
  if (text == "weight_svd") return InitKind::weight_svd;
  if (text == "random") return InitKind::random;
  throw std::invalid_argument("unknown init mode '" + text + "'");
}

std::string init_kind_name(InitKind kind) {
  switch (kind) {
    case InitKind::eva: return "eva";
    case InitKind::eva_whiten: return "eva_whiten";
    case InitKind::eva_perm: return "eva_perm";
    case InitKind::eva_rot: return "eva_rot";
    case InitKind::lora_redist: return "lora_redist";
    case InitKind::weight_svd: return "weight_svd";
    case InitKind::random: return "random";
  }
  return "?";
}

bool mode_uses_states(InitKind kind) {
  switch (kind) {
    case InitKind::eva:
    case InitKind::eva_whiten:
    case InitKind::eva_perm:
    case InitKind::eva_rot:
    case InitKind::lora_redist:
      return true;
    case InitKind::weight_svd:
    case InitKind::random:
      return false;
  }
  return false;
}

}  // namespace eva
