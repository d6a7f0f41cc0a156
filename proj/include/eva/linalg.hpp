// SPDX-License-Identifier: Apache-2.0
//
#pragma once

#include <cstdint>
#include <vector>

#include "eva/matrix.hpp"

namespace eva {

// Truncated SVD triplet. Columns of u are orthonormal left singular vectors,
// vt holds the right singular vectors as rows, sigma is sorted descending.
// Sign convention: the first entry of each vt row whose magnitude exceeds
// 1e-12 is non-negative (unit rows always have one), which makes the
// factorization deterministic for a fixed input.
struct SvdResult {
  Matrix u;                   // rows(x) x k
  std::vector<double> sigma;  // k, descending, >= 0
  Matrix vt;                  // k x cols(x)
};

// Top-k SVD via one-sided Jacobi orthogonalization. Deterministic; iterates
// until the relative off-diagonal mass of the implicit Gram matrix drops
// below 1e-12. Requires 1 <= k <= min(rows, cols) and finite input.
SvdResult svd_truncated(const Matrix& x, std::size_t k);

// Randomized range-finder SVD: Gaussian sketch of width k + oversample, one
// power iteration, then an exact SVD of the projected panel. For inputs of
// exact rank <= k this matches svd_truncated to ~1e-6 relative on sigma.
// Requires k + oversample <= min(rows, cols).
SvdResult svd_randomized(const Matrix& x, std::size_t k, std::size_t oversample, std::uint64_t seed);

// Per-row |cos| between corresponding rows of two equally-shaped matrices.
// The absolute value absorbs the sign ambiguity of singular vectors. Entries
// are clamped to [0, 1]. Rows must be nonzero.
std::vector<double> component_cosine_similarity(const Matrix& v_prev, const Matrix& v_new);

// Haar-ish random orthogonal matrix (Gaussian QR with positive diagonal fix);
// deterministic per seed, Q^T Q = I to ~1e-14.
Matrix random_orthogonal(std::size_t d, std::uint64_t seed);

// Principal angles (radians, ascending) between the row spans of a and b.
// Rows of both inputs must be orthonormal bases of their spans.
std::vector<double> principal_angles(const Matrix& a, const Matrix& b);

}  // namespace eva
