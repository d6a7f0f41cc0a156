// SPDX-License-Identifier: Apache-2.0
//
#include "eva/linalg.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

#include "eva/rng.hpp"

namespace eva {

namespace {

constexpr double kJacobiTol = 1e-12;   // relative off-diagonal mass at convergence
constexpr int kMaxSweeps = 100;
constexpr double kSignEps = 1e-12;     // entries below this don't pick the row sign

// Column-major working pane so the Jacobi column ops stay contiguous.
struct ColMat {
  std::size_t rows = 0, cols = 0;
  std::vector<double> d;

  ColMat(std::size_t r, std::size_t c) : rows(r), cols(c), d(r * c, 0.0) {}

  double* col(std::size_t j) { return d.data() + j * rows; }
  const double* col(std::size_t j) const { return d.data() + j * rows; }

  double col_dot(std::size_t a, std::size_t b) const {
    const double* pa = col(a);
    const double* pb = col(b);
    double s = 0.0;
    for (std::size_t i = 0; i < rows; ++i) s += pa[i] * pb[i];
    return s;
  }

  void rotate_cols(std::size_t p, std::size_t q, double c, double s) {
    double* wp = col(p);
    double* wq = col(q);
    for (std::size_t i = 0; i < rows; ++i) {
      const double a = wp[i];
      const double b = wq[i];
      wp[i] = c * a - s * b;
      wq[i] = s * a + c * b;
    }
  }
};

ColMat to_colmajor(const Matrix& a) {
  ColMat m(a.rows(), a.cols());
  for (std::size_t i = 0; i < a.rows(); ++i)
    for (std::size_t j = 0; j < a.cols(); ++j) m.col(j)[i] = a.at(i, j);
  return m;
}

// One-sided Jacobi on W (rows >= cols): repeatedly rotate column pairs until
// every pair is orthogonal relative to its norms. V accumulates the
// rotations, so A = W_final * V^T with W_final = U * diag(sigma).
void jacobi_orthogonalize(ColMat& w, ColMat& v) {
  const std::size_t n = w.cols;
  for (int sweep = 0; sweep < kMaxSweeps; ++sweep) {
    bool rotated = false;
    for (std::size_t p = 0; p + 1 < n; ++p) {
      for (std::size_t q = p + 1; q < n; ++q) {
        const double alpha = w.col_dot(p, p);
        const double beta = w.col_dot(q, q);
        const double gamma = w.col_dot(p, q);
        if (alpha == 0.0 || beta == 0.0) continue;
        if (std::abs(gamma) <= kJacobiTol * std::sqrt(alpha * beta)) continue;
        rotated = true;
        const double zeta = (beta - alpha) / (2.0 * gamma);
        const double t = (zeta >= 0.0 ? 1.0 : -1.0) / (std::abs(zeta) + std::sqrt(1.0 + zeta * zeta));
        const double c = 1.0 / std::sqrt(1.0 + t * t);
        const double s = c * t;
        w.rotate_cols(p, q, c, s);
        v.rotate_cols(p, q, c, s);
      }
    }
    if (!rotated) break;
  }
}

// Fill column j of u with a unit vector orthogonal to columns [0, j); used
// when a singular value is numerically zero and the data column carries no
// usable direction.
void complete_basis_column(ColMat& u, std::size_t j) {
  const std::size_t m = u.rows;
  double best_residual = -1.0;
  std::vector<double> best(m, 0.0);
  std::vector<double> cand(m, 0.0);
  for (std::size_t e = 0; e < m; ++e) {
    std::fill(cand.begin(), cand.end(), 0.0);
    cand[e] = 1.0;
    for (std::size_t c = 0; c < j; ++c) {
      const double* uc = u.col(c);
      double proj = 0.0;
      for (std::size_t i = 0; i < m; ++i) proj += uc[i] * cand[i];
      for (std::size_t i = 0; i < m; ++i) cand[i] -= proj * uc[i];
    }
    double norm = 0.0;
    for (double x : cand) norm += x * x;
    norm = std::sqrt(norm);
    if (norm > best_residual) {
      best_residual = norm;
      best = cand;
      if (norm > 0.9) break;  // comfortably independent, stop scanning
    }
  }
  for (double& x : best) x /= best_residual;
  std::copy(best.begin(), best.end(), u.col(j));
}

SvdResult svd_tall(const Matrix& x, std::size_t k) {
  const std::size_t m = x.rows();
  const std::size_t n = x.cols();
  ColMat w = to_colmajor(x);
  ColMat v(n, n);
  for (std::size_t j = 0; j < n; ++j) v.col(j)[j] = 1.0;

  jacobi_orthogonalize(w, v);

  std::vector<double> sigma(n, 0.0);
  for (std::size_t j = 0; j < n; ++j) {
    double s = 0.0;
    const double* wc = w.col(j);
    for (std::size_t i = 0; i < m; ++i) s += wc[i] * wc[i];
    sigma[j] = std::sqrt(s);
  }

  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return sigma[a] > sigma[b]; });

  const double sigma_max = sigma[order[0]];
  const double zero_tol = sigma_max * static_cast<double>(std::max(m, n)) * 1e-15;

  SvdResult out;
  out.u = Matrix(m, k);
  out.vt = Matrix(k, n);
  out.sigma.resize(k);

  ColMat ucols(m, k);
  for (std::size_t jj = 0; jj < k; ++jj) {
    const std::size_t src = order[jj];
    out.sigma[jj] = sigma[src];
    if (sigma[src] > zero_tol && sigma[src] > 0.0) {
      const double* wc = w.col(src);
      double* uc = ucols.col(jj);
      for (std::size_t i = 0; i < m; ++i) uc[i] = wc[i] / sigma[src];
    } else {
      complete_basis_column(ucols, jj);
    }
    for (std::size_t i = 0; i < n; ++i) out.vt.at(jj, i) = v.col(src)[i];
  }

  // sign convention: leading significant entry of each right vector >= 0
  for (std::size_t jj = 0; jj < k; ++jj) {
    double lead = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      if (std::abs(out.vt.at(jj, i)) > kSignEps) {
        lead = out.vt.at(jj, i);
        break;
      }
    }
    if (lead < 0.0) {
      for (std::size_t i = 0; i < n; ++i) out.vt.at(jj, i) = -out.vt.at(jj, i);
      double* uc = ucols.col(jj);
      for (std::size_t i = 0; i < m; ++i) uc[i] = -uc[i];
    }
  }

  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t jj = 0; jj < k; ++jj) out.u.at(i, jj) = ucols.col(jj)[i];
  return out;
}

// Orthonormalize the columns of y in place (modified Gram-Schmidt with one
// reorthogonalization pass); dependent columns are replaced by completion
// vectors so the result always has full column rank.
void orthonormalize_columns(ColMat& y) {
  const std::size_t m = y.rows;
  const std::size_t n = y.cols;
  double max_norm = 0.0;
  for (std::size_t j = 0; j < n; ++j) max_norm = std::max(max_norm, std::sqrt(y.col_dot(j, j)));
  const double drop_tol = std::max(max_norm, 1.0) * 1e-12;

  for (std::size_t j = 0; j < n; ++j) {
    for (int pass = 0; pass < 2; ++pass) {
      for (std::size_t c = 0; c < j; ++c) {
        const double proj = y.col_dot(c, j);
        double* yc = y.col(c);
        double* yj = y.col(j);
        for (std::size_t i = 0; i < m; ++i) yj[i] -= proj * yc[i];
      }
    }
    double norm = std::sqrt(y.col_dot(j, j));
    if (norm <= drop_tol) {
      complete_basis_column(y, j);
    } else {
      double* yj = y.col(j);
      for (std::size_t i = 0; i < m; ++i) yj[i] /= norm;
    }
  }
}

Matrix colmat_to_matrix(const ColMat& c) {
  Matrix m(c.rows, c.cols);
  for (std::size_t i = 0; i < c.rows; ++i)
    for (std::size_t j = 0; j < c.cols; ++j) m.at(i, j) = c.col(j)[i];
  return m;
}

}  // namespace

SvdResult svd_truncated(const Matrix& x, std::size_t k) {
  if (x.empty()) throw std::invalid_argument("svd_truncated: empty matrix");
  x.require_finite("svd_truncated");
  const std::size_t kmax = std::min(x.rows(), x.cols());
  if (k < 1 || k > kmax) throw std::invalid_argument("svd_truncated: k out of range");

  if (x.rows() >= x.cols()) return svd_tall(x, k);

  // wide case: factor the transpose and swap the factors
  SvdResult t = svd_tall(transpose(x), k);
  SvdResult out;
  out.sigma = std::move(t.sigma);
  out.u = transpose(t.vt);
  out.vt = transpose(t.u);
  // re-fix signs on the swapped right vectors
  for (std::size_t j = 0; j < k; ++j) {
    double lead = 0.0;
    for (std::size_t i = 0; i < out.vt.cols(); ++i) {
      if (std::abs(out.vt.at(j, i)) > kSignEps) {
        lead = out.vt.at(j, i);
        break;
      }
    }
    if (lead < 0.0) {
      for (std::size_t i = 0; i < out.vt.cols(); ++i) out.vt.at(j, i) = -out.vt.at(j, i);
      for (std::size_t i = 0; i < out.u.rows(); ++i) out.u.at(i, j) = -out.u.at(i, j);
    }
  }
  return out;
}

SvdResult svd_randomized(const Matrix& x, std::size_t k, std::size_t oversample, std::uint64_t seed) {
  if (x.empty()) throw std::invalid_argument("svd_randomized: empty matrix");
  x.require_finite("svd_randomized");
  const std::size_t kmax = std::min(x.rows(), x.cols());
  if (k < 1 || k > kmax) throw std::invalid_argument("svd_randomized: k out of range");
  if (k + oversample > kmax) throw std::invalid_argument("svd_randomized: k + oversample out of range");

  const std::size_t m = x.rows();
  const std::size_t n = x.cols();
  const std::size_t ell = k + oversample;

  Rng rng(seed);
  Matrix omega(n, ell);
  for (double& v : omega.data()) v = rng.gaussian();

  // sketch, one power iteration with re-orthonormalization
  ColMat y = to_colmajor(matmul(x, omega));        // m x ell
  orthonormalize_columns(y);
  ColMat z = to_colmajor(matmul_tn(x, colmat_to_matrix(y)));  // n x ell
  orthonormalize_columns(z);
  y = to_colmajor(matmul(x, colmat_to_matrix(z)));  // m x ell
  orthonormalize_columns(y);

  const Matrix q = colmat_to_matrix(y);
  const Matrix b = matmul_tn(q, x);  // ell x n
  SvdResult small = svd_truncated(b, k);

  SvdResult out;
  out.sigma = std::move(small.sigma);
  out.vt = std::move(small.vt);
  out.u = matmul(q, small.u);
  (void)m;
  return out;
}

std::vector<double> component_cosine_similarity(const Matrix& v_prev, const Matrix& v_new) {
  if (!v_prev.same_shape(v_new)) throw std::invalid_argument("component_cosine_similarity: shape mismatch");
  std::vector<double> sims(v_prev.rows());
  for (std::size_t j = 0; j < v_prev.rows(); ++j) {
    const double na = l2_norm(v_prev.row(j));
    const double nb = l2_norm(v_new.row(j));
    if (na == 0.0 || nb == 0.0) throw std::invalid_argument("component_cosine_similarity: zero-norm row");
    sims[j] = std::clamp(std::abs(dot(v_prev.row(j), v_new.row(j))) / (na * nb), 0.0, 1.0);
  }
  return sims;
}

Matrix random_orthogonal(std::size_t d, std::uint64_t seed) {
  if (d < 1) throw std::invalid_argument("random_orthogonal: d must be >= 1");
  Rng rng(seed);
  ColMat g(d, d);
  for (std::size_t i = 0; i < d; ++i)
    for (std::size_t j = 0; j < d; ++j) g.col(j)[i] = rng.gaussian();
  orthonormalize_columns(g);
  return colmat_to_matrix(g);
}

std::vector<double> principal_angles(const Matrix& a, const Matrix& b) {
  if (a.cols() != b.cols()) throw std::invalid_argument("principal_angles: ambient dimensions differ");
  const Matrix overlap = matmul_nt(a, b);
  const std::size_t k = std::min(overlap.rows(), overlap.cols());
  SvdResult s = svd_truncated(overlap, k);
  std::vector<double> angles(k);
  for (std::size_t i = 0; i < k; ++i) angles[i] = std::acos(std::clamp(s.sigma[i], 0.0, 1.0));
  std::sort(angles.begin(), angles.end());
  return angles;
}

}  // namespace eva
