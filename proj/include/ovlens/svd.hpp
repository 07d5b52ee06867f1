#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <numeric>
#include <string>
#include <vector>

#include "ovlens/error.hpp"
#include "ovlens/matrix.hpp"

namespace ovlens {

/// Thin SVD A = U diag(values) V^T with k = min(rows, cols) components.
struct SingularSpectrum {
  std::vector<double> values;  // descending, non-negative
  Matrix left_basis;           // rows x k, orthonormal columns
  Matrix right_basis;          // cols x k, orthonormal columns
};

inline constexpr int kSvdMaxSweeps = 100;
inline constexpr double kDefaultRankTolerance = 1e-10;

namespace detail {

// Fills every zero row of `basis` (k rows of length n, k <= n) with a unit
// vector orthogonal to all other rows, using the standard basis as seeds.
inline void complete_orthonormal_rows(std::vector<std::vector<double>>& basis,
                                      std::vector<bool> placed) {
  const std::size_t n = basis.empty() ? 0 : basis.front().size();
  std::size_t seed = 0;
  for (std::size_t i = 0; i < basis.size(); ++i) {
    if (placed[i]) continue;
    for (; seed < n; ++seed) {
      std::vector<double> cand(n, 0.0);
      cand[seed] = 1.0;
      // two passes of Gram-Schmidt against everything already placed
      for (int pass = 0; pass < 2; ++pass) {
        for (std::size_t j = 0; j < basis.size(); ++j) {
          if (!placed[j]) continue;
          const double proj = dot(cand, basis[j]);
          for (std::size_t t = 0; t < n; ++t) cand[t] -= proj * basis[j][t];
        }
      }
      const double len = norm(cand);
      if (len > 0.5) {
        for (double& x : cand) x /= len;
        basis[i] = std::move(cand);
        placed[i] = true;
        ++seed;
        break;
      }
    }
  }
}

// One-sided (Hestenes) Jacobi on a tall matrix given as its columns.
// `cols` holds n columns of length m >= n.
inline SingularSpectrum jacobi_svd_tall(std::vector<std::vector<double>> cols, std::size_t m) {
  const std::size_t n = cols.size();
  std::vector<std::vector<double>> v(n, std::vector<double>(n, 0.0));
  for (std::size_t i = 0; i < n; ++i) v[i][i] = 1.0;

  const double tol = std::numeric_limits<double>::epsilon() * std::sqrt(static_cast<double>(m));
  bool converged = n < 2;
  for (int sweep = 0; sweep < kSvdMaxSweeps && !converged; ++sweep) {
    bool rotated = false;
    for (std::size_t p = 0; p + 1 < n; ++p) {
      for (std::size_t q = p + 1; q < n; ++q) {
        auto& wp = cols[p];
        auto& wq = cols[q];
        const double alpha = dot(wp, wp);
        const double beta = dot(wq, wq);
        const double gamma = dot(wp, wq);
        if (gamma == 0.0 || std::abs(gamma) <= tol * std::sqrt(alpha * beta)) continue;
        rotated = true;
        const double zeta = (beta - alpha) / (2.0 * gamma);
        const double t = std::copysign(1.0, zeta) / (std::abs(zeta) + std::hypot(1.0, zeta));
        const double c = 1.0 / std::hypot(1.0, t);
        const double s = c * t;
        for (std::size_t i = 0; i < m; ++i) {
          const double a = wp[i];
          const double b = wq[i];
          wp[i] = c * a - s * b;
          wq[i] = s * a + c * b;
        }
        auto& vp = v[p];
        auto& vq = v[q];
        for (std::size_t i = 0; i < n; ++i) {
          const double a = vp[i];
          const double b = vq[i];
          vp[i] = c * a - s * b;
          vq[i] = s * a + c * b;
        }
      }
    }
    converged = !rotated;
  }
  if (!converged) {
    throw ConvergenceError("svd: no convergence after " + std::to_string(kSvdMaxSweeps) +
                           " sweeps");
  }

  std::vector<double> sigma(n);
  for (std::size_t i = 0; i < n; ++i) sigma[i] = norm(cols[i]);
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return sigma[a] > sigma[b]; });

  std::vector<std::vector<double>> u_rows(n, std::vector<double>(m, 0.0));
  std::vector<bool> filled(n, false);
  SingularSpectrum out;
  out.values.resize(n);
  out.right_basis = Matrix(n, n);
  for (std::size_t k = 0; k < n; ++k) {
    const std::size_t src = order[k];
    out.values[k] = sigma[src];
    for (std::size_t i = 0; i < n; ++i) out.right_basis(i, k) = v[src][i];
    if (sigma[src] > 0.0) {
      for (std::size_t i = 0; i < m; ++i) u_rows[k][i] = cols[src][i] / sigma[src];
      filled[k] = true;
    }
  }
  complete_orthonormal_rows(u_rows, filled);
  out.left_basis = Matrix(m, n);
  for (std::size_t k = 0; k < n; ++k)
    for (std::size_t i = 0; i < m; ++i) out.left_basis(i, k) = u_rows[k][i];
  return out;
}

}  // namespace detail

/// Singular value decomposition by one-sided Jacobi rotations.
inline SingularSpectrum svd(const Matrix& a) {
  if (!all_finite(a.data())) throw NumericError("svd: non-finite input");
  const bool wide = a.rows() < a.cols();
  const std::size_t m = wide ? a.cols() : a.rows();
  const std::size_t n = wide ? a.rows() : a.cols();
  // columns of the tall operand, stored contiguously
  std::vector<std::vector<double>> cols(n, std::vector<double>(m));
  for (std::size_t r = 0; r < a.rows(); ++r)
    for (std::size_t c = 0; c < a.cols(); ++c) {
      if (wide) {
        cols[r][c] = a(r, c);
      } else {
        cols[c][r] = a(r, c);
      }
    }
  SingularSpectrum s = detail::jacobi_svd_tall(std::move(cols), m);
  if (wide) std::swap(s.left_basis, s.right_basis);
  return s;
}

/// U diag(values[0..r)) V^T.
inline Matrix reconstruct(const SingularSpectrum& s, std::size_t r) {
  const std::size_t k = s.values.size();
  if (r > k) {
    throw ArgumentError("rank " + std::to_string(r) + " exceeds " + std::to_string(k) +
                        " singular components");
  }
  const std::size_t rows = s.left_basis.rows();
  const std::size_t cols = s.right_basis.rows();
  Matrix out(rows, cols);
  for (std::size_t i = 0; i < rows; ++i) {
    auto out_row = out.row(i);
    for (std::size_t t = 0; t < r; ++t) {
      const double coef = s.left_basis(i, t) * s.values[t];
      if (coef == 0.0) continue;
      for (std::size_t j = 0; j < cols; ++j) out_row[j] += coef * s.right_basis(j, t);
    }
  }
  return out;
}

inline Matrix reconstruct(const SingularSpectrum& s) { return reconstruct(s, s.values.size()); }

/// Best rank-r approximation: all singular values after the top r are zeroed.
inline Matrix truncate_rank(const Matrix& a, std::size_t r) {
  const std::size_t k = std::min(a.rows(), a.cols());
  if (r > k) {
    throw ArgumentError("truncate_rank: r=" + std::to_string(r) + " outside [0," +
                        std::to_string(k) + "]");
  }
  if (r == 0) return Matrix(a.rows(), a.cols());
  return reconstruct(svd(a), r);
}

inline std::size_t numerical_rank(std::span<const double> singular_values,
                                  double rel_tol = kDefaultRankTolerance) {
  if (!(rel_tol > 0.0)) throw ArgumentError("numerical_rank: rel_tol must be positive");
  if (singular_values.empty()) return 0;
  const double top = *std::max_element(singular_values.begin(), singular_values.end());
  if (top == 0.0) return 0;
  return static_cast<std::size_t>(std::count_if(singular_values.begin(), singular_values.end(),
                                                [&](double s) { return s > rel_tol * top; }));
}

/// Number of singular values above rel_tol times the largest one.
inline std::size_t numerical_rank(const Matrix& a, double rel_tol = kDefaultRankTolerance) {
  if (!(rel_tol > 0.0)) throw ArgumentError("numerical_rank: rel_tol must be positive");
  return numerical_rank(svd(a).values, rel_tol);
}

inline double spectral_norm(const Matrix& a) {
  const auto s = svd(a);
  return s.values.empty() ? 0.0 : s.values.front();
}

}  // namespace ovlens
