#pragma once

#include <cstdint>

#include <Eigen/Dense>

namespace transforest::linalg {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;

/// Thin SVD, M = left * diag(singular_values) * right^T.
/// Singular values are nonincreasing and nonnegative.
struct SvdResult {
  Matrix left;
  Vector singular_values;
  Matrix right;
};

/// Relative numerical-rank threshold used when none is given.
inline constexpr double kDefaultRankTol = 1e-8;

SvdResult svd(const Matrix& m);

/// Singular values only; cheaper than svd() when the vectors are not needed.
Vector singular_values(const Matrix& m);

double nuclear_norm(const Matrix& m);
double spectral_norm(const Matrix& m);
double frobenius_norm(const Matrix& m);

/// [a, b]. `b` may have zero columns.
Matrix concat_columns(const Matrix& a, const Matrix& b);

/// Orthonormal basis of the column space at numerical rank #{sigma_i > tol * sigma_1}.
/// Returns a rows x 0 matrix for the zero matrix.
Matrix orthonormal_basis(const Matrix& m, double tol = kDefaultRankTol);

/// Smallest principal angle between span(basis_a) and span(basis_b), in [0, pi/2].
/// Both arguments must already have orthonormal columns.
double smallest_principal_angle(const Matrix& basis_a, const Matrix& basis_b);

/// D (D^T D + ridge I)^{-1} D^T, symmetrized. With ridge = 0 and full column rank
/// this is the orthogonal projector onto span(D).
Matrix least_squares_projector(const Matrix& d, double ridge);

/// (D^T D + ridge I)^{-1} D^T, the k x rows map from a vector to its
/// least-squares coefficients. D times this map is the projector above.
Matrix least_squares_coefficients(const Matrix& d, double ridge);

/// Returns a factor L (rows x min(rows, cols)) with L L^T = Y Y^T.
/// For any T, T*Y and T*L share singular values and T*Y*Y^T = T*L*L^T.
Matrix gram_factor(const Matrix& y);

/// Throws NumericError naming `what` if any entry is NaN or infinite.
void require_finite(const Matrix& m, const char* what);

/// Number of matrix factorizations (SVD, QR, Cholesky) performed by this module
/// since process start. Used to verify that prediction is multiplication-only.
std::uint64_t factorization_count() noexcept;

}  // namespace transforest::linalg
