#include "transforest/linalg.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <limits>
#include <string>

#include <lapacke.h>

#include "transforest/error.hpp"

namespace transforest {

const char* to_string(ErrorKind kind) noexcept {
  switch (kind) {
    case ErrorKind::config: return "config";
    case ErrorKind::io: return "io";
    case ErrorKind::parse: return "parse";
    case ErrorKind::numeric: return "numeric";
  }
  return "unknown";
}

namespace linalg {

namespace {

std::atomic<std::uint64_t> g_factorizations{0};

void count_factorization() noexcept { g_factorizations.fetch_add(1, std::memory_order_relaxed); }

template <typename Decomposition>
void require_success(const Decomposition& dec, const char* what) {
  if (dec.info() != Eigen::Success) {
    throw NumericError(std::string(what) + ": factorization did not converge");
  }
}

/// Divide-and-conquer LAPACK SVD (dgesdd). Falls back to Jacobi if it does
/// not converge.
SvdResult lapack_svd(const Matrix& m, bool vectors) {
  const auto rows = static_cast<lapack_int>(m.rows());
  const auto cols = static_cast<lapack_int>(m.cols());
  const lapack_int k = std::min(rows, cols);
  Matrix a = m;
  SvdResult out;
  out.singular_values.resize(k);
  Matrix u, vt;
  if (vectors) {
    u.resize(rows, k);
    vt.resize(k, cols);
  }
  const lapack_int info = LAPACKE_dgesdd(LAPACK_COL_MAJOR, vectors ? 'S' : 'N', rows, cols, a.data(), rows,
                                         out.singular_values.data(), vectors ? u.data() : nullptr, rows,
                                         vectors ? vt.data() : nullptr, k);
  if (info == 0) {
    if (vectors) {
      out.left = std::move(u);
      out.right = vt.transpose();
    }
    return out;
  }
  if (info < 0) throw NumericError("svd: invalid argument " + std::to_string(-info) + " to dgesdd");
  Eigen::JacobiSVD<Matrix> dec(m, vectors ? Eigen::ComputeThinU | Eigen::ComputeThinV : 0);
  require_success(dec, "svd");
  out.singular_values = dec.singularValues();
  if (vectors) {
    out.left = dec.matrixU();
    out.right = dec.matrixV();
  }
  return out;
}

}  // namespace

std::uint64_t factorization_count() noexcept { return g_factorizations.load(std::memory_order_relaxed); }

void require_finite(const Matrix& m, const char* what) {
  if (!m.allFinite()) throw NumericError(std::string(what) + " contains NaN or infinite entries");
}

SvdResult svd(const Matrix& m) {
  require_finite(m, "svd input");
  const Eigen::Index k = std::min(m.rows(), m.cols());
  if (k == 0) return {Matrix(m.rows(), 0), Vector(0), Matrix(m.cols(), 0)};
  count_factorization();
  return lapack_svd(m, true);
}

Vector singular_values(const Matrix& m) {
  require_finite(m, "svd input");
  if (m.size() == 0) return Vector(0);
  count_factorization();
  return lapack_svd(m, false).singular_values;
}

double nuclear_norm(const Matrix& m) { return singular_values(m).sum(); }

double spectral_norm(const Matrix& m) {
  const Vector s = singular_values(m);
  return s.size() == 0 ? 0.0 : s(0);
}

double frobenius_norm(const Matrix& m) { return m.norm(); }

Matrix concat_columns(const Matrix& a, const Matrix& b) {
  if (a.rows() != b.rows()) {
    throw DimensionError("concat_columns: row counts differ (" + std::to_string(a.rows()) + " vs " +
                         std::to_string(b.rows()) + ")");
  }
  Matrix out(a.rows(), a.cols() + b.cols());
  out << a, b;
  return out;
}

Matrix orthonormal_basis(const Matrix& m, double tol) {
  if (!(tol > 0)) throw ConfigError("orthonormal_basis: tol must be positive");
  const SvdResult dec = svd(m);
  if (dec.singular_values.size() == 0 || dec.singular_values(0) == 0.0) return Matrix(m.rows(), 0);
  const double cutoff = tol * dec.singular_values(0);
  Eigen::Index rank = 0;
  while (rank < dec.singular_values.size() && dec.singular_values(rank) > cutoff) ++rank;
  return dec.left.leftCols(rank);
}

double smallest_principal_angle(const Matrix& basis_a, const Matrix& basis_b) {
  if (basis_a.cols() == 0 || basis_b.cols() == 0) {
    throw ConfigError("smallest_principal_angle: empty basis");
  }
  if (basis_a.rows() != basis_b.rows()) {
    throw DimensionError("smallest_principal_angle: bases live in different ambient dimensions");
  }
  const double cosine = spectral_norm(basis_a.transpose() * basis_b);
  return std::acos(std::clamp(cosine, -1.0, 1.0));
}

Matrix least_squares_coefficients(const Matrix& d, double ridge) {
  if (d.cols() == 0) throw ConfigError("least_squares_projector: D has no columns");
  if (!(ridge >= 0)) throw ConfigError("least_squares_projector: ridge must be nonnegative");
  require_finite(d, "projector atoms");

  Matrix gram = d.transpose() * d;
  gram.diagonal().array() += ridge;
  count_factorization();
  Eigen::LDLT<Matrix> dec(gram);
  // LDLT quietly pseudo-inverts zero pivots, so check them as well as rcond.
  double rcond = 0.0;
  if (dec.info() == Eigen::Success && dec.isPositive()) {
    const Vector pivots = dec.vectorD().cwiseAbs();
    if (pivots.minCoeff() > 64 * std::numeric_limits<double>::epsilon() * pivots.maxCoeff()) rcond = dec.rcond();
  }
  if (!(rcond > 64 * std::numeric_limits<double>::epsilon())) {
    throw NumericError("least_squares_projector: D^T D is singular (rcond " + std::to_string(rcond) +
                       "); use a positive ridge");
  }
  return dec.solve(d.transpose());
}

Matrix least_squares_projector(const Matrix& d, double ridge) {
  const Matrix p = d * least_squares_coefficients(d, ridge);
  return 0.5 * (p + p.transpose());
}

Matrix gram_factor(const Matrix& y) {
  require_finite(y, "data");
  if (y.cols() <= y.rows()) return y;
  count_factorization();
  // Y^T = Q R  =>  Y = R^T Q^T with orthonormal Q, so Y Y^T = R^T R.
  Eigen::HouseholderQR<Matrix> qr(y.transpose());
  const Matrix r = qr.matrixQR().topRows(y.rows()).triangularView<Eigen::Upper>();
  return r.transpose();
}

}  // namespace linalg
}  // namespace transforest
