#include "transforest/dictionary.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>

#include "transforest/error.hpp"

namespace transforest {

using Eigen::Index;

std::string_view to_string(DictMode mode) { return mode == DictMode::ksvd ? "ksvd" : "svd_basis"; }

DictMode dict_mode_from_string(std::string_view name) {
  if (name == "ksvd") return DictMode::ksvd;
  if (name == "svd_basis" || name == "svd") return DictMode::svd_basis;
  throw ConfigError("unknown dictionary mode '" + std::string(name) + "'");
}

void DictConfig::validate() const {
  if (n_atoms < 1) throw ConfigError("n_atoms must be at least 1");
  if (sparsity < 1 || sparsity > n_atoms) throw ConfigError("sparsity must be in [1, n_atoms]");
  if (ksvd_iters < 1) throw ConfigError("ksvd_iters must be at least 1");
  if (!(ridge >= 0)) throw ConfigError("ridge must be nonnegative");
}

Dictionary::Dictionary(Matrix atoms, double ridge) : atoms_(std::move(atoms)), ridge_(ridge) {
  if (atoms_.cols() < 1) throw ConfigError("dictionary needs at least one atom");
  if (atoms_.cols() > atoms_.rows()) throw ConfigError("dictionary has more atoms than dimensions");
  for (Index j = 0; j < atoms_.cols(); ++j) {
    if (std::abs(atoms_.col(j).norm() - 1.0) > 1e-10) throw ConfigError("dictionary atoms must have unit norm");
  }
  coefficients_ = linalg::least_squares_coefficients(atoms_, ridge_);
}

Matrix Dictionary::projector() const {
  const Matrix p = atoms_ * coefficients_;
  return 0.5 * (p + p.transpose());
}

Vector Dictionary::residual(const Vector& x) const { return x - atoms_ * (coefficients_ * x); }

Vector SparseCode::dense(Index n_atoms) const {
  Vector out = Vector::Zero(n_atoms);
  for (std::size_t i = 0; i < support.size(); ++i) out(support[i]) = coefficients(static_cast<Index>(i));
  return out;
}

namespace {

/// OMP given precomputed D^T D and D^T x.
SparseCode omp_gram(const Matrix& atoms, const Matrix& gram, const Vector& dtx, const Vector& x,
                    Index sparsity) {
  SparseCode code;
  const double x_norm = x.norm();
  if (x_norm == 0.0) return code;

  Vector correlation = dtx;
  std::vector<char> selected(static_cast<std::size_t>(atoms.cols()), 0);
  for (Index step = 0; step < sparsity; ++step) {
    Index best = -1;
    double best_abs = 0.0;
    for (Index j = 0; j < atoms.cols(); ++j) {
      if (selected[static_cast<std::size_t>(j)]) continue;
      const double c = std::abs(correlation(j));
      if (c > best_abs) {
        best_abs = c;
        best = j;
      }
    }
    if (best < 0 || best_abs <= 1e-14 * x_norm) break;
    selected[static_cast<std::size_t>(best)] = 1;
    code.support.push_back(best);

    const auto s = static_cast<Index>(code.support.size());
    Matrix g_ss(s, s);
    Vector rhs(s);
    for (Index a = 0; a < s; ++a) {
      rhs(a) = dtx(code.support[static_cast<std::size_t>(a)]);
      for (Index b = 0; b < s; ++b) {
        g_ss(a, b) = gram(code.support[static_cast<std::size_t>(a)], code.support[static_cast<std::size_t>(b)]);
      }
    }
    code.coefficients = g_ss.ldlt().solve(rhs);

    Vector residual = x;
    for (Index a = 0; a < s; ++a) residual -= code.coefficients(a) * atoms.col(code.support[static_cast<std::size_t>(a)]);
    if (residual.norm() <= 1e-12 * x_norm) break;
    correlation = atoms.transpose() * residual;
  }
  if (code.support.empty()) code.coefficients = Vector(0);
  return code;
}

/// Least-squares coefficients of x on a fixed support.
Vector refit(const Matrix& gram, const Vector& dtx, const std::vector<Index>& support) {
  const auto s = static_cast<Index>(support.size());
  Matrix g_ss(s, s);
  Vector rhs(s);
  for (Index a = 0; a < s; ++a) {
    rhs(a) = dtx(support[static_cast<std::size_t>(a)]);
    for (Index b = 0; b < s; ++b) g_ss(a, b) = gram(support[static_cast<std::size_t>(a)], support[static_cast<std::size_t>(b)]);
  }
  return g_ss.ldlt().solve(rhs);
}

void check_omp_args(const Matrix& atoms, const Vector& x, Index sparsity) {
  if (x.size() != atoms.rows()) throw DimensionError("OMP: vector dimension differs from atom dimension");
  if (sparsity < 1 || sparsity > atoms.cols()) throw ConfigError("OMP: sparsity must be in [1, n_atoms]");
}

/// Dominant left singular vector of e by power iteration started at `start`.
/// The Rayleigh quotient of e e^T never decreases along the iteration.
Vector dominant_direction(const Matrix& e, const Vector& start) {
  Vector u = start;
  double previous = (e.transpose() * u).squaredNorm();
  for (int it = 0; it < 30; ++it) {
    Vector next = e * (e.transpose() * u);
    const double n = next.norm();
    if (n == 0.0) break;
    next /= n;
    const double value = (e.transpose() * next).squaredNorm();
    if (value < previous) break;
    u = std::move(next);
    if (value - previous <= 1e-12 * value) break;
    previous = value;
  }
  return u;
}

}  // namespace

SparseCode omp_sparse_code(const Matrix& atoms, const Vector& x, Index sparsity) {
  check_omp_args(atoms, x, sparsity);
  const Matrix gram = atoms.transpose() * atoms;
  const Vector dtx = atoms.transpose() * x;
  return omp_gram(atoms, gram, dtx, x, sparsity);
}

SparseCode omp_sparse_code(const Dictionary& dict, const Vector& x, Index sparsity) {
  return omp_sparse_code(dict.atoms(), x, sparsity);
}

Dictionary ksvd_learn(const Matrix& x, const DictConfig& config, Rng& rng, std::vector<double>* error_history) {
  config.validate();
  if (x.cols() < 1) throw ConfigError("K-SVD needs at least one sample");
  linalg::require_finite(x, "K-SVD data");

  std::vector<Index> nonzero;
  for (Index j = 0; j < x.cols(); ++j) {
    if (x.col(j).squaredNorm() > 0.0) nonzero.push_back(j);
  }
  if (nonzero.empty()) throw NumericError("K-SVD data is all zero; no subspace to model");

  const Index k = std::min({config.n_atoms, x.rows(), static_cast<Index>(nonzero.size())});
  const Index sparsity = std::min(config.sparsity, k);
  const Index n = x.cols();

  // Initial atoms: k distinct nonzero samples chosen uniformly.
  for (Index i = 0; i < k; ++i) {
    const auto pick = i + static_cast<Index>(rng.below(nonzero.size() - static_cast<std::size_t>(i)));
    std::swap(nonzero[static_cast<std::size_t>(i)], nonzero[static_cast<std::size_t>(pick)]);
  }
  Matrix atoms(x.rows(), k);
  for (Index i = 0; i < k; ++i) atoms.col(i) = x.col(nonzero[static_cast<std::size_t>(i)]).normalized();

  std::vector<SparseCode> codes(static_cast<std::size_t>(n));
  if (error_history) error_history->clear();

  for (int sweep = 0; sweep < config.ksvd_iters; ++sweep) {
    // Sparse coding. Keeping the refit of the previous support when it beats
    // the fresh OMP code makes every sweep monotone.
    const Matrix gram = atoms.transpose() * atoms;
    const Matrix dtx_all = atoms.transpose() * x;
    for (Index j = 0; j < n; ++j) {
      const Vector xj = x.col(j);
      const Vector dtx = dtx_all.col(j);
      SparseCode fresh = omp_gram(atoms, gram, dtx, xj, sparsity);
      auto& code = codes[static_cast<std::size_t>(j)];
      if (sweep > 0 && !code.support.empty()) {
        SparseCode kept{code.support, refit(gram, dtx, code.support)};
        const double fresh_err = (xj - atoms * fresh.dense(k)).squaredNorm();
        const double kept_err = (xj - atoms * kept.dense(k)).squaredNorm();
        code = kept_err < fresh_err ? std::move(kept) : std::move(fresh);
      } else {
        code = std::move(fresh);
      }
    }

    Matrix coeffs = Matrix::Zero(k, n);
    for (Index j = 0; j < n; ++j) coeffs.col(j) = codes[static_cast<std::size_t>(j)].dense(k);

    // Atom updates.
    std::vector<char> used_as_replacement(static_cast<std::size_t>(n), 0);
    for (Index a = 0; a < k; ++a) {
      std::vector<Index> users;
      for (Index j = 0; j < n; ++j) {
        if (coeffs(a, j) != 0.0) users.push_back(j);
      }
      if (users.empty()) {
        const Vector residual_norms = (x - atoms * coeffs).colwise().squaredNorm().transpose();
        Index worst = -1;
        for (Index j = 0; j < n; ++j) {
          if (used_as_replacement[static_cast<std::size_t>(j)] || x.col(j).squaredNorm() == 0.0) continue;
          if (worst < 0 || residual_norms(j) > residual_norms(worst)) worst = j;
        }
        if (worst >= 0) {
          used_as_replacement[static_cast<std::size_t>(worst)] = 1;
          atoms.col(a) = x.col(worst).normalized();
        }
        continue;
      }
      const auto m = static_cast<Index>(users.size());
      Matrix e(x.rows(), m);
      for (Index u = 0; u < m; ++u) {
        const Index j = users[static_cast<std::size_t>(u)];
        e.col(u) = x.col(j) - atoms * coeffs.col(j) + atoms.col(a) * coeffs(a, j);
      }
      const Vector direction = dominant_direction(e, atoms.col(a));
      const Vector gamma = e.transpose() * direction;
      atoms.col(a) = direction;
      for (Index u = 0; u < m; ++u) coeffs(a, users[static_cast<std::size_t>(u)]) = gamma(u);
    }

    // Write the updated coefficients back so the next sweep can refit them.
    for (Index j = 0; j < n; ++j) {
      auto& code = codes[static_cast<std::size_t>(j)];
      for (std::size_t i = 0; i < code.support.size(); ++i) {
        code.coefficients(static_cast<Index>(i)) = coeffs(code.support[i], j);
      }
    }
    if (error_history) error_history->push_back((x - atoms * coeffs).squaredNorm());
  }

  for (Index a = 0; a < k; ++a) atoms.col(a).normalize();
  return Dictionary(std::move(atoms), config.ridge);
}

Dictionary svd_basis_learn(const Matrix& x, Index n_atoms, double ridge) {
  if (n_atoms < 1 || n_atoms > std::min(x.rows(), x.cols())) {
    throw ConfigError("svd_basis: n_atoms must be in [1, min(rows, cols)]");
  }
  const linalg::SvdResult dec = linalg::svd(linalg::gram_factor(x));
  Matrix atoms = dec.left.leftCols(n_atoms);
  for (Index a = 0; a < n_atoms; ++a) atoms.col(a).normalize();
  return Dictionary(std::move(atoms), ridge);
}

Dictionary learn_dictionary(const Matrix& x, const DictConfig& config, Rng& rng) {
  if (config.mode == DictMode::svd_basis) {
    config.validate();
    const Index k = std::min({config.n_atoms, x.rows(), x.cols()});
    return svd_basis_learn(x, k, config.ridge);
  }
  return ksvd_learn(x, config, rng);
}

double projection_residual(const Dictionary& dict, const Vector& x) {
  if (x.size() != dict.dim()) throw DimensionError("projection_residual: dimension mismatch");
  return dict.residual(x).norm();
}

}  // namespace transforest
