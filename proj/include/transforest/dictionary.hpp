#pragma once

#include <string_view>
#include <vector>

#include "transforest/linalg.hpp"
#include "transforest/rng.hpp"

namespace transforest {

using linalg::Matrix;
using linalg::Vector;

enum class DictMode { ksvd, svd_basis };

std::string_view to_string(DictMode mode);
DictMode dict_mode_from_string(std::string_view name);

struct DictConfig {
  Eigen::Index n_atoms = 16;
  Eigen::Index sparsity = 4;
  int ksvd_iters = 10;
  double ridge = 1e-8;
  DictMode mode = DictMode::ksvd;

  void validate() const;
};

/// Unit-norm atoms plus the cached least-squares coefficient map
/// W = (D^T D + ridge I)^{-1} D^T, so that projecting costs two thin products.
class Dictionary {
 public:
  /// Normalizes nothing: every column of `atoms` must already have unit norm.
  Dictionary(Matrix atoms, double ridge);

  const Matrix& atoms() const { return atoms_; }
  const Matrix& coefficient_map() const { return coefficients_; }
  /// D W, symmetrized. Built on demand; prediction never calls it.
  Matrix projector() const;
  /// x - D (W x).
  Vector residual(const Vector& x) const;
  double ridge() const { return ridge_; }
  Eigen::Index n_atoms() const { return atoms_.cols(); }
  Eigen::Index dim() const { return atoms_.rows(); }

 private:
  Matrix atoms_;
  Matrix coefficients_;
  double ridge_;
};

/// Sparse code produced by orthogonal matching pursuit.
struct SparseCode {
  std::vector<Eigen::Index> support;  // atom indices in selection order
  Vector coefficients;                // one per support entry

  Vector dense(Eigen::Index n_atoms) const;
};

/// Greedy OMP with a least-squares refit after every selection. Stops early
/// once the residual vanishes or is orthogonal to every unselected atom.
SparseCode omp_sparse_code(const Matrix& atoms, const Vector& x, Eigen::Index sparsity);
SparseCode omp_sparse_code(const Dictionary& dict, const Vector& x, Eigen::Index sparsity);

/// K-SVD with OMP coding. n_atoms is clamped to min(n_atoms, rows, cols) and
/// sparsity to n_atoms. If `error_history` is given it receives the total
/// squared representation error after every sweep (nonincreasing).
Dictionary ksvd_learn(const Matrix& x, const DictConfig& config, Rng& rng,
                      std::vector<double>* error_history = nullptr);

/// Top n_atoms left singular vectors of x.
Dictionary svd_basis_learn(const Matrix& x, Eigen::Index n_atoms, double ridge = 0.0);

/// Dispatches on config.mode.
Dictionary learn_dictionary(const Matrix& x, const DictConfig& config, Rng& rng);

/// ||x - D W x||_2. Multiplication only.
double projection_residual(const Dictionary& dict, const Vector& x);

}  // namespace transforest
