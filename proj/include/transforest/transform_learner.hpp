#pragma once

#include <functional>
#include <string_view>
#include <vector>

#include "transforest/linalg.hpp"

namespace transforest {

using linalg::Matrix;
using linalg::Vector;

/// Learned r x d split transformation. After learning its spectral norm is 1.
struct TransformMatrix {
  Matrix matrix;

  Eigen::Index output_dim() const { return matrix.rows(); }
  Eigen::Index input_dim() const { return matrix.cols(); }
};

/// First `rows` rows of the d x d identity. Already has unit spectral norm.
TransformMatrix identity_transform(Eigen::Index rows, Eigen::Index d);

enum class InitMode { identity, given };

struct LearnConfig {
  int max_iters = 200;
  /// Step length for data rescaled to unit spectral norm (see learn_transform).
  double initial_step = 0.1;
  double step_shrink = 0.5;
  int max_shrinks = 40;
  /// Stop when an accepted step improves the objective by less than rel_tol * |objective|.
  double rel_tol = 1e-6;
  /// Singular values at or below rank_tol * sigma_1 are excluded from the subgradient.
  double rank_tol = 1e-8;
  /// Rows r of T; 0 means square (r = d).
  Eigen::Index output_rows = 0;
  InitMode init_mode = InitMode::identity;
  /// Starting point when init_mode == given; normalized before use.
  Matrix initial;

  void validate() const;
};

enum class Termination { converged, max_iters, no_descent_direction };

std::string_view to_string(Termination t);

struct LearnTrace {
  /// Objective (in the caller's data units) at the starting point followed by
  /// one entry per accepted step. Nonincreasing.
  std::vector<double> objective;
  int iterations_run = 0;
  Termination termination = Termination::max_iters;
};

struct LearnResult {
  TransformMatrix transform;
  LearnTrace trace;
};

/// ||T Y+||_* + ||T Y-||_* - ||T [Y+, Y-]||_*. Nonnegative up to roundoff.
double objective(const TransformMatrix& t, const Matrix& yp, const Matrix& ym);

/// One element of the subdifferential of objective() with respect to T.
/// Each nuclear-norm term contributes U V^T X^T over singular components above
/// rank_tol * sigma_1.
Matrix objective_subgradient(const TransformMatrix& t, const Matrix& yp, const Matrix& ym,
                             double rank_tol = linalg::kDefaultRankTol);

/// Called with every accepted iterate and its objective (caller's units).
using LearnObserver = std::function<void(const Matrix& t, double objective)>;

/// Projected subgradient descent on the objective subject to ||T||_2 = 1.
///
/// Data are rescaled by 1 / ||[Y+, Y-]||_2 before descent; the objective is
/// 1-homogeneous in Y so the minimizers do not change, and step lengths become
/// independent of the data's units. Each iteration backtracks from
/// initial_step, projects the candidate by dividing by its spectral norm, and
/// accepts the first candidate that lowers the objective by at least 1e-12
/// (rescaled units).
LearnResult learn_transform(const Matrix& yp, const Matrix& ym, const LearnConfig& config,
                            const LearnObserver& observer = {});

}  // namespace transforest
