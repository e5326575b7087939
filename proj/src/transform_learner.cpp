#include "transforest/transform_learner.hpp"

#include <array>
#include <cmath>
#include <string>

#include "transforest/error.hpp"

namespace transforest {

namespace {

constexpr double kMinDecrease = 1e-12;

void check_shapes(const Matrix& t, const Matrix& yp, const Matrix& ym) {
  if (yp.cols() == 0 || ym.cols() == 0) throw ConfigError("both classes need at least one sample");
  if (yp.rows() != ym.rows()) throw DimensionError("class matrices have different feature dimensions");
  if (t.cols() != yp.rows()) {
    throw DimensionError("transform has " + std::to_string(t.cols()) + " columns but data has " +
                         std::to_string(yp.rows()) + " rows");
  }
}

/// The three data matrices of the objective, each replaced by a Gram factor.
struct Factors {
  Matrix pos, neg, both;

  Factors(const Matrix& yp, const Matrix& ym, double scale)
      : pos(linalg::gram_factor(yp / scale)),
        neg(linalg::gram_factor(ym / scale)),
        both(linalg::gram_factor(linalg::concat_columns(yp, ym) / scale)) {}

  const Matrix& operator[](int i) const { return i == 0 ? pos : i == 1 ? neg : both; }
};

struct Evaluation {
  double value = 0.0;
  std::array<linalg::SvdResult, 3> parts;
};

Evaluation evaluate(const Matrix& t, const Factors& f) {
  Evaluation e;
  for (int i = 0; i < 3; ++i) e.parts[i] = linalg::svd(t * f[i]);
  e.value = e.parts[0].singular_values.sum() + e.parts[1].singular_values.sum() -
            e.parts[2].singular_values.sum();
  return e;
}

Matrix nuclear_subgradient(const linalg::SvdResult& dec, const Matrix& factor, double rank_tol) {
  const Vector& s = dec.singular_values;
  Eigen::Index keep = 0;
  if (s.size() > 0 && s(0) > 0.0) {
    while (keep < s.size() && s(keep) > rank_tol * s(0)) ++keep;
  }
  // d/dT ||T L||_* = U W^T L^T
  return dec.left.leftCols(keep) * (factor * dec.right.leftCols(keep)).transpose();
}

Matrix subgradient(const Evaluation& e, const Factors& f, double rank_tol) {
  return nuclear_subgradient(e.parts[0], f.pos, rank_tol) + nuclear_subgradient(e.parts[1], f.neg, rank_tol) -
         nuclear_subgradient(e.parts[2], f.both, rank_tol);
}

}  // namespace

TransformMatrix identity_transform(Eigen::Index rows, Eigen::Index d) {
  if (rows < 1 || rows > d) throw ConfigError("transform rows must be in [1, d]");
  return {Matrix::Identity(rows, d)};
}

void LearnConfig::validate() const {
  if (max_iters < 1) throw ConfigError("max_iters must be at least 1");
  if (!(initial_step > 0)) throw ConfigError("initial_step must be positive");
  if (!(step_shrink > 0 && step_shrink < 1)) throw ConfigError("step_shrink must be in (0, 1)");
  if (max_shrinks < 0) throw ConfigError("max_shrinks must be nonnegative");
  if (!(rel_tol > 0)) throw ConfigError("rel_tol must be positive");
  if (!(rank_tol > 0)) throw ConfigError("rank_tol must be positive");
  if (output_rows < 0) throw ConfigError("output_rows must be nonnegative");
}

std::string_view to_string(Termination t) {
  switch (t) {
    case Termination::converged: return "converged";
    case Termination::max_iters: return "max_iters";
    case Termination::no_descent_direction: return "no_descent_direction";
  }
  return "unknown";
}

double objective(const TransformMatrix& t, const Matrix& yp, const Matrix& ym) {
  check_shapes(t.matrix, yp, ym);
  return evaluate(t.matrix, Factors(yp, ym, 1.0)).value;
}

Matrix objective_subgradient(const TransformMatrix& t, const Matrix& yp, const Matrix& ym, double rank_tol) {
  check_shapes(t.matrix, yp, ym);
  const Factors f(yp, ym, 1.0);
  return subgradient(evaluate(t.matrix, f), f, rank_tol);
}

LearnResult learn_transform(const Matrix& yp, const Matrix& ym, const LearnConfig& config,
                            const LearnObserver& observer) {
  config.validate();
  const Eigen::Index d = yp.rows();
  linalg::require_finite(yp, "positive-class data");
  linalg::require_finite(ym, "negative-class data");

  Matrix t;
  if (config.init_mode == InitMode::given) {
    t = config.initial;
    if (t.size() == 0) throw ConfigError("init_mode given requires an initial transform");
  } else {
    const Eigen::Index rows = config.output_rows == 0 ? d : config.output_rows;
    t = identity_transform(rows, d).matrix;
  }
  check_shapes(t, yp, ym);
  linalg::require_finite(t, "initial transform");
  const double t_norm = linalg::spectral_norm(t);
  if (t_norm == 0.0) throw NumericError("initial transform is zero");
  t /= t_norm;

  LearnResult result;
  LearnTrace& trace = result.trace;
  const double scale = linalg::spectral_norm(linalg::concat_columns(yp, ym));
  if (scale == 0.0) {
    // All-zero data: every T attains objective 0.
    trace.objective.push_back(0.0);
    trace.termination = Termination::converged;
    result.transform = {std::move(t)};
    return result;
  }

  const Factors factors(yp, ym, scale);
  Evaluation current = evaluate(t, factors);
  trace.objective.push_back(current.value * scale);
  trace.termination = Termination::max_iters;

  for (int iter = 0; iter < config.max_iters; ++iter) {
    trace.iterations_run = iter + 1;
    const Matrix g = subgradient(current, factors, config.rank_tol);
    if (g.norm() == 0.0) {
      trace.termination = Termination::no_descent_direction;
      break;
    }

    bool accepted = false;
    Matrix candidate;
    Evaluation trial;
    double step = config.initial_step;
    for (int shrink = 0; shrink <= config.max_shrinks; ++shrink, step *= config.step_shrink) {
      candidate = t - step * g;
      const double norm = linalg::spectral_norm(candidate);
      if (norm == 0.0 || !std::isfinite(norm)) continue;
      candidate /= norm;
      trial = evaluate(candidate, factors);
      if (trial.value <= current.value - kMinDecrease) {
        accepted = true;
        break;
      }
    }
    if (!accepted) {
      trace.termination = Termination::no_descent_direction;
      break;
    }

    const double previous = current.value;
    t = std::move(candidate);
    current = std::move(trial);
    trace.objective.push_back(current.value * scale);
    if (observer) observer(t, current.value * scale);

    if (previous - current.value <= config.rel_tol * std::abs(previous)) {
      trace.termination = Termination::converged;
      break;
    }
  }

  result.transform = {std::move(t)};
  return result;
}

}  // namespace transforest
