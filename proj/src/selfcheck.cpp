#include "transforest/selfcheck.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <limits>

#include "transforest/rng.hpp"
#include "transforest/transform_learner.hpp"

namespace transforest {

using Eigen::Index;

namespace {

Matrix gaussian(Rng& rng, Index rows, Index cols) {
  Matrix m(rows, cols);
  for (Index j = 0; j < cols; ++j) {
    for (Index i = 0; i < rows; ++i) m(i, j) = rng.normal();
  }
  return m;
}

/// Gaussian, rank-deficient about a third of the time.
Matrix random_matrix(Rng& rng, Index rows, Index cols) {
  const Index full = std::min(rows, cols);
  if (full > 1 && rng.below(3) == 0) {
    const auto rank = static_cast<Index>(1 + rng.below(static_cast<std::size_t>(full - 1)));
    const Matrix left = gaussian(rng, rows, rank);
    return left * gaussian(rng, rank, cols);
  }
  return gaussian(rng, rows, cols);
}

Index draw(Rng& rng, Index lo, Index hi) {  // uniform in [lo, hi]
  return lo + static_cast<Index>(rng.below(static_cast<std::size_t>(hi - lo + 1)));
}

Matrix orthonormal_columns(Rng& rng, Index rows, Index cols) {
  Eigen::HouseholderQR<Matrix> qr(gaussian(rng, rows, cols));
  return qr.householderQ() * Matrix::Identity(rows, cols);
}

double relative_excess(double lhs, double rhs) {
  const double scale = std::max(std::abs(rhs), std::numeric_limits<double>::min());
  return (lhs - rhs) / scale;
}

/// Tracks the worst error/tolerance ratio and the first violation.
class Tally {
 public:
  explicit Tally(std::string name) { result_.name = std::move(name); }

  void record(double error, double tolerance, std::uint64_t case_seed, const char* what) {
    ++result_.cases;
    const double ratio = std::isnan(error) ? std::numeric_limits<double>::infinity() : std::max(0.0, error) / tolerance;
    result_.worst_ratio = std::max(result_.worst_ratio, ratio);
    if (ratio > 1.0 && result_.passed) {
      result_.passed = false;
      result_.violating_seed = case_seed;
      char buffer[160];
      std::snprintf(buffer, sizeof buffer, "%s: relative error %.3e exceeds %.0e", what, error, tolerance);
      result_.detail = buffer;
    }
  }

  SuiteResult finish(std::chrono::steady_clock::time_point start) {
    result_.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    return result_;
  }

 private:
  SuiteResult result_;
};

}  // namespace

SuiteResult check_concat_nuclear(const SelfcheckOptions& options) {
  const auto start = std::chrono::steady_clock::now();
  const auto& nuclear = options.norms.nuclear;
  Tally tally("nuclear norm of a concatenation");

  for (int c = 0; c < options.trials; ++c) {
    const std::uint64_t case_seed = options.seed + static_cast<std::uint64_t>(c);
    Rng rng = Rng(case_seed).derive(1);
    const Index m = draw(rng, 1, 8);
    const Matrix a = random_matrix(rng, m, draw(rng, 1, 12));
    const Matrix b = random_matrix(rng, m, draw(rng, 1, 12));
    tally.record(relative_excess(nuclear(linalg::concat_columns(a, b)), nuclear(a) + nuclear(b)), 1e-9, case_seed,
                 "||[A,B]||_* <= ||A||_* + ||B||_*");
  }

  // Orthogonal column spaces give equality.
  for (int c = 0; c < std::max(1, options.trials / 4); ++c) {
    const std::uint64_t case_seed = options.seed + static_cast<std::uint64_t>(c);
    Rng rng = Rng(case_seed).derive(2);
    const Index m = draw(rng, 2, 8);
    const Index ka = draw(rng, 1, m - 1);
    const Index kb = draw(rng, 1, m - ka);
    const Matrix q = orthonormal_columns(rng, m, ka + kb);
    const Matrix a = q.leftCols(ka) * gaussian(rng, ka, draw(rng, 1, 12));
    const Matrix b = q.rightCols(kb) * gaussian(rng, kb, draw(rng, 1, 12));
    const double sum = nuclear(a) + nuclear(b);
    tally.record(std::abs(relative_excess(nuclear(linalg::concat_columns(a, b)), sum)), 1e-8, case_seed,
                 "orthogonal column spaces: ||[A,B]||_* == ||A||_* + ||B||_*");
  }
  return tally.finish(start);
}

SuiteResult check_concat_spectral_frobenius(const SelfcheckOptions& options) {
  const auto start = std::chrono::steady_clock::now();
  const auto& spectral = options.norms.spectral;
  const auto& frobenius = options.norms.frobenius;
  Tally tally("spectral and Frobenius norms of a concatenation");

  for (int c = 0; c < options.trials; ++c) {
    const std::uint64_t case_seed = options.seed + static_cast<std::uint64_t>(c);
    Rng rng = Rng(case_seed).derive(3);
    const Index m = draw(rng, 1, 8);
    const Matrix a = random_matrix(rng, m, draw(rng, 1, 12));
    const Matrix b = random_matrix(rng, m, draw(rng, 1, 12));
    const Matrix ab = linalg::concat_columns(a, b);
    tally.record(relative_excess(spectral(ab), spectral(a) + spectral(b)), 1e-9, case_seed,
                 "||[A,B]||_2 <= ||A||_2 + ||B||_2");
    const double fsum = frobenius(a) + frobenius(b);
    tally.record(relative_excess(frobenius(ab), fsum), 1e-9, case_seed, "||[A,B]||_F <= ||A||_F + ||B||_F");
    // Both nonzero, so the Frobenius inequality must be strict.
    tally.record(1e-12 - (fsum - frobenius(ab)) / fsum, 1e-12, case_seed,
                 "||[A,B]||_F < ||A||_F + ||B||_F for nonzero A, B");

    const Matrix zero_b = Matrix::Zero(m, b.cols());
    const Matrix zero_a = Matrix::Zero(m, a.cols());
    tally.record(std::abs(relative_excess(spectral(linalg::concat_columns(a, zero_b)), spectral(a))), 1e-12,
                 case_seed, "||[A,0]||_2 == ||A||_2");
    tally.record(std::abs(relative_excess(spectral(linalg::concat_columns(zero_a, b)), spectral(b))), 1e-12,
                 case_seed, "||[0,B]||_2 == ||B||_2");
    tally.record(std::abs(relative_excess(frobenius(linalg::concat_columns(a, zero_b)), frobenius(a))), 1e-12,
                 case_seed, "||[A,0]||_F == ||A||_F");
    tally.record(std::abs(relative_excess(frobenius(linalg::concat_columns(zero_a, b)), frobenius(b))), 1e-12,
                 case_seed, "||[0,B]||_F == ||B||_F");
  }
  return tally.finish(start);
}

SuiteResult check_objective_nonnegative(const SelfcheckOptions& options) {
  const auto start = std::chrono::steady_clock::now();
  const auto& nuclear = options.norms.nuclear;
  Tally tally("transformation objective is nonnegative");

  for (int c = 0; c < std::max(1, options.trials / 2); ++c) {
    const std::uint64_t case_seed = options.seed + static_cast<std::uint64_t>(c);
    Rng rng = Rng(case_seed).derive(4);
    const Index d = draw(rng, 1, 8);
    Matrix t = random_matrix(rng, draw(rng, 1, d), d);
    t /= options.norms.spectral(t);
    const Matrix yp = random_matrix(rng, d, draw(rng, 1, 12));
    const Matrix ym = random_matrix(rng, d, draw(rng, 1, 12));
    const double scale = nuclear(t * yp) + nuclear(t * ym);
    const double value = scale - nuclear(t * linalg::concat_columns(yp, ym));
    tally.record(-value / std::max(scale, std::numeric_limits<double>::min()), 1e-9, case_seed,
                 "objective >= 0");
  }
  return tally.finish(start);
}

SuiteResult check_subgradient(const SelfcheckOptions& options) {
  const auto start = std::chrono::steady_clock::now();
  Tally tally("subgradient matches central differences");
  constexpr double h = 1e-6;

  auto well_separated = [](const Matrix& m) {
    const Vector s = linalg::singular_values(m);
    if (s.size() == 0 || s(s.size() - 1) <= 1e-3) return false;
    for (Index i = 1; i < s.size(); ++i) {
      if (s(i - 1) - s(i) <= 1e-3) return false;
    }
    return true;
  };

  for (int c = 0; c < std::max(1, options.trials / 4); ++c) {
    const std::uint64_t case_seed = options.seed + static_cast<std::uint64_t>(c);
    Rng rng = Rng(case_seed).derive(5);
    // Redraw until every nuclear norm term is differentiable with margin.
    TransformMatrix t;
    Matrix yp, ym;
    do {
      const Index d = draw(rng, 2, 6);
      t.matrix = gaussian(rng, d, d);
      t.matrix /= linalg::spectral_norm(t.matrix);
      yp = gaussian(rng, d, d + draw(rng, 0, 5));
      ym = gaussian(rng, d, d + draw(rng, 0, 5));
    } while (!well_separated(t.matrix * yp) || !well_separated(t.matrix * ym) ||
             !well_separated(t.matrix * linalg::concat_columns(yp, ym)));

    const Matrix g = objective_subgradient(t, yp, ym);
    Matrix numeric(g.rows(), g.cols());
    for (Index i = 0; i < g.rows(); ++i) {
      for (Index j = 0; j < g.cols(); ++j) {
        TransformMatrix plus = t, minus = t;
        plus.matrix(i, j) += h;
        minus.matrix(i, j) -= h;
        numeric(i, j) = (objective(plus, yp, ym) - objective(minus, yp, ym)) / (2 * h);
      }
    }
    tally.record((g - numeric).norm() / std::max(numeric.norm(), 1e-300), 1e-4, case_seed,
                 "subgradient vs central differences");
  }
  return tally.finish(start);
}

std::vector<SuiteResult> run_selfcheck(const SelfcheckOptions& options) {
  return {check_concat_nuclear(options), check_concat_spectral_frobenius(options),
          check_objective_nonnegative(options), check_subgradient(options)};
}

std::string format_selfcheck(const std::vector<SuiteResult>& results, bool include_timing) {
  std::string out;
  char line[512];
  for (const auto& r : results) {
    std::snprintf(line, sizeof line, "%s  %-48s cases=%-4d worst/tol=%.3g", r.passed ? "PASS" : "FAIL",
                  r.name.c_str(), r.cases, r.worst_ratio);
    out += line;
    if (include_timing) {
      std::snprintf(line, sizeof line, "  %.2fs", r.seconds);
      out += line;
    }
    if (!r.passed) {
      std::snprintf(line, sizeof line, "  [seed %llu] %s", static_cast<unsigned long long>(r.violating_seed),
                    r.detail.c_str());
      out += line;
    }
    out += '\n';
  }
  return out;
}

}  // namespace transforest
