#include <doctest.h>

#include <algorithm>
#include <cmath>

#include "../oracles.hpp"
#include "helpers.hpp"
#include "transforest/dictionary.hpp"
#include "transforest/error.hpp"

namespace tf = transforest;
using tf::Matrix;
using tf::Vector;
using testutil::gaussian;

namespace {

Matrix unit_columns(Matrix m) {
  for (Eigen::Index j = 0; j < m.cols(); ++j) m.col(j).normalize();
  return m;
}

double truncated_svd_error(const Matrix& x, Eigen::Index rank) {
  const auto s = oracle::jacobi_singular_values(oracle::from_eigen(x));
  double e = 0.0;
  for (std::size_t i = static_cast<std::size_t>(rank); i < s.size(); ++i) e += s[i] * s[i];
  return e;
}

}  // namespace

TEST_CASE("Dictionary enforces unit atoms") {
  CHECK_THROWS_AS(tf::Dictionary(2.0 * Matrix::Identity(3, 1), 0.0), tf::ConfigError);
  CHECK_THROWS_AS(tf::Dictionary(Matrix(3, 0), 0.0), tf::ConfigError);
  CHECK_NOTHROW(tf::Dictionary(Matrix::Identity(3, 2), 0.0));
}

TEST_CASE("projector is symmetric and idempotent at zero ridge") {
  tf::Rng rng(1);
  const tf::Dictionary d(unit_columns(gaussian(rng, 7, 3)), 0.0);
  const Matrix p = d.projector();
  CHECK((p - p.transpose()).norm() <= 1e-8);
  CHECK((p * p - p).norm() <= 1e-6);
}

TEST_CASE("OMP recovers a single atom") {
  tf::Rng rng(2);
  const Matrix atoms = unit_columns(gaussian(rng, 6, 4));
  const auto code = tf::omp_sparse_code(atoms, atoms.col(2), 2);
  REQUIRE(code.support.size() >= 1);
  CHECK(code.support[0] == 2);
  const Vector dense = code.dense(4);
  CHECK(dense(2) == doctest::Approx(1.0));
  CHECK((atoms.col(2) - atoms * dense).norm() < 1e-12);
}

TEST_CASE("OMP leaves a vector orthogonal to every atom untouched") {
  Matrix atoms = Matrix::Zero(4, 2);
  atoms(0, 0) = 1;
  atoms(1, 1) = 1;
  Vector x = Vector::Zero(4);
  x(2) = 1.5;
  x(3) = -0.5;
  for (Eigen::Index s = 1; s <= 2; ++s) {
    const auto code = tf::omp_sparse_code(atoms, x, s);
    CHECK((x - atoms * code.dense(2)).norm() == doctest::Approx(x.norm()));
  }
  CHECK(tf::omp_sparse_code(atoms, Vector::Zero(4), 2).support.empty());
}

TEST_CASE("OMP residual is orthogonal to the support and shrinks with sparsity") {
  tf::Rng rng(3);
  for (int trial = 0; trial < 20; ++trial) {
    const Matrix atoms = unit_columns(gaussian(rng, 10, 8));
    const Vector x = testutil::gaussian_vector(rng, 10);
    double previous = x.norm();
    for (Eigen::Index s = 1; s <= 8; ++s) {
      const auto code = tf::omp_sparse_code(atoms, x, s);
      CHECK(static_cast<Eigen::Index>(code.support.size()) <= s);
      const Vector r = x - atoms * code.dense(8);
      for (const auto j : code.support) CHECK(std::abs(atoms.col(j).dot(r)) <= 1e-8);
      CHECK(r.norm() <= previous + 1e-12);
      previous = r.norm();
    }
  }
}

TEST_CASE("OMP two-atom support against exhaustive subset search") {
  tf::Rng rng(4);
  int agreed = 0;
  for (int trial = 0; trial < 50; ++trial) {
    const Matrix atoms = unit_columns(gaussian(rng, 8, 6));
    const Vector x = testutil::gaussian_vector(rng, 8);
    const auto code = tf::omp_sparse_code(atoms, x, 2);
    std::vector<std::size_t> support(code.support.begin(), code.support.end());
    std::sort(support.begin(), support.end());
    const double omp_residual = (x - atoms * code.dense(6)).norm();
    const auto best = oracle::best_subset(atoms, x, 2);
    // OMP's own residual must be the optimal fit on the support it chose.
    CHECK(omp_residual == doctest::Approx(oracle::normal_equations_residual(atoms, x, 0.0, support)).epsilon(1e-9));
    CHECK(omp_residual >= best.residual - 1e-12);
    // Greedy bound: never worse than the best single atom refitted alone.
    const auto best_one = oracle::best_subset(atoms, x, 1);
    CHECK(omp_residual <= best_one.residual + 1e-12);
    if (support == best.support) {
      ++agreed;
      CHECK(omp_residual == doctest::Approx(best.residual).epsilon(1e-9));
    }
  }
  CHECK(agreed > 0);
}

TEST_CASE("OMP argument checks") {
  CHECK_THROWS_AS(tf::omp_sparse_code(Matrix::Identity(3, 2), Vector::Ones(4), 1), tf::DimensionError);
  CHECK_THROWS_AS(tf::omp_sparse_code(Matrix::Identity(3, 2), Vector::Ones(3), 3), tf::ConfigError);
}

TEST_CASE("K-SVD on rank-1 data finds the line") {
  Vector v(4);
  v << 1, 2, -2, 4;
  v.normalize();
  Matrix x(4, 12);
  for (int j = 0; j < 12; ++j) x.col(j) = v;
  tf::DictConfig config;
  config.n_atoms = 1;
  config.sparsity = 1;
  tf::Rng rng(5);
  std::vector<double> history;
  const auto d = tf::ksvd_learn(x, config, rng, &history);
  REQUIRE(d.n_atoms() == 1);
  CHECK(std::abs(std::abs(d.atoms().col(0).dot(v)) - 1.0) < 1e-12);
  CHECK(history.back() < 1e-20);
}

TEST_CASE("K-SVD recovers an exact two-dimensional subspace") {
  tf::Rng rng(6);
  const Matrix x = gaussian(rng, 8, 2) * gaussian(rng, 2, 60);
  tf::DictConfig config;
  config.n_atoms = 2;
  config.sparsity = 2;
  config.ridge = 0.0;
  std::vector<double> history;
  const auto d = tf::ksvd_learn(x, config, rng, &history);
  CHECK(std::sqrt(history.back()) <= 1e-8 * x.norm());
  for (Eigen::Index j = 0; j < x.cols(); ++j) CHECK(tf::projection_residual(d, x.col(j)) <= 1e-8 * x.norm());
}

TEST_CASE("K-SVD on noisy rank-3 data is near the truncated SVD error") {
  tf::Rng rng(7);
  const Matrix x = gaussian(rng, 10, 3) * gaussian(rng, 3, 200) + 0.01 * gaussian(rng, 10, 200);
  tf::DictConfig config;
  config.n_atoms = 3;
  config.sparsity = 3;
  config.ksvd_iters = 20;
  std::vector<double> history;
  const auto d = tf::ksvd_learn(x, config, rng, &history);
  for (std::size_t i = 1; i < history.size(); ++i) CHECK(history[i] <= history[i - 1] * (1 + 1e-12));
  CHECK(history.back() <= 2.0 * truncated_svd_error(x, 3));
  for (Eigen::Index a = 0; a < d.n_atoms(); ++a) CHECK(d.atoms().col(a).norm() == doctest::Approx(1.0).epsilon(1e-10));
}

TEST_CASE("K-SVD clamps atoms and refuses all-zero data") {
  tf::Rng rng(8);
  tf::DictConfig config;
  config.n_atoms = 16;
  const auto d = tf::ksvd_learn(gaussian(rng, 5, 3), config, rng);
  CHECK(d.n_atoms() == 3);
  CHECK_THROWS_AS(tf::ksvd_learn(Matrix::Zero(5, 4), config, rng), tf::NumericError);
}

TEST_CASE("svd basis on simple data") {
  const auto d = tf::svd_basis_learn(Matrix::Identity(3, 3), 3);
  CHECK((d.atoms().cwiseAbs().transpose() * d.atoms().cwiseAbs() - Matrix::Identity(3, 3)).norm() < 1e-12);
  CHECK((d.atoms().cwiseAbs().colwise().sum().array() - 1.0).abs().maxCoeff() < 1e-12);

  Vector u(3), w(5);
  u << 3, 0, 4;
  w << 1, 1, 1, 1, 1;
  const auto r1 = tf::svd_basis_learn(u * w.transpose(), 1);
  CHECK(std::abs(std::abs(r1.atoms().col(0).dot(u.normalized())) - 1.0) < 1e-12);
  CHECK_THROWS_AS(tf::svd_basis_learn(Matrix::Identity(3, 3), 4), tf::ConfigError);
}

TEST_CASE("svd basis beats random competing subspaces") {
  tf::Rng rng(9);
  const Matrix x = gaussian(rng, 8, 30);
  const auto d = tf::svd_basis_learn(x, 3);
  double mine = 0.0;
  for (Eigen::Index j = 0; j < x.cols(); ++j) mine += std::pow(tf::projection_residual(d, x.col(j)), 2);
  for (int trial = 0; trial < 50; ++trial) {
    const tf::Dictionary other(unit_columns(gaussian(rng, 8, 3)), 0.0);
    double theirs = 0.0;
    for (Eigen::Index j = 0; j < x.cols(); ++j) theirs += std::pow(tf::projection_residual(other, x.col(j)), 2);
    CHECK(mine <= theirs + 1e-9);
  }
}

TEST_CASE("projection residual") {
  tf::Rng rng(10);
  const Matrix atoms = unit_columns(gaussian(rng, 6, 3));
  const tf::Dictionary d(atoms, 0.0);
  CHECK(tf::projection_residual(d, atoms * testutil::gaussian_vector(rng, 3)) <= 1e-9);

  Matrix e1 = Matrix::Zero(2, 1);
  e1(0, 0) = 1;
  Vector e2 = Vector::Zero(2);
  e2(1) = 1;
  CHECK(tf::projection_residual(tf::Dictionary(e1, 0.0), e2) == doctest::Approx(1.0));

  for (double ridge : {0.0, 1e-8, 1e-2}) {
    const tf::Dictionary dr(atoms, ridge);
    for (int trial = 0; trial < 20; ++trial) {
      const Vector x = testutil::gaussian_vector(rng, 6);
      const double got = tf::projection_residual(dr, x);
      CHECK(std::abs(got - oracle::normal_equations_residual(atoms, x, ridge)) <= 1e-9 * std::max(1.0, x.norm()));
      CHECK(got <= x.norm() + 1e-12);
    }
  }
  CHECK_THROWS_AS(tf::projection_residual(d, Vector::Ones(5)), tf::DimensionError);
}

TEST_CASE("both dictionary modes give the same residuals on exact subspace data") {
  tf::Rng rng(11);
  const Matrix basis = tf::linalg::orthonormal_basis(gaussian(rng, 7, 3));
  const Matrix x = basis * gaussian(rng, 3, 50);
  tf::DictConfig config;
  config.n_atoms = 3;
  config.sparsity = 3;
  config.ridge = 0.0;
  const auto k = tf::ksvd_learn(x, config, rng);
  const auto s = tf::svd_basis_learn(x, 3, 0.0);
  for (int trial = 0; trial < 20; ++trial) {
    const Vector y = testutil::gaussian_vector(rng, 7);
    CHECK(std::abs(tf::projection_residual(k, y) - tf::projection_residual(s, y)) <= 1e-8);
  }
}
