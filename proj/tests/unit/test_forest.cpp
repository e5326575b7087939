#include <doctest.h>

#include <cmath>
#include <map>
#include <set>

#include "../oracles.hpp"
#include "helpers.hpp"
#include "transforest/data.hpp"
#include "transforest/diagnostics.hpp"
#include "transforest/error.hpp"
#include "transforest/forest.hpp"
#include "transforest/model_io.hpp"

namespace tf = transforest;
using tf::Matrix;
using tf::Vector;
using testutil::gaussian;

namespace {

/// Class c spans coordinates [c*rank, (c+1)*rank) of R^d. Noiseless.
tf::DenseDataset axis_classes(tf::Rng& rng, int classes, Eigen::Index rank, Eigen::Index d, int per_class) {
  tf::DenseDataset ds;
  ds.class_count = classes;
  ds.features = Matrix::Zero(d, classes * per_class);
  for (int c = 0; c < classes; ++c) {
    for (int j = 0; j < per_class; ++j) {
      const Eigen::Index col = c * per_class + j;
      for (Eigen::Index k = 0; k < rank; ++k) ds.features(c * rank + k, col) = rng.normal();
      ds.labels.push_back(c);
    }
  }
  return ds;
}

tf::TrainConfig small_config() {
  tf::TrainConfig config;
  config.n_trees = 1;
  config.max_depth = 4;
  config.learn.max_iters = 20;
  config.dict.n_atoms = 2;
  config.dict.sparsity = 2;
  config.dict.mode = tf::DictMode::svd_basis;
  return config;
}

/// Oracle residual of T y against a dictionary, solved from scratch.
double oracle_residual(const tf::SplitLearner& s, const tf::Dictionary& d, const Vector& y) {
  return oracle::normal_equations_residual(d.atoms(), s.transform().matrix * y, d.ridge());
}

tf::Side oracle_side(const tf::SplitLearner& s, const Vector& y) {
  return oracle_residual(s, s.dict_pos(), y) <= oracle_residual(s, s.dict_neg(), y) ? tf::Side::left
                                                                                     : tf::Side::right;
}

}  // namespace

TEST_CASE("bipartition of two classes is forced") {
  tf::Rng rng(1);
  const int classes[] = {1, 2};
  for (int i = 0; i < 10; ++i) {
    const auto [pos, neg] = tf::random_class_bipartition(classes, rng);
    std::set<int> sides[] = {{pos.begin(), pos.end()}, {neg.begin(), neg.end()}};
    CHECK(sides[0].size() == 1);
    CHECK(sides[1].size() == 1);
    CHECK(sides[0] != sides[1]);
  }
  const int one[] = {3};
  CHECK_THROWS_AS(tf::random_class_bipartition(one, rng), tf::ConfigError);
}

TEST_CASE("bipartitions of three classes are uniform") {
  tf::Rng rng(2);
  const int classes[] = {1, 2, 3};
  std::map<std::set<int>, int> counts;  // keyed by the side holding class 1
  const int draws = 30000;
  for (int i = 0; i < draws; ++i) {
    const auto [pos, neg] = tf::random_class_bipartition(classes, rng);
    CHECK(!pos.empty());
    CHECK(!neg.empty());
    CHECK(pos.size() + neg.size() == 3);
    const auto& with_one = std::find(pos.begin(), pos.end(), 1) != pos.end() ? pos : neg;
    ++counts[std::set<int>(with_one.begin(), with_one.end())];
  }
  REQUIRE(counts.size() == 3);
  const double p = 1.0 / 3.0;
  const double sigma = std::sqrt(draws * p * (1 - p));
  double chi2 = 0.0;
  for (const auto& [side, n] : counts) {
    CHECK(std::abs(n - draws * p) <= 3 * sigma);
    chi2 += std::pow(n - draws * p, 2) / (draws * p);
  }
  CHECK(chi2 < 13.8);  // chi-square, 2 dof, p = 0.001
}

TEST_CASE("bipartition is a function of the seed") {
  const int classes[] = {0, 1, 2, 3, 4, 5};
  tf::Rng a(9), b(9);
  for (int i = 0; i < 100; ++i) CHECK(tf::random_class_bipartition(classes, a) == tf::random_class_bipartition(classes, b));
}

TEST_CASE("stopping rules produce leaves") {
  tf::Rng rng(3);
  auto config = small_config();

  SUBCASE("single class") {
    const Matrix x = gaussian(rng, 3, 20);
    const std::vector<int> labels(20, 1);
    const auto tree = tf::train_tree(x, labels, 3, config, rng);
    REQUIRE(tree.nodes.size() == 1);
    const Vector want = (Vector(3) << 1.0 / 23, 21.0 / 23, 1.0 / 23).finished();
    CHECK((tree.nodes[0].posterior - want).norm() < 1e-15);
  }
  SUBCASE("depth limit") {
    const auto ds = axis_classes(rng, 2, 1, 3, 20);
    const auto tree = tf::train_tree(ds.features, ds.labels, 2, config, rng, config.max_depth);
    CHECK(tree.nodes.size() == 1);
    CHECK(tree.nodes[0].posterior.sum() == doctest::Approx(1.0).epsilon(1e-12));
  }
  SUBCASE("too few samples") {
    config.min_node_samples = 50;
    const auto ds = axis_classes(rng, 2, 1, 3, 20);
    CHECK(tf::train_tree(ds.features, ds.labels, 2, config, rng).nodes.size() == 1);
  }
  CHECK_THROWS_AS(tf::train_tree(Matrix(3, 0), {}, 2, config, rng), tf::ConfigError);
}

TEST_CASE("orthogonal lines split perfectly at the root") {
  tf::Rng rng(4);
  const auto ds = axis_classes(rng, 2, 1, 3, 50);
  auto config = small_config();
  config.max_depth = 2;
  config.dict.n_atoms = 1;
  config.dict.sparsity = 1;
  const auto tree = tf::train_tree(ds.features, ds.labels, 2, config, rng);
  const auto& root = tree.nodes[0];
  REQUIRE(!root.is_leaf());
  std::set<int> left_labels, right_labels;
  for (std::size_t j = 0; j < ds.size(); ++j) {
    const auto side = tf::split_evaluate(*root.split, ds.features.col(static_cast<Eigen::Index>(j)));
    (side == tf::Side::left ? left_labels : right_labels).insert(ds.labels[j]);
  }
  CHECK(left_labels.size() == 1);
  CHECK(right_labels.size() == 1);
  CHECK(left_labels != right_labels);
  CHECK(tree.nodes[static_cast<std::size_t>(root.left)].is_leaf());
  CHECK(tree.nodes[static_cast<std::size_t>(root.right)].is_leaf());
  CHECK(tf::objective(root.split->transform(), ds.features.leftCols(50), ds.features.rightCols(50)) <= 1e-8);
}

TEST_CASE("split_evaluate: in-span routing, swap symmetry and oracle agreement") {
  tf::Rng rng(5);
  const auto ds = axis_classes(rng, 2, 2, 6, 30);
  const auto t = tf::identity_transform(6, 6);
  const tf::Dictionary pos = tf::svd_basis_learn(ds.features.leftCols(30), 2, 0.0);
  const tf::Dictionary neg = tf::svd_basis_learn(ds.features.rightCols(30), 2, 0.0);
  const tf::SplitLearner learner(t, pos, neg);
  const tf::SplitLearner swapped(t, neg, pos);

  const Vector in_pos = ds.features.col(3);
  CHECK(tf::split_evaluate(learner, in_pos) == tf::Side::left);
  CHECK(learner.residuals(in_pos).first <= 1e-9);

  for (int i = 0; i < 50; ++i) {
    const Vector y = testutil::gaussian_vector(rng, 6);
    const auto [rp, rn] = learner.residuals(y);
    if (rp == rn) continue;
    CHECK(tf::split_evaluate(learner, y) != tf::split_evaluate(swapped, y));
  }
  CHECK_THROWS_AS(tf::split_evaluate(learner, Vector::Ones(5)), tf::DimensionError);
}

TEST_CASE("trained split decisions match the normal-equations oracle") {
  tf::Rng rng(6);
  tf::SubspaceSpec spec;
  spec.ambient_dim = 8;
  spec.subspace_dims = {2, 2, 2};
  spec.points_per_subspace = 40;
  spec.noise_sigma = 0.05;
  const auto synth = tf::synth_subspaces(spec, rng);
  auto config = small_config();
  config.max_depth = 3;
  const auto tree = tf::train_tree(synth.dataset.features, synth.dataset.labels, 3, config, rng);
  REQUIRE(!tree.nodes[0].is_leaf());
  const auto& learner = *tree.nodes[0].split;
  for (int i = 0; i < 200; ++i) {
    const Vector y = testutil::gaussian_vector(rng, 8);
    CHECK(tf::split_evaluate(learner, y) == oracle_side(learner, y));
  }

  // Manual descent with oracle residuals reaches the same leaf.
  for (int i = 0; i < 100; ++i) {
    const Vector y = synth.dataset.features.col(i % synth.dataset.features.cols()) + 0.1 * testutil::gaussian_vector(rng, 8);
    int node = 0;
    while (!tree.nodes[static_cast<std::size_t>(node)].is_leaf()) {
      const auto& n = tree.nodes[static_cast<std::size_t>(node)];
      node = oracle_side(*n.split, y) == tf::Side::left ? n.left : n.right;
    }
    CHECK(tf::tree_leaf(tree, y) == node);
  }
}

TEST_CASE("tree structure invariants") {
  tf::Rng rng(7);
  tf::SubspaceSpec spec;
  spec.ambient_dim = 10;
  spec.subspace_dims = {2, 2, 2, 2};
  spec.points_per_subspace = 30;
  spec.noise_sigma = 0.2;
  const auto synth = tf::synth_subspaces(spec, rng);
  auto config = small_config();
  config.max_depth = 3;
  const auto tree = tf::train_tree(synth.dataset.features, synth.dataset.labels, 4, config, rng);
  CHECK(tree.depth() <= config.max_depth);
  std::size_t leaf_samples = 0;
  for (const auto& node : tree.nodes) {
    if (!node.is_leaf()) {
      CHECK(tf::linalg::spectral_norm(node.split->transform().matrix) == doctest::Approx(1.0).epsilon(1e-8));
      continue;
    }
    leaf_samples += node.sample_count;
    CHECK(node.posterior.minCoeff() >= 0.0);
    CHECK(std::abs(node.posterior.sum() - 1.0) <= 1e-12);
  }
  CHECK(leaf_samples == synth.dataset.size());

  // Each training sample lands in exactly one leaf; tallies agree with leaf counts.
  std::map<int, std::size_t> reached;
  for (Eigen::Index j = 0; j < synth.dataset.features.cols(); ++j) ++reached[tf::tree_leaf(tree, synth.dataset.features.col(j))];
  for (const auto& [leaf, count] : reached) CHECK(tree.nodes[static_cast<std::size_t>(leaf)].sample_count == count);
}

TEST_CASE("single-leaf and depth-1 predictions") {
  tf::Rng rng(8);
  const auto ds = axis_classes(rng, 2, 1, 3, 20);
  auto config = small_config();
  config.max_depth = 1;
  const auto tree = tf::train_tree(ds.features, ds.labels, 2, config, rng);
  REQUIRE(tree.nodes.size() == 3);
  for (int i = 0; i < 10; ++i) {
    const Vector y = testutil::gaussian_vector(rng, 3);
    const auto& root = tree.nodes[0];
    const int want = tf::split_evaluate(*root.split, y) == tf::Side::left ? root.left : root.right;
    CHECK(tf::tree_predict(tree, y) == tree.nodes[static_cast<std::size_t>(want)].posterior);
  }

  const std::vector<int> same(20, 0);
  const auto leaf = tf::train_tree(ds.features.leftCols(20), same, 2, config, rng);
  CHECK(tf::tree_predict(leaf, testutil::gaussian_vector(rng, 3)) == leaf.nodes[0].posterior);
}

TEST_CASE("bagging draws distinct, deterministic subsets") {
  CHECK(tf::bagging_indices(10, 1.0, 0, 0).size() == 10);
  CHECK(tf::bagging_indices(100, 0.25, 3, 1) == tf::bagging_indices(100, 0.25, 3, 1));
  CHECK(tf::bagging_indices(101, 0.1, 0, 0).size() == 11);
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    std::set<std::vector<std::size_t>> bags;
    for (std::size_t t = 0; t < 20; ++t) {
      const auto bag = tf::bagging_indices(10000, 0.1, seed, t);
      CHECK(bag.size() == 1000);
      CHECK(std::adjacent_find(bag.begin(), bag.end()) == bag.end());
      bags.insert(bag);
    }
    CHECK(bags.size() == 20);
  }
}

TEST_CASE("forest averaging, accuracy and determinism") {
  tf::Rng rng(9);
  const auto ds = axis_classes(rng, 3, 2, 6, 30);
  auto config = small_config();
  config.n_trees = 4;
  config.sample_fraction = 0.6;
  config.seed = 17;
  const auto forest = tf::forest_train(ds, config);
  REQUIRE(forest.trees.size() == 4);

  // Orthogonal noiseless classes are separable.
  CHECK(tf::evaluate_accuracy(forest, ds) == 1.0);

  for (int i = 0; i < 50; ++i) {
    const Vector y = testutil::gaussian_vector(rng, 6);
    const auto pred = tf::forest_predict(forest, y);
    Vector mean = Vector::Zero(3);
    for (const auto& tree : forest.trees) mean += tf::tree_predict(tree, y);
    mean /= 4.0;
    CHECK((pred.posterior - mean).cwiseAbs().maxCoeff() <= 1e-12);
    CHECK(std::abs(pred.posterior.sum() - 1.0) <= 1e-12);
    const Vector p = tf::tree_predict(forest.trees[0], y), q = tf::tree_predict(forest.trees[1], y);
    CHECK(tf::forest_predict(forest, y, 2).posterior == (p + q) / 2.0);
    CHECK(tf::forest_predict(forest, y, 1).posterior == p);
  }

  // Same config again, and with a different worker count, gives the same bytes.
  CHECK(tf::forest_to_string(tf::forest_train(ds, config)) == tf::forest_to_string(forest));
  setenv("TRANSFOREST_THREADS", "3", 1);
  const auto threaded = tf::forest_train(ds, config);
  unsetenv("TRANSFOREST_THREADS");
  CHECK(tf::forest_to_string(threaded) == tf::forest_to_string(forest));

  // One correctly classified point, then labels that never match.
  const std::size_t first[] = {0};
  CHECK(tf::evaluate_accuracy(forest, ds.subset(first)) == 1.0);
  tf::DenseDataset wrong = ds;
  for (std::size_t j = 0; j < wrong.size(); ++j) {
    wrong.labels[j] = (tf::forest_predict(forest, wrong.features.col(static_cast<Eigen::Index>(j))).label + 1) % 3;
  }
  CHECK(tf::evaluate_accuracy(forest, wrong) == 0.0);
  CHECK_THROWS_AS(tf::forest_predict(forest, Vector::Ones(4)), tf::DimensionError);
}

TEST_CASE("a single full-data tree is the plain tree") {
  tf::Rng rng(10);
  const auto ds = axis_classes(rng, 2, 1, 3, 20);
  auto config = small_config();
  config.seed = 5;
  const auto forest = tf::forest_train(ds, config);
  tf::Rng tree_rng = tf::Rng(5).derive(0).derive(1);
  const auto tree = tf::train_tree(ds.features, ds.labels, 2, config, tree_rng);
  tf::Forest manual;
  manual.trees = {tree};
  manual.class_count = 2;
  manual.feature_dim = 3;
  manual.config = config;
  CHECK(tf::forest_to_string(manual) == tf::forest_to_string(forest));
}

TEST_CASE("forest_train rejects degenerate data") {
  tf::DenseDataset one;
  one.class_count = 2;
  one.features = Matrix::Ones(3, 4);
  one.labels = {0, 0, 0, 0};
  CHECK_THROWS_AS(tf::forest_train(one, small_config()), tf::ConfigError);
}

TEST_CASE("identity learner mode") {
  auto config = small_config();
  const auto id = tf::identity_learner_mode(config);
  CHECK(id.learner == tf::LearnerKind::identity);
  CHECK(id.max_depth == config.max_depth);

  // Orthogonal classes: both modes route every training point the same way.
  tf::Rng rng(11);
  const auto ds = axis_classes(rng, 2, 2, 5, 30);
  tf::Rng ra(1), rb(1);
  const auto learned = tf::train_tree(ds.features, ds.labels, 2, config, ra);
  const auto ident = tf::train_tree(ds.features, ds.labels, 2, id, rb);
  for (Eigen::Index j = 0; j < ds.features.cols(); ++j) {
    CHECK(tf::split_evaluate(*learned.nodes[0].split, ds.features.col(j)) ==
          tf::split_evaluate(*ident.nodes[0].split, ds.features.col(j)));
  }
  CHECK((ident.nodes[0].split->transform().matrix - Matrix::Identity(5, 5)).norm() == 0.0);
}

TEST_CASE("learned root transform opens the oblique three-line configuration") {
  tf::Rng rng(12);
  const auto synth = tf::synth_subspaces(tf::fig1a_spec(), rng);
  auto config = small_config();
  config.max_depth = 1;
  config.dict.n_atoms = 1;
  config.dict.sparsity = 1;
  config.learn.max_iters = 200;
  config.learn.initial_step = 10.0;
  auto inter = [&](const tf::TrainConfig& c) {
    tf::Rng r(3);
    const auto tree = tf::train_tree(synth.dataset.features, synth.dataset.labels, 2, c, r);
    REQUIRE(!tree.nodes[0].is_leaf());
    double worst = 10.0;
    for (const auto& a : tf::group_angles(tree.nodes[0].split->transform().matrix * synth.dataset.features,
                                          synth.subspace_of)) {
      if (a.group_a != 0 || a.group_b != 1) worst = std::min(worst, a.angle);  // lines 0, 1 share a class
    }
    return worst;
  };
  CHECK(inter(config) > inter(tf::identity_learner_mode(config)));
}
