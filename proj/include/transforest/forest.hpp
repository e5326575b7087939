#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string_view>
#include <utility>
#include <vector>

#include "transforest/dataset.hpp"
#include "transforest/dictionary.hpp"
#include "transforest/rng.hpp"
#include "transforest/transform_learner.hpp"

namespace transforest {

enum class LearnerKind { transform, identity };

std::string_view to_string(LearnerKind kind);
LearnerKind learner_kind_from_string(std::string_view name);

struct TrainConfig {
  int n_trees = 20;
  int max_depth = 9;
  std::size_t min_node_samples = 8;
  double sample_fraction = 1.0;
  LearnConfig learn;
  DictConfig dict;
  std::uint64_t seed = 0;
  double laplace_alpha = 1.0;
  LearnerKind learner = LearnerKind::transform;
  /// Children receive T*y instead of the node's input features.
  bool cascade_features = false;

  void validate() const;
};

/// Same configuration with the learned transformation replaced by the
/// (row-truncated) identity at every node.
TrainConfig identity_learner_mode(TrainConfig config);

/// Per-node weak learner: transform plus one dictionary per class group.
/// Evaluation is z = T y followed by two thin projections; nothing is
/// factorized after construction.
class SplitLearner {
 public:
  SplitLearner(TransformMatrix transform, Dictionary dict_pos, Dictionary dict_neg);

  const TransformMatrix& transform() const { return transform_; }
  const Dictionary& dict_pos() const { return dict_pos_; }
  const Dictionary& dict_neg() const { return dict_neg_; }
  Eigen::Index input_dim() const { return transform_.input_dim(); }

  /// Residuals ||(I - P+) T y|| and ||(I - P-) T y||.
  std::pair<double, double> residuals(const Vector& y) const;

 private:
  TransformMatrix transform_;
  Dictionary dict_pos_;
  Dictionary dict_neg_;
};

enum class Side { left, right };

/// Left iff the positive-dictionary residual is no larger than the negative one.
Side split_evaluate(const SplitLearner& learner, const Vector& y);

struct TreeNode {
  int depth = 0;
  std::size_t sample_count = 0;
  std::optional<SplitLearner> split;  // empty for leaves
  int left = -1;
  int right = -1;
  Vector posterior;  // leaves only

  bool is_leaf() const { return !split.has_value(); }
};

struct Tree {
  std::vector<TreeNode> nodes;  // nodes[0] is the root
  int class_count = 0;
  Eigen::Index feature_dim = 0;
  bool cascade_features = false;

  int depth() const;
  std::size_t leaf_count() const;
};

struct Forest {
  std::vector<Tree> trees;
  int class_count = 0;
  Eigen::Index feature_dim = 0;
  TrainConfig config;
};

/// Uniform random split of the classes into two nonempty groups. Every one of
/// the 2^(k-1) - 1 unordered bipartitions is equally likely.
std::pair<std::vector<int>, std::vector<int>> random_class_bipartition(std::span<const int> classes, Rng& rng);

/// Grows a tree whose root sits at `depth` from the given samples.
Tree train_tree(const Matrix& samples, std::span<const int> labels, int class_count, const TrainConfig& config,
                Rng& rng, int depth = 0);

/// Leaf index reached by `y`.
int tree_leaf(const Tree& tree, const Vector& y);
Vector tree_predict(const Tree& tree, const Vector& y);

/// Sorted indices of the ceil(fraction * n) samples used by tree `tree_index`.
std::vector<std::size_t> bagging_indices(std::size_t n, double fraction, std::uint64_t seed, std::size_t tree_index);

/// Trains every tree independently. Parallelism (TRANSFOREST_THREADS) never
/// changes the result.
Forest forest_train(const DenseDataset& dataset, const TrainConfig& config);

struct Prediction {
  Vector posterior;
  int label = 0;
};

/// Mean posterior over the first `tree_count` trees (all trees when 0).
Prediction forest_predict(const Forest& forest, const Vector& y, std::size_t tree_count = 0);

double evaluate_accuracy(const Forest& forest, const DenseDataset& test, std::size_t tree_count = 0);

/// Worker count for tree-parallel training: TRANSFOREST_THREADS if set,
/// otherwise the hardware concurrency.
unsigned worker_threads();

}  // namespace transforest
