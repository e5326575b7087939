#include "transforest/forest.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdlib>
#include <exception>
#include <mutex>
#include <string>
#include <thread>

#include "transforest/error.hpp"

namespace transforest {

using Eigen::Index;

std::string_view to_string(LearnerKind kind) { return kind == LearnerKind::transform ? "transform" : "identity"; }

LearnerKind learner_kind_from_string(std::string_view name) {
  if (name == "transform") return LearnerKind::transform;
  if (name == "identity") return LearnerKind::identity;
  throw ConfigError("unknown learner '" + std::string(name) + "'");
}

void TrainConfig::validate() const {
  if (n_trees < 1) throw ConfigError("n_trees must be at least 1");
  if (max_depth < 1) throw ConfigError("max_depth must be at least 1");
  if (!(sample_fraction > 0 && sample_fraction <= 1)) throw ConfigError("sample_fraction must be in (0, 1]");
  if (!(laplace_alpha >= 0)) throw ConfigError("laplace_alpha must be nonnegative");
  learn.validate();
  dict.validate();
}

TrainConfig identity_learner_mode(TrainConfig config) {
  config.learner = LearnerKind::identity;
  return config;
}

SplitLearner::SplitLearner(TransformMatrix transform, Dictionary dict_pos, Dictionary dict_neg)
    : transform_(std::move(transform)), dict_pos_(std::move(dict_pos)), dict_neg_(std::move(dict_neg)) {
  const Index r = transform_.output_dim();
  if (dict_pos_.dim() != r || dict_neg_.dim() != r) {
    throw DimensionError("dictionaries must live in the transform's output space");
  }
}

std::pair<double, double> SplitLearner::residuals(const Vector& y) const {
  if (y.size() != input_dim()) {
    throw DimensionError("split input has " + std::to_string(y.size()) + " entries, expected " +
                         std::to_string(input_dim()));
  }
  const Vector z = transform_.matrix * y;
  return {dict_pos_.residual(z).norm(), dict_neg_.residual(z).norm()};
}

Side split_evaluate(const SplitLearner& learner, const Vector& y) {
  const auto [pos, neg] = learner.residuals(y);
  return pos <= neg ? Side::left : Side::right;
}

int Tree::depth() const {
  int d = 0;
  for (const auto& node : nodes) d = std::max(d, node.depth - nodes.front().depth);
  return d;
}

std::size_t Tree::leaf_count() const {
  return static_cast<std::size_t>(std::count_if(nodes.begin(), nodes.end(), [](const TreeNode& n) { return n.is_leaf(); }));
}

std::pair<std::vector<int>, std::vector<int>> random_class_bipartition(std::span<const int> classes, Rng& rng) {
  if (classes.size() < 2) throw ConfigError("bipartition needs at least two classes");
  // The first class always goes to the positive group; the rest are coin
  // flips, rejecting the draw that leaves the negative group empty.
  std::vector<int> pos, neg;
  do {
    pos.assign(1, classes[0]);
    neg.clear();
    for (std::size_t i = 1; i < classes.size(); ++i) {
      ((rng.next() >> 63) ? pos : neg).push_back(classes[i]);
    }
  } while (neg.empty());
  return {std::move(pos), std::move(neg)};
}

namespace {

class TreeBuilder {
 public:
  TreeBuilder(Tree& tree, const TrainConfig& config, Rng& rng) : tree_(tree), config_(config), rng_(rng) {}

  int grow(const Matrix& samples, std::span<const int> labels, int depth) {
    const int index = static_cast<int>(tree_.nodes.size());
    tree_.nodes.emplace_back();
    tree_.nodes[index].depth = depth;
    tree_.nodes[index].sample_count = labels.size();

    std::vector<std::size_t> counts(static_cast<std::size_t>(tree_.class_count), 0);
    for (int label : labels) ++counts[static_cast<std::size_t>(label)];
    std::vector<int> present;
    for (std::size_t c = 0; c < counts.size(); ++c) {
      if (counts[c] > 0) present.push_back(static_cast<int>(c));
    }

    if (depth >= config_.max_depth || present.size() < 2 || labels.size() < config_.min_node_samples) {
      make_leaf(index, counts);
      return index;
    }

    auto split = fit_split(samples, labels, present);
    const Matrix routed_features = config_.cascade_features ? Matrix(split.transform().matrix * samples) : Matrix();

    std::vector<Index> left, right;
    for (Index j = 0; j < samples.cols(); ++j) {
      (split_evaluate(split, samples.col(j)) == Side::left ? left : right).push_back(j);
    }
    if (left.empty() || right.empty()) {
      make_leaf(index, counts);
      return index;
    }

    tree_.nodes[index].split.emplace(std::move(split));
    const Matrix& source = config_.cascade_features ? routed_features : samples;
    const int l = grow_subset(source, labels, left, depth + 1);
    const int r = grow_subset(source, labels, right, depth + 1);
    tree_.nodes[index].left = l;
    tree_.nodes[index].right = r;
    return index;
  }

 private:
  int grow_subset(const Matrix& source, std::span<const int> labels, const std::vector<Index>& columns, int depth) {
    Matrix child(source.rows(), static_cast<Index>(columns.size()));
    std::vector<int> child_labels(columns.size());
    for (std::size_t i = 0; i < columns.size(); ++i) {
      child.col(static_cast<Index>(i)) = source.col(columns[i]);
      child_labels[i] = labels[static_cast<std::size_t>(columns[i])];
    }
    return grow(child, child_labels, depth);
  }

  void make_leaf(int index, const std::vector<std::size_t>& counts) {
    const double n = static_cast<double>(tree_.nodes[index].sample_count);
    const double alpha = config_.laplace_alpha;
    const double denom = n + alpha * static_cast<double>(tree_.class_count);
    Vector posterior(tree_.class_count);
    for (int c = 0; c < tree_.class_count; ++c) {
      posterior(c) = denom > 0 ? (static_cast<double>(counts[static_cast<std::size_t>(c)]) + alpha) / denom
                               : 1.0 / tree_.class_count;
    }
    tree_.nodes[index].posterior = std::move(posterior);
  }

  SplitLearner fit_split(const Matrix& samples, std::span<const int> labels, const std::vector<int>& present) {
    const auto [pos_classes, neg_classes] = random_class_bipartition(present, rng_);
    std::vector<char> is_pos(static_cast<std::size_t>(tree_.class_count), 0);
    for (int c : pos_classes) is_pos[static_cast<std::size_t>(c)] = 1;

    Index n_pos = 0;
    for (int label : labels) n_pos += is_pos[static_cast<std::size_t>(label)];
    Matrix yp(samples.rows(), n_pos), ym(samples.rows(), samples.cols() - n_pos);
    for (Index j = 0, ip = 0, im = 0; j < samples.cols(); ++j) {
      if (is_pos[static_cast<std::size_t>(labels[static_cast<std::size_t>(j)])]) {
        yp.col(ip++) = samples.col(j);
      } else {
        ym.col(im++) = samples.col(j);
      }
    }

    const Index d = samples.rows();
    LearnConfig learn = config_.learn;
    learn.output_rows = learn.output_rows == 0 ? d : std::min(learn.output_rows, d);
    TransformMatrix t = config_.learner == LearnerKind::identity ? identity_transform(learn.output_rows, d)
                                                                 : learn_transform(yp, ym, learn).transform;

    Dictionary dict_pos = fit_dictionary(t.matrix * yp);
    Dictionary dict_neg = fit_dictionary(t.matrix * ym);
    return SplitLearner(std::move(t), std::move(dict_pos), std::move(dict_neg));
  }

  Dictionary fit_dictionary(const Matrix& x) {
    DictConfig dict = config_.dict;
    dict.n_atoms = std::min({dict.n_atoms, x.rows(), x.cols()});
    dict.sparsity = std::min(dict.sparsity, dict.n_atoms);
    if (x.squaredNorm() == 0.0) {
      // A class group mapped to zero is modelled by an arbitrary axis; its
      // residual is then the norm of T y minus one coordinate.
      return Dictionary(Matrix::Identity(x.rows(), 1), dict.ridge);
    }
    return learn_dictionary(x, dict, rng_);
  }

  Tree& tree_;
  const TrainConfig& config_;
  Rng& rng_;
};

}  // namespace

Tree train_tree(const Matrix& samples, std::span<const int> labels, int class_count, const TrainConfig& config,
                Rng& rng, int depth) {
  config.validate();
  if (samples.cols() < 1 || labels.empty()) throw ConfigError("cannot train a tree on zero samples");
  if (static_cast<std::size_t>(samples.cols()) != labels.size()) {
    throw DimensionError("sample and label counts differ");
  }
  for (int label : labels) {
    if (label < 0 || label >= class_count) throw ConfigError("label outside [0, class_count)");
  }
  linalg::require_finite(samples, "training samples");

  Tree tree;
  tree.class_count = class_count;
  tree.feature_dim = samples.rows();
  tree.cascade_features = config.cascade_features;
  TreeBuilder(tree, config, rng).grow(samples, labels, depth);
  return tree;
}

int tree_leaf(const Tree& tree, const Vector& y) {
  if (y.size() != tree.feature_dim) throw DimensionError("input dimension does not match the tree");
  int index = 0;
  Vector features = y;
  while (!tree.nodes[static_cast<std::size_t>(index)].is_leaf()) {
    const TreeNode& node = tree.nodes[static_cast<std::size_t>(index)];
    const Side side = split_evaluate(*node.split, features);
    if (tree.cascade_features) features = node.split->transform().matrix * features;
    index = side == Side::left ? node.left : node.right;
  }
  return index;
}

Vector tree_predict(const Tree& tree, const Vector& y) {
  return tree.nodes[static_cast<std::size_t>(tree_leaf(tree, y))].posterior;
}

std::vector<std::size_t> bagging_indices(std::size_t n, double fraction, std::uint64_t seed, std::size_t tree_index) {
  if (!(fraction > 0 && fraction <= 1)) throw ConfigError("sample_fraction must be in (0, 1]");
  Rng rng = Rng(seed).derive(tree_index);
  const auto k = std::min(n, static_cast<std::size_t>(std::ceil(fraction * static_cast<double>(n) - 1e-9)));
  std::vector<std::size_t> all(n);
  for (std::size_t i = 0; i < n; ++i) all[i] = i;
  if (k == n) return all;
  for (std::size_t i = 0; i < k; ++i) std::swap(all[i], all[i + rng.below(n - i)]);
  all.resize(k);
  std::sort(all.begin(), all.end());
  return all;
}

unsigned worker_threads() {
  if (const char* env = std::getenv("TRANSFOREST_THREADS")) {
    char* end = nullptr;
    const long value = std::strtol(env, &end, 10);
    if (end != env && *end == '\0' && value > 0) return static_cast<unsigned>(value);
  }
  return std::max(1u, std::thread::hardware_concurrency());
}

Forest forest_train(const DenseDataset& dataset, const TrainConfig& config) {
  config.validate();
  dataset.validate();
  std::size_t distinct = 0;
  for (std::size_t c : dataset.class_counts()) distinct += c > 0;
  if (distinct < 2) throw ConfigError("training data must contain at least two classes");

  Forest forest;
  forest.class_count = dataset.class_count;
  forest.feature_dim = dataset.dim();
  forest.config = config;
  forest.trees.resize(static_cast<std::size_t>(config.n_trees));

  auto train_one = [&](std::size_t t) {
    // Tree t draws its bag from the stream (seed, t) and grows from a child of it.
    const auto indices = bagging_indices(dataset.size(), config.sample_fraction, config.seed, t);
    const DenseDataset bag = dataset.subset(indices);
    Rng rng = Rng(config.seed).derive(t).derive(1);
    forest.trees[t] = train_tree(bag.features, bag.labels, dataset.class_count, config, rng);
  };

  const unsigned workers = std::min<unsigned>(worker_threads(), static_cast<unsigned>(config.n_trees));
  if (workers <= 1) {
    for (std::size_t t = 0; t < forest.trees.size(); ++t) train_one(t);
    return forest;
  }

  std::atomic<std::size_t> next{0};
  std::exception_ptr failure;
  std::mutex failure_mutex;
  {
    std::vector<std::jthread> pool;
    for (unsigned w = 0; w < workers; ++w) {
      pool.emplace_back([&] {
        for (std::size_t t = next++; t < forest.trees.size(); t = next++) {
          try {
            train_one(t);
          } catch (...) {
            std::lock_guard lock(failure_mutex);
            if (!failure) failure = std::current_exception();
          }
        }
      });
    }
  }
  if (failure) std::rethrow_exception(failure);
  return forest;
}

Prediction forest_predict(const Forest& forest, const Vector& y, std::size_t tree_count) {
  if (y.size() != forest.feature_dim) throw DimensionError("input dimension does not match the forest");
  const std::size_t k = tree_count == 0 ? forest.trees.size() : std::min(tree_count, forest.trees.size());
  if (k == 0) throw ConfigError("forest has no trees");
  Prediction out;
  out.posterior = Vector::Zero(forest.class_count);
  for (std::size_t t = 0; t < k; ++t) out.posterior += tree_predict(forest.trees[t], y);
  out.posterior /= static_cast<double>(k);
  Index best = 0;
  for (Index c = 1; c < out.posterior.size(); ++c) {
    if (out.posterior(c) > out.posterior(best)) best = c;
  }
  out.label = static_cast<int>(best);
  return out;
}

double evaluate_accuracy(const Forest& forest, const DenseDataset& test, std::size_t tree_count) {
  if (test.size() == 0) throw ConfigError("test set is empty");
  if (test.dim() != forest.feature_dim) throw DimensionError("test features do not match the forest dimension");
  std::size_t correct = 0;
  for (std::size_t i = 0; i < test.size(); ++i) {
    const Vector y = test.features.col(static_cast<Index>(i));
    correct += forest_predict(forest, y, tree_count).label == test.labels[i];
  }
  return static_cast<double>(correct) / static_cast<double>(test.size());
}

}  // namespace transforest
