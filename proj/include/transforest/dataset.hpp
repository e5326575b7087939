#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "transforest/linalg.hpp"

namespace transforest {

using linalg::Matrix;

/// Samples as columns of a d x N matrix with labels in [0, class_count).
struct DenseDataset {
  Matrix features;
  std::vector<int> labels;
  int class_count = 0;

  Eigen::Index dim() const { return features.rows(); }
  std::size_t size() const { return labels.size(); }

  /// Throws unless N >= 1, labels match the column count and lie in
  /// [0, class_count), and every feature is finite.
  void validate() const;

  /// Columns at `indices`, in that order. class_count is kept.
  DenseDataset subset(std::span<const std::size_t> indices) const;

  /// Number of samples per class.
  std::vector<std::size_t> class_counts() const;
};

}  // namespace transforest
