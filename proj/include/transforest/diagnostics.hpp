#pragma once

#include <span>
#include <vector>

#include "transforest/linalg.hpp"

namespace transforest {

using linalg::Matrix;

struct GroupAngle {
  int group_a = 0;
  int group_b = 0;
  double angle = 0.0;
};

/// Smallest principal angle between every pair of groups, each group's
/// subspace being the span of the top `rank` left singular vectors of its
/// columns. Groups with no samples are skipped; a group with fewer samples than
/// `rank` is an error. Pairs come out in lexicographic order.
std::vector<GroupAngle> group_angles(const Matrix& samples, std::span<const int> group_of, int rank = 1);

/// Top `rank` left singular vectors of `samples`.
Matrix leading_basis(const Matrix& samples, int rank);

}  // namespace transforest
