#include "transforest/diagnostics.hpp"

#include <algorithm>
#include <string>

#include "transforest/error.hpp"

namespace transforest {

Matrix leading_basis(const Matrix& samples, int rank) {
  if (rank < 1) throw ConfigError("basis rank must be at least 1");
  if (samples.cols() < rank || samples.rows() < rank) {
    throw ConfigError("need at least " + std::to_string(rank) + " samples and dimensions for a rank-" +
                      std::to_string(rank) + " basis, got " + std::to_string(samples.cols()));
  }
  return linalg::svd(linalg::gram_factor(samples)).left.leftCols(rank);
}

std::vector<GroupAngle> group_angles(const Matrix& samples, std::span<const int> group_of, int rank) {
  if (static_cast<std::size_t>(samples.cols()) != group_of.size()) throw DimensionError("one group per sample required");
  if (group_of.empty()) return {};
  const int groups = *std::max_element(group_of.begin(), group_of.end()) + 1;

  std::vector<Matrix> bases(static_cast<std::size_t>(groups));
  for (int g = 0; g < groups; ++g) {
    std::vector<Eigen::Index> cols;
    for (std::size_t j = 0; j < group_of.size(); ++j) {
      if (group_of[j] == g) cols.push_back(static_cast<Eigen::Index>(j));
    }
    if (cols.empty()) continue;
    try {
      bases[static_cast<std::size_t>(g)] = leading_basis(samples(Eigen::all, cols), rank);
    } catch (const ConfigError& e) {
      throw ConfigError("group " + std::to_string(g) + ": " + e.what());
    }
  }

  std::vector<GroupAngle> out;
  for (int a = 0; a < groups; ++a) {
    for (int b = a + 1; b < groups; ++b) {
      const Matrix& ba = bases[static_cast<std::size_t>(a)];
      const Matrix& bb = bases[static_cast<std::size_t>(b)];
      if (ba.size() == 0 || bb.size() == 0) continue;
      out.push_back({a, b, linalg::smallest_principal_angle(ba, bb)});
    }
  }
  return out;
}

}  // namespace transforest
