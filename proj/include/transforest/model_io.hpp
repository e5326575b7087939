#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <string>
#include <vector>

#include <json.hpp>

#include "transforest/dataset.hpp"
#include "transforest/forest.hpp"

namespace transforest {

using Json = nlohmann::ordered_json;

inline constexpr int kModelFormatVersion = 1;

Json config_to_json(const TrainConfig& config);
/// Missing keys keep their defaults; wrong types raise ParseError.
TrainConfig config_from_json(const Json& json);

/// Streams the model as JSON, one tree node per line. Matrices are stored as
/// {rows, cols, data} with row-major data and shortest round-trip numbers, so
/// the same forest always produces the same bytes.
void write_forest(std::ostream& out, const Forest& forest);
std::string forest_to_string(const Forest& forest);
void save_forest(const std::filesystem::path& path, const Forest& forest);

/// Rejects an unknown format_version before touching the payload.
/// Dictionary coefficient maps are recomputed, which reproduces them bit for bit.
Forest read_forest(std::istream& in);
Forest load_forest(const std::filesystem::path& path);

struct MetricsReport {
  /// Accuracy of the prefix ensembles of 1..n_trees trees.
  std::vector<double> accuracy_curve;
  /// confusion[true][predicted] for the full forest.
  std::vector<std::vector<std::size_t>> confusion;
  double train_seconds = 0.0;
  double test_seconds = 0.0;
  std::size_t test_size = 0;
  std::uint64_t seed = 0;
  TrainConfig config;

  double accuracy() const { return accuracy_curve.empty() ? 0.0 : accuracy_curve.back(); }
};

/// Fills the curve, confusion matrix, test time, seed and config echo.
MetricsReport evaluate_forest(const Forest& forest, const DenseDataset& test);

Json metrics_to_json(const MetricsReport& report);
/// "trees,accuracy" rows for external plotting.
std::string accuracy_curve_csv(const MetricsReport& report);

}  // namespace transforest
