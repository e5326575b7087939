#pragma once

#include <cstddef>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "transforest/dataset.hpp"
#include "transforest/error.hpp"
#include "transforest/rng.hpp"

namespace transforest {

using linalg::Vector;

// ---------------------------------------------------------------------------
// IDX (MNIST distribution format)
// ---------------------------------------------------------------------------

enum class IdxFault { bad_magic, truncated, count_mismatch };

class IdxError : public ParseError {
 public:
  IdxError(IdxFault fault, const std::string& what) : ParseError(what), fault_(fault) {}
  IdxFault fault() const noexcept { return fault_; }

 private:
  IdxFault fault_;
};

struct IdxData {
  DenseDataset dataset;  // one column per image, pixels row-major and scaled by 1/255
  std::size_t image_rows = 0;
  std::size_t image_cols = 0;
};

/// Reads an idx3-ubyte image file and its idx1-ubyte label file. Both may be
/// gzip-compressed. class_count is one more than the largest label.
IdxData load_idx(const std::filesystem::path& images, const std::filesystem::path& labels);

/// Bilinear resampling with pixel centres at half-integer coordinates and
/// clamped borders. Input and output are row-major grids.
Vector resize_image(std::span<const double> pixels, std::size_t rows, std::size_t cols, std::size_t out_rows,
                    std::size_t out_cols);

/// Resizes every column of an image dataset.
DenseDataset resize_images(const DenseDataset& images, std::size_t rows, std::size_t cols, std::size_t out_rows,
                           std::size_t out_cols);

// ---------------------------------------------------------------------------
// CSV
// ---------------------------------------------------------------------------

/// One sample per row. The first line is a header iff its first cell is not
/// numeric. Columns are named by header name, zero-based index, or "last".
/// Columns listed in `ignore` are checked for numbers but not kept as features.
DenseDataset load_csv(const std::filesystem::path& path, std::string_view label_column = "last",
                      std::span<const std::string> ignore = {});

/// Writes a header `x0,...,x{d-1},label` and one row per sample with
/// round-trip precision. Non-empty `groups` adds a `subspace` column before
/// the label.
void save_csv(const std::filesystem::path& path, const DenseDataset& dataset, std::span<const int> groups = {});

// ---------------------------------------------------------------------------
// Splitting and selection
// ---------------------------------------------------------------------------

/// Per-class proportional split. round(test_fraction * N) samples go to the
/// test side, allocated across classes by largest remainder; every class keeps
/// at least one sample on each side.
std::pair<DenseDataset, DenseDataset> stratified_split(const DenseDataset& dataset, double test_fraction, Rng& rng);

/// Keeps samples whose label is in `classes`, relabelled 0..k-1 in the given order.
DenseDataset select_classes(const DenseDataset& dataset, std::span<const int> classes);

// ---------------------------------------------------------------------------
// Synthetic unions of subspaces
// ---------------------------------------------------------------------------

struct SubspaceSpec {
  Eigen::Index ambient_dim = 3;
  std::vector<Eigen::Index> subspace_dims;
  /// Smallest principal angle targets for pairs (0,1), (0,2), ..., (k-2,k-1).
  /// Only supported when every subspace is a line.
  std::vector<double> angle_targets;
  std::size_t points_per_subspace = 100;
  double noise_sigma = 0.01;
  /// Class of each subspace; empty means subspace i has class i.
  std::vector<int> class_assignment;
  /// Largest accepted deviation between placed and target angles.
  double angle_tolerance = 5e-3;

  void validate() const;
};

struct SynthResult {
  DenseDataset dataset;              // subspace-major sample order
  std::vector<Matrix> bases;         // orthonormal generating basis per subspace
  std::vector<int> subspace_of;      // generating subspace of every sample
};

SynthResult synth_subspaces(const SubspaceSpec& spec, Rng& rng);

/// Three lines in R^3 at angles (AB, AC, BC) = (0.79, 0.79, 1.05); A and B share class 0.
SubspaceSpec fig1a_spec();
/// Four lines in R^3 at (AB, AC, AD, BC, BD, CD) = (1.05, 1.05, 1.05, 1.32, 1.39, 0.53);
/// classes {A, B} and {C, D}.
SubspaceSpec fig1c_spec();

/// Unit vectors for lines whose pairwise angles best match `targets` in the
/// least-squares sense. Line 0 is e1 and line 1 lies in the e1-e2 plane.
std::vector<Vector> place_lines(Eigen::Index ambient_dim, std::size_t count, std::span<const double> targets,
                                Rng& rng, int starts = 32);

}  // namespace transforest
