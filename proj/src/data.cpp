#include "transforest/data.hpp"

#include <zlib.h>

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <fstream>
#include <limits>
#include <map>
#include <numbers>
#include <sstream>

namespace transforest {

using Eigen::Index;

// ---------------------------------------------------------------------------
// DenseDataset

void DenseDataset::validate() const {
  if (labels.empty()) throw ConfigError("dataset has no samples");
  if (static_cast<std::size_t>(features.cols()) != labels.size()) {
    throw DimensionError("dataset has " + std::to_string(features.cols()) + " feature columns but " +
                         std::to_string(labels.size()) + " labels");
  }
  for (int label : labels) {
    if (label < 0 || label >= class_count) throw ConfigError("label " + std::to_string(label) + " outside [0, C)");
  }
  linalg::require_finite(features, "dataset features");
}

DenseDataset DenseDataset::subset(std::span<const std::size_t> indices) const {
  DenseDataset out;
  out.class_count = class_count;
  out.features.resize(features.rows(), static_cast<Index>(indices.size()));
  out.labels.resize(indices.size());
  for (std::size_t i = 0; i < indices.size(); ++i) {
    out.features.col(static_cast<Index>(i)) = features.col(static_cast<Index>(indices[i]));
    out.labels[i] = labels[indices[i]];
  }
  return out;
}

std::vector<std::size_t> DenseDataset::class_counts() const {
  std::vector<std::size_t> counts(static_cast<std::size_t>(std::max(class_count, 0)), 0);
  for (int label : labels) ++counts[static_cast<std::size_t>(label)];
  return counts;
}

// ---------------------------------------------------------------------------
// IDX

namespace {

std::vector<std::uint8_t> read_maybe_gzipped(const std::filesystem::path& path) {
  if (!std::filesystem::exists(path)) throw IoError("cannot open " + path.string());
  gzFile file = gzopen(path.string().c_str(), "rb");
  if (file == nullptr) throw IoError("cannot open " + path.string());
  std::vector<std::uint8_t> bytes;
  std::uint8_t buffer[1 << 16];
  int got = 0;
  while ((got = gzread(file, buffer, sizeof buffer)) > 0) bytes.insert(bytes.end(), buffer, buffer + got);
  const bool failed = got < 0;
  gzclose(file);
  if (failed) throw IoError("read error in " + path.string());
  return bytes;
}

std::uint32_t read_be32(const std::vector<std::uint8_t>& bytes, std::size_t offset) {
  return (std::uint32_t{bytes[offset]} << 24) | (std::uint32_t{bytes[offset + 1]} << 16) |
         (std::uint32_t{bytes[offset + 2]} << 8) | std::uint32_t{bytes[offset + 3]};
}

constexpr std::uint32_t kIdxImageMagic = 0x00000803;
constexpr std::uint32_t kIdxLabelMagic = 0x00000801;

}  // namespace

IdxData load_idx(const std::filesystem::path& images, const std::filesystem::path& labels) {
  const auto image_bytes = read_maybe_gzipped(images);
  const auto label_bytes = read_maybe_gzipped(labels);

  if (image_bytes.size() < 4 || label_bytes.size() < 4) throw IdxError(IdxFault::truncated, "IDX header truncated");
  if (read_be32(image_bytes, 0) != kIdxImageMagic) {
    throw IdxError(IdxFault::bad_magic, images.string() + ": not an idx3-ubyte image file");
  }
  if (read_be32(label_bytes, 0) != kIdxLabelMagic) {
    throw IdxError(IdxFault::bad_magic, labels.string() + ": not an idx1-ubyte label file");
  }
  if (image_bytes.size() < 16) throw IdxError(IdxFault::truncated, images.string() + ": header truncated");
  if (label_bytes.size() < 8) throw IdxError(IdxFault::truncated, labels.string() + ": header truncated");

  const std::size_t n = read_be32(image_bytes, 4);
  const std::size_t rows = read_be32(image_bytes, 8);
  const std::size_t cols = read_be32(image_bytes, 12);
  const std::size_t n_labels = read_be32(label_bytes, 4);
  const std::size_t pixels = rows * cols;

  if (image_bytes.size() - 16 < n * pixels) throw IdxError(IdxFault::truncated, images.string() + ": payload truncated");
  if (label_bytes.size() - 8 < n_labels) throw IdxError(IdxFault::truncated, labels.string() + ": payload truncated");
  if (n != n_labels) {
    throw IdxError(IdxFault::count_mismatch,
                   std::to_string(n) + " images but " + std::to_string(n_labels) + " labels");
  }
  if (n == 0 || pixels == 0) throw IdxError(IdxFault::truncated, "IDX file contains no samples");

  IdxData out;
  out.image_rows = rows;
  out.image_cols = cols;
  DenseDataset& ds = out.dataset;
  ds.features.resize(static_cast<Index>(pixels), static_cast<Index>(n));
  ds.labels.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    const std::uint8_t* src = image_bytes.data() + 16 + i * pixels;
    for (std::size_t p = 0; p < pixels; ++p) ds.features(static_cast<Index>(p), static_cast<Index>(i)) = src[p] / 255.0;
    ds.labels[i] = label_bytes[8 + i];
  }
  ds.class_count = *std::max_element(ds.labels.begin(), ds.labels.end()) + 1;
  return out;
}

Vector resize_image(std::span<const double> pixels, std::size_t rows, std::size_t cols, std::size_t out_rows,
                    std::size_t out_cols) {
  if (rows == 0 || cols == 0 || out_rows == 0 || out_cols == 0) throw ConfigError("resize: zero dimension");
  if (pixels.size() != rows * cols) throw DimensionError("resize: pixel count does not match rows * cols");

  struct Tap {
    std::size_t lo, hi;
    double w;  // weight of hi
  };
  auto taps = [](std::size_t in, std::size_t out) {
    std::vector<Tap> t(out);
    const double ratio = static_cast<double>(in) / static_cast<double>(out);
    for (std::size_t i = 0; i < out; ++i) {
      double src = (static_cast<double>(i) + 0.5) * ratio - 0.5;
      src = std::clamp(src, 0.0, static_cast<double>(in - 1));
      const auto lo = static_cast<std::size_t>(std::floor(src));
      const std::size_t hi = std::min(lo + 1, in - 1);
      t[i] = {lo, hi, src - static_cast<double>(lo)};
    }
    return t;
  };
  const auto row_taps = taps(rows, out_rows);
  const auto col_taps = taps(cols, out_cols);

  Vector out(static_cast<Index>(out_rows * out_cols));
  for (std::size_t r = 0; r < out_rows; ++r) {
    const Tap& tr = row_taps[r];
    for (std::size_t c = 0; c < out_cols; ++c) {
      const Tap& tc = col_taps[c];
      const double top = pixels[tr.lo * cols + tc.lo] * (1 - tc.w) + pixels[tr.lo * cols + tc.hi] * tc.w;
      const double bottom = pixels[tr.hi * cols + tc.lo] * (1 - tc.w) + pixels[tr.hi * cols + tc.hi] * tc.w;
      out(static_cast<Index>(r * out_cols + c)) = top * (1 - tr.w) + bottom * tr.w;
    }
  }
  return out;
}

DenseDataset resize_images(const DenseDataset& images, std::size_t rows, std::size_t cols, std::size_t out_rows,
                           std::size_t out_cols) {
  if (static_cast<std::size_t>(images.dim()) != rows * cols) throw DimensionError("resize: image shape mismatch");
  DenseDataset out;
  out.class_count = images.class_count;
  out.labels = images.labels;
  out.features.resize(static_cast<Index>(out_rows * out_cols), images.features.cols());
  for (Index j = 0; j < images.features.cols(); ++j) {
    const Vector column = images.features.col(j);
    out.features.col(j) = resize_image({column.data(), static_cast<std::size_t>(column.size())}, rows, cols,
                                       out_rows, out_cols);
  }
  return out;
}

// ---------------------------------------------------------------------------
// CSV

namespace {

std::string_view trim(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) s.remove_suffix(1);
  return s;
}

std::vector<std::string_view> split_cells(std::string_view line) {
  std::vector<std::string_view> cells;
  std::size_t start = 0;
  while (true) {
    const std::size_t comma = line.find(',', start);
    cells.push_back(trim(line.substr(start, comma == std::string_view::npos ? std::string_view::npos : comma - start)));
    if (comma == std::string_view::npos) break;
    start = comma + 1;
  }
  return cells;
}

bool parse_number(std::string_view cell, double& value) {
  if (cell.empty()) return false;
  if (cell.front() == '+') cell.remove_prefix(1);
  const auto [ptr, ec] = std::from_chars(cell.data(), cell.data() + cell.size(), value);
  return ec == std::errc() && ptr == cell.data() + cell.size() && std::isfinite(value);
}

}  // namespace

DenseDataset load_csv(const std::filesystem::path& path, std::string_view label_column,
                      std::span<const std::string> ignore) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path.string());

  std::vector<std::string> lines;
  for (std::string line; std::getline(in, line);) {
    if (!trim(line).empty()) lines.push_back(std::move(line));
  }
  if (lines.empty()) throw ParseError(path.string() + ": empty CSV");

  const auto first = split_cells(lines.front());
  double probe = 0;
  const bool has_header = !parse_number(first.front(), probe);
  const std::size_t width = first.size();

  auto resolve = [&](std::string_view column) -> std::size_t {
    if (column == "last") return width - 1;
    std::size_t parsed = 0;
    const auto [ptr, ec] = std::from_chars(column.data(), column.data() + column.size(), parsed);
    if (ec == std::errc() && ptr == column.data() + column.size()) {
      if (parsed >= width) throw ConfigError("column index " + std::string(column) + " out of range");
      return parsed;
    }
    if (!has_header) throw ConfigError("column '" + std::string(column) + "' given by name but the CSV has no header");
    const auto it = std::find(first.begin(), first.end(), column);
    if (it == first.end()) throw ConfigError("column '" + std::string(column) + "' not in header");
    return static_cast<std::size_t>(it - first.begin());
  };

  const std::size_t label_index = resolve(label_column);
  std::vector<char> keep(width, 1);
  keep[label_index] = 0;
  for (const auto& name : ignore) keep[resolve(name)] = 0;
  const auto n_features = static_cast<Index>(std::count(keep.begin(), keep.end(), 1));
  if (n_features < 1) throw ParseError(path.string() + ": no feature columns");

  const std::size_t start = has_header ? 1 : 0;
  const std::size_t n = lines.size() - start;
  if (n == 0) throw ParseError(path.string() + ": no data rows");

  DenseDataset ds;
  ds.features.resize(n_features, static_cast<Index>(n));
  ds.labels.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    const auto cells = split_cells(lines[start + i]);
    const std::size_t line_no = start + i + 1;
    if (cells.size() != width) {
      throw ParseError(path.string() + ":" + std::to_string(line_no) + ": expected " + std::to_string(width) +
                       " cells, found " + std::to_string(cells.size()));
    }
    Index feature = 0;
    for (std::size_t c = 0; c < width; ++c) {
      double value = 0;
      if (!parse_number(cells[c], value)) {
        throw ParseError(path.string() + ":" + std::to_string(line_no) + ": non-numeric cell '" + std::string(cells[c]) +
                         "'");
      }
      if (c == label_index) {
        if (value < 0 || value != std::floor(value) || value > std::numeric_limits<int>::max()) {
          throw ParseError(path.string() + ":" + std::to_string(line_no) + ": label must be a nonnegative integer");
        }
        ds.labels[i] = static_cast<int>(value);
      } else if (keep[c]) {
        ds.features(feature++, static_cast<Index>(i)) = value;
      }
    }
  }
  ds.class_count = *std::max_element(ds.labels.begin(), ds.labels.end()) + 1;
  return ds;
}

void save_csv(const std::filesystem::path& path, const DenseDataset& dataset, std::span<const int> groups) {
  dataset.validate();
  if (!groups.empty() && groups.size() != dataset.size()) throw DimensionError("one group per sample required");
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path.string());
  for (Index r = 0; r < dataset.dim(); ++r) out << 'x' << r << ',';
  if (!groups.empty()) out << "subspace,";
  out << "label\n";
  char buffer[32];
  for (std::size_t j = 0; j < dataset.size(); ++j) {
    for (Index r = 0; r < dataset.dim(); ++r) {
      std::snprintf(buffer, sizeof buffer, "%.17g", dataset.features(r, static_cast<Index>(j)));
      out << buffer << ',';
    }
    if (!groups.empty()) out << groups[j] << ',';
    out << dataset.labels[j] << '\n';
  }
  if (!out) throw IoError("write failed for " + path.string());
}

// ---------------------------------------------------------------------------
// Splitting

std::pair<DenseDataset, DenseDataset> stratified_split(const DenseDataset& dataset, double test_fraction, Rng& rng) {
  if (!(test_fraction > 0 && test_fraction < 1)) throw ConfigError("test_fraction must be in (0, 1)");
  dataset.validate();

  std::vector<std::vector<std::size_t>> by_class(static_cast<std::size_t>(dataset.class_count));
  for (std::size_t i = 0; i < dataset.size(); ++i) by_class[static_cast<std::size_t>(dataset.labels[i])].push_back(i);
  for (std::size_t c = 0; c < by_class.size(); ++c) {
    if (!by_class[c].empty() && by_class[c].size() < 2) {
      throw ConfigError("class " + std::to_string(c) + " has fewer than 2 samples and cannot be stratified");
    }
  }

  // Largest-remainder allocation of round(f * N) test samples.
  const auto total_test = static_cast<std::size_t>(std::llround(test_fraction * static_cast<double>(dataset.size())));
  std::vector<std::size_t> quota(by_class.size(), 0);
  std::vector<std::pair<double, std::size_t>> remainders;
  std::size_t assigned = 0;
  for (std::size_t c = 0; c < by_class.size(); ++c) {
    const double exact = test_fraction * static_cast<double>(by_class[c].size());
    quota[c] = static_cast<std::size_t>(std::floor(exact));
    assigned += quota[c];
    if (!by_class[c].empty()) remainders.emplace_back(exact - std::floor(exact), c);
  }
  std::stable_sort(remainders.begin(), remainders.end(),
                   [](const auto& a, const auto& b) { return a.first > b.first; });
  for (std::size_t i = 0; assigned < total_test && i < remainders.size(); ++i, ++assigned) ++quota[remainders[i].second];
  for (std::size_t c = 0; c < by_class.size(); ++c) {
    if (!by_class[c].empty()) quota[c] = std::clamp<std::size_t>(quota[c], 1, by_class[c].size() - 1);
  }

  std::vector<std::size_t> train, test;
  for (std::size_t c = 0; c < by_class.size(); ++c) {
    auto& members = by_class[c];
    for (std::size_t i = 0; i < quota[c]; ++i) std::swap(members[i], members[i + rng.below(members.size() - i)]);
    test.insert(test.end(), members.begin(), members.begin() + static_cast<std::ptrdiff_t>(quota[c]));
    train.insert(train.end(), members.begin() + static_cast<std::ptrdiff_t>(quota[c]), members.end());
  }
  std::sort(train.begin(), train.end());
  std::sort(test.begin(), test.end());
  return {dataset.subset(train), dataset.subset(test)};
}

DenseDataset select_classes(const DenseDataset& dataset, std::span<const int> classes) {
  std::map<int, int> relabel;
  for (std::size_t i = 0; i < classes.size(); ++i) relabel.emplace(classes[i], static_cast<int>(i));
  std::vector<std::size_t> keep;
  for (std::size_t i = 0; i < dataset.size(); ++i) {
    if (relabel.count(dataset.labels[i])) keep.push_back(i);
  }
  DenseDataset out = dataset.subset(keep);
  for (int& label : out.labels) label = relabel.at(label);
  out.class_count = static_cast<int>(classes.size());
  return out;
}

// ---------------------------------------------------------------------------
// Synthetic subspaces

void SubspaceSpec::validate() const {
  if (ambient_dim < 1) throw ConfigError("ambient dimension must be positive");
  if (subspace_dims.empty()) throw ConfigError("need at least one subspace");
  for (Index k : subspace_dims) {
    if (k < 1 || k > ambient_dim) throw ConfigError("subspace dimension must be in [1, ambient_dim]");
  }
  if (points_per_subspace < 1) throw ConfigError("points_per_subspace must be positive");
  if (!(noise_sigma >= 0)) throw ConfigError("noise_sigma must be nonnegative");
  if (!class_assignment.empty()) {
    if (class_assignment.size() != subspace_dims.size()) throw ConfigError("one class per subspace required");
    for (int c : class_assignment) {
      if (c < 0) throw ConfigError("classes must be nonnegative");
    }
  }
  if (!angle_targets.empty()) {
    const std::size_t k = subspace_dims.size();
    if (angle_targets.size() != k * (k - 1) / 2) throw ConfigError("need one angle target per subspace pair");
    for (Index dim : subspace_dims) {
      if (dim != 1) throw ConfigError("angle targets are supported for 1-dimensional subspaces only");
    }
    if (ambient_dim < 2) throw ConfigError("angle targets need ambient dimension >= 2");
    for (double a : angle_targets) {
      if (!(a > 0 && a <= std::numbers::pi / 2)) throw ConfigError("angle targets must lie in (0, pi/2]");
    }
  }
}

namespace {

double line_angle(const Vector& u, const Vector& v) {
  return std::acos(std::clamp(std::abs(u.dot(v)) / (u.norm() * v.norm()), 0.0, 1.0));
}

std::size_t pair_index(std::size_t i, std::size_t j, std::size_t k) {
  // (0,1),(0,2),...,(0,k-1),(1,2),...
  return i * k - i * (i + 1) / 2 + (j - i - 1);
}

}  // namespace

std::vector<Vector> place_lines(Index ambient_dim, std::size_t count, std::span<const double> targets, Rng& rng,
                                int starts) {
  if (count < 2 || ambient_dim < 2) throw ConfigError("line placement needs two lines in at least R^2");
  std::vector<Vector> lines(count);
  lines[0] = Vector::Unit(ambient_dim, 0);
  lines[1] = std::cos(targets[0]) * Vector::Unit(ambient_dim, 0) + std::sin(targets[0]) * Vector::Unit(ambient_dim, 1);
  if (count == 2) return lines;

  const std::size_t free_lines = count - 2;
  const Index n_params = static_cast<Index>(free_lines) * ambient_dim;
  auto unpack = [&](const Vector& p) {
    std::vector<Vector> out = lines;
    for (std::size_t f = 0; f < free_lines; ++f) out[2 + f] = p.segment(static_cast<Index>(f) * ambient_dim, ambient_dim);
    return out;
  };
  // Residuals for every pair that involves a free line.
  auto residuals = [&](const Vector& p) {
    const auto placed = unpack(p);
    std::vector<double> r;
    for (std::size_t i = 0; i < count; ++i) {
      for (std::size_t j = i + 1; j < count; ++j) {
        if (j < 2) continue;
        r.push_back(line_angle(placed[i], placed[j]) - targets[pair_index(i, j, count)]);
      }
    }
    return Eigen::Map<Vector>(r.data(), static_cast<Index>(r.size())).eval();
  };

  Vector best_params;
  double best_cost = std::numeric_limits<double>::infinity();
  for (int s = 0; s < starts; ++s) {
    Vector p(n_params);
    for (Index i = 0; i < n_params; ++i) p(i) = rng.normal();

    // Levenberg-Marquardt with a central-difference Jacobian.
    Vector r = residuals(p);
    double cost = r.squaredNorm();
    double lambda = 1e-3;
    for (int iter = 0; iter < 300 && cost > 1e-30; ++iter) {
      Matrix jac(r.size(), n_params);
      for (Index k = 0; k < n_params; ++k) {
        const double h = 1e-7 * std::max(1.0, std::abs(p(k)));
        Vector plus = p, minus = p;
        plus(k) += h;
        minus(k) -= h;
        jac.col(k) = (residuals(plus) - residuals(minus)) / (2 * h);
      }
      const Matrix normal = jac.transpose() * jac;
      const Vector gradient = jac.transpose() * r;
      bool improved = false;
      for (int attempt = 0; attempt < 20 && !improved; ++attempt) {
        Matrix damped = normal;
        damped.diagonal().array() += lambda * (normal.diagonal().array() + 1e-12);
        const Vector step = damped.ldlt().solve(-gradient);
        const Vector trial = p + step;
        const Vector trial_r = residuals(trial);
        const double trial_cost = trial_r.squaredNorm();
        if (std::isfinite(trial_cost) && trial_cost < cost) {
          const double gain = cost - trial_cost;
          p = trial;
          r = trial_r;
          cost = trial_cost;
          lambda = std::max(lambda / 3, 1e-15);
          improved = true;
          if (gain <= 1e-16 * cost) iter = 1 << 20;
        } else {
          lambda *= 4;
        }
      }
      if (!improved) break;
      for (std::size_t f = 0; f < free_lines; ++f) {
        auto seg = p.segment(static_cast<Index>(f) * ambient_dim, ambient_dim);
        seg.normalize();
      }
      r = residuals(p);
      cost = r.squaredNorm();
    }
    if (cost < best_cost) {
      best_cost = cost;
      best_params = p;
    }
  }

  auto placed = unpack(best_params);
  for (auto& v : placed) v.normalize();
  return placed;
}

SynthResult synth_subspaces(const SubspaceSpec& spec, Rng& rng) {
  spec.validate();
  const std::size_t k = spec.subspace_dims.size();
  const Index d = spec.ambient_dim;

  SynthResult out;
  if (!spec.angle_targets.empty() && k >= 2) {
    const auto lines = place_lines(d, k, spec.angle_targets, rng);
    double worst = 0.0;
    for (std::size_t i = 0; i < k; ++i) {
      for (std::size_t j = i + 1; j < k; ++j) {
        worst = std::max(worst, std::abs(line_angle(lines[i], lines[j]) - spec.angle_targets[pair_index(i, j, k)]));
      }
    }
    if (worst > spec.angle_tolerance) {
      throw ConfigError("infeasible angle targets: best placement misses by " + std::to_string(worst) + " rad");
    }
    for (const auto& v : lines) out.bases.emplace_back(v);
  } else {
    for (Index dim : spec.subspace_dims) {
      Matrix gauss(d, dim);
      for (Index c = 0; c < dim; ++c) {
        for (Index r = 0; r < d; ++r) gauss(r, c) = rng.normal();
      }
      Eigen::HouseholderQR<Matrix> qr(gauss);
      out.bases.push_back(qr.householderQ() * Matrix::Identity(d, dim));
    }
  }

  const std::size_t per = spec.points_per_subspace;
  DenseDataset& ds = out.dataset;
  ds.features.resize(d, static_cast<Index>(k * per));
  ds.labels.resize(k * per);
  out.subspace_of.resize(k * per);
  int max_class = 0;
  for (std::size_t s = 0; s < k; ++s) {
    const int cls = spec.class_assignment.empty() ? static_cast<int>(s) : spec.class_assignment[s];
    max_class = std::max(max_class, cls);
    const Matrix& basis = out.bases[s];
    for (std::size_t p = 0; p < per; ++p) {
      Vector coeffs(basis.cols());
      for (Index c = 0; c < basis.cols(); ++c) coeffs(c) = rng.normal();
      Vector point = basis * coeffs;
      if (spec.noise_sigma > 0) {
        for (Index r = 0; r < d; ++r) point(r) += spec.noise_sigma * rng.normal();
      }
      const std::size_t col = s * per + p;
      ds.features.col(static_cast<Index>(col)) = point;
      ds.labels[col] = cls;
      out.subspace_of[col] = static_cast<int>(s);
    }
  }
  ds.class_count = max_class + 1;
  return out;
}

SubspaceSpec fig1a_spec() {
  SubspaceSpec spec;
  spec.ambient_dim = 3;
  spec.subspace_dims = {1, 1, 1};
  spec.angle_targets = {0.79, 0.79, 1.05};
  spec.class_assignment = {0, 0, 1};
  return spec;
}

SubspaceSpec fig1c_spec() {
  SubspaceSpec spec;
  spec.ambient_dim = 3;
  spec.subspace_dims = {1, 1, 1, 1};
  spec.angle_targets = {1.05, 1.05, 1.05, 1.32, 1.39, 0.53};
  spec.class_assignment = {0, 0, 1, 1};
  return spec;
}

}  // namespace transforest
