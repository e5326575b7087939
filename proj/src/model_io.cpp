#include "transforest/model_io.hpp"

#include <charconv>
#include <chrono>
#include <fstream>
#include <sstream>

#include "transforest/error.hpp"

namespace transforest {

using Eigen::Index;

namespace {

std::string_view to_string(InitMode mode) { return mode == InitMode::identity ? "identity" : "given"; }

InitMode init_mode_from_string(std::string_view name) {
  if (name == "identity") return InitMode::identity;
  if (name == "given") return InitMode::given;
  throw ParseError("unknown init_mode '" + std::string(name) + "'");
}

// Shortest representation that parses back to the same double. A decimal
// point is forced so that -0.0 and integral values stay floating point.
void write_double(std::ostream& out, double value) {
  char buffer[40];
  auto [end, ec] = std::to_chars(buffer, buffer + sizeof buffer - 2, value);
  if (ec != std::errc()) throw NumericError("cannot format number");
  const std::string_view text(buffer, static_cast<std::size_t>(end - buffer));
  out << text;
  if (text.find_first_of(".e") == std::string_view::npos) out << ".0";
}

void write_matrix(std::ostream& out, const Matrix& m) {
  linalg::require_finite(m, "serialized matrix");
  out << "{\"rows\":" << m.rows() << ",\"cols\":" << m.cols() << ",\"data\":[";
  for (Index r = 0; r < m.rows(); ++r) {
    for (Index c = 0; c < m.cols(); ++c) {
      if (r + c > 0) out << ',';
      write_double(out, m(r, c));
    }
  }
  out << "]}";
}

void write_vector(std::ostream& out, const Vector& v) {
  out << '[';
  for (Index i = 0; i < v.size(); ++i) {
    if (i > 0) out << ',';
    write_double(out, v(i));
  }
  out << ']';
}

void write_dictionary(std::ostream& out, const Dictionary& dict) {
  out << "{\"ridge\":";
  write_double(out, dict.ridge());
  out << ",\"atoms\":";
  write_matrix(out, dict.atoms());
  out << '}';
}

Matrix read_matrix(const Json& j) {
  const auto rows = j.at("rows").get<Index>();
  const auto cols = j.at("cols").get<Index>();
  const Json& data = j.at("data");
  if (rows < 0 || cols < 0 || !data.is_array() || data.size() != static_cast<std::size_t>(rows * cols)) {
    throw ParseError("matrix data does not match its declared shape");
  }
  Matrix m(rows, cols);
  std::size_t k = 0;
  for (Index r = 0; r < rows; ++r) {
    for (Index c = 0; c < cols; ++c) m(r, c) = data[k++].get<double>();
  }
  return m;
}

Dictionary read_dictionary(const Json& j) { return Dictionary(read_matrix(j.at("atoms")), j.at("ridge").get<double>()); }

Tree read_tree(const Json& j, int class_count, Index feature_dim) {
  Tree tree;
  tree.class_count = j.at("class_count").get<int>();
  tree.feature_dim = j.at("feature_dim").get<Index>();
  tree.cascade_features = j.at("cascade_features").get<bool>();
  if (tree.class_count != class_count || tree.feature_dim != feature_dim) {
    throw ParseError("tree shape disagrees with the forest header");
  }
  const Json& nodes = j.at("nodes");
  const auto n_nodes = static_cast<int>(nodes.size());
  if (n_nodes == 0) throw ParseError("tree has no nodes");
  for (const Json& jn : nodes) {
    TreeNode node;
    node.depth = jn.at("depth").get<int>();
    node.sample_count = jn.at("sample_count").get<std::size_t>();
    const auto type = jn.at("type").get<std::string>();
    if (type == "leaf") {
      const auto& p = jn.at("posterior");
      if (p.size() != static_cast<std::size_t>(class_count)) throw ParseError("posterior length differs from class count");
      node.posterior.resize(class_count);
      for (int c = 0; c < class_count; ++c) node.posterior(c) = p[static_cast<std::size_t>(c)].get<double>();
    } else if (type == "split") {
      node.left = jn.at("left").get<int>();
      node.right = jn.at("right").get<int>();
      if (node.left <= 0 || node.right <= 0 || node.left >= n_nodes || node.right >= n_nodes) {
        throw ParseError("child index out of range");
      }
      node.split.emplace(TransformMatrix{read_matrix(jn.at("transform"))}, read_dictionary(jn.at("dict_pos")),
                         read_dictionary(jn.at("dict_neg")));
    } else {
      throw ParseError("unknown node type '" + type + "'");
    }
    tree.nodes.push_back(std::move(node));
  }
  if (!tree.cascade_features && tree.nodes.front().split && tree.nodes.front().split->input_dim() != feature_dim) {
    throw ParseError("root transform does not match the feature dimension");
  }
  return tree;
}

}  // namespace

Json config_to_json(const TrainConfig& config) {
  Json learn = {
      {"max_iters", config.learn.max_iters},       {"initial_step", config.learn.initial_step},
      {"step_shrink", config.learn.step_shrink},   {"max_shrinks", config.learn.max_shrinks},
      {"rel_tol", config.learn.rel_tol},           {"rank_tol", config.learn.rank_tol},
      {"output_rows", config.learn.output_rows},   {"init_mode", to_string(config.learn.init_mode)},
  };
  if (config.learn.init_mode == InitMode::given) {
    std::ostringstream m;
    write_matrix(m, config.learn.initial);
    learn["initial"] = Json::parse(m.str());
  }
  return Json{
      {"n_trees", config.n_trees},
      {"max_depth", config.max_depth},
      {"min_node_samples", config.min_node_samples},
      {"sample_fraction", config.sample_fraction},
      {"seed", config.seed},
      {"laplace_alpha", config.laplace_alpha},
      {"learner", to_string(config.learner)},
      {"cascade_features", config.cascade_features},
      {"learn", learn},
      {"dict",
       {{"n_atoms", config.dict.n_atoms},
        {"sparsity", config.dict.sparsity},
        {"ksvd_iters", config.dict.ksvd_iters},
        {"ridge", config.dict.ridge},
        {"mode", to_string(config.dict.mode)}}},
  };
}

TrainConfig config_from_json(const Json& j) {
  TrainConfig c;
  try {
    auto get = [](const Json& obj, const char* key, auto& field) {
      if (obj.contains(key)) field = obj.at(key).get<std::decay_t<decltype(field)>>();
    };
    get(j, "n_trees", c.n_trees);
    get(j, "max_depth", c.max_depth);
    get(j, "min_node_samples", c.min_node_samples);
    get(j, "sample_fraction", c.sample_fraction);
    get(j, "seed", c.seed);
    get(j, "laplace_alpha", c.laplace_alpha);
    get(j, "cascade_features", c.cascade_features);
    if (j.contains("learner")) c.learner = learner_kind_from_string(j.at("learner").get<std::string>());
    if (j.contains("learn")) {
      const Json& l = j.at("learn");
      get(l, "max_iters", c.learn.max_iters);
      get(l, "initial_step", c.learn.initial_step);
      get(l, "step_shrink", c.learn.step_shrink);
      get(l, "max_shrinks", c.learn.max_shrinks);
      get(l, "rel_tol", c.learn.rel_tol);
      get(l, "rank_tol", c.learn.rank_tol);
      get(l, "output_rows", c.learn.output_rows);
      if (l.contains("init_mode")) c.learn.init_mode = init_mode_from_string(l.at("init_mode").get<std::string>());
      if (l.contains("initial")) c.learn.initial = read_matrix(l.at("initial"));
    }
    if (j.contains("dict")) {
      const Json& d = j.at("dict");
      get(d, "n_atoms", c.dict.n_atoms);
      get(d, "sparsity", c.dict.sparsity);
      get(d, "ksvd_iters", c.dict.ksvd_iters);
      get(d, "ridge", c.dict.ridge);
      if (d.contains("mode")) c.dict.mode = dict_mode_from_string(d.at("mode").get<std::string>());
    }
  } catch (const Json::exception& e) {
    throw ParseError(std::string("bad config: ") + e.what());
  }
  return c;
}

void write_forest(std::ostream& out, const Forest& forest) {
  out << "{\"format_version\":" << kModelFormatVersion << ",\n\"config\":" << config_to_json(forest.config).dump()
      << ",\n\"class_count\":" << forest.class_count << ",\"feature_dim\":" << forest.feature_dim
      << ",\n\"trees\":[";
  for (std::size_t t = 0; t < forest.trees.size(); ++t) {
    const Tree& tree = forest.trees[t];
    out << (t > 0 ? ",\n" : "\n") << "{\"class_count\":" << tree.class_count << ",\"feature_dim\":" << tree.feature_dim
        << ",\"cascade_features\":" << (tree.cascade_features ? "true" : "false") << ",\"nodes\":[";
    for (std::size_t i = 0; i < tree.nodes.size(); ++i) {
      const TreeNode& node = tree.nodes[i];
      out << (i > 0 ? ",\n" : "\n") << "{\"type\":\"" << (node.is_leaf() ? "leaf" : "split")
          << "\",\"depth\":" << node.depth << ",\"sample_count\":" << node.sample_count;
      if (node.is_leaf()) {
        out << ",\"posterior\":";
        write_vector(out, node.posterior);
      } else {
        out << ",\"left\":" << node.left << ",\"right\":" << node.right << ",\"transform\":";
        write_matrix(out, node.split->transform().matrix);
        out << ",\"dict_pos\":";
        write_dictionary(out, node.split->dict_pos());
        out << ",\"dict_neg\":";
        write_dictionary(out, node.split->dict_neg());
      }
      out << '}';
    }
    out << "]}";
  }
  out << "\n]}\n";
}

std::string forest_to_string(const Forest& forest) {
  std::ostringstream out;
  write_forest(out, forest);
  return out.str();
}

void save_forest(const std::filesystem::path& path, const Forest& forest) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path.string());
  write_forest(out, forest);
  if (!out.flush()) throw IoError("write failed for " + path.string());
}

Forest read_forest(std::istream& in) {
  Json j;
  try {
    j = Json::parse(in);
  } catch (const Json::exception& e) {
    throw ParseError(std::string("model is not valid JSON: ") + e.what());
  }
  if (!j.is_object() || !j.contains("format_version") || !j.at("format_version").is_number_integer()) {
    throw ParseError("model has no integer format_version");
  }
  const auto version = j.at("format_version").get<long long>();
  if (version != kModelFormatVersion) {
    throw ParseError("unsupported model format_version " + std::to_string(version) + " (expected " +
                     std::to_string(kModelFormatVersion) + ")");
  }
  try {
    Forest forest;
    forest.config = config_from_json(j.at("config"));
    forest.class_count = j.at("class_count").get<int>();
    forest.feature_dim = j.at("feature_dim").get<Index>();
    if (forest.class_count < 1 || forest.feature_dim < 1) throw ParseError("bad forest header");
    for (const Json& jt : j.at("trees")) forest.trees.push_back(read_tree(jt, forest.class_count, forest.feature_dim));
    if (forest.trees.empty()) throw ParseError("model has no trees");
    return forest;
  } catch (const Json::exception& e) {
    throw ParseError(std::string("malformed model: ") + e.what());
  } catch (const ConfigError& e) {
    throw ParseError(std::string("malformed model: ") + e.what());
  }
}

Forest load_forest(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  return read_forest(in);
}

MetricsReport evaluate_forest(const Forest& forest, const DenseDataset& test) {
  test.validate();
  if (test.dim() != forest.feature_dim) {
    throw DimensionError("test data has dimension " + std::to_string(test.dim()) + ", model expects " +
                         std::to_string(forest.feature_dim));
  }
  if (test.class_count > forest.class_count) throw DimensionError("test labels exceed the model's class count");

  const auto start = std::chrono::steady_clock::now();
  const std::size_t n_trees = forest.trees.size();
  std::vector<std::size_t> correct(n_trees, 0);
  MetricsReport report;
  report.confusion.assign(static_cast<std::size_t>(forest.class_count),
                          std::vector<std::size_t>(static_cast<std::size_t>(forest.class_count), 0));
  for (std::size_t i = 0; i < test.size(); ++i) {
    const Vector y = test.features.col(static_cast<Index>(i));
    Vector sum = Vector::Zero(forest.class_count);
    for (std::size_t t = 0; t < n_trees; ++t) {
      sum += tree_predict(forest.trees[t], y);
      // Same arithmetic as forest_predict on the (t+1)-tree prefix.
      const Vector mean = sum / static_cast<double>(t + 1);
      Index best = 0;
      for (Index c = 1; c < mean.size(); ++c) {
        if (mean(c) > mean(best)) best = c;
      }
      correct[t] += static_cast<int>(best) == test.labels[i];
      if (t + 1 == n_trees) ++report.confusion[static_cast<std::size_t>(test.labels[i])][static_cast<std::size_t>(best)];
    }
  }
  report.test_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  for (std::size_t c : correct) report.accuracy_curve.push_back(static_cast<double>(c) / static_cast<double>(test.size()));
  report.test_size = test.size();
  report.seed = forest.config.seed;
  report.config = forest.config;
  return report;
}

Json metrics_to_json(const MetricsReport& report) {
  Json curve = Json::array();
  for (std::size_t k = 0; k < report.accuracy_curve.size(); ++k) {
    curve.push_back({{"trees", k + 1}, {"accuracy", report.accuracy_curve[k]}});
  }
  return Json{
      {"accuracy", report.accuracy()},
      {"accuracy_curve", curve},
      {"confusion_matrix", report.confusion},
      {"test_size", report.test_size},
      {"train_seconds", report.train_seconds},
      {"test_seconds", report.test_seconds},
      {"seed", report.seed},
      {"config", config_to_json(report.config)},
  };
}

std::string accuracy_curve_csv(const MetricsReport& report) {
  std::ostringstream out;
  out << "trees,accuracy\n";
  out.precision(17);
  for (std::size_t k = 0; k < report.accuracy_curve.size(); ++k) out << k + 1 << ',' << report.accuracy_curve[k] << '\n';
  return out.str();
}

}  // namespace transforest
