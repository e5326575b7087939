// transforest: train and evaluate transformation forests, generate synthetic
// unions of subspaces, inspect subspace angles and run the property suites.

#include <CLI11.hpp>

#include <chrono>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "transforest/data.hpp"
#include "transforest/diagnostics.hpp"
#include "transforest/error.hpp"
#include "transforest/forest.hpp"
#include "transforest/model_io.hpp"
#include "transforest/selfcheck.hpp"

namespace tf = transforest;

namespace {

constexpr int kExitConfig = 1;
constexpr int kExitIo = 2;
constexpr int kExitNumeric = 3;

int exit_code(tf::ErrorKind kind) {
  switch (kind) {
    case tf::ErrorKind::config: return kExitConfig;
    case tf::ErrorKind::io:
    case tf::ErrorKind::parse: return kExitIo;
    case tf::ErrorKind::numeric: return kExitNumeric;
  }
  return kExitNumeric;
}

template <typename T>
std::vector<T> parse_list(const std::string& text, const char* what) {
  std::vector<T> out;
  std::stringstream in(text);
  for (std::string item; std::getline(in, item, ',');) {
    std::istringstream cell(item);
    T value{};
    if (!(cell >> value) || !(cell >> std::ws).eof()) {
      throw tf::ConfigError(std::string("bad ") + what + " list '" + text + "'");
    }
    out.push_back(value);
  }
  if (out.empty()) throw tf::ConfigError(std::string("empty ") + what + " list");
  return out;
}

/// "16x16" or "16".
std::pair<std::size_t, std::size_t> parse_shape(std::string text) {
  const auto x = text.find('x');
  if (x != std::string::npos) text[x] = ',';
  const auto dims = parse_list<std::size_t>(text, "resize");
  if (dims.size() > 2) throw tf::ConfigError("--resize expects ROWSxCOLS");
  return {dims[0], dims.size() > 1 ? dims[1] : dims[0]};
}

void write_text(const std::string& path, const std::string& text) {
  if (path == "-") {
    std::cout << text;
    return;
  }
  std::ofstream out(path, std::ios::binary);
  if (!out || !(out << text) || !out.flush()) throw tf::IoError("cannot write " + path);
}

// ---------------------------------------------------------------------------
// Dataset options shared by train, eval, angles and depth-sweep.

struct DataArgs {
  std::string data;
  std::string labels;
  std::string format;  // idx | csv; inferred from the extension when empty
  std::string label_column = "last";
  std::string drop_columns;
  std::string resize;
  std::string classes;
  std::size_t limit = 0;

  void add_to(CLI::App& cmd, const std::string& prefix = "", bool required = true) {
    auto* opt = cmd.add_option("--" + prefix + "data", data, "CSV file, or IDX image file");
    if (required) opt->required();
    cmd.add_option("--" + prefix + "labels", labels, "IDX label file (idx format)");
    if (prefix.empty()) {
      cmd.add_option("--format", format, "idx or csv (default: csv for *.csv, else idx)")
          ->check(CLI::IsMember({"idx", "csv"}));
      cmd.add_option("--label-column", label_column, "CSV label column: header name, index or 'last'");
      cmd.add_option("--drop-columns", drop_columns, "CSV columns to leave out of the features, e.g. subspace");
      cmd.add_option("--resize", resize, "resize IDX images, e.g. 16x16");
      cmd.add_option("--classes", classes, "keep only these labels, relabelled in order, e.g. 3,8");
      cmd.add_option("--limit", limit, "keep only the first N samples");
    }
  }

  bool given() const { return !data.empty(); }

  std::vector<std::string> dropped() const {
    std::vector<std::string> out;
    std::stringstream in(drop_columns);
    for (std::string name; std::getline(in, name, ',');) {
      if (!name.empty()) out.push_back(name);
    }
    return out;
  }

  std::string resolved_format() const {
    if (!format.empty()) return format;
    const auto ext = std::filesystem::path(data).extension().string();
    return ext == ".csv" ? "csv" : "idx";
  }

  /// Loads this object's files. Label column, resize and class selection come
  /// from `shape` when given (used for --test-data), else from this object.
  tf::DenseDataset load(const DataArgs* shape = nullptr) const {
    const DataArgs& opt = shape ? *shape : *this;
    tf::DenseDataset ds;
    if (resolved_format() == "csv") {
      if (!opt.resize.empty()) throw tf::ConfigError("--resize applies to IDX images only");
      ds = tf::load_csv(data, opt.label_column, opt.dropped());
    } else {
      if (labels.empty()) throw tf::ConfigError("IDX data needs a label file");
      auto idx = tf::load_idx(data, labels);
      ds = std::move(idx.dataset);
      if (!opt.resize.empty()) {
        const auto [rows, cols] = parse_shape(opt.resize);
        ds = tf::resize_images(ds, idx.image_rows, idx.image_cols, rows, cols);
      }
    }
    if (!opt.classes.empty()) {
      const auto keep = parse_list<int>(opt.classes, "class");
      ds = tf::select_classes(ds, keep);
    }
    if (limit > 0 && limit < ds.size()) {
      std::vector<std::size_t> first(limit);
      for (std::size_t i = 0; i < limit; ++i) first[i] = i;
      ds = ds.subset(first);
    }
    ds.validate();
    return ds;
  }
};

// ---------------------------------------------------------------------------
// Training options.

struct TrainArgs {
  tf::TrainConfig config;
  std::string learner = "transform";
  std::string dict_mode = "ksvd";
  CLI::Option* sparsity_opt = nullptr;

  void add_to(CLI::App& cmd) {
    cmd.add_option("--trees", config.n_trees, "number of trees")->capture_default_str();
    cmd.add_option("--depth", config.max_depth, "maximum tree depth")->capture_default_str();
    cmd.add_option("--min-node", config.min_node_samples, "smallest node that may split")->capture_default_str();
    cmd.add_option("--sample-fraction", config.sample_fraction, "per-tree sampling fraction")->capture_default_str();
    cmd.add_option("--atoms", config.dict.n_atoms, "dictionary atoms per class group")->capture_default_str();
    sparsity_opt = cmd.add_option("--sparsity", config.dict.sparsity, "K-SVD sparsity (default: min(4, atoms))");
    cmd.add_option("--ksvd-iters", config.dict.ksvd_iters, "K-SVD sweeps")->capture_default_str();
    cmd.add_option("--dict-mode", dict_mode, "ksvd or svd_basis")
        ->check(CLI::IsMember({"ksvd", "svd_basis"}))
        ->capture_default_str();
    cmd.add_option("--learner", learner, "transform or identity")
        ->check(CLI::IsMember({"transform", "identity"}))
        ->capture_default_str();
    cmd.add_option("--iters", config.learn.max_iters, "transform descent iterations")->capture_default_str();
    cmd.add_option("--step", config.learn.initial_step, "initial descent step")->capture_default_str();
    cmd.add_option("--output-rows", config.learn.output_rows, "rows of T (0: square)")->capture_default_str();
    cmd.add_option("--alpha", config.laplace_alpha, "leaf Laplace smoothing")->capture_default_str();
    cmd.add_flag("--cascade", config.cascade_features, "children receive T*y instead of y");
    cmd.add_option("--seed", config.seed, "random seed")->capture_default_str();
  }

  tf::TrainConfig resolved() const {
    tf::TrainConfig c = config;
    c.learner = tf::learner_kind_from_string(learner);
    c.dict.mode = tf::dict_mode_from_string(dict_mode);
    if (sparsity_opt && sparsity_opt->count() == 0) c.dict.sparsity = std::min(c.dict.sparsity, c.dict.n_atoms);
    c.validate();
    return c;
  }
};

double seconds_since(std::chrono::steady_clock::time_point start) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
}

/// Per-class-pair angles of `ds` before and after the root transform of the
/// first tree (when it is a split on raw features).
tf::Json root_angle_report(const tf::Forest& forest, const tf::DenseDataset& ds, int rank) {
  tf::Json out = tf::Json::array();
  const auto before = tf::group_angles(ds.features, ds.labels, rank);
  const tf::TreeNode& root = forest.trees.front().nodes.front();
  std::vector<tf::GroupAngle> after;
  if (!root.is_leaf()) after = tf::group_angles(root.split->transform().matrix * ds.features, ds.labels, rank);
  for (std::size_t i = 0; i < before.size(); ++i) {
    tf::Json row = {{"class_a", before[i].group_a}, {"class_b", before[i].group_b}, {"before", before[i].angle}};
    if (!after.empty()) row["after"] = after[i].angle;
    out.push_back(row);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Commands

struct TrainCommand {
  DataArgs data;
  DataArgs test;
  TrainArgs train;
  double test_fraction = 0.0;
  std::string out;
  std::string metrics;
  std::string curve;
  int angle_rank = 1;

  void attach(CLI::App& app) {
    auto* cmd = app.add_subcommand("train", "train a forest and write the model and metrics");
    data.add_to(*cmd);
    test.add_to(*cmd, "test-", false);
    train.add_to(*cmd);
    cmd->add_option("--test-fraction", test_fraction, "hold out this stratified fraction for evaluation");
    cmd->add_option("--out", out, "model JSON path")->required();
    cmd->add_option("--metrics", metrics, "metrics JSON path (default: <out>.metrics.json)");
    cmd->add_option("--curve", curve, "accuracy-vs-trees CSV path");
    cmd->add_option("--angle-rank", angle_rank, "basis rank for the root angle report")->capture_default_str();
    cmd->callback([this] { run(); });
  }

  void run() {
    const tf::TrainConfig config = train.resolved();
    tf::DenseDataset train_set = data.load();
    std::optional<tf::DenseDataset> test_set;
    std::string evaluated_on = "train";
    if (test.given()) {
      if (test_fraction > 0) throw tf::ConfigError("use either --test-data or --test-fraction");
      test_set = test.load(&data);
      evaluated_on = "test";
    } else if (test_fraction > 0) {
      tf::Rng rng = tf::Rng(config.seed).derive(0x5E1EC7);
      auto [tr, te] = tf::stratified_split(train_set, test_fraction, rng);
      train_set = std::move(tr);
      test_set = std::move(te);
      evaluated_on = "holdout";
    }

    const auto start = std::chrono::steady_clock::now();
    const tf::Forest forest = tf::forest_train(train_set, config);
    const double train_seconds = seconds_since(start);
    tf::save_forest(out, forest);

    tf::MetricsReport report = tf::evaluate_forest(forest, test_set ? *test_set : train_set);
    report.train_seconds = train_seconds;
    tf::Json json = tf::metrics_to_json(report);
    json["evaluated_on"] = evaluated_on;
    json["train_size"] = train_set.size();
    json["root_angles"] = root_angle_report(forest, train_set, angle_rank);
    write_text(metrics.empty() ? out + ".metrics.json" : metrics, json.dump(2) + "\n");
    if (!curve.empty()) write_text(curve, tf::accuracy_curve_csv(report));

    std::printf("trained %d tree(s) on %zu samples in %.2fs; %s accuracy %.4f\n", config.n_trees, train_set.size(),
                train_seconds, evaluated_on.c_str(), report.accuracy());
  }
};

struct EvalCommand {
  DataArgs data;
  std::string model;
  std::string metrics;
  std::string curve;

  void attach(CLI::App& app) {
    auto* cmd = app.add_subcommand("eval", "evaluate a saved model; reports the accuracy-vs-trees curve");
    cmd->add_option("--model", model, "model JSON")->required();
    data.add_to(*cmd);
    cmd->add_option("--metrics", metrics, "metrics JSON path");
    cmd->add_option("--curve", curve, "accuracy-vs-trees CSV path ('-' for stdout)");
    cmd->callback([this] { run(); });
  }

  void run() {
    const tf::Forest forest = tf::load_forest(model);
    const tf::DenseDataset test = data.load();
    const tf::MetricsReport report = tf::evaluate_forest(forest, test);
    if (!metrics.empty()) write_text(metrics, tf::metrics_to_json(report).dump(2) + "\n");
    if (!curve.empty()) write_text(curve, tf::accuracy_curve_csv(report));
    std::printf("accuracy %.6f over %zu samples with %zu tree(s)\n", report.accuracy(), test.size(),
                forest.trees.size());
  }
};

struct AnglesCommand {
  DataArgs data;
  std::string group_column;
  int rank = 1;
  bool learn = false;
  std::string positive = "0";
  int iters = 200;
  double step = 0.1;
  std::string model;
  std::string out = "-";

  void attach(CLI::App& app) {
    auto* cmd = app.add_subcommand("angles", "pairwise smallest principal angles before and after a transform");
    data.add_to(*cmd);
    cmd->add_option("--group-column", group_column,
                    "CSV column defining the subspaces (default: one subspace per class)");
    cmd->add_option("--rank", rank, "basis rank per group")->capture_default_str();
    cmd->add_flag("--learn", learn, "learn T on the data (classes in --positive against the rest)");
    cmd->add_option("--positive", positive, "positive classes for --learn")->capture_default_str();
    cmd->add_option("--iters", iters, "descent iterations for --learn")->capture_default_str();
    cmd->add_option("--step", step, "initial step for --learn")->capture_default_str();
    cmd->add_option("--model", model, "use the root transform of the model's first tree");
    cmd->add_option("--out", out, "CSV path ('-' for stdout)")->capture_default_str();
    cmd->callback([this] { run(); });
  }

  void run() {
    if (learn && !model.empty()) throw tf::ConfigError("use either --learn or --model");
    tf::DenseDataset ds;
    std::vector<int> groups;
    if (!group_column.empty()) {
      if (data.resolved_format() != "csv") throw tf::ConfigError("--group-column needs CSV data");
      std::vector<std::string> ignore_groups = data.dropped(), ignore_labels = data.dropped();
      ignore_groups.push_back(group_column);
      ignore_labels.push_back(data.label_column);
      ds = tf::load_csv(data.data, data.label_column, ignore_groups);
      groups = tf::load_csv(data.data, group_column, ignore_labels).labels;
    } else {
      ds = data.load();
      groups = ds.labels;
    }

    std::optional<tf::linalg::Matrix> t;
    if (learn) {
      const auto pos = parse_list<int>(positive, "class");
      const std::set<int> pos_set(pos.begin(), pos.end());
      std::vector<Eigen::Index> pcols, mcols;
      for (std::size_t j = 0; j < ds.size(); ++j) {
        (pos_set.count(ds.labels[j]) ? pcols : mcols).push_back(static_cast<Eigen::Index>(j));
      }
      tf::LearnConfig config;
      config.max_iters = iters;
      config.initial_step = step;
      t = tf::learn_transform(ds.features(Eigen::all, pcols), ds.features(Eigen::all, mcols), config).transform.matrix;
    } else if (!model.empty()) {
      const tf::Forest forest = tf::load_forest(model);
      const tf::TreeNode& root = forest.trees.front().nodes.front();
      if (root.is_leaf()) throw tf::ConfigError("the model's first tree is a single leaf");
      t = root.split->transform().matrix;
      if (t->cols() != ds.dim()) throw tf::DimensionError("model and data dimensions differ");
    }

    // Class of each group, or -1 when a group mixes classes.
    std::vector<int> group_class;
    for (std::size_t j = 0; j < groups.size(); ++j) {
      const auto g = static_cast<std::size_t>(groups[j]);
      if (g >= group_class.size()) group_class.resize(g + 1, -2);
      if (group_class[g] == -2) group_class[g] = ds.labels[j];
      else if (group_class[g] != ds.labels[j]) group_class[g] = -1;
    }

    const auto before = tf::group_angles(ds.features, groups, rank);
    std::vector<tf::GroupAngle> after;
    if (t) after = tf::group_angles(*t * ds.features, groups, rank);

    std::ostringstream csv;
    csv.precision(10);
    csv << "group_a,group_b,relation,before" << (t ? ",after" : "") << '\n';
    for (std::size_t i = 0; i < before.size(); ++i) {
      const int ca = group_class[static_cast<std::size_t>(before[i].group_a)];
      const int cb = group_class[static_cast<std::size_t>(before[i].group_b)];
      const char* relation = (ca < 0 || cb < 0) ? "mixed" : ca == cb ? "intra" : "inter";
      csv << before[i].group_a << ',' << before[i].group_b << ',' << relation << ',' << before[i].angle;
      if (t) csv << ',' << after[i].angle;
      csv << '\n';
    }
    write_text(out, csv.str());
  }
};

struct SynthCommand {
  std::string preset = "none";
  tf::SubspaceSpec spec;
  std::string dims;
  std::string angles;
  std::string classes;
  std::uint64_t seed = 0;
  std::string out;
  std::string spec_out;

  void attach(CLI::App& app) {
    auto* cmd = app.add_subcommand("synth", "generate a labelled union of subspaces as CSV");
    cmd->add_option("--preset", preset, "fig1a, fig1c or none")
        ->check(CLI::IsMember({"fig1a", "fig1c", "none"}))
        ->capture_default_str();
    cmd->add_option("--ambient", spec.ambient_dim, "ambient dimension")->capture_default_str();
    cmd->add_option("--dims", dims, "subspace dimensions, e.g. 1,1,1");
    cmd->add_option("--angles", angles, "pairwise angle targets in radians, pairs in lexicographic order");
    cmd->add_option("--classes", classes, "class of each subspace, e.g. 0,0,1");
    cmd->add_option("--points", spec.points_per_subspace, "points per subspace")->capture_default_str();
    cmd->add_option("--noise", spec.noise_sigma, "ambient Gaussian noise sigma")->capture_default_str();
    cmd->add_option("--angle-tolerance", spec.angle_tolerance, "largest accepted placement error")
        ->capture_default_str();
    cmd->add_option("--seed", seed, "random seed")->capture_default_str();
    cmd->add_option("--out", out, "CSV path")->required();
    cmd->add_option("--spec-out", spec_out, "spec echo JSON path (default: <out>.spec.json)");
    cmd->callback([this] { run(); });
  }

  void run() {
    tf::SubspaceSpec s = spec;
    if (preset != "none") {
      const tf::SubspaceSpec base = preset == "fig1a" ? tf::fig1a_spec() : tf::fig1c_spec();
      s.ambient_dim = base.ambient_dim;
      s.subspace_dims = base.subspace_dims;
      s.angle_targets = base.angle_targets;
      s.class_assignment = base.class_assignment;
    }
    if (!dims.empty()) {
      s.subspace_dims.clear();
      for (long v : parse_list<long>(dims, "dimension")) s.subspace_dims.push_back(v);
    }
    if (!angles.empty()) s.angle_targets = parse_list<double>(angles, "angle");
    if (!classes.empty()) s.class_assignment = parse_list<int>(classes, "class");
    if (s.subspace_dims.empty()) throw tf::ConfigError("give --preset or --dims");

    tf::Rng rng(seed);
    const tf::SynthResult result = tf::synth_subspaces(s, rng);
    tf::save_csv(out, result.dataset, result.subspace_of);

    tf::Json bases = tf::Json::array();
    for (const auto& b : result.bases) {
      tf::Json rows = tf::Json::array();
      for (Eigen::Index r = 0; r < b.rows(); ++r) {
        std::vector<double> row(b.cols());
        for (Eigen::Index c = 0; c < b.cols(); ++c) row[static_cast<std::size_t>(c)] = b(r, c);
        rows.push_back(row);
      }
      bases.push_back(rows);
    }
    const tf::Json echo = {
        {"ambient_dim", s.ambient_dim},       {"subspace_dims", s.subspace_dims},
        {"angle_targets", s.angle_targets},   {"class_assignment", s.class_assignment},
        {"points_per_subspace", s.points_per_subspace}, {"noise_sigma", s.noise_sigma},
        {"seed", seed},                       {"bases", bases},
    };
    write_text(spec_out.empty() ? out + ".spec.json" : spec_out, echo.dump(2) + "\n");
    std::printf("wrote %zu samples in %zu subspaces to %s\n", result.dataset.size(), result.bases.size(), out.c_str());
  }
};

struct SelfcheckCommand {
  tf::SelfcheckOptions options;
  bool timing = false;
  bool break_nuclear = false;

  void attach(CLI::App& app) {
    auto* cmd = app.add_subcommand("selfcheck", "run the norm and objective property suites");
    cmd->add_option("--trials", options.trials, "random cases per norm suite")->capture_default_str();
    cmd->add_option("--seed", options.seed, "first case seed")->capture_default_str();
    cmd->add_flag("--timing", timing, "print per-suite run time");
    cmd->add_flag("--break-nuclear-norm", break_nuclear,
                  "negative control: replace the nuclear norm with a wrong one; the run must fail");
    cmd->callback([this] { run(); });
  }

  int status = 0;

  void run() {
    if (options.trials < 1) throw tf::ConfigError("--trials must be positive");
    if (break_nuclear) {
      options.norms.nuclear = [](const tf::linalg::Matrix& m) {
        return tf::linalg::nuclear_norm(m) * static_cast<double>(m.cols());
      };
    }
    const auto results = tf::run_selfcheck(options);
    std::cout << tf::format_selfcheck(results, timing);
    for (const auto& r : results) status |= r.passed ? 0 : 1;
  }
};

struct DepthSweepCommand {
  DataArgs data;
  TrainArgs train;
  std::string depths = "1,2,3,4,5,6,7,8,9";
  double validation_fraction = 0.2;
  std::string out = "-";

  void attach(CLI::App& app) {
    auto* cmd = app.add_subcommand("depth-sweep", "choose the maximum depth on a stratified holdout split");
    data.add_to(*cmd);
    train.add_to(*cmd);
    cmd->add_option("--depths", depths, "candidate depths")->capture_default_str();
    cmd->add_option("--validation-fraction", validation_fraction, "holdout fraction")->capture_default_str();
    cmd->add_option("--out", out, "CSV path ('-' for stdout)")->capture_default_str();
    cmd->callback([this] { run(); });
  }

  void run() {
    tf::TrainConfig config = train.resolved();
    const tf::DenseDataset ds = data.load();
    tf::Rng rng = tf::Rng(config.seed).derive(0x5E1EC7);
    const auto [train_set, validation] = tf::stratified_split(ds, validation_fraction, rng);

    std::ostringstream csv;
    csv.precision(10);
    csv << "depth,validation_accuracy\n";
    int best_depth = 0;
    double best = -1.0;
    for (int depth : parse_list<int>(depths, "depth")) {
      config.max_depth = depth;
      const double acc = tf::evaluate_accuracy(tf::forest_train(train_set, config), validation);
      csv << depth << ',' << acc << '\n';
      if (acc > best) {
        best = acc;
        best_depth = depth;
      }
    }
    write_text(out, csv.str());
    std::fprintf(stderr, "best depth %d (validation accuracy %.4f)\n", best_depth, best);
  }
};

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Transformation forests: nuclear-norm split learners with subspace dictionaries"};
  app.require_subcommand(1);
  TrainCommand train;
  EvalCommand eval;
  AnglesCommand angles;
  SynthCommand synth;
  SelfcheckCommand selfcheck;
  DepthSweepCommand sweep;
  train.attach(app);
  eval.attach(app);
  angles.attach(app);
  synth.attach(app);
  selfcheck.attach(app);
  sweep.attach(app);

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kExitConfig;
  } catch (const tf::Error& e) {
    std::fprintf(stderr, "error [%s]: %s\n", tf::to_string(e.kind()), e.what());
    return exit_code(e.kind());
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error [numeric]: %s\n", e.what());
    return kExitNumeric;
  }
  return selfcheck.status == 0 ? 0 : kExitNumeric;
}
