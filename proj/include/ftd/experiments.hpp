#pragma once

// Experiment pipelines behind the CLI: task-family assembly, the five run
// kinds, report persistence, and report comparison. A run writes only into
// its own output directory; CSV artifacts are byte-reproducible under a
// fixed config, reports additionally carry wall-clock timings.

#include <chrono>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "ftd/config.hpp"
#include "ftd/data.hpp"
#include "ftd/fisher.hpp"
#include "ftd/fuse.hpp"
#include "ftd/idx.hpp"
#include "ftd/network.hpp"
#include "ftd/search_space.hpp"
#include "ftd/theory.hpp"

namespace ftd {

struct RunReport {
  ExperimentKind kind;
  std::string out_dir;
  double wall_seconds = 0.0;
  std::vector<std::string> artifacts;
  std::vector<std::pair<std::string, std::string>> metrics;
  std::string config_echo;
};

namespace detail {

inline std::string join_path(const std::string& dir, const std::string& name) {
  return (std::filesystem::path(dir) / name).string();
}

inline std::vector<Task> family_from_config(const KeyValueFile& v, std::uint64_t seed) {
  std::string family = v.get_string("family", "synthetic4");
  FamilyOptions opt;
  opt.shared_classes = static_cast<int>(v.get_int("raw_classes", 10));
  opt.per_class_train = static_cast<int>(v.get_int("per_class_train", 40));
  opt.balance_seed = derive_seed(seed, 0xBA1);
  if (family == "synthetic4") {
    SyntheticFamilySpec spec;
    spec.input_dim = static_cast<int>(v.get_int("input_dim", 64));
    spec.noise_scale = v.get_double("noise_scale", 0.3);
    spec.samples_per_class = static_cast<int>(v.get_int("samples_per_class", 60));
    spec.seed = static_cast<std::uint64_t>(v.get_int("data_seed", static_cast<long long>(derive_seed(seed, 0xDA7A))));
    spec.class_centers = random_centers(opt.shared_classes, spec.input_dim, v.get_double("center_scale", 1.5),
                                        derive_seed(spec.seed, 0xCE17));
    return make_task_family(generate_synthetic_family(spec), opt);
  }
  if (family == "mnist4") {
    DatasetSplit split;
    split.train = load_idx(v.require_string("mnist_train_images"), v.require_string("mnist_train_labels"));
    split.test = load_idx(v.require_string("mnist_test_images"), v.require_string("mnist_test_labels"));
    int limit = static_cast<int>(v.get_int("mnist_test_limit", 0));
    if (limit > 0 && split.test.size() > limit) {
      std::vector<int> rows(static_cast<std::size_t>(limit));
      for (int i = 0; i < limit; ++i) rows[static_cast<std::size_t>(i)] = i;
      split.test = split.test.select(rows);
    }
    return make_task_family(split, opt);
  }
  throw ConfigError("unknown family '" + family + "' (expected synthetic4 or mnist4)");
}

inline const Task& find_task(const std::vector<Task>& tasks, const std::string& name) {
  for (const auto& t : tasks)
    if (t.name == name) return t;
  throw ConfigError("no task named '" + name + "' in the family");
}

inline NetworkSpec spec_from_config(const KeyValueFile& v, const Task& any_task) {
  Shape sample = any_task.data.train.sample_shape();
  return named_spec(v.get_string("spec", "mlp-2x64"), sample, any_task.num_classes);
}

inline TrainConfig train_from_config(const KeyValueFile& v) {
  TrainConfig tc;
  tc.epochs = static_cast<int>(v.get_int("epochs", 30));
  tc.batch_size = static_cast<int>(v.get_int("batch_size", 32));
  tc.lr = v.get_double("lr", 1e-3);
  tc.momentum = v.get_double("momentum", 0.0);
  std::string opt = v.get_string("optimizer", "adam");
  if (opt == "adam")
    tc.optimizer = TrainConfig::Optimizer::Adam;
  else if (opt == "sgd")
    tc.optimizer = TrainConfig::Optimizer::Sgd;
  else
    throw ConfigError("unknown optimizer '" + opt + "'");
  return tc;
}

inline Skeleton skeleton_from_config(const KeyValueFile& v, int num_classes) {
  Skeleton sk;
  sk.stem_channels = static_cast<int>(v.get_int("stem_channels", 8));
  sk.num_stages = static_cast<int>(v.get_int("num_stages", 2));
  sk.cells_per_stage = static_cast<int>(v.get_int("cells_per_stage", 1));
  sk.cell_skip = v.get_bool("cell_skip", true);
  sk.num_classes = num_classes;
  return sk;
}

inline NasConfig nas_from_config(const KeyValueFile& v, const Task& target, std::uint64_t seed) {
  NasConfig cfg;
  cfg.seed = seed;
  cfg.skeleton = skeleton_from_config(v, target.num_classes);
  cfg.eps_spec = spec_from_config(v, target);
  cfg.eps_train = train_from_config(v);
  cfg.fim.use_train_data = v.get_string("fim_data", "test") == "train";
  cfg.fim.sample_limit = static_cast<int>(v.get_int("fim_sample_limit", 0));
  cfg.fuse.num_candidates = static_cast<int>(v.get_int("fuse_candidates", 4));
  cfg.fuse.max_inner = static_cast<int>(v.get_int("fuse_max_inner", 80));
  cfg.fuse.check_every = static_cast<int>(v.get_int("fuse_check_every", 10));
  cfg.fuse.alpha_tol = v.get_double("fuse_alpha_tol", 1e-3);
  cfg.fuse.w_step = v.get_double("fuse_w_step", 0.05);
  cfg.fuse.alpha_step = v.get_double("fuse_alpha_step", 0.2);
  cfg.fuse.outer_budget = static_cast<int>(v.get_int("fuse_outer_budget", 3));
  cfg.fuse.val_fraction = v.get_double("val_fraction", 0.2);
  cfg.fuse.batch_size = static_cast<int>(v.get_int("fuse_batch_size", 32));
  cfg.fuse.seed = seed;
  cfg.candidate_train = train_from_config(v);
  cfg.candidate_train.epochs = static_cast<int>(v.get_int("candidate_epochs", 5));
  cfg.candidate_train.lr = v.get_double("candidate_lr", 1e-3);
  return cfg;
}

inline void write_text(const std::string& path, const std::string& text) {
  std::ofstream os(path);
  if (!os) throw std::runtime_error("cannot write " + path);
  os << text;
}

}  // namespace detail

// ---- search report text format ---------------------------------------------

inline std::string search_report_text(const SearchReport& rep) {
  std::ostringstream os;
  os << "report v1\n";
  os << "method = " << rep.method << "\n";
  os << "task = " << rep.task << "\n";
  os << "budget = " << rep.budget << "\n";
  if (!rep.closest_task.empty()) {
    os << "closest_task = " << rep.closest_task << "\n";
    os << "closest_distance = " << format_cell(rep.closest_distance) << "\n";
  }
  os << "rounds = " << rep.rounds.size() << "\n";
  os << "final_val_accuracy = " << format_cell(rep.final_val_accuracy) << "\n";
  os << "final_test_accuracy = " << format_cell(rep.final_test_accuracy) << "\n";
  os << "param_count = " << rep.param_count << "\n";
  os << "wall_seconds = " << rep.wall_seconds << "\n";
  for (const auto& r : rep.rounds) {
    os << "round" << r.round << "_val_accuracy = " << format_cell(r.incumbent_val_accuracy) << "\n";
    os << "round" << r.round << "_candidates =";
    for (std::size_t i = 0; i < r.candidate_val_accuracy.size(); ++i)
      os << (i ? "," : " ") << format_cell(r.candidate_val_accuracy[i]);
    os << "\n";
    os << "begin cell round" << r.round << "\n";
    write_cell(os, r.incumbent);
    os << "end cell\n";
  }
  os << "begin cell best\n";
  write_cell(os, rep.best_cell);
  os << "end cell\n";
  return os.str();
}

/// Reads back the scalar fields of a persisted search report (cell blocks are
/// skipped; the best cell is re-parsed).
inline SearchReport parse_search_report(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw std::runtime_error("cannot open report " + path);
  SearchReport rep;
  std::string line;
  if (!std::getline(is, line) || line != "report v1") throw std::runtime_error(path + ": not a search report");
  while (std::getline(is, line)) {
    if (line.rfind("begin cell", 0) == 0) {
      bool is_best = line == "begin cell best";
      std::ostringstream block;
      while (std::getline(is, line) && line != "end cell") block << line << "\n";
      if (is_best) rep.best_cell = cell_from_string(block.str());
      continue;
    }
    std::size_t eq = line.find('=');
    if (eq == std::string::npos) continue;
    std::string key = detail::trim(line.substr(0, eq));
    std::string value = detail::trim(line.substr(eq + 1));
    if (key == "method") rep.method = value;
    else if (key == "task") rep.task = value;
    else if (key == "budget") rep.budget = std::stoi(value);
    else if (key == "closest_task") rep.closest_task = value;
    else if (key == "closest_distance") rep.closest_distance = std::stod(value);
    else if (key == "final_val_accuracy") rep.final_val_accuracy = std::stod(value);
    else if (key == "final_test_accuracy") rep.final_test_accuracy = std::stod(value);
    else if (key == "param_count") rep.param_count = std::stoll(value);
    else if (key == "wall_seconds") rep.wall_seconds = std::stod(value);
  }
  return rep;
}

struct ComparisonSummary {
  SearchReport first;
  SearchReport second;
  double accuracy_delta = 0.0;     // first - second, test accuracy
  std::int64_t param_delta = 0;
  double seconds_delta = 0.0;
};

/// Side-by-side method comparison; the reports must describe the same task
/// under the same candidate-evaluation budget.
inline ComparisonSummary compare_reports(const SearchReport& a, const SearchReport& b) {
  if (a.task != b.task)
    throw std::invalid_argument("compare_reports: different tasks '" + a.task + "' vs '" + b.task + "'");
  if (a.budget != b.budget)
    throw std::invalid_argument("compare_reports: different budgets " + std::to_string(a.budget) + " vs " +
                                std::to_string(b.budget));
  ComparisonSummary s;
  s.first = a;
  s.second = b;
  s.accuracy_delta = a.final_test_accuracy - b.final_test_accuracy;
  s.param_delta = a.param_count - b.param_count;
  s.seconds_delta = a.wall_seconds - b.wall_seconds;
  return s;
}

inline std::string comparison_text(const ComparisonSummary& s) {
  std::ostringstream os;
  os << "comparison v1\n";
  os << "task = " << s.first.task << "\n";
  os << "budget = " << s.first.budget << "\n";
  auto row = [&](const SearchReport& r) {
    os << r.method << ": test_accuracy = " << format_cell(r.final_test_accuracy)
       << ", val_accuracy = " << format_cell(r.final_val_accuracy) << ", params = " << r.param_count
       << ", wall_seconds = " << r.wall_seconds << "\n";
  };
  row(s.first);
  row(s.second);
  os << "accuracy_delta = " << format_cell(s.accuracy_delta) << "\n";
  os << "param_delta = " << s.param_delta << "\n";
  return os.str();
}

// ---- the five pipelines -------------------------------------------------------

namespace detail {

inline void run_distance_matrix(const ExperimentConfig& cfg, RunReport& rep) {
  const KeyValueFile& v = cfg.values;
  std::vector<Task> tasks = family_from_config(v, cfg.seed);
  DistanceTableConfig dc;
  dc.spec = spec_from_config(v, tasks.front());
  dc.train = train_from_config(v);
  dc.trials = static_cast<int>(v.get_int("trials", 10));
  dc.seed_base = cfg.seed;
  dc.fim.use_train_data = v.get_string("fim_data", "test") == "train";
  dc.fim.sample_limit = static_cast<int>(v.get_int("fim_sample_limit", 0));
  dc.epsilon = v.get_double("epsilon", 0.15);
  DistanceTable table = distance_table(tasks, dc);

  std::string mean_path = join_path(cfg.out_dir, "distance_mean.csv");
  std::string std_path = join_path(cfg.out_dir, "distance_std.csv");
  write_distance_csv(table, mean_path, std_path);
  rep.artifacts = {mean_path, std_path};
  for (std::size_t j = 0; j < table.task_names.size(); ++j)
    rep.metrics.push_back({"closest_to_" + table.task_names[j],
                           table.task_names[static_cast<std::size_t>(table.closest_source(static_cast<int>(j)))]});
  rep.metrics.push_back({"failed_trials", std::to_string(table.failed_trials)});
  for (const auto& w : table.warnings) rep.metrics.push_back({"warning", w});
}

inline void run_train_baseline(const ExperimentConfig& cfg, RunReport& rep) {
  const KeyValueFile& v = cfg.values;
  std::vector<Task> tasks = family_from_config(v, cfg.seed);
  std::vector<std::string> wanted = v.get_strings("tasks", {});
  BaselineDictionary dict;
  std::ostringstream summary;
  for (std::size_t ti = 0; ti < tasks.size(); ++ti) {
    const Task& task = tasks[ti];
    if (!wanted.empty() && std::find(wanted.begin(), wanted.end(), task.name) == wanted.end()) continue;
    NasConfig nc = nas_from_config(v, task, derive_seed(cfg.seed, 0x7A50 + ti));
    int nodes = static_cast<int>(v.get_int("cell_nodes", 3));
    CellSampler sampler(nodes, std::vector<OperationKind>(kAllOperations.begin(), kAllOperations.end()));
    SearchReport sr;
    sr.method = "train-baseline";
    sr.task = task.name;
    cell_search(sr, task, sampler, nc);
    dict.put(task.name, sr.best_cell, nc.skeleton);
    summary << task.name << ": val " << format_cell(sr.final_val_accuracy) << ", test "
            << format_cell(sr.final_test_accuracy) << ", params " << sr.param_count << "\n";

    // persist an epsilon-approximation checkpoint per task
    TrainConfig tc = nc.eps_train;
    tc.seed = derive_seed(cfg.seed, 0xEE);
    tc.batch_order_seed = derive_seed(cfg.seed, 0xEF + ti);
    TrainedNetwork eps = train(spec_from_config(v, task), task, tc);
    std::string ckpt = join_path(cfg.out_dir, task.name + "_eps.ckpt");
    save_checkpoint(eps, ckpt);
    rep.artifacts.push_back(ckpt);
    rep.metrics.push_back({task.name + "_eps_performance", format_cell(performance(eps, task))});
  }
  if (dict.task_names().empty()) throw ConfigError("train-baseline: no tasks selected");
  std::string dict_path = join_path(cfg.out_dir, "dictionary.txt");
  std::ostringstream dict_text;
  dict.save(dict_text);
  write_text(dict_path, dict_text.str());
  write_text(join_path(cfg.out_dir, "baseline_summary.txt"), summary.str());
  rep.artifacts.push_back(dict_path);
  rep.artifacts.push_back(join_path(cfg.out_dir, "baseline_summary.txt"));
}

inline void maybe_compare(const ExperimentConfig& cfg, const SearchReport& mine, RunReport& rep) {
  std::string other_path = cfg.values.get_string("compare_with", "");
  if (other_path.empty()) return;
  SearchReport other = parse_search_report(other_path);
  ComparisonSummary s = compare_reports(mine, other);
  std::string path = join_path(cfg.out_dir, "comparison.txt");
  write_text(path, comparison_text(s));
  rep.artifacts.push_back(path);
  rep.metrics.push_back({"accuracy_delta", format_cell(s.accuracy_delta)});
}

inline void run_nas(const ExperimentConfig& cfg, RunReport& rep) {
  const KeyValueFile& v = cfg.values;
  std::vector<Task> tasks = family_from_config(v, cfg.seed);
  const Task& target = find_task(tasks, v.require_string("target_task"));
  std::ifstream dict_in(v.require_string("dictionary"));
  if (!dict_in) throw ConfigError("cannot open dictionary '" + v.require_string("dictionary") + "'");
  NasConfig nc = nas_from_config(v, target, cfg.seed);
  BaselineDictionary dict = BaselineDictionary::load(dict_in, nc.skeleton);
  std::vector<Task> baselines;
  for (const Task& t : tasks)
    if (t.name != target.name && dict.contains(t.name)) baselines.push_back(t);
  SearchReport sr = nas_main(baselines, target, dict, nc);

  std::string report_path = join_path(cfg.out_dir, "search_report.txt");
  write_text(report_path, search_report_text(sr));
  std::string cell_path = join_path(cfg.out_dir, "best_cell.txt");
  write_text(cell_path, cell_to_string(sr.best_cell));
  rep.artifacts = {report_path, cell_path};
  rep.metrics.push_back({"closest_task", sr.closest_task});
  rep.metrics.push_back({"closest_distance", format_cell(sr.closest_distance)});
  rep.metrics.push_back({"final_test_accuracy", format_cell(sr.final_test_accuracy)});
  maybe_compare(cfg, sr, rep);
}

inline void run_random_search(const ExperimentConfig& cfg, RunReport& rep) {
  const KeyValueFile& v = cfg.values;
  std::vector<Task> tasks = family_from_config(v, cfg.seed);
  const Task& target = find_task(tasks, v.require_string("target_task"));
  std::ifstream dict_in(v.require_string("dictionary"));
  if (!dict_in) throw ConfigError("cannot open dictionary '" + v.require_string("dictionary") + "'");
  NasConfig nc = nas_from_config(v, target, cfg.seed);
  BaselineDictionary dict = BaselineDictionary::load(dict_in, nc.skeleton);
  bool full = v.get_bool("full_space", false);
  std::string space_task = v.get_string("space_task", "");
  CellSampler sampler = full ? search_space_for(dict, space_task.empty() ? dict.task_names().front() : space_task, true)
                             : search_space_for(dict, space_task);
  SearchReport sr = random_search(sampler, target, static_cast<int>(v.get_int("budget", 1)), nc);

  std::string report_path = join_path(cfg.out_dir, "search_report.txt");
  write_text(report_path, search_report_text(sr));
  std::string cell_path = join_path(cfg.out_dir, "best_cell.txt");
  write_text(cell_path, cell_to_string(sr.best_cell));
  rep.artifacts = {report_path, cell_path};
  rep.metrics.push_back({"final_test_accuracy", format_cell(sr.final_test_accuracy)});
  maybe_compare(cfg, sr, rep);
}

inline void run_validate_theory(const ExperimentConfig& cfg, RunReport& rep) {
  const KeyValueFile& v = cfg.values;
  std::string mode = v.require_string("mode");
  std::ostringstream summary;

  auto write_trace = [&](const std::string& name, const std::vector<TracePoint>& trace) {
    std::string path = join_path(cfg.out_dir, name);
    std::ostringstream os;
    os << "t,d_t\n";
    for (const auto& p : trace) {
      char buf[64];
      std::snprintf(buf, sizeof(buf), "%lld,%.9f\n", static_cast<long long>(p.t), p.distance);
      os << buf;
    }
    write_text(path, os.str());
    rep.artifacts.push_back(path);
  };

  if (mode == "proposition1") {
    SyntheticFamilySpec fam;
    fam.input_dim = static_cast<int>(v.get_int("input_dim", 16));
    fam.class_centers = random_centers(static_cast<int>(v.get_int("raw_classes", 2)), fam.input_dim,
                                       v.get_double("center_scale", 2.0), derive_seed(cfg.seed, 0xCE17));
    fam.noise_scale = v.get_double("noise_scale_data", 0.4);
    fam.samples_per_class = static_cast<int>(v.get_int("samples_per_class", 20));
    fam.seed = static_cast<std::uint64_t>(v.get_int("data_seed", 9));
    Task task = derive_task(generate_synthetic_family(fam), [](int r) { return r; },
                            static_cast<int>(v.get_int("raw_classes", 2)), "quadratic-stand-in");
    NetworkSpec spec = named_spec(v.get_string("spec", "mlp-2x64"), task.data.train.sample_shape(), task.num_classes);
    TrainConfig tc = train_from_config(v);
    tc.epochs = static_cast<int>(v.get_int("epochs", 5));
    tc.seed = derive_seed(cfg.seed, 1);
    tc.batch_order_seed = derive_seed(cfg.seed, 2);
    Proposition1Result r = proposition1_check(spec, task, tc);
    summary << "mode = proposition1\n";
    summary << "distance = " << r.distance << "\n";
    summary << "weights_identical = " << (r.weights_identical ? "true" : "false") << "\n";
    summary << "control_batch_seed_distance = " << r.control_batch_seed << "\n";
    summary << "control_init_seed_distance = " << r.control_init_seed << "\n";
  } else {
    QuadraticTask a;
    a.dim = static_cast<int>(v.get_int("dim", 2));
    a.mu = v.get_doubles("mu_a", std::vector<double>(static_cast<std::size_t>(a.dim), 0.0));
    a.sigma_diag = v.get_doubles(mode == "theorem2" ? "sigma_a" : "sigma",
                                 std::vector<double>(static_cast<std::size_t>(a.dim), 1.0));
    NoiseModel noise;
    std::string nk = v.get_string("noise", "bounded_uniform");
    if (nk == "bounded_uniform") noise.kind = NoiseModel::Kind::BoundedUniform;
    else if (nk == "gaussian_clamped") noise.kind = NoiseModel::Kind::GaussianClamped;
    else throw ConfigError("unknown noise kind '" + nk + "'");
    noise.scale = v.get_double("noise_scale", 0.5);
    LrSchedule lr{v.get_double("lr_a", 0.5), v.get_double("lr_gamma", 0.6)};
    std::int64_t steps = v.get_int("steps", 100000);

    if (mode == "theorem1") {
      int pairs = static_cast<int>(v.get_int("seed_pairs", 5));
      bool same_init = v.get_bool("same_init", false);  // degenerate sanity mode
      summary << "mode = theorem1\n";
      for (int p = 0; p < pairs; ++p) {
        std::uint64_t s1 = derive_seed(cfg.seed, 2 * static_cast<std::uint64_t>(p));
        std::uint64_t s2 = same_init ? s1 : derive_seed(cfg.seed, 2 * static_cast<std::uint64_t>(p) + 1);
        auto trace = theorem1_trace(a, noise, steps, lr, s1, s2);
        write_trace(p == 0 ? "trace.csv" : "trace_pair" + std::to_string(p) + ".csv", trace);
        summary << "pair" << p << "_final_distance = " << trace.back().distance << "\n";
      }
    } else {
      QuadraticTask b = a;
      b.mu = v.get_doubles("mu_b", a.mu);
      b.sigma_diag = v.get_doubles("sigma_b", {2.0, 0.5});
      if (static_cast<int>(b.sigma_diag.size()) != a.dim) throw ConfigError("sigma_b dimension mismatch");
      int pairs = static_cast<int>(v.get_int("seed_pairs", 5));
      summary << "mode = theorem2\n";
      summary << "analytic_limit = " << theorem2_analytic_limit(a, b) << "\n";
      for (int p = 0; p < pairs; ++p) {
        Theorem2Result res = theorem2_trace(a, b, noise, steps, lr, derive_seed(cfg.seed, static_cast<std::uint64_t>(p)));
        write_trace(p == 0 ? "trace.csv" : "trace_pair" + std::to_string(p) + ".csv", res.trace);
        summary << "pair" << p << "_final_distance = " << res.trace.back().distance << "\n";
      }
    }
  }
  std::string summary_path = join_path(cfg.out_dir, "summary.txt");
  write_text(summary_path, summary.str());
  rep.artifacts.push_back(summary_path);
}

}  // namespace detail

/// Dispatches a validated config to its pipeline, writes artifacts plus a
/// run_report.txt into the output directory, and verifies the artifacts
/// exist. Exceptions propagate to the caller (the CLI maps them to exit
/// codes and an error record).
inline RunReport run(const ExperimentConfig& cfg) {
  auto t0 = std::chrono::steady_clock::now();
  std::filesystem::create_directories(cfg.out_dir);
  RunReport rep;
  rep.kind = cfg.kind;
  rep.out_dir = cfg.out_dir;
  rep.config_echo = cfg.echo;

  switch (cfg.kind) {
    case ExperimentKind::DistanceMatrix: detail::run_distance_matrix(cfg, rep); break;
    case ExperimentKind::TrainBaseline: detail::run_train_baseline(cfg, rep); break;
    case ExperimentKind::Nas: detail::run_nas(cfg, rep); break;
    case ExperimentKind::RandomSearch: detail::run_random_search(cfg, rep); break;
    case ExperimentKind::ValidateTheory: detail::run_validate_theory(cfg, rep); break;
  }

  rep.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  for (const auto& artifact : rep.artifacts)
    if (!std::filesystem::exists(artifact)) throw std::runtime_error("artifact missing after run: " + artifact);

  std::ostringstream os;
  os << "run_report v1\n";
  os << "experiment = " << kind_name(cfg.kind) << "\n";
  os << "wall_seconds = " << rep.wall_seconds << "\n";
  for (const auto& a : rep.artifacts) os << "artifact = " << a << "\n";
  for (const auto& [k, val] : rep.metrics) os << k << " = " << val << "\n";
  os << "--- config ---\n" << rep.config_echo;
  detail::write_text(detail::join_path(cfg.out_dir, "run_report.txt"), os.str());
  return rep;
}

}  // namespace ftd
