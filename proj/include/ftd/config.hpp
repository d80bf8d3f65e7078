#pragma once

// Experiment configuration: flat `key = value` lines with `#` comments.
// Parsing is fail-fast: unknown keys, missing required keys, bad types and
// violated invariants are all rejected with the offending line number.

#include <cstdint>
#include <fstream>
#include <map>
#include <set>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace ftd {

struct ConfigError : std::runtime_error {
  explicit ConfigError(const std::string& what) : std::runtime_error(what) {}
};

enum class ExperimentKind { TrainBaseline, DistanceMatrix, Nas, RandomSearch, ValidateTheory };

inline const char* kind_name(ExperimentKind k) {
  switch (k) {
    case ExperimentKind::TrainBaseline: return "train-baseline";
    case ExperimentKind::DistanceMatrix: return "distance-matrix";
    case ExperimentKind::Nas: return "nas";
    case ExperimentKind::RandomSearch: return "random-search";
    case ExperimentKind::ValidateTheory: return "validate-theory";
  }
  return "?";
}

inline ExperimentKind kind_from_name(const std::string& s) {
  for (ExperimentKind k : {ExperimentKind::TrainBaseline, ExperimentKind::DistanceMatrix, ExperimentKind::Nas,
                           ExperimentKind::RandomSearch, ExperimentKind::ValidateTheory})
    if (s == kind_name(k)) return k;
  throw ConfigError("unknown experiment kind '" + s + "'");
}

namespace detail {

inline std::string trim(const std::string& s) {
  std::size_t a = s.find_first_not_of(" \t\r");
  if (a == std::string::npos) return "";
  std::size_t b = s.find_last_not_of(" \t\r");
  return s.substr(a, b - a + 1);
}

}  // namespace detail

/// Raw parsed key/value pairs with source line numbers.
class KeyValueFile {
 public:
  static KeyValueFile parse_stream(std::istream& is, const std::string& source) {
    KeyValueFile f;
    f.source_ = source;
    std::string line;
    int lineno = 0;
    while (std::getline(is, line)) {
      ++lineno;
      std::string stripped = line;
      std::size_t hash = stripped.find('#');
      if (hash != std::string::npos) stripped = stripped.substr(0, hash);
      stripped = detail::trim(stripped);
      if (stripped.empty()) continue;
      std::size_t eq = stripped.find('=');
      if (eq == std::string::npos)
        throw ConfigError(source + ":" + std::to_string(lineno) + ": expected 'key = value', got '" + stripped + "'");
      std::string key = detail::trim(stripped.substr(0, eq));
      std::string value = detail::trim(stripped.substr(eq + 1));
      if (key.empty()) throw ConfigError(source + ":" + std::to_string(lineno) + ": empty key");
      if (f.entries_.count(key))
        throw ConfigError(source + ":" + std::to_string(lineno) + ": duplicate key '" + key + "'");
      f.entries_[key] = {value, lineno};
    }
    return f;
  }

  static KeyValueFile parse_file(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw ConfigError("cannot open config file '" + path + "'");
    return parse_stream(is, path);
  }

  bool has(const std::string& key) const { return entries_.count(key) > 0; }

  std::string get_string(const std::string& key, const std::string& fallback) const {
    auto it = entries_.find(key);
    return it == entries_.end() ? fallback : it->second.value;
  }

  std::string require_string(const std::string& key) const {
    auto it = entries_.find(key);
    if (it == entries_.end()) throw ConfigError(source_ + ": missing required key '" + key + "'");
    return it->second.value;
  }

  long long get_int(const std::string& key, long long fallback) const {
    auto it = entries_.find(key);
    if (it == entries_.end()) return fallback;
    return parse_int(it->second);
  }

  double get_double(const std::string& key, double fallback) const {
    auto it = entries_.find(key);
    if (it == entries_.end()) return fallback;
    return parse_double(it->second);
  }

  bool get_bool(const std::string& key, bool fallback) const {
    auto it = entries_.find(key);
    if (it == entries_.end()) return fallback;
    const std::string& v = it->second.value;
    if (v == "true" || v == "1") return true;
    if (v == "false" || v == "0") return false;
    throw ConfigError(where(it->second) + ": expected true/false for '" + key + "', got '" + v + "'");
  }

  std::vector<double> get_doubles(const std::string& key, std::vector<double> fallback) const {
    auto it = entries_.find(key);
    if (it == entries_.end()) return fallback;
    std::vector<double> out;
    std::stringstream ss(it->second.value);
    std::string part;
    while (std::getline(ss, part, ',')) {
      Entry e{detail::trim(part), it->second.line};
      out.push_back(parse_double(e));
    }
    if (out.empty()) throw ConfigError(where(it->second) + ": empty list for '" + key + "'");
    return out;
  }

  std::vector<std::string> get_strings(const std::string& key, std::vector<std::string> fallback) const {
    auto it = entries_.find(key);
    if (it == entries_.end()) return fallback;
    std::vector<std::string> out;
    std::stringstream ss(it->second.value);
    std::string part;
    while (std::getline(ss, part, ',')) out.push_back(detail::trim(part));
    return out;
  }

  /// Rejects any key outside the allowed set, naming the key and line.
  void restrict_keys(const std::set<std::string>& allowed) const {
    for (const auto& [key, entry] : entries_)
      if (!allowed.count(key))
        throw ConfigError(source_ + ":" + std::to_string(entry.line) + ": unknown key '" + key + "'");
  }

  int line_of(const std::string& key) const {
    auto it = entries_.find(key);
    return it == entries_.end() ? 0 : it->second.line;
  }

  const std::string& source() const { return source_; }

 private:
  struct Entry {
    std::string value;
    int line;
  };

  std::string where(const Entry& e) const { return source_ + ":" + std::to_string(e.line); }

  long long parse_int(const Entry& e) const {
    try {
      std::size_t pos = 0;
      long long v = std::stoll(e.value, &pos);
      if (pos != e.value.size()) throw std::invalid_argument("trailing");
      return v;
    } catch (const std::exception&) {
      throw ConfigError(where(e) + ": expected integer, got '" + e.value + "'");
    }
  }

  double parse_double(const Entry& e) const {
    try {
      std::size_t pos = 0;
      double v = std::stod(e.value, &pos);
      if (pos != e.value.size()) throw std::invalid_argument("trailing");
      return v;
    } catch (const std::exception&) {
      throw ConfigError(where(e) + ": expected number, got '" + e.value + "'");
    }
  }

  std::string source_;
  std::map<std::string, Entry> entries_;
};

/// A validated experiment configuration (kind + raw values + echo text).
struct ExperimentConfig {
  ExperimentKind kind;
  KeyValueFile values;
  std::string out_dir = "out";
  std::uint64_t seed = 1;
  std::string echo;  // config file content, for the run report
};

namespace detail {

inline const std::set<std::string>& allowed_keys(ExperimentKind kind) {
  static const std::set<std::string> common = {
      "experiment", "seed", "out_dir",
      // task family
      "family", "input_dim", "raw_classes", "samples_per_class", "noise_scale", "center_scale", "data_seed",
      "per_class_train", "mnist_train_images", "mnist_train_labels", "mnist_test_images", "mnist_test_labels",
      "mnist_test_limit",
      // epsilon-network training
      "spec", "epochs", "batch_size", "optimizer", "lr", "momentum", "epsilon"};
  static const std::set<std::string> search = {
      "cell_nodes",     "stem_channels",   "num_stages",     "cells_per_stage", "cell_skip",
      "fuse_candidates", "fuse_max_inner", "fuse_check_every", "fuse_alpha_tol", "fuse_w_step",
      "fuse_alpha_step", "fuse_outer_budget", "val_fraction", "fuse_batch_size", "candidate_epochs",
      "candidate_lr",   "fim_sample_limit"};
  static const std::set<std::string> train_baseline = [] {
    std::set<std::string> s = common;
    s.insert(search.begin(), search.end());
    s.insert("tasks");
    return s;
  }();
  static const std::set<std::string> distance_matrix = [] {
    std::set<std::string> s = common;
    s.insert({"trials", "fim_data", "fim_sample_limit"});
    return s;
  }();
  static const std::set<std::string> nas = [] {
    std::set<std::string> s = common;
    s.insert(search.begin(), search.end());
    s.insert({"target_task", "dictionary", "fim_data", "compare_with"});
    return s;
  }();
  static const std::set<std::string> random_search = [] {
    std::set<std::string> s = common;
    s.insert(search.begin(), search.end());
    s.insert({"target_task", "dictionary", "space_task", "full_space", "budget", "compare_with"});
    return s;
  }();
  static const std::set<std::string> validate_theory = {
      "experiment", "seed", "out_dir", "mode", "dim", "mu_a", "mu_b", "sigma", "sigma_a", "sigma_b",
      "noise", "noise_scale", "steps", "seed_pairs", "same_init", "lr_a", "lr_gamma",
      // proposition-1 mode trains a small network
      "input_dim", "raw_classes", "samples_per_class", "noise_scale_data", "center_scale", "data_seed", "spec",
      "epochs", "batch_size", "lr"};
  switch (kind) {
    case ExperimentKind::TrainBaseline: return train_baseline;
    case ExperimentKind::DistanceMatrix: return distance_matrix;
    case ExperimentKind::Nas: return nas;
    case ExperimentKind::RandomSearch: return random_search;
    case ExperimentKind::ValidateTheory: return validate_theory;
  }
  return common;
}

}  // namespace detail

/// Parses and validates a config file. Unknown keys are errors; the
/// `experiment` key is required and fixes the schema.
inline ExperimentConfig parse_config(const std::string& path) {
  KeyValueFile values = KeyValueFile::parse_file(path);
  ExperimentConfig cfg{ExperimentKind::DistanceMatrix, values};
  cfg.kind = kind_from_name(values.require_string("experiment"));
  values.restrict_keys(detail::allowed_keys(cfg.kind));

  cfg.out_dir = values.get_string("out_dir", "out");
  long long seed = values.get_int("seed", 1);
  if (seed < 0) throw ConfigError(values.source() + ": seed must be nonnegative");
  cfg.seed = static_cast<std::uint64_t>(seed);

  // kind-specific invariants, checked at parse time (fail fast)
  if (cfg.kind == ExperimentKind::DistanceMatrix) {
    if (values.get_int("trials", 10) < 1)
      throw ConfigError(values.source() + ":" + std::to_string(values.line_of("trials")) + ": trials must be >= 1");
  }
  if (cfg.kind == ExperimentKind::Nas) {
    values.require_string("target_task");
    values.require_string("dictionary");
    if (values.get_int("fuse_outer_budget", 3) < 1)
      throw ConfigError(values.source() + ": fuse_outer_budget must be >= 1");
  }
  if (cfg.kind == ExperimentKind::RandomSearch) {
    values.require_string("target_task");
    values.require_string("dictionary");
    if (values.get_int("budget", 1) < 1) throw ConfigError(values.source() + ": budget must be >= 1");
    if (!values.has("space_task") && !values.get_bool("full_space", false))
      throw ConfigError(values.source() + ": random-search needs space_task or full_space = true");
  }
  if (cfg.kind == ExperimentKind::ValidateTheory) {
    std::string mode = values.require_string("mode");
    if (mode != "theorem1" && mode != "theorem2" && mode != "proposition1")
      throw ConfigError(values.source() + ":" + std::to_string(values.line_of("mode")) +
                        ": mode must be theorem1, theorem2 or proposition1");
  }
  if (values.get_int("epochs", 1) < 0) throw ConfigError(values.source() + ": epochs must be >= 0");
  if (values.get_int("batch_size", 32) < 1) throw ConfigError(values.source() + ": batch_size must be >= 1");
  if (values.get_double("lr", 1e-3) <= 0) throw ConfigError(values.source() + ": lr must be > 0");

  std::ifstream echo_in(path);
  std::stringstream echo;
  echo << echo_in.rdbuf();
  cfg.echo = echo.str();
  return cfg;
}

}  // namespace ftd
