#pragma once

// Empirical diagonal Fisher information, unit-trace normalization, the
// Frechet task distance on diagonals, a full-matrix Frechet oracle, and the
// trial-averaged distance-table protocol.
//
// The distance from source task a to target task b compares the Fisher
// diagonal of a's network with the Fisher diagonal of b's network, BOTH
// evaluated on b's test data, after unit-trace normalization:
//     d[a,b] = (1/sqrt(2)) * || F_{a,b}^{1/2} - F_{b,b}^{1/2} ||_F
// It is asymmetric in (a, b) and ranges over [0, 1].

#include <Eigen/Dense>
#include <Eigen/Eigenvalues>

#include <cmath>
#include <cstdint>
#include <cstdio>
#include <fstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "ftd/data.hpp"
#include "ftd/graph.hpp"
#include "ftd/network.hpp"
#include "ftd/rng.hpp"
#include "ftd/tensor.hpp"

namespace ftd {

/// Diagonal of an empirical Fisher information matrix, indexed by flattened
/// parameter order.
struct FisherDiagonal {
  std::vector<double> entries;
  bool normalized = false;

  std::size_t size() const { return entries.size(); }
};

/// Running mean of squared gradients (Fisher diagonal accumulator).
class FimAccumulator {
 public:
  void add(const std::vector<double>& grad_flat) {
    if (sum_sq_.empty()) sum_sq_.assign(grad_flat.size(), 0.0);
    if (grad_flat.size() != sum_sq_.size())
      throw std::invalid_argument("gradient length changed between samples");
    for (double g : grad_flat) {
      if (!std::isfinite(g))
        throw std::runtime_error("non-finite gradient at sample " + std::to_string(count_));
    }
    for (std::size_t i = 0; i < grad_flat.size(); ++i) sum_sq_[i] += grad_flat[i] * grad_flat[i];
    ++count_;
  }

  FisherDiagonal finish() const {
    if (count_ == 0) throw std::invalid_argument("empirical FIM over empty data");
    FisherDiagonal f;
    f.entries.resize(sum_sq_.size());
    for (std::size_t i = 0; i < sum_sq_.size(); ++i) f.entries[i] = sum_sq_[i] / static_cast<double>(count_);
    return f;
  }

  std::int64_t count() const { return count_; }

 private:
  std::vector<double> sum_sq_;
  std::int64_t count_ = 0;
};

/// Entry j = mean over samples of (gradient component j)^2.
inline FisherDiagonal empirical_fim_diag_from_grads(const std::vector<std::vector<double>>& per_sample) {
  FimAccumulator acc;
  for (const auto& g : per_sample) acc.add(g);
  return acc.finish();
}

struct FimOptions {
  bool use_train_data = false;  // ablation flag; the protocol uses test data
  int sample_limit = 0;         // 0 = all samples
};

/// Empirical diagonal FIM of a trained network over a dataset, via
/// single-sample backward passes on the network's cross-entropy loss.
inline FisherDiagonal empirical_fim_diag(const TrainedNetwork& net, const Dataset& data, int sample_limit = 0) {
  if (data.size() == 0) throw std::invalid_argument("empirical FIM over empty data");
  ComputeGraph g = build_graph(net.spec, 1, data.sample_shape(), true);
  g.set_params(net.params);
  int n = sample_limit > 0 ? std::min(sample_limit, data.size()) : data.size();
  FimAccumulator acc;
  for (int i = 0; i < n; ++i) {
    TensorValue in = data.sample(i);
    TensorValue label({1}, {static_cast<double>(data.labels[static_cast<std::size_t>(i)])});
    try {
      g.forward(in, label);
      g.backward();
    } catch (const std::runtime_error& e) {
      throw std::runtime_error("sample " + std::to_string(i) + ": " + e.what());
    }
    acc.add(flatten(g.gradients()));
  }
  return acc.finish();
}

/// Scales the diagonal to unit trace. Zero trace is rejected: the distance
/// is undefined for a dead network.
inline FisherDiagonal normalize_unit_trace(const FisherDiagonal& f) {
  double trace = 0.0;
  for (double v : f.entries) {
    if (v < 0.0) throw std::invalid_argument("Fisher diagonal has a negative entry");
    trace += v;
  }
  if (!(trace > 0.0)) throw std::invalid_argument("zero-trace Fisher diagonal: distance undefined");
  FisherDiagonal out;
  out.entries.resize(f.entries.size());
  for (std::size_t i = 0; i < f.entries.size(); ++i) out.entries[i] = f.entries[i] / trace;
  out.normalized = true;
  return out;
}

/// d = (1/sqrt(2)) * sqrt( sum_i (sqrt(a_i) - sqrt(b_i))^2 ) for unit-trace
/// diagonals. Entries are clamped at 0 before the square root to absorb -0.0.
inline double frechet_distance_diag(const FisherDiagonal& fa, const FisherDiagonal& fb) {
  if (!fa.normalized || !fb.normalized)
    throw std::invalid_argument("frechet_distance_diag needs unit-trace inputs");
  if (fa.size() != fb.size())
    throw std::invalid_argument("Fisher diagonal length mismatch: " + std::to_string(fa.size()) + " vs " +
                                std::to_string(fb.size()));
  double acc = 0.0;
  for (std::size_t i = 0; i < fa.entries.size(); ++i) {
    double d = std::sqrt(std::max(fa.entries[i], 0.0)) - std::sqrt(std::max(fb.entries[i], 0.0));
    acc += d * d;
  }
  return std::sqrt(acc * 0.5);
}

/// Full-matrix Frechet distance oracle on unit-trace PSD matrices:
///     d = (1/sqrt(2)) * sqrt( tr(Fa) + tr(Fb) - 2 tr((Fa Fb)^{1/2}) )
/// with tr((Fa Fb)^{1/2}) evaluated through Fa^{1/2} Fb Fa^{1/2}.
/// Dimension is capped: this route exists to cross-check the diagonal form.
inline double frechet_distance_full(const Eigen::MatrixXd& fa, const Eigen::MatrixXd& fb) {
  if (fa.rows() != fa.cols() || fb.rows() != fb.cols() || fa.rows() != fb.rows())
    throw std::invalid_argument("frechet_distance_full: need square matrices of equal dimension");
  if (fa.rows() > 256) throw std::invalid_argument("frechet_distance_full: dimension capped at 256");
  auto check = [](const Eigen::MatrixXd& m, const char* which) {
    if ((m - m.transpose()).cwiseAbs().maxCoeff() > 1e-9)
      throw std::invalid_argument(std::string("frechet_distance_full: ") + which + " is not symmetric");
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(m, Eigen::EigenvaluesOnly);
    if (es.eigenvalues().minCoeff() < -1e-10)
      throw std::invalid_argument(std::string("frechet_distance_full: ") + which + " is not PSD (min eigenvalue " +
                                  std::to_string(es.eigenvalues().minCoeff()) + ")");
    if (std::abs(m.trace() - 1.0) > 1e-6)
      throw std::invalid_argument(std::string("frechet_distance_full: ") + which + " is not unit trace");
  };
  check(fa, "first input");
  check(fb, "second input");

  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> esa(fa);
  Eigen::VectorXd rooted = esa.eigenvalues().cwiseMax(0.0).cwiseSqrt();
  Eigen::MatrixXd sqrt_fa = esa.eigenvectors() * rooted.asDiagonal() * esa.eigenvectors().transpose();
  Eigen::MatrixXd inner = sqrt_fa * fb * sqrt_fa;
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> esi(inner, Eigen::EigenvaluesOnly);
  double tr_sqrt = esi.eigenvalues().cwiseMax(0.0).cwiseSqrt().sum();
  double inside = fa.trace() + fb.trace() - 2.0 * tr_sqrt;
  return std::sqrt(std::max(inside, 0.0) * 0.5);
}

inline Eigen::MatrixXd diag_to_matrix(const FisherDiagonal& f) {
  Eigen::MatrixXd m = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(f.size()), static_cast<Eigen::Index>(f.size()));
  for (std::size_t i = 0; i < f.size(); ++i) m(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(i)) = f.entries[i];
  return m;
}

// ---- task distance -----------------------------------------------------------

struct TaskNetPair {
  const Task& task;
  const TrainedNetwork& net;
};

/// Frechet task distance from source to target; both Fisher diagonals are
/// computed on the TARGET task's data (test split unless configured).
inline double task_distance(const TaskNetPair& source, const TaskNetPair& target, const FimOptions& opt = {}) {
  if (!structurally_similar(source.net.spec, target.net.spec))
    throw std::invalid_argument("task_distance: source and target networks have different specs; "
                                "their Fisher vectors are not comparable");
  const Dataset& data = opt.use_train_data ? target.task.data.train : target.task.data.test;
  FisherDiagonal f_src = normalize_unit_trace(empirical_fim_diag(source.net, data, opt.sample_limit));
  FisherDiagonal f_tgt = normalize_unit_trace(empirical_fim_diag(target.net, data, opt.sample_limit));
  return frechet_distance_diag(f_src, f_tgt);
}

// ---- distance table -----------------------------------------------------------

struct DistanceTableConfig {
  NetworkSpec spec;     // shared family architecture (input/classes filled in)
  TrainConfig train;
  int trials = 10;
  std::uint64_t seed_base = 1;
  FimOptions fim;
  double epsilon = 0.15;  // warn when a trained net misses 1 - epsilon
};

struct DistanceTable {
  std::vector<std::string> task_names;
  std::vector<std::vector<double>> mean;    // rows = source, columns = target
  std::vector<std::vector<double>> stddev;  // population std over trials
  int trials = 0;
  int failed_trials = 0;
  std::vector<std::string> warnings;

  /// Closest source task for a target column (diagonal excluded).
  int closest_source(int target) const {
    int best = -1;
    for (int i = 0; i < static_cast<int>(task_names.size()); ++i) {
      if (i == target) continue;
      if (best < 0 || mean[static_cast<std::size_t>(i)][static_cast<std::size_t>(target)] <
                          mean[static_cast<std::size_t>(best)][static_cast<std::size_t>(target)])
        best = i;
    }
    return best;
  }
};

/// One trial's K x K distance matrix: trains one network per task from the
/// shared spec, then compares Fisher diagonals for every ordered pair.
/// Every network of a trial starts from the same seeded initialization (the
/// trial's seed); without that alignment the per-parameter Fisher entries of
/// independently initialized networks are scrambled by hidden-unit ordering
/// and the distances lose their task structure.
inline std::vector<std::vector<double>> distance_trial(const std::vector<Task>& tasks, const DistanceTableConfig& cfg,
                                                       int trial, std::vector<std::string>* warnings = nullptr) {
  const std::size_t k = tasks.size();
  std::vector<TrainedNetwork> nets;
  nets.reserve(k);
  for (std::size_t i = 0; i < k; ++i) {
    TrainConfig tc = cfg.train;
    tc.seed = derive_seed(cfg.seed_base, static_cast<std::uint64_t>(trial));
    tc.batch_order_seed = derive_seed(cfg.seed_base ^ 0x5bd1e995u, static_cast<std::uint64_t>(trial) * 1024 + i);
    nets.push_back(train(cfg.spec, tasks[i], tc));
    if (warnings && cfg.epsilon > 0.0) {
      double perf = performance(nets.back(), tasks[i]);
      if (perf < 1.0 - cfg.epsilon)
        warnings->push_back("trial " + std::to_string(trial) + ": network for task '" + tasks[i].name +
                            "' reached only " + std::to_string(perf) + " < 1 - epsilon; distances proceed");
    }
  }
  // fims[i][j]: Fisher diagonal of net_i on task_j's data
  std::vector<std::vector<FisherDiagonal>> fims(k, std::vector<FisherDiagonal>(k));
  for (std::size_t i = 0; i < k; ++i)
    for (std::size_t j = 0; j < k; ++j) {
      const Dataset& data = cfg.fim.use_train_data ? tasks[j].data.train : tasks[j].data.test;
      fims[i][j] = normalize_unit_trace(empirical_fim_diag(nets[i], data, cfg.fim.sample_limit));
    }
  std::vector<std::vector<double>> d(k, std::vector<double>(k, 0.0));
  for (std::size_t i = 0; i < k; ++i)
    for (std::size_t j = 0; j < k; ++j) d[i][j] = frechet_distance_diag(fims[i][j], fims[j][j]);
  return d;
}

inline DistanceTable distance_table(const std::vector<Task>& tasks, const DistanceTableConfig& cfg) {
  if (cfg.trials < 1) throw std::invalid_argument("distance_table: trials must be >= 1");
  if (tasks.size() < 2) throw std::invalid_argument("distance_table: need at least 2 tasks");
  Shape sample = tasks.front().data.train.sample_shape();
  for (const auto& t : tasks)
    if (t.data.train.sample_shape() != sample)
      throw std::invalid_argument("distance_table: tasks do not share an input shape");

  const std::size_t k = tasks.size();
  DistanceTable table;
  for (const auto& t : tasks) table.task_names.push_back(t.name);
  table.trials = cfg.trials;
  std::vector<std::vector<std::vector<double>>> runs;
  for (int trial = 0; trial < cfg.trials; ++trial) {
    try {
      runs.push_back(distance_trial(tasks, cfg, trial, &table.warnings));
    } catch (const TrainDivergence& e) {
      ++table.failed_trials;
      table.warnings.push_back("trial " + std::to_string(trial) + " failed: " + e.what());
    }
  }
  if (table.failed_trials * 2 > cfg.trials)
    throw std::runtime_error("distance_table: " + std::to_string(table.failed_trials) + " of " +
                             std::to_string(cfg.trials) + " trials diverged");

  table.mean.assign(k, std::vector<double>(k, 0.0));
  table.stddev.assign(k, std::vector<double>(k, 0.0));
  double n = static_cast<double>(runs.size());
  for (std::size_t i = 0; i < k; ++i)
    for (std::size_t j = 0; j < k; ++j) {
      double m = 0.0;
      for (const auto& r : runs) m += r[i][j];
      m /= n;
      double var = 0.0;
      for (const auto& r : runs) var += (r[i][j] - m) * (r[i][j] - m);
      table.mean[i][j] = m;
      table.stddev[i][j] = std::sqrt(var / n);
    }
  return table;
}

// ---- CSV ----------------------------------------------------------------------

inline std::string format_cell(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.6f", v);
  return buf;
}

inline void write_matrix_csv(const std::string& path, const std::vector<std::string>& names,
                             const std::vector<std::vector<double>>& m) {
  std::ofstream os(path);
  if (!os) throw std::runtime_error("cannot write " + path);
  os << "source\\target";
  for (const auto& n : names) os << "," << n;
  os << "\n";
  for (std::size_t i = 0; i < names.size(); ++i) {
    os << names[i];
    for (std::size_t j = 0; j < names.size(); ++j) os << "," << format_cell(m[i][j]);
    os << "\n";
  }
}

inline void write_distance_csv(const DistanceTable& table, const std::string& mean_path,
                               const std::string& std_path) {
  write_matrix_csv(mean_path, table.task_names, table.mean);
  write_matrix_csv(std_path, table.task_names, table.stddev);
}

}  // namespace ftd
