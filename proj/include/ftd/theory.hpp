#pragma once

// Empirical checks of the convergence statements on a strongly convex model:
// per-sample loss L_i(theta) = 0.5 * ||theta - x_i||^2 with x ~ N(mu, Sigma),
// Sigma diagonal. The expected loss has gradient (theta - mu) and the Fisher
// information at theta is (theta - mu)(theta - mu)^T + Sigma, so the diagonal
// is analytic and the distance limits are computable in closed form.

#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include "ftd/fisher.hpp"
#include "ftd/rng.hpp"

namespace ftd {

struct QuadraticTask {
  int dim = 2;
  std::vector<double> mu;
  std::vector<double> sigma_diag;  // diagonal covariance entries, all > 0

  void check() const {
    if (dim < 1 || static_cast<int>(mu.size()) != dim || static_cast<int>(sigma_diag.size()) != dim)
      throw std::invalid_argument("quadratic task dimensions inconsistent");
    for (double s : sigma_diag)
      if (!(s > 0.0)) throw std::invalid_argument("sigma entries must be positive");
  }

  /// Per-sample gradient at theta for a data point x: theta - x.
  std::vector<double> sample_grad(const std::vector<double>& theta, const std::vector<double>& x) const {
    std::vector<double> g(static_cast<std::size_t>(dim));
    for (int j = 0; j < dim; ++j)
      g[static_cast<std::size_t>(j)] = theta[static_cast<std::size_t>(j)] - x[static_cast<std::size_t>(j)];
    return g;
  }

  std::vector<double> draw(Rng& rng) const {
    std::vector<double> x(static_cast<std::size_t>(dim));
    for (int j = 0; j < dim; ++j)
      x[static_cast<std::size_t>(j)] =
          mu[static_cast<std::size_t>(j)] + std::sqrt(sigma_diag[static_cast<std::size_t>(j)]) * normal01(rng);
    return x;
  }
};

/// F_jj(theta) = (theta_j - mu_j)^2 + Sigma_jj.
inline FisherDiagonal analytic_fim_diag(const QuadraticTask& task, const std::vector<double>& theta) {
  task.check();
  if (theta.size() != static_cast<std::size_t>(task.dim)) throw std::invalid_argument("theta dimension mismatch");
  FisherDiagonal f;
  f.entries.resize(theta.size());
  for (std::size_t j = 0; j < theta.size(); ++j) {
    double d = theta[j] - task.mu[j];
    f.entries[j] = d * d + task.sigma_diag[j];
  }
  return f;
}

/// Zero-mean gradient noise with bounded second moment.
struct NoiseModel {
  enum class Kind { BoundedUniform, GaussianClamped };
  Kind kind = Kind::BoundedUniform;
  double scale = 0.5;  // uniform half-width, or the clamp bound

  double draw(Rng& rng) const {
    if (scale == 0.0) return 0.0;
    if (kind == Kind::BoundedUniform) return uniform(rng, -scale, scale);
    double z = (scale / 3.0) * normal01(rng);  // sd = scale/3, then clamp at +-scale
    return std::max(-scale, std::min(scale, z));
  }
};

/// lr_t = a * t^(-gamma); Polyak-Ruppert averaging needs gamma in (0.5, 1).
struct LrSchedule {
  double a = 0.5;
  double gamma = 0.6;

  double at(std::int64_t t) const { return a * std::pow(static_cast<double>(t), -gamma); }
};

struct SgdRun {
  std::vector<std::int64_t> checkpoint_times;
  std::vector<std::vector<double>> checkpoint_averages;  // Polyak average at each time
  std::vector<double> final_theta;
  std::vector<double> final_average;
  std::vector<std::vector<double>> trajectory;  // only when store_trajectory was set
  double noise_sample_mean = 0.0;
};

/// Logarithmically spaced checkpoint times {10, 10^1.5, 10^2, ...} up to and
/// including T.
inline std::vector<std::int64_t> log_checkpoints(std::int64_t total_steps) {
  std::vector<std::int64_t> ts;
  for (double e = 1.0;; e += 0.5) {
    std::int64_t t = static_cast<std::int64_t>(std::llround(std::pow(10.0, e)));
    if (t >= total_steps) break;
    if (ts.empty() || t != ts.back()) ts.push_back(t);
  }
  if (ts.empty() || ts.back() != total_steps) ts.push_back(total_steps);
  return ts;
}

/// SGD on the expected quadratic loss with injected noise:
///   theta_{t+1} = theta_t - lr_t * ((theta_t - mu) + eps_t)
/// Records the running Polyak average at log-spaced checkpoints.
inline SgdRun sgd_run(const QuadraticTask& task, const NoiseModel& noise, std::int64_t total_steps,
                      const LrSchedule& schedule, std::uint64_t seed, bool store_trajectory = false) {
  task.check();
  if (total_steps < 1) throw std::invalid_argument("sgd_run: need at least one step");
  Rng rng = make_rng(seed);
  std::size_t d = static_cast<std::size_t>(task.dim);

  std::vector<double> theta(d);
  for (std::size_t j = 0; j < d; ++j) theta[j] = task.mu[j] + uniform(rng, -1.0, 1.0);

  std::vector<double> avg(d, 0.0);
  SgdRun run;
  run.checkpoint_times = log_checkpoints(total_steps);
  std::size_t next_cp = 0;
  double noise_sum = 0.0;
  std::int64_t noise_count = 0;

  for (std::int64_t t = 1; t <= total_steps; ++t) {
    double lr = schedule.at(t);
    double norm_sq = 0.0;
    for (std::size_t j = 0; j < d; ++j) {
      double eps = noise.draw(rng);
      noise_sum += eps;
      ++noise_count;
      double g = (theta[j] - task.mu[j]) + eps;
      theta[j] -= lr * g;
      norm_sq += theta[j] * theta[j];
      avg[j] += (theta[j] - avg[j]) / static_cast<double>(t);  // running mean of iterates
    }
    if (norm_sq > 1e12)
      throw std::runtime_error("sgd_run diverged at step " + std::to_string(t));
    if (store_trajectory) run.trajectory.push_back(theta);
    if (next_cp < run.checkpoint_times.size() && t == run.checkpoint_times[next_cp]) {
      run.checkpoint_averages.push_back(avg);
      ++next_cp;
    }
  }
  run.final_theta = theta;
  run.final_average = avg;
  run.noise_sample_mean = noise_count ? noise_sum / static_cast<double>(noise_count) : 0.0;
  return run;
}

struct TracePoint {
  std::int64_t t;
  double distance;
};

/// Distance between the normalized analytic Fisher diagonals of two runs'
/// Polyak averages at matching checkpoints.
inline std::vector<TracePoint> theorem1_trace(const QuadraticTask& task, const NoiseModel& noise,
                                              std::int64_t total_steps, const LrSchedule& schedule,
                                              std::uint64_t seed1, std::uint64_t seed2) {
  SgdRun r1 = sgd_run(task, noise, total_steps, schedule, seed1);
  SgdRun r2 = sgd_run(task, noise, total_steps, schedule, seed2);
  std::vector<TracePoint> trace;
  for (std::size_t i = 0; i < r1.checkpoint_times.size(); ++i) {
    FisherDiagonal f1 = normalize_unit_trace(analytic_fim_diag(task, r1.checkpoint_averages[i]));
    FisherDiagonal f2 = normalize_unit_trace(analytic_fim_diag(task, r2.checkpoint_averages[i]));
    trace.push_back({r1.checkpoint_times[i], frechet_distance_diag(f1, f2)});
  }
  return trace;
}

struct Theorem2Result {
  std::vector<TracePoint> trace;
  double analytic_limit = 0.0;
};

/// The analytic limit of the task-A-to-task-B distance: the Frechet distance
/// between the unit-trace diagonals of Sigma_A and Sigma_B (theta at mu).
inline double theorem2_analytic_limit(const QuadraticTask& task_a, const QuadraticTask& task_b) {
  FisherDiagonal fa = normalize_unit_trace(analytic_fim_diag(task_a, task_a.mu));
  FisherDiagonal fb = normalize_unit_trace(analytic_fim_diag(task_b, task_b.mu));
  return frechet_distance_diag(fa, fb);
}

/// One run per task; d_t compares the two tasks' Fisher diagonals at the
/// averaged iterates, each evaluated under its own task.
inline Theorem2Result theorem2_trace(const QuadraticTask& task_a, const QuadraticTask& task_b,
                                     const NoiseModel& noise, std::int64_t total_steps, const LrSchedule& schedule,
                                     std::uint64_t seed) {
  if (task_a.dim != task_b.dim) throw std::invalid_argument("tasks must share dimension");
  SgdRun ra = sgd_run(task_a, noise, total_steps, schedule, derive_seed(seed, 0xA));
  SgdRun rb = sgd_run(task_b, noise, total_steps, schedule, derive_seed(seed, 0xB));
  Theorem2Result out;
  out.analytic_limit = theorem2_analytic_limit(task_a, task_b);
  for (std::size_t i = 0; i < ra.checkpoint_times.size(); ++i) {
    FisherDiagonal fa = normalize_unit_trace(analytic_fim_diag(task_a, ra.checkpoint_averages[i]));
    FisherDiagonal fb = normalize_unit_trace(analytic_fim_diag(task_b, rb.checkpoint_averages[i]));
    out.trace.push_back({ra.checkpoint_times[i], frechet_distance_diag(fa, fb)});
  }
  return out;
}

struct Proposition1Result {
  double distance = 0.0;       // same seeds: must be exactly zero
  bool weights_identical = false;
  double control_batch_seed = 0.0;  // distance after perturbing the batch order
  double control_init_seed = 0.0;   // distance after perturbing the initialization
};

/// Trains two structurally similar networks under identical settings and
/// returns their task distance (exactly zero when the environment is
/// deterministic), plus perturbed-seed control distances.
inline Proposition1Result proposition1_check(const NetworkSpec& spec, const Task& task, const TrainConfig& cfg,
                                             const FimOptions& fim = {}) {
  TrainedNetwork n1 = train(spec, task, cfg);
  TrainedNetwork n2 = train(spec, task, cfg);
  Proposition1Result res;
  res.weights_identical = true;
  for (std::size_t i = 0; i < n1.params.size(); ++i)
    if (!(n1.params[i].value == n2.params[i].value)) res.weights_identical = false;
  if (!res.weights_identical)
    throw std::runtime_error("proposition1_check: identical training settings produced different weights; "
                             "training is not deterministic in this environment");
  res.distance = task_distance({task, n1}, {task, n2}, fim);

  TrainConfig batch_perturbed = cfg;
  batch_perturbed.batch_order_seed = cfg.batch_order_seed + 1;
  TrainedNetwork n3 = train(spec, task, batch_perturbed);
  res.control_batch_seed = task_distance({task, n3}, {task, n2}, fim);

  TrainConfig init_perturbed = cfg;
  init_perturbed.seed = cfg.seed + 1;
  TrainedNetwork n4 = train(spec, task, init_perturbed);
  res.control_init_seed = task_distance({task, n4}, {task, n2}, fim);
  return res;
}

}  // namespace ftd
