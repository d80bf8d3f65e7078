#pragma once

// The FUSE candidate search and the outer search loop. FUSE relaxes a
// candidate set into one softmax-weighted output mixture, then alternates
// first-order updates: candidate weights descend the training loss of the
// mixture, the mixture coefficients alpha descend its validation loss. The
// winner is the candidate holding the largest mixture weight.
//
// Batches are drawn from two independent seeded streams, train and
// validation, so a single-candidate run is step-for-step identical to plain
// SGD training on the same stream.

#include <chrono>
#include <cmath>
#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "ftd/data.hpp"
#include "ftd/fisher.hpp"
#include "ftd/graph.hpp"
#include "ftd/network.hpp"
#include "ftd/rng.hpp"
#include "ftd/search_space.hpp"

namespace ftd {

struct FuseConfig {
  int num_candidates = 4;   // fresh candidates sampled per outer round
  int check_every = 10;     // inner steps between alpha-convergence checks
  double alpha_tol = 1e-3;  // max |alpha - alpha_prev| below which FUSE stops
  int max_inner = 80;
  double w_step = 0.05;     // candidate-weight step size
  double alpha_step = 0.2;  // alpha step size
  int outer_budget = 3;     // outer rounds; 3 unchanged rounds stop early
  double val_fraction = 0.2;
  int batch_size = 32;
  std::uint64_t seed = 1;
};

inline std::vector<double> softmax_vec(const std::vector<double>& v) {
  double mx = v[0];
  for (double x : v) mx = std::max(mx, x);
  std::vector<double> out(v.size());
  double sum = 0.0;
  for (std::size_t i = 0; i < v.size(); ++i) {
    out[i] = std::exp(v[i] - mx);
    sum += out[i];
  }
  for (double& x : out) x /= sum;
  return out;
}

/// Softmax(alpha)-weighted sum of candidate outputs (pre-loss logits).
inline TensorValue relax(const std::vector<TensorValue>& outputs, const std::vector<double>& alpha) {
  if (outputs.empty() || outputs.size() != alpha.size())
    throw std::invalid_argument("relax: need one alpha per candidate output");
  for (const auto& o : outputs)
    if (o.shape != outputs.front().shape)
      throw std::invalid_argument("relax: candidate output shapes differ: " + shape_str(o.shape) + " vs " +
                                  shape_str(outputs.front().shape));
  std::vector<double> w = softmax_vec(alpha);
  TensorValue mix = TensorValue::zeros(outputs.front().shape);
  for (std::size_t c = 0; c < outputs.size(); ++c)
    for (std::size_t i = 0; i < mix.data.size(); ++i) mix.data[i] += w[c] * outputs[c].data[i];
  return mix;
}

/// Seeded split of a training set into (train, validation) parts.
inline std::pair<Dataset, Dataset> split_train_val(const Dataset& data, double val_fraction, std::uint64_t seed) {
  if (data.size() < 2) throw std::invalid_argument("split_train_val: need at least 2 samples");
  if (!(val_fraction > 0.0 && val_fraction < 1.0)) throw std::invalid_argument("val_fraction must be in (0,1)");
  Rng rng = make_rng(seed);
  std::vector<std::size_t> order = shuffled_indices(static_cast<std::size_t>(data.size()), rng);
  int n_val = std::max(1, static_cast<int>(std::llround(val_fraction * data.size())));
  if (n_val >= data.size()) n_val = data.size() - 1;
  std::vector<int> train_rows, val_rows;
  for (int i = 0; i < data.size() - n_val; ++i) train_rows.push_back(static_cast<int>(order[static_cast<std::size_t>(i)]));
  for (int i = data.size() - n_val; i < data.size(); ++i) val_rows.push_back(static_cast<int>(order[static_cast<std::size_t>(i)]));
  return {data.select(train_rows), data.select(val_rows)};
}

struct FuseCandidate {
  CellSpec cell;  // empty for hand-built candidates
  NetworkSpec spec;
  ParamSet params;
  bool diverged = false;
};

struct FuseOutcome {
  int winner = -1;
  std::vector<double> alpha;
  std::vector<double> mixture_weights;
  std::vector<double> val_accuracy;  // per candidate, final weights
  std::vector<double> train_loss_history;
  std::vector<double> val_loss_history;
  int iterations = 0;
};

namespace detail {

struct MixtureLoss {
  double loss;
  TensorValue dmix;  // gradient of the mean cross-entropy wrt mixture logits
};

/// Softmax cross-entropy on mixture logits, with its closed-form gradient.
inline MixtureLoss mixture_cross_entropy(const TensorValue& mix, const std::vector<int>& labels) {
  int batch = mix.shape[0], k = mix.shape[1];
  MixtureLoss out{0.0, TensorValue::zeros(mix.shape)};
  for (int b = 0; b < batch; ++b) {
    const double* row = &mix.data[static_cast<std::size_t>(b * k)];
    double mx = row[0];
    for (int j = 1; j < k; ++j) mx = std::max(mx, row[j]);
    double sum = 0.0;
    for (int j = 0; j < k; ++j) sum += std::exp(row[j] - mx);
    int y = labels[static_cast<std::size_t>(b)];
    double log_p = (row[y] - mx) - std::log(sum);
    out.loss -= log_p / batch;
    double* grow = &out.dmix.data[static_cast<std::size_t>(b * k)];
    for (int j = 0; j < k; ++j) {
      double p = std::exp(row[j] - mx) / sum;
      grow[j] = (p - (j == y ? 1.0 : 0.0)) / batch;
    }
  }
  return out;
}

inline std::vector<int> draw_batch(Rng& rng, int n, int batch_size) {
  std::vector<int> idx(static_cast<std::size_t>(std::min(batch_size, n)));
  for (int& i : idx) i = static_cast<int>(uniform_index(rng, static_cast<std::size_t>(n)));
  return idx;
}

inline void fill_rows(const Dataset& data, const std::vector<int>& rows, TensorValue& inputs,
                      std::vector<int>& labels) {
  std::int64_t n = data.sample_numel();
  labels.resize(rows.size());
  for (std::size_t k = 0; k < rows.size(); ++k) {
    std::copy_n(data.inputs.data.begin() + static_cast<std::ptrdiff_t>(static_cast<std::int64_t>(rows[k]) * n), n,
                inputs.data.begin() + static_cast<std::ptrdiff_t>(static_cast<std::int64_t>(k) * n));
    labels[k] = data.labels[static_cast<std::size_t>(rows[k])];
  }
}

}  // namespace detail

/// Alternating first-order FUSE over an already-instantiated candidate set.
/// Candidates are trained in place; diverged candidates are frozen out of the
/// mixture and can no longer win.
inline FuseOutcome fuse(std::vector<FuseCandidate>& candidates, const Dataset& train_data, const Dataset& val_data,
                        const FuseConfig& cfg) {
  if (candidates.empty()) throw std::invalid_argument("fuse: need at least one candidate");
  if (train_data.size() == 0 || val_data.size() == 0) throw std::invalid_argument("fuse: empty data");
  const std::size_t n_cand = candidates.size();
  const int k = candidates.front().spec.num_classes;
  for (const auto& c : candidates)
    if (c.spec.num_classes != k) throw std::invalid_argument("fuse: candidate output widths differ");

  const int bt = std::min(cfg.batch_size, train_data.size());
  const int bv = std::min(cfg.batch_size, val_data.size());
  Shape sample = train_data.sample_shape();

  // one logits graph per candidate and batch size
  std::vector<ComputeGraph> g_train, g_val;
  g_train.reserve(n_cand);
  g_val.reserve(n_cand);
  for (const auto& c : candidates) {
    g_train.push_back(build_graph(c.spec, bt, sample, false));
    g_val.push_back(build_graph(c.spec, bv, sample, false));
  }

  std::vector<double> alpha(n_cand, 1.0 / static_cast<double>(n_cand));
  std::vector<double> alpha_prev = alpha;
  Rng rng_train = make_rng(derive_seed(cfg.seed, 0x11));
  Rng rng_val = make_rng(derive_seed(cfg.seed, 0x22));

  FuseOutcome out;
  Shape in_tr = sample, in_va = sample;
  in_tr.insert(in_tr.begin(), bt);
  in_va.insert(in_va.begin(), bv);
  TensorValue batch_in = TensorValue::zeros(in_tr);
  TensorValue val_in = TensorValue::zeros(in_va);
  std::vector<int> batch_y, val_y;

  auto active_softmax = [&]() {
    std::vector<double> masked = alpha;
    for (std::size_t c = 0; c < n_cand; ++c)
      if (candidates[c].diverged) masked[c] = -1e300;
    return softmax_vec(masked);
  };
  auto any_active = [&]() {
    for (const auto& c : candidates)
      if (!c.diverged) return true;
    return false;
  };

  for (int iter = 0; iter < cfg.max_inner; ++iter) {
    out.iterations = iter + 1;

    // -- candidate weight step on the training loss of the mixture
    detail::fill_rows(train_data, detail::draw_batch(rng_train, train_data.size(), bt), batch_in, batch_y);
    std::vector<double> w = active_softmax();
    std::vector<const TensorValue*> logits(n_cand, nullptr);
    for (std::size_t c = 0; c < n_cand; ++c) {
      if (candidates[c].diverged) continue;
      try {
        g_train[c].set_params(candidates[c].params);
        logits[c] = &g_train[c].forward(batch_in);
      } catch (const std::runtime_error&) {
        candidates[c].diverged = true;
      }
    }
    if (!any_active()) throw std::runtime_error("fuse: every candidate diverged");
    w = active_softmax();
    TensorValue mix = TensorValue::zeros({bt, k});
    for (std::size_t c = 0; c < n_cand; ++c)
      if (logits[c])
        for (std::size_t i = 0; i < mix.data.size(); ++i) mix.data[i] += w[c] * logits[c]->data[i];
    detail::MixtureLoss tr = detail::mixture_cross_entropy(mix, batch_y);
    out.train_loss_history.push_back(tr.loss);
    for (std::size_t c = 0; c < n_cand; ++c) {
      if (!logits[c] || candidates[c].diverged) continue;
      TensorValue seed_grad = tr.dmix;
      for (double& v : seed_grad.data) v *= w[c];
      try {
        g_train[c].backward_from(seed_grad);
        ParamSet grads = g_train[c].gradients();
        for (std::size_t p = 0; p < grads.size(); ++p)
          for (std::size_t i = 0; i < grads[p].value.data.size(); ++i)
            candidates[c].params[p].value.data[i] -= cfg.w_step * grads[p].value.data[i];
      } catch (const std::runtime_error&) {
        candidates[c].diverged = true;
      }
    }

    // -- alpha step on the validation loss of the mixture
    detail::fill_rows(val_data, detail::draw_batch(rng_val, val_data.size(), bv), val_in, val_y);
    std::vector<const TensorValue*> vlogits(n_cand, nullptr);
    for (std::size_t c = 0; c < n_cand; ++c) {
      if (candidates[c].diverged) continue;
      try {
        g_val[c].set_params(candidates[c].params);
        vlogits[c] = &g_val[c].forward(val_in);
      } catch (const std::runtime_error&) {
        candidates[c].diverged = true;
      }
    }
    if (!any_active()) throw std::runtime_error("fuse: every candidate diverged");
    w = active_softmax();
    TensorValue vmix = TensorValue::zeros({bv, k});
    for (std::size_t c = 0; c < n_cand; ++c)
      if (vlogits[c])
        for (std::size_t i = 0; i < vmix.data.size(); ++i) vmix.data[i] += w[c] * vlogits[c]->data[i];
    detail::MixtureLoss va = detail::mixture_cross_entropy(vmix, val_y);
    out.val_loss_history.push_back(va.loss);
    double weighted_sum = 0.0;
    std::vector<double> per_cand(n_cand, 0.0);
    for (std::size_t c = 0; c < n_cand; ++c) {
      if (!vlogits[c]) continue;
      double acc = 0.0;
      for (std::size_t i = 0; i < vmix.data.size(); ++i) acc += va.dmix.data[i] * vlogits[c]->data[i];
      per_cand[c] = acc;
      weighted_sum += w[c] * acc;
    }
    for (std::size_t c = 0; c < n_cand; ++c) {
      if (candidates[c].diverged) continue;
      alpha[c] -= cfg.alpha_step * w[c] * (per_cand[c] - weighted_sum);
    }

    // -- convergence check on alpha movement
    if ((iter + 1) % cfg.check_every == 0) {
      double movement = 0.0;
      for (std::size_t c = 0; c < n_cand; ++c)
        if (!candidates[c].diverged) movement = std::max(movement, std::abs(alpha[c] - alpha_prev[c]));
      if (movement < cfg.alpha_tol) break;
      alpha_prev = alpha;
    }
  }

  out.alpha = alpha;
  out.mixture_weights = active_softmax();
  for (std::size_t c = 0; c < n_cand; ++c) {
    if (candidates[c].diverged) {
      out.val_accuracy.push_back(0.0);
      continue;
    }
    out.val_accuracy.push_back(dataset_accuracy(candidates[c].spec, candidates[c].params, val_data));
  }
  // winner: largest mixture coefficient among survivors; ties to lower index
  int best = -1;
  for (std::size_t c = 0; c < n_cand; ++c) {
    if (candidates[c].diverged) continue;
    if (best < 0 || alpha[c] > alpha[static_cast<std::size_t>(best)]) best = static_cast<int>(c);
  }
  out.winner = best;
  return out;
}

// ---- outer search loops --------------------------------------------------------

struct RoundRecord {
  int round = 0;
  CellSpec incumbent;
  double incumbent_val_accuracy = 0.0;
  std::vector<double> candidate_val_accuracy;
};

struct SearchReport {
  std::string method;
  std::string task;
  int budget = 0;  // fresh candidates evaluated
  std::string closest_task;
  double closest_distance = 0.0;
  std::vector<RoundRecord> rounds;
  CellSpec best_cell;
  double final_val_accuracy = 0.0;
  double final_test_accuracy = 0.0;
  std::int64_t param_count = 0;
  double wall_seconds = 0.0;
};

struct NasConfig {
  FuseConfig fuse;
  NetworkSpec eps_spec;         // epsilon-approximation architecture for distances
  TrainConfig eps_train;
  FimOptions fim;
  Skeleton skeleton;            // candidate instantiation
  TrainConfig candidate_train;  // per-candidate training (random search + final eval)
  std::uint64_t seed = 1;
  bool inject_constant_candidate = false;  // add a skip-less all-zero cell each round
};

namespace detail {

/// Skip-less all-zero cell: a constant-output (bias-only) network, the
/// dominated candidate used by the degenerate-candidate checks.
inline FuseCandidate constant_candidate(const Skeleton& skeleton, int num_nodes, const Shape& input_shape,
                                        int num_classes, std::uint64_t seed) {
  Skeleton no_skip = skeleton;
  no_skip.cell_skip = false;
  FuseCandidate c;
  c.cell = uniform_cell(num_nodes, OperationKind::Zero);
  c.spec = instantiate(no_skip, c.cell, input_shape, num_classes);
  c.params = init_params(c.spec, input_shape, seed);
  return c;
}

inline FuseCandidate fresh_candidate(const Skeleton& skeleton, const CellSpec& cell, const Shape& input_shape,
                                     int num_classes, std::uint64_t seed) {
  FuseCandidate c;
  c.cell = cell;
  c.spec = instantiate(skeleton, cell, input_shape, num_classes);
  c.params = init_params(c.spec, input_shape, seed);
  return c;
}

/// Shared final evaluation: retrain the winning cell from scratch and report
/// validation/test accuracy with one fixed protocol for every method.
inline void finalize_report(SearchReport& rep, const CellSpec& cell, const Skeleton& skeleton, const Task& target,
                            const Dataset& train_part, const Dataset& val_part, const TrainConfig& cfg,
                            std::uint64_t seed) {
  NetworkSpec spec = instantiate(skeleton, cell, train_part.sample_shape(), target.num_classes);
  Task eval_task = target;
  eval_task.data.train = train_part;
  TrainConfig tc = cfg;
  tc.seed = derive_seed(seed, 0xF1);
  tc.batch_order_seed = derive_seed(seed, 0xF2);
  TrainedNetwork net = train(spec, eval_task, tc);
  rep.best_cell = cell;
  rep.final_val_accuracy = dataset_accuracy(spec, net.params, val_part);
  rep.final_test_accuracy = dataset_accuracy(spec, net.params, target.data.test);
  rep.param_count = total_numel(net.params);
}

}  // namespace detail

/// Outer loop shared by the framework and the baseline-dictionary builder:
/// rounds of sample-|C|-fresh-candidates + FUSE over (fresh u incumbent),
/// stopping at the round budget or after the incumbent survives 3 rounds
/// unchanged. Fills rounds/budget/best/final fields of the report.
inline void cell_search(SearchReport& rep, const Task& target, const CellSampler& sampler, const NasConfig& cfg) {
  if (cfg.fuse.outer_budget < 1) throw std::invalid_argument("cell_search: outer budget must be >= 1");
  auto [train_part, val_part] = split_train_val(target.data.train, cfg.fuse.val_fraction,
                                                derive_seed(cfg.seed, 0x51));
  Shape sample = train_part.sample_shape();

  std::optional<FuseCandidate> incumbent;
  Rng cell_rng = make_rng(derive_seed(cfg.seed, 0xC0));
  int unchanged_rounds = 0;
  for (int round = 0; round < cfg.fuse.outer_budget; ++round) {
    std::vector<FuseCandidate> cands;
    for (int i = 0; i < cfg.fuse.num_candidates; ++i)
      cands.push_back(detail::fresh_candidate(cfg.skeleton, sampler(cell_rng), sample, target.num_classes,
                                              derive_seed(cfg.seed, 0x100 + round * 64 + i)));
    rep.budget += cfg.fuse.num_candidates;
    if (cfg.inject_constant_candidate)
      cands.push_back(detail::constant_candidate(cfg.skeleton, sampler.num_nodes, sample, target.num_classes,
                                                 derive_seed(cfg.seed, 0x200 + round)));
    if (incumbent) cands.push_back(*incumbent);  // c* enters the pool last

    FuseConfig fc = cfg.fuse;
    fc.seed = derive_seed(cfg.seed, 0x300 + round);
    FuseOutcome outcome = fuse(cands, train_part, val_part, fc);

    const FuseCandidate& winner = cands[static_cast<std::size_t>(outcome.winner)];
    bool unchanged = incumbent && winner.cell == incumbent->cell;
    unchanged_rounds = unchanged ? unchanged_rounds + 1 : 0;
    incumbent = winner;

    RoundRecord rec;
    rec.round = round;
    rec.incumbent = winner.cell;
    rec.incumbent_val_accuracy = outcome.val_accuracy[static_cast<std::size_t>(outcome.winner)];
    rec.candidate_val_accuracy = outcome.val_accuracy;
    rep.rounds.push_back(rec);
    if (unchanged_rounds >= 3) break;
  }

  detail::finalize_report(rep, incumbent->cell, cfg.skeleton, target, train_part, val_part, cfg.candidate_train,
                          cfg.seed);
}

/// Algorithm: compute the distance from every baseline to the target, adopt
/// the closest baseline's cell space, then search that space with FUSE.
inline SearchReport nas_main(const std::vector<Task>& baselines, const Task& target, const BaselineDictionary& dict,
                             const NasConfig& cfg) {
  if (baselines.empty()) throw std::invalid_argument("nas_main: empty baseline set");
  if (cfg.fuse.outer_budget < 1) throw std::invalid_argument("nas_main: outer budget must be >= 1");
  auto t0 = std::chrono::steady_clock::now();

  SearchReport rep;
  rep.method = "nas";
  rep.task = target.name;

  // closest baseline by Frechet task distance; every epsilon-network starts
  // from the same seeded initialization so Fisher entries stay aligned
  TrainConfig eps_cfg = cfg.eps_train;
  eps_cfg.seed = derive_seed(cfg.seed, 0xE0);
  eps_cfg.batch_order_seed = derive_seed(cfg.seed, 0xE1);
  TrainedNetwork target_net = train(cfg.eps_spec, target, eps_cfg);
  int closest = -1;
  for (std::size_t a = 0; a < baselines.size(); ++a) {
    TrainConfig acfg = eps_cfg;
    acfg.batch_order_seed = derive_seed(cfg.seed, 0xE3 + a);
    TrainedNetwork anet = train(cfg.eps_spec, baselines[a], acfg);
    double d = task_distance({baselines[a], anet}, {target, target_net}, cfg.fim);
    if (closest < 0 || d < rep.closest_distance) {
      closest = static_cast<int>(a);
      rep.closest_distance = d;
    }
  }
  rep.closest_task = baselines[static_cast<std::size_t>(closest)].name;

  cell_search(rep, target, search_space_for(dict, rep.closest_task), cfg);
  rep.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return rep;
}

/// Independent-training baseline over the same space: sample `budget` cells,
/// train each, return the best by validation accuracy.
inline SearchReport random_search(const CellSampler& sampler, const Task& target, int budget, const NasConfig& cfg) {
  if (budget < 1) throw std::invalid_argument("random_search: budget must be >= 1");
  auto t0 = std::chrono::steady_clock::now();
  SearchReport rep;
  rep.method = "random-search";
  rep.task = target.name;
  rep.budget = budget;

  auto [train_part, val_part] = split_train_val(target.data.train, cfg.fuse.val_fraction,
                                                derive_seed(cfg.seed, 0x51));
  Shape sample = train_part.sample_shape();
  Task train_task = target;
  train_task.data.train = train_part;

  Rng cell_rng = make_rng(derive_seed(cfg.seed, 0xC0));
  std::vector<FuseCandidate> evaluated;
  for (int i = 0; i < budget; ++i) {
    FuseCandidate c;
    c.cell = sampler(cell_rng);
    c.spec = instantiate(cfg.skeleton, c.cell, sample, target.num_classes);
    evaluated.push_back(std::move(c));
  }
  if (cfg.inject_constant_candidate)
    evaluated.push_back(detail::constant_candidate(cfg.skeleton, sampler.num_nodes, sample, target.num_classes,
                                                   derive_seed(cfg.seed, 0x201)));

  RoundRecord rec;
  int best = -1;
  double best_acc = -1.0;
  for (std::size_t i = 0; i < evaluated.size(); ++i) {
    TrainConfig tc = cfg.candidate_train;
    tc.seed = derive_seed(cfg.seed, 0x400 + i);
    tc.batch_order_seed = derive_seed(cfg.seed, 0x500 + i);
    double acc = 0.0;
    try {
      TrainedNetwork net = train(evaluated[i].spec, train_task, tc);
      acc = dataset_accuracy(net.spec, net.params, val_part);
    } catch (const TrainDivergence&) {
      acc = 0.0;  // diverged candidates are skipped, not fatal
    }
    rec.candidate_val_accuracy.push_back(acc);
    if (acc > best_acc) {
      best_acc = acc;
      best = static_cast<int>(i);
    }
  }
  rec.incumbent = evaluated[static_cast<std::size_t>(best)].cell;
  rec.incumbent_val_accuracy = best_acc;
  rep.rounds.push_back(rec);

  detail::finalize_report(rep, evaluated[static_cast<std::size_t>(best)].cell, cfg.skeleton, target, train_part,
                          val_part, cfg.candidate_train, cfg.seed);
  rep.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return rep;
}

}  // namespace ftd
