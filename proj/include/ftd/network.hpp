#pragma once

// Construction, training, evaluation and persistence of the small classifier
// networks whose Fisher matrices feed the task distance. Three spec kinds:
// plain MLPs, a two-stage conv net, and cell networks instantiated from a
// CellSpec + Skeleton. Training is bitwise deterministic under
// (seed, batch_order_seed).

#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <map>
#include <memory>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "ftd/data.hpp"
#include "ftd/graph.hpp"
#include "ftd/rng.hpp"
#include "ftd/search_space.hpp"
#include "ftd/tensor.hpp"

namespace ftd {

enum class NetworkKind { Mlp, SmallConv, CellNetwork };

struct NetworkSpec {
  NetworkKind kind = NetworkKind::Mlp;
  Shape input_shape;            // sample shape: {d} for mlp, {c,h,w} for conv kinds
  int num_classes = 2;
  std::vector<int> hidden;      // mlp hidden widths
  std::vector<int> channels;    // small_conv channels, one per conv layer
  Skeleton skeleton;            // cell networks
  CellSpec cell;                // cell networks
};

inline std::string spec_to_string(const NetworkSpec& s) {
  std::ostringstream os;
  os << "network v1\n";
  switch (s.kind) {
    case NetworkKind::Mlp: os << "kind mlp\n"; break;
    case NetworkKind::SmallConv: os << "kind small_conv\n"; break;
    case NetworkKind::CellNetwork: os << "kind cell\n"; break;
  }
  os << "input";
  for (int d : s.input_shape) os << " " << d;
  os << "\nclasses " << s.num_classes << "\n";
  if (s.kind == NetworkKind::Mlp) {
    os << "hidden";
    for (int h : s.hidden) os << " " << h;
    os << "\n";
  }
  if (s.kind == NetworkKind::SmallConv) {
    os << "channels";
    for (int c : s.channels) os << " " << c;
    os << "\n";
  }
  if (s.kind == NetworkKind::CellNetwork) {
    os << "skeleton stem " << s.skeleton.stem_channels << " stages " << s.skeleton.num_stages << " cells "
       << s.skeleton.cells_per_stage << " skip " << (s.skeleton.cell_skip ? 1 : 0) << "\n";
    write_cell(os, s.cell);
  }
  return os.str();
}

inline bool structurally_similar(const NetworkSpec& a, const NetworkSpec& b) {
  return spec_to_string(a) == spec_to_string(b);
}

/// FNV-1a digest of the spec serialization; identifies checkpoints.
inline std::uint64_t spec_digest(const NetworkSpec& s) {
  std::string text = spec_to_string(s);
  std::uint64_t h = 1469598103934665603ULL;
  for (unsigned char c : text) {
    h ^= c;
    h *= 1099511628211ULL;
  }
  return h;
}

/// Named presets for the two epsilon-approximation architectures.
inline NetworkSpec named_spec(const std::string& name, Shape input_shape, int num_classes) {
  NetworkSpec s;
  s.input_shape = std::move(input_shape);
  s.num_classes = num_classes;
  if (name == "mlp-2x64") {
    s.kind = NetworkKind::Mlp;
    s.hidden = {64, 64};
  } else if (name == "conv-2x16") {
    s.kind = NetworkKind::SmallConv;
    s.channels = {16, 16};
  } else {
    throw std::invalid_argument("unknown network spec '" + name + "' (expected mlp-2x64 or conv-2x16)");
  }
  return s;
}

namespace detail {

inline Shape conv_input_shape(const NetworkSpec& spec) {
  if (spec.input_shape.size() == 3) return spec.input_shape;
  if (spec.input_shape.size() == 2) return Shape{1, spec.input_shape[0], spec.input_shape[1]};
  if (spec.input_shape.size() == 1) {
    int d = spec.input_shape[0];
    int side = static_cast<int>(std::lround(std::sqrt(static_cast<double>(d))));
    if (side * side != d)
      throw std::invalid_argument("conv network needs an image-like input, got flat dim " + std::to_string(d));
    return Shape{1, side, side};
  }
  throw std::invalid_argument("unsupported input shape " + shape_str(spec.input_shape));
}

/// One searchable operation applied to a node tensor; spatial dims preserved.
inline int cell_edge_op(ComputeGraph& g, int x, OperationKind op, int channels, const std::string& prefix) {
  switch (op) {
    case OperationKind::Zero: return g.zero(x);
    case OperationKind::Identity: return g.identity(x);
    case OperationKind::MaxPool3x3: return g.max_pool2d(x, PoolAttrs{3, 3, 1, 1});
    case OperationKind::AvgPool3x3: return g.avg_pool2d(x, PoolAttrs{3, 3, 1, 1});
    case OperationKind::Conv3x3: {
      int w = g.param(prefix + ".w", TensorValue::zeros({channels, channels, 3, 3}));
      return g.conv2d(g.relu(x), w, -1, ConvAttrs{1, 1, 1, 1});
    }
    case OperationKind::Conv5x5: {
      int w = g.param(prefix + ".w", TensorValue::zeros({channels, channels, 5, 5}));
      return g.conv2d(g.relu(x), w, -1, ConvAttrs{1, 2, 2, 1});
    }
    case OperationKind::Conv7x7: {
      int w = g.param(prefix + ".w", TensorValue::zeros({channels, channels, 7, 7}));
      return g.conv2d(g.relu(x), w, -1, ConvAttrs{1, 3, 3, 1});
    }
    case OperationKind::DilConv3x3: {
      int w = g.param(prefix + ".w", TensorValue::zeros({channels, channels, 3, 3}));
      return g.conv2d(g.relu(x), w, -1, ConvAttrs{1, 2, 2, 2});
    }
    case OperationKind::DilConv5x5: {
      int w = g.param(prefix + ".w", TensorValue::zeros({channels, channels, 5, 5}));
      return g.conv2d(g.relu(x), w, -1, ConvAttrs{1, 4, 4, 2});
    }
    case OperationKind::Conv7x1_1x7: {
      int w1 = g.param(prefix + ".w", TensorValue::zeros({channels, channels, 7, 1}));
      int c1 = g.conv2d(g.relu(x), w1, -1, ConvAttrs{1, 3, 0, 1});
      int w2 = g.param(prefix + ".w2", TensorValue::zeros({channels, channels, 1, 7}));
      return g.conv2d(c1, w2, -1, ConvAttrs{1, 0, 3, 1});
    }
  }
  throw std::logic_error("unhandled operation kind");
}

/// Averages a list of nodes (sum then 1/k scale).
inline int mean_of(ComputeGraph& g, const std::vector<int>& nodes) {
  int acc = nodes[0];
  for (std::size_t i = 1; i < nodes.size(); ++i) acc = g.add(acc, nodes[static_cast<std::size_t>(i)]);
  if (nodes.size() > 1) acc = g.scale(acc, 1.0 / static_cast<double>(nodes.size()));
  return acc;
}

/// Densely connected DAG cell. Node j's value is the mean of its incoming
/// edge outputs; the cell output is mean(last node, cell input) when the
/// skeleton keeps the skip, else the last node alone.
inline int build_cell(ComputeGraph& g, int cell_in, const CellSpec& cell, int channels, bool skip,
                      const std::string& prefix) {
  auto violations = validate(cell);
  if (!violations.empty()) throw std::invalid_argument("instantiate: " + violations.front());
  std::vector<int> node_val(static_cast<std::size_t>(cell.num_nodes), -1);
  node_val[0] = cell_in;
  for (int j = 1; j < cell.num_nodes; ++j) {
    std::vector<int> incoming;
    for (int i = 0; i < j; ++i) {
      OperationKind op = cell.edge_ops.at({i, j});
      incoming.push_back(cell_edge_op(g, node_val[static_cast<std::size_t>(i)], op, channels,
                                      prefix + ".e" + std::to_string(i) + "_" + std::to_string(j)));
    }
    node_val[static_cast<std::size_t>(j)] = mean_of(g, incoming);
  }
  int out = node_val[static_cast<std::size_t>(cell.num_nodes - 1)];
  if (skip) out = g.scale(g.add(out, cell_in), 0.5);
  return out;
}

}  // namespace detail

/// Builds the compute graph for a spec at a fixed batch size. The data sample
/// shape only needs the right element count; the graph reshapes internally.
/// with_loss appends softmax + cross-entropy over integer labels.
inline ComputeGraph build_graph(const NetworkSpec& spec, int batch, const Shape& data_sample_shape, bool with_loss) {
  if (spec.num_classes < 2) throw std::invalid_argument("network needs >= 2 classes");
  if (shape_numel(data_sample_shape) != shape_numel(spec.input_shape))
    throw std::invalid_argument("input shape mismatch: data sample " + shape_str(data_sample_shape) +
                                " vs spec input " + shape_str(spec.input_shape));
  ComputeGraph g;
  Shape in_shape = data_sample_shape;
  in_shape.insert(in_shape.begin(), batch);
  int x = g.input(in_shape);
  int logits = -1;

  if (spec.kind == NetworkKind::Mlp) {
    for (int h : spec.hidden)
      if (h < 1) throw std::invalid_argument("mlp width must be >= 1");
    int d = static_cast<int>(shape_numel(spec.input_shape));
    int cur = g.reshape(x, {batch, d});
    int prev_w = d;
    for (std::size_t i = 0; i < spec.hidden.size(); ++i) {
      int w = g.param("fc" + std::to_string(i) + ".w", TensorValue::zeros({prev_w, spec.hidden[i]}));
      int b = g.param("fc" + std::to_string(i) + ".b", TensorValue::zeros({spec.hidden[i]}));
      cur = g.relu(g.add(g.matmul(cur, w), b));
      prev_w = spec.hidden[i];
    }
    int w = g.param("head.w", TensorValue::zeros({prev_w, spec.num_classes}));
    int b = g.param("head.b", TensorValue::zeros({spec.num_classes}));
    logits = g.add(g.matmul(cur, w), b);
  } else if (spec.kind == NetworkKind::SmallConv) {
    Shape img = detail::conv_input_shape(spec);
    int cur = g.reshape(x, {batch, img[0], img[1], img[2]});
    int prev_c = img[0];
    for (std::size_t i = 0; i < spec.channels.size(); ++i) {
      int c = spec.channels[i];
      if (c < 1) throw std::invalid_argument("conv channels must be >= 1");
      int w = g.param("conv" + std::to_string(i) + ".w", TensorValue::zeros({c, prev_c, 3, 3}));
      int b = g.param("conv" + std::to_string(i) + ".b", TensorValue::zeros({c}));
      cur = g.max_pool2d(g.relu(g.conv2d(cur, w, b, ConvAttrs{1, 1, 1, 1})), PoolAttrs{3, 3, 2, 1});
      prev_c = c;
    }
    const Shape& s = g.node_shape(cur);
    int flat = s[1] * s[2] * s[3];
    cur = g.reshape(cur, {batch, flat});
    int w = g.param("head.w", TensorValue::zeros({flat, spec.num_classes}));
    int b = g.param("head.b", TensorValue::zeros({spec.num_classes}));
    logits = g.add(g.matmul(cur, w), b);
  } else {
    Shape img = detail::conv_input_shape(spec);
    const Skeleton& sk = spec.skeleton;
    if (sk.stem_channels < 1 || sk.num_stages < 1 || sk.cells_per_stage < 1)
      throw std::invalid_argument("bad skeleton dimensions");
    int cur = g.reshape(x, {batch, img[0], img[1], img[2]});
    int stem_w = g.param("stem.w", TensorValue::zeros({sk.stem_channels, img[0], 3, 3}));
    int stem_b = g.param("stem.b", TensorValue::zeros({sk.stem_channels}));
    cur = g.relu(g.conv2d(cur, stem_w, stem_b, ConvAttrs{1, 1, 1, 1}));
    for (int stage = 0; stage < sk.num_stages; ++stage) {
      for (int ci = 0; ci < sk.cells_per_stage; ++ci)
        cur = detail::build_cell(g, cur, spec.cell, sk.stem_channels, sk.cell_skip,
                                 "s" + std::to_string(stage) + ".c" + std::to_string(ci));
      if (stage + 1 < sk.num_stages) {
        const Shape& s = g.node_shape(cur);
        if (s[2] < 2 || s[3] < 2)
          throw std::invalid_argument("spatial size " + shape_str(s) + " too small for another reduction");
        cur = g.max_pool2d(cur, PoolAttrs{3, 3, 2, 1});
      }
    }
    const Shape& s = g.node_shape(cur);
    int flat = s[1] * s[2] * s[3];
    cur = g.reshape(cur, {batch, flat});
    int w = g.param("head.w", TensorValue::zeros({flat, spec.num_classes}));
    int b = g.param("head.b", TensorValue::zeros({spec.num_classes}));
    logits = g.add(g.matmul(cur, w), b);
  }

  if (with_loss) {
    int tgt = g.target({batch});
    g.cross_entropy(g.softmax(logits), tgt);
  }
  return g;
}

/// Glorot-uniform weights, zero biases; deterministic in declaration order.
inline ParamSet init_params(const NetworkSpec& spec, const Shape& data_sample_shape, std::uint64_t seed) {
  ComputeGraph g = build_graph(spec, 1, data_sample_shape, true);
  Rng rng = make_rng(seed);
  ParamSet params = g.get_params();
  for (auto& p : params) {
    const Shape& s = p.value.shape;
    if (s.size() == 1) continue;  // bias stays zero
    double fan_in, fan_out;
    if (s.size() == 2) {
      fan_in = s[0];
      fan_out = s[1];
    } else {
      fan_in = static_cast<double>(s[1]) * s[2] * s[3];
      fan_out = static_cast<double>(s[0]) * s[2] * s[3];
    }
    double limit = std::sqrt(6.0 / (fan_in + fan_out));
    for (double& v : p.value.data) v = uniform(rng, -limit, limit);
  }
  return params;
}

/// A trainable NetworkSpec for a cell dropped into a skeleton. Builds a
/// throwaway graph once so incompatible shapes are rejected here, not later.
inline NetworkSpec instantiate(const Skeleton& skeleton, const CellSpec& cell, Shape input_shape, int num_classes) {
  NetworkSpec s;
  s.kind = NetworkKind::CellNetwork;
  s.input_shape = input_shape;
  s.num_classes = num_classes;
  s.skeleton = skeleton;
  s.skeleton.num_classes = num_classes;
  s.cell = cell;
  build_graph(s, 1, input_shape, true);
  return s;
}

struct EpochStats {
  double loss = 0.0;
  double accuracy = 0.0;
};

struct TrainConfig {
  enum class Optimizer { Sgd, Adam };
  Optimizer optimizer = Optimizer::Adam;
  double lr = 1e-3;
  double momentum = 0.0;    // sgd
  double lr_decay = 1.0;    // sgd: per-epoch multiplier
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_eps = 1e-8;
  int epochs = 30;
  int batch_size = 32;
  std::uint64_t seed = 1;             // parameter initialization
  std::uint64_t batch_order_seed = 2; // epoch shuffles
};

struct TrainedNetwork {
  NetworkSpec spec;
  ParamSet params;
  std::vector<EpochStats> log;
};

struct TrainDivergence : std::runtime_error {
  TrainDivergence(int epoch_idx, const std::string& what)
      : std::runtime_error("training diverged at epoch " + std::to_string(epoch_idx) + ": " + what),
        epoch(epoch_idx) {}
  int epoch;
};

namespace detail {

struct Optimizer {
  const TrainConfig& cfg;
  std::vector<std::vector<double>> m, v;  // adam moments / sgd velocity
  std::int64_t t = 0;
  double lr_now;

  explicit Optimizer(const TrainConfig& c, const ParamSet& params) : cfg(c), lr_now(c.lr) {
    m.resize(params.size());
    v.resize(params.size());
    for (std::size_t i = 0; i < params.size(); ++i) {
      m[i].assign(params[i].value.data.size(), 0.0);
      v[i].assign(params[i].value.data.size(), 0.0);
    }
  }

  void end_epoch() {
    if (cfg.optimizer == TrainConfig::Optimizer::Sgd) lr_now *= cfg.lr_decay;
  }

  void step(ParamSet& params, const ParamSet& grads) {
    ++t;
    if (cfg.optimizer == TrainConfig::Optimizer::Sgd) {
      for (std::size_t i = 0; i < params.size(); ++i) {
        auto& vel = m[i];
        auto& p = params[i].value.data;
        const auto& g = grads[i].value.data;
        for (std::size_t j = 0; j < p.size(); ++j) {
          vel[j] = cfg.momentum * vel[j] + g[j];
          p[j] -= lr_now * vel[j];
        }
      }
    } else {
      double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(t));
      double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(t));
      for (std::size_t i = 0; i < params.size(); ++i) {
        auto& mi = m[i];
        auto& vi = v[i];
        auto& p = params[i].value.data;
        const auto& g = grads[i].value.data;
        for (std::size_t j = 0; j < p.size(); ++j) {
          mi[j] = cfg.beta1 * mi[j] + (1.0 - cfg.beta1) * g[j];
          vi[j] = cfg.beta2 * vi[j] + (1.0 - cfg.beta2) * g[j] * g[j];
          p[j] -= cfg.lr * (mi[j] / bc1) / (std::sqrt(vi[j] / bc2) + cfg.adam_eps);
        }
      }
    }
  }
};

inline void fill_batch(const Dataset& data, const std::vector<std::size_t>& order, std::size_t start,
                       std::size_t count, TensorValue& inputs, TensorValue& labels) {
  std::int64_t n = data.sample_numel();
  for (std::size_t k = 0; k < count; ++k) {
    std::size_t row = order[start + k];
    std::copy_n(data.inputs.data.begin() + static_cast<std::ptrdiff_t>(static_cast<std::int64_t>(row) * n), n,
                inputs.data.begin() + static_cast<std::ptrdiff_t>(static_cast<std::int64_t>(k) * n));
    labels.data[k] = static_cast<double>(data.labels[row]);
  }
}

inline int argmax_row(const double* row, int k) {
  int best = 0;
  for (int j = 1; j < k; ++j)
    if (row[j] > row[best]) best = j;
  return best;
}

}  // namespace detail

/// Accuracy of the given parameters on a dataset (argmax over logits,
/// first maximum wins ties).
inline double dataset_accuracy(const NetworkSpec& spec, const ParamSet& params, const Dataset& data) {
  if (data.size() == 0) throw std::invalid_argument("accuracy on empty dataset");
  int chunk = std::min(data.size(), 256);
  std::map<int, std::unique_ptr<ComputeGraph>> graphs;
  auto graph_for = [&](int b) -> ComputeGraph& {
    auto& slot = graphs[b];
    if (!slot) {
      slot = std::make_unique<ComputeGraph>(build_graph(spec, b, data.sample_shape(), false));
      slot->set_params(params);
    }
    return *slot;
  };
  int correct = 0;
  std::vector<std::size_t> order(static_cast<std::size_t>(data.size()));
  std::iota(order.begin(), order.end(), std::size_t{0});
  for (int start = 0; start < data.size(); start += chunk) {
    int b = std::min(chunk, data.size() - start);
    ComputeGraph& g = graph_for(b);
    Shape in_shape = data.sample_shape();
    in_shape.insert(in_shape.begin(), b);
    TensorValue inputs = TensorValue::zeros(in_shape);
    TensorValue labels = TensorValue::zeros({b});
    detail::fill_batch(data, order, static_cast<std::size_t>(start), static_cast<std::size_t>(b), inputs, labels);
    const TensorValue& logits = g.forward(inputs);
    for (int i = 0; i < b; ++i) {
      int pred = detail::argmax_row(&logits.data[static_cast<std::size_t>(i * spec.num_classes)], spec.num_classes);
      correct += pred == data.labels[order[static_cast<std::size_t>(start + i)]];
    }
  }
  return static_cast<double>(correct) / data.size();
}

/// Trains a fresh network on the task's train split. Deterministic under
/// (cfg.seed, cfg.batch_order_seed); epochs 0 returns the initialization.
inline TrainedNetwork train(const NetworkSpec& spec, const Task& task, const TrainConfig& cfg) {
  if (cfg.epochs < 0 || cfg.batch_size < 1 || cfg.lr <= 0) throw std::invalid_argument("bad train config");
  const Dataset& data = task.data.train;
  if (data.size() == 0) throw std::invalid_argument("train: empty train split");
  Shape sample_shape = data.sample_shape();

  TrainedNetwork net;
  net.spec = spec;
  net.params = init_params(spec, sample_shape, cfg.seed);

  int n = data.size();
  int bs = std::min(cfg.batch_size, n);
  std::map<int, std::unique_ptr<ComputeGraph>> graphs;
  auto graph_for = [&](int b) -> ComputeGraph& {
    auto& slot = graphs[b];
    if (!slot) slot = std::make_unique<ComputeGraph>(build_graph(spec, b, sample_shape, true));
    return *slot;
  };

  detail::Optimizer opt(cfg, net.params);
  Rng order_rng = make_rng(cfg.batch_order_seed);

  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    std::vector<std::size_t> order = shuffled_indices(static_cast<std::size_t>(n), order_rng);
    double loss_sum = 0.0;
    int correct = 0;
    for (int start = 0; start < n; start += bs) {
      int b = std::min(bs, n - start);
      ComputeGraph& g = graph_for(b);
      g.set_params(net.params);
      Shape in_shape = sample_shape;
      in_shape.insert(in_shape.begin(), b);
      TensorValue inputs = TensorValue::zeros(in_shape);
      TensorValue labels = TensorValue::zeros({b});
      detail::fill_batch(data, order, static_cast<std::size_t>(start), static_cast<std::size_t>(b), inputs, labels);
      double loss;
      try {
        loss = g.forward_loss(inputs, labels);
      } catch (const std::runtime_error& e) {
        throw TrainDivergence(epoch, e.what());
      }
      if (!std::isfinite(loss)) throw TrainDivergence(epoch, "non-finite loss");
      // running train accuracy from the pre-update logits (softmax preserves argmax)
      const TensorValue& probs = g.value(g.output_node() - 1);
      for (int i = 0; i < b; ++i) {
        int pred = detail::argmax_row(&probs.data[static_cast<std::size_t>(i * spec.num_classes)], spec.num_classes);
        correct += pred == data.labels[order[static_cast<std::size_t>(start + i)]];
      }
      loss_sum += loss * b;
      g.backward();
      opt.step(net.params, g.gradients());
    }
    opt.end_epoch();
    net.log.push_back({loss_sum / n, static_cast<double>(correct) / n});
  }
  return net;
}

/// Classification accuracy on the task's test split (P_N of the task).
inline double performance(const TrainedNetwork& net, const Task& task) {
  if (net.spec.num_classes != task.num_classes)
    throw std::invalid_argument("performance: network outputs " + std::to_string(net.spec.num_classes) +
                                " classes but task has " + std::to_string(task.num_classes));
  return dataset_accuracy(net.spec, net.params, task.data.test);
}

/// True iff performance >= 1 - epsilon (inclusive).
inline bool is_epsilon_approx(const TrainedNetwork& net, const Task& task, double epsilon) {
  if (!(epsilon > 0.0 && epsilon < 1.0)) throw std::invalid_argument("epsilon must be in (0,1)");
  return performance(net, task) >= 1.0 - epsilon;
}

// ---- checkpoints -------------------------------------------------------------
//
// Versioned binary container: "FTNC" | u32 version | u64 spec digest |
// u32 tensor count | per tensor: u32 name length, name bytes, u32 rank,
// u32 dims..., f64 data, all little-endian. Parameters round-trip bitwise.

namespace detail {

inline void put_u32(std::ostream& os, std::uint32_t v) {
  unsigned char b[4] = {static_cast<unsigned char>(v), static_cast<unsigned char>(v >> 8),
                        static_cast<unsigned char>(v >> 16), static_cast<unsigned char>(v >> 24)};
  os.write(reinterpret_cast<const char*>(b), 4);
}

inline void put_u64(std::ostream& os, std::uint64_t v) {
  put_u32(os, static_cast<std::uint32_t>(v));
  put_u32(os, static_cast<std::uint32_t>(v >> 32));
}

inline std::uint32_t get_u32(std::istream& is, const std::string& what) {
  unsigned char b[4];
  if (!is.read(reinterpret_cast<char*>(b), 4)) throw std::runtime_error("checkpoint truncated reading " + what);
  return std::uint32_t(b[0]) | (std::uint32_t(b[1]) << 8) | (std::uint32_t(b[2]) << 16) | (std::uint32_t(b[3]) << 24);
}

inline std::uint64_t get_u64(std::istream& is, const std::string& what) {
  std::uint64_t lo = get_u32(is, what);
  std::uint64_t hi = get_u32(is, what);
  return lo | (hi << 32);
}

}  // namespace detail

inline void save_checkpoint(const TrainedNetwork& net, const std::string& path) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("cannot write " + path);
  os.write("FTNC", 4);
  detail::put_u32(os, 1);
  detail::put_u64(os, spec_digest(net.spec));
  detail::put_u32(os, static_cast<std::uint32_t>(net.params.size()));
  for (const auto& p : net.params) {
    detail::put_u32(os, static_cast<std::uint32_t>(p.name.size()));
    os.write(p.name.data(), static_cast<std::streamsize>(p.name.size()));
    detail::put_u32(os, static_cast<std::uint32_t>(p.value.shape.size()));
    for (int d : p.value.shape) detail::put_u32(os, static_cast<std::uint32_t>(d));
    for (double v : p.value.data) {
      std::uint64_t bits;
      std::memcpy(&bits, &v, 8);
      detail::put_u64(os, bits);
    }
  }
  if (!os) throw std::runtime_error("write failed for " + path);
}

inline TrainedNetwork load_checkpoint(const std::string& path, const NetworkSpec& expected_spec) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("cannot open " + path);
  char magic[4];
  if (!is.read(magic, 4) || std::string(magic, 4) != "FTNC")
    throw std::runtime_error(path + ": not a checkpoint file (bad magic)");
  std::uint32_t version = detail::get_u32(is, "version");
  if (version != 1) throw std::runtime_error(path + ": unsupported checkpoint version " + std::to_string(version));
  std::uint64_t digest = detail::get_u64(is, "spec digest");
  if (digest != spec_digest(expected_spec))
    throw std::runtime_error(path + ": checkpoint spec digest does not match the expected network spec");
  std::uint32_t count = detail::get_u32(is, "tensor count");
  TrainedNetwork net;
  net.spec = expected_spec;
  for (std::uint32_t i = 0; i < count; ++i) {
    std::uint32_t name_len = detail::get_u32(is, "name length");
    std::string name(name_len, '\0');
    if (!is.read(name.data(), name_len)) throw std::runtime_error("checkpoint truncated reading tensor name");
    std::uint32_t rank = detail::get_u32(is, "rank");
    Shape shape;
    for (std::uint32_t d = 0; d < rank; ++d) shape.push_back(static_cast<int>(detail::get_u32(is, "dimension")));
    TensorValue t = TensorValue::zeros(shape);
    for (double& v : t.data) {
      std::uint64_t bits = detail::get_u64(is, "tensor data");
      std::memcpy(&v, &bits, 8);
    }
    net.params.push_back({std::move(name), std::move(t)});
  }
  return net;
}

// ---- sample adapters ----------------------------------------------------------

/// Dataset rows as single-sample (input, label) pairs for per-sample passes.
inline std::vector<Sample> to_samples(const Dataset& data, int limit = 0) {
  int n = limit > 0 ? std::min(limit, data.size()) : data.size();
  std::vector<Sample> out;
  out.reserve(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i)
    out.push_back({data.sample(i), TensorValue({1}, {static_cast<double>(data.labels[static_cast<std::size_t>(i)])})});
  return out;
}

}  // namespace ftd
