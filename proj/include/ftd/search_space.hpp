#pragma once

// Cell-and-skeleton architecture space. A cell is a densely connected DAG:
// nodes 0..n-1, one operation on every ordered edge (i,j) with i < j, node 0
// fed by the cell input and node n-1 producing the cell output. A skeleton
// stacks a stem convolution, cell stages separated by stride-2 reductions,
// and a linear head.

#include <array>
#include <cstdint>
#include <istream>
#include <map>
#include <optional>
#include <ostream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "ftd/rng.hpp"

namespace ftd {

enum class OperationKind {
  Zero,
  Identity,
  MaxPool3x3,
  AvgPool3x3,
  Conv3x3,
  Conv5x5,
  Conv7x7,
  DilConv3x3,
  DilConv5x5,
  Conv7x1_1x7,
};

inline constexpr std::array<OperationKind, 10> kAllOperations = {
    OperationKind::Zero,       OperationKind::Identity,   OperationKind::MaxPool3x3, OperationKind::AvgPool3x3,
    OperationKind::Conv3x3,    OperationKind::Conv5x5,    OperationKind::Conv7x7,    OperationKind::DilConv3x3,
    OperationKind::DilConv5x5, OperationKind::Conv7x1_1x7};

inline const char* op_kind_name(OperationKind k) {
  switch (k) {
    case OperationKind::Zero: return "zero";
    case OperationKind::Identity: return "identity";
    case OperationKind::MaxPool3x3: return "maxpool3x3";
    case OperationKind::AvgPool3x3: return "avgpool3x3";
    case OperationKind::Conv3x3: return "conv3x3";
    case OperationKind::Conv5x5: return "conv5x5";
    case OperationKind::Conv7x7: return "conv7x7";
    case OperationKind::DilConv3x3: return "dil_conv3x3";
    case OperationKind::DilConv5x5: return "dil_conv5x5";
    case OperationKind::Conv7x1_1x7: return "conv7x1_1x7";
  }
  return "?";
}

inline std::optional<OperationKind> op_kind_from_name(const std::string& s) {
  for (OperationKind k : kAllOperations)
    if (s == op_kind_name(k)) return k;
  return std::nullopt;
}

using Edge = std::pair<int, int>;  // (i, j) with i < j

struct CellSpec {
  int num_nodes = 2;
  std::map<Edge, OperationKind> edge_ops;

  bool operator==(const CellSpec& o) const { return num_nodes == o.num_nodes && edge_ops == o.edge_ops; }

  std::vector<OperationKind> distinct_ops() const {
    std::vector<OperationKind> out;
    for (const auto& [e, op] : edge_ops)
      if (std::find(out.begin(), out.end(), op) == out.end()) out.push_back(op);
    std::sort(out.begin(), out.end());
    return out;
  }
};

inline std::vector<Edge> all_edges(int num_nodes) {
  std::vector<Edge> out;
  for (int i = 0; i < num_nodes; ++i)
    for (int j = i + 1; j < num_nodes; ++j) out.push_back({i, j});
  return out;
}

/// Structural check; returns human-readable violations, never throws.
inline std::vector<std::string> validate(const CellSpec& cell) {
  std::vector<std::string> v;
  if (cell.num_nodes < 2 || cell.num_nodes > 6)
    v.push_back("num_nodes " + std::to_string(cell.num_nodes) + " outside [2,6]");
  for (const auto& [e, op] : cell.edge_ops) {
    if (e.first < 0 || e.second >= cell.num_nodes || e.first >= e.second)
      v.push_back("edge (" + std::to_string(e.first) + "," + std::to_string(e.second) + ") is not ordered i<j within nodes");
  }
  if (cell.num_nodes >= 2)
    for (const Edge& e : all_edges(cell.num_nodes))
      if (!cell.edge_ops.count(e))
        v.push_back("not densely connected: missing edge (" + std::to_string(e.first) + "," +
                    std::to_string(e.second) + ")");
  return v;
}

/// Number of distinct cells with n nodes and m ops per edge: m^(n(n-1)/2),
/// as a decimal string (the count overflows 64 bits quickly).
inline std::string count_cells_string(int n, int m) {
  if (n < 2) throw std::invalid_argument("count_cells: n must be >= 2");
  if (m < 1) throw std::invalid_argument("count_cells: m must be >= 1");
  long long edges = static_cast<long long>(n) * (n - 1) / 2;
  // base-1e9 big integer, little-endian limbs
  std::vector<std::uint64_t> limbs = {1};
  for (long long e = 0; e < edges; ++e) {
    std::uint64_t carry = 0;
    for (auto& limb : limbs) {
      std::uint64_t cur = limb * static_cast<std::uint64_t>(m) + carry;
      limb = cur % 1000000000ULL;
      carry = cur / 1000000000ULL;
    }
    while (carry) {
      limbs.push_back(carry % 1000000000ULL);
      carry /= 1000000000ULL;
    }
  }
  std::string s = std::to_string(limbs.back());
  for (int i = static_cast<int>(limbs.size()) - 2; i >= 0; --i) {
    std::string part = std::to_string(limbs[static_cast<std::size_t>(i)]);
    s += std::string(9 - part.size(), '0') + part;
  }
  return s;
}

/// Same count as a 64-bit integer; throws if it does not fit.
inline std::uint64_t count_cells(int n, int m) {
  std::string s = count_cells_string(n, m);
  if (s.size() > 20) throw std::overflow_error("cell count " + s + " exceeds 64 bits");
  errno = 0;
  char* end = nullptr;
  unsigned long long v = std::strtoull(s.c_str(), &end, 10);
  if (errno != 0 || end != s.c_str() + s.size()) throw std::overflow_error("cell count " + s + " exceeds 64 bits");
  return v;
}

/// Uniform, independent op per edge; deterministic under seed.
struct CellSampler {
  int num_nodes;
  std::vector<OperationKind> ops;

  CellSampler(int n, std::vector<OperationKind> op_set) : num_nodes(n), ops(std::move(op_set)) {
    if (ops.empty()) throw std::invalid_argument("sample_cell: empty operation set");
    std::sort(ops.begin(), ops.end());
    ops.erase(std::unique(ops.begin(), ops.end()), ops.end());
    if (num_nodes < 2 || num_nodes > 6)
      throw std::invalid_argument("sample_cell: num_nodes " + std::to_string(num_nodes) + " outside [2,6]");
  }

  CellSpec operator()(Rng& rng) const {
    CellSpec cell;
    cell.num_nodes = num_nodes;
    for (const Edge& e : all_edges(num_nodes)) cell.edge_ops[e] = ops[uniform_index(rng, ops.size())];
    return cell;
  }

  std::string space_size() const { return count_cells_string(num_nodes, static_cast<int>(ops.size())); }
};

inline CellSpec sample_cell(int n, const std::vector<OperationKind>& ops, std::uint64_t seed) {
  Rng rng = make_rng(seed);
  return CellSampler(n, ops)(rng);
}

inline CellSpec uniform_cell(int n, OperationKind op) {
  CellSpec cell;
  cell.num_nodes = n;
  for (const Edge& e : all_edges(n)) cell.edge_ops[e] = op;
  return cell;
}

// ---- skeleton --------------------------------------------------------------

struct Skeleton {
  int stem_channels = 8;
  int num_stages = 2;       // stages of cells separated by reductions
  int cells_per_stage = 1;
  bool cell_skip = true;    // fold the cell input into the cell output
  int num_classes = 10;

  bool operator==(const Skeleton& o) const {
    return stem_channels == o.stem_channels && num_stages == o.num_stages && cells_per_stage == o.cells_per_stage &&
           cell_skip == o.cell_skip && num_classes == o.num_classes;
  }
};

// ---- text format ------------------------------------------------------------
//
//   cell v1
//   nodes <n>
//   edge <i> <j> <op_name>     (one line per edge)

inline void write_cell(std::ostream& os, const CellSpec& cell) {
  os << "cell v1\n";
  os << "nodes " << cell.num_nodes << "\n";
  for (const auto& [e, op] : cell.edge_ops) os << "edge " << e.first << " " << e.second << " " << op_kind_name(op) << "\n";
}

inline std::string cell_to_string(const CellSpec& cell) {
  std::ostringstream os;
  write_cell(os, cell);
  return os.str();
}

/// Parses one cell block; the stream is left after the block's last edge line.
inline CellSpec read_cell(std::istream& is) {
  std::string line;
  if (!std::getline(is, line) || line != "cell v1") throw std::invalid_argument("cell parse: expected 'cell v1', got '" + line + "'");
  if (!std::getline(is, line)) throw std::invalid_argument("cell parse: missing 'nodes' line");
  std::istringstream hdr(line);
  std::string tag;
  int n = 0;
  if (!(hdr >> tag >> n) || tag != "nodes") throw std::invalid_argument("cell parse: bad nodes line '" + line + "'");
  CellSpec cell;
  cell.num_nodes = n;
  long long expected = static_cast<long long>(n) * (n - 1) / 2;
  for (long long k = 0; k < expected; ++k) {
    if (!std::getline(is, line)) throw std::invalid_argument("cell parse: truncated edge list");
    std::istringstream es(line);
    int i = 0, j = 0;
    std::string opname;
    if (!(es >> tag >> i >> j >> opname) || tag != "edge")
      throw std::invalid_argument("cell parse: bad edge line '" + line + "'");
    auto op = op_kind_from_name(opname);
    if (!op) throw std::invalid_argument("cell parse: unknown op name '" + opname + "'");
    cell.edge_ops[{i, j}] = *op;
  }
  auto violations = validate(cell);
  if (!violations.empty()) throw std::invalid_argument("cell parse: " + violations.front());
  return cell;
}

inline CellSpec cell_from_string(const std::string& s) {
  std::istringstream is(s);
  return read_cell(is);
}

// ---- baseline dictionary -----------------------------------------------------

struct BaselineEntry {
  CellSpec cell;
  std::vector<OperationKind> ops;  // operation set of the stored cell
  Skeleton skeleton;
};

/// Task name -> discovered cell structure; declaration order preserved.
class BaselineDictionary {
 public:
  void put(const std::string& task, CellSpec cell, Skeleton skeleton) {
    auto violations = validate(cell);
    if (!violations.empty()) throw std::invalid_argument("dictionary: invalid cell for '" + task + "': " + violations.front());
    BaselineEntry e;
    e.ops = cell.distinct_ops();
    e.cell = std::move(cell);
    e.skeleton = skeleton;
    if (!index_.count(task)) order_.push_back(task);
    index_[task] = std::move(e);
  }

  bool contains(const std::string& task) const { return index_.count(task) > 0; }

  const BaselineEntry& at(const std::string& task) const {
    auto it = index_.find(task);
    if (it == index_.end()) throw std::out_of_range("dictionary has no task '" + task + "'");
    return it->second;
  }

  const std::vector<std::string>& task_names() const { return order_; }

  void save(std::ostream& os) const {
    for (const auto& name : order_) {
      os << "task " << name << "\n";
      write_cell(os, index_.at(name).cell);
    }
  }

  static BaselineDictionary load(std::istream& is, Skeleton skeleton = {}) {
    BaselineDictionary d;
    std::string line;
    while (std::getline(is, line)) {
      if (line.empty()) continue;
      std::istringstream ls(line);
      std::string tag, name;
      if (!(ls >> tag >> name) || tag != "task")
        throw std::invalid_argument("dictionary parse: expected 'task <name>', got '" + line + "'");
      d.put(name, read_cell(is), skeleton);
    }
    return d;
  }

 private:
  std::map<std::string, BaselineEntry> index_;
  std::vector<std::string> order_;
};

/// Sampler restricted to the closest task's stored node count and op set;
/// with full_space the 10-op space at the stored node count is used instead.
inline CellSampler search_space_for(const BaselineDictionary& dict, const std::string& closest_task,
                                    bool full_space = false) {
  const BaselineEntry& e = dict.at(closest_task);
  if (full_space)
    return CellSampler(e.cell.num_nodes, std::vector<OperationKind>(kAllOperations.begin(), kAllOperations.end()));
  return CellSampler(e.cell.num_nodes, e.ops);
}

}  // namespace ftd
