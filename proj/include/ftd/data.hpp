#pragma once

// Task and dataset abstractions: train/test splits, balanced subsampling,
// derived-label tasks, and the synthetic Gaussian-blob task family. All
// values are immutable after construction and deterministic under seeds.

#include <algorithm>
#include <cstdint>
#include <functional>
#include <map>
#include <set>
#include <stdexcept>
#include <string>
#include <vector>

#include "ftd/rng.hpp"
#include "ftd/tensor.hpp"

namespace ftd {

/// A batch of inputs with integer labels. Inputs are stored as one tensor
/// whose first dimension indexes samples.
struct Dataset {
  TensorValue inputs;       // shape (n, ...sample dims)
  std::vector<int> labels;  // length n

  int size() const { return inputs.shape.empty() ? 0 : inputs.shape[0]; }

  Shape sample_shape() const {
    if (inputs.shape.empty()) throw std::logic_error("empty dataset has no sample shape");
    return Shape(inputs.shape.begin() + 1, inputs.shape.end());
  }

  std::int64_t sample_numel() const { return shape_numel(sample_shape()); }

  /// Copies sample i as a (1, ...) tensor.
  TensorValue sample(int i) const {
    if (i < 0 || i >= size()) throw std::out_of_range("sample index " + std::to_string(i));
    std::int64_t n = sample_numel();
    Shape s = inputs.shape;
    s[0] = 1;
    TensorValue out = TensorValue::zeros(s);
    std::copy_n(inputs.data.begin() + static_cast<std::ptrdiff_t>(i * n), n, out.data.begin());
    return out;
  }

  /// Gathers the given rows into a new dataset, in the given order.
  Dataset select(const std::vector<int>& rows) const {
    std::int64_t n = sample_numel();
    Shape s = inputs.shape;
    s[0] = static_cast<int>(rows.size());
    Dataset out;
    out.inputs = TensorValue::zeros(s);
    out.labels.reserve(rows.size());
    for (std::size_t r = 0; r < rows.size(); ++r) {
      int i = rows[r];
      if (i < 0 || i >= size()) throw std::out_of_range("row index " + std::to_string(i));
      std::copy_n(inputs.data.begin() + static_cast<std::ptrdiff_t>(i * n), n,
                  out.inputs.data.begin() + static_cast<std::ptrdiff_t>(static_cast<std::int64_t>(r) * n));
      out.labels.push_back(labels[static_cast<std::size_t>(i)]);
    }
    return out;
  }

  std::map<int, int> class_histogram() const {
    std::map<int, int> h;
    for (int y : labels) ++h[y];
    return h;
  }
};

struct DatasetSplit {
  Dataset train;
  Dataset test;
};

enum class LossKind { CrossEntropy };

/// A learning task: a label semantics over a dataset split.
struct Task {
  std::string name;
  int num_classes = 2;
  std::function<int(int)> label_map;  // raw label -> task label
  DatasetSplit data;
  LossKind loss_kind = LossKind::CrossEntropy;
};

struct SyntheticFamilySpec {
  int input_dim = 64;
  std::vector<std::vector<double>> class_centers;
  double noise_scale = 0.3;
  int samples_per_class = 60;
  std::uint64_t seed = 0;
};

/// Keeps exactly per_class training samples of every class present in the
/// train split, drawn without replacement; the test split is untouched.
inline DatasetSplit balanced_subsample(const DatasetSplit& split, int per_class, std::uint64_t seed) {
  if (per_class < 1) throw std::invalid_argument("per_class must be >= 1");
  std::map<int, std::vector<int>> by_class;
  for (int i = 0; i < split.train.size(); ++i) by_class[split.train.labels[static_cast<std::size_t>(i)]].push_back(i);
  for (const auto& [cls, rows] : by_class)
    if (static_cast<int>(rows.size()) < per_class)
      throw std::invalid_argument("class " + std::to_string(cls) + " has only " + std::to_string(rows.size()) +
                                  " training samples, need " + std::to_string(per_class));
  Rng rng = make_rng(seed);
  std::vector<int> keep;
  for (auto& [cls, rows] : by_class) {  // std::map: ascending class order
    shuffle(rows, rng);
    keep.insert(keep.end(), rows.begin(), rows.begin() + per_class);
  }
  std::sort(keep.begin(), keep.end());  // preserve original sample order
  DatasetSplit out;
  out.train = split.train.select(keep);
  out.test = split.test;
  return out;
}

/// Builds a task by remapping raw labels; sample order is preserved.
inline Task derive_task(const DatasetSplit& base, std::function<int(int)> label_map, int num_classes,
                        std::string name) {
  if (num_classes < 2) throw std::invalid_argument("num_classes must be >= 2");
  if (base.train.size() == 0 || base.test.size() == 0)
    throw std::invalid_argument("derive_task: both splits must be nonempty");
  Task t;
  t.name = std::move(name);
  t.num_classes = num_classes;
  t.label_map = label_map;
  t.data = base;
  auto remap = [&](Dataset& d) {
    for (int& y : d.labels) {
      int mapped = label_map(y);
      if (mapped < 0 || mapped >= num_classes)
        throw std::invalid_argument("label_map sent raw label " + std::to_string(y) + " to " +
                                    std::to_string(mapped) + ", outside 0.." + std::to_string(num_classes - 1));
      y = mapped;
    }
  };
  remap(t.data.train);
  remap(t.data.test);
  return t;
}

/// Gaussian blobs around the class centers, split 80/20 per class into
/// train/test. Bitwise deterministic under the spec seed.
inline DatasetSplit generate_synthetic_family(const SyntheticFamilySpec& spec) {
  int k = static_cast<int>(spec.class_centers.size());
  if (k < 2) throw std::invalid_argument("need at least 2 classes");
  if (spec.samples_per_class < 1) throw std::invalid_argument("samples_per_class must be >= 1");
  if (spec.noise_scale < 0) throw std::invalid_argument("noise_scale must be nonnegative");
  for (const auto& c : spec.class_centers)
    if (static_cast<int>(c.size()) != spec.input_dim)
      throw std::invalid_argument("class center dimension does not match input_dim");
  if (spec.noise_scale == 0.0) {
    for (int a = 0; a < k; ++a)
      for (int b = a + 1; b < k; ++b)
        if (spec.class_centers[static_cast<std::size_t>(a)] == spec.class_centers[static_cast<std::size_t>(b)])
          throw std::invalid_argument("degenerate family: duplicate centers for classes " + std::to_string(a) +
                                      " and " + std::to_string(b) + " with zero noise");
  }

  Rng rng = make_rng(spec.seed);
  int n_train_per = std::max(1, static_cast<int>(spec.samples_per_class * 8 / 10));
  if (n_train_per >= spec.samples_per_class && spec.samples_per_class > 1) n_train_per = spec.samples_per_class - 1;
  int n_test_per = spec.samples_per_class - n_train_per;

  auto gen_block = [&](int per_class) {
    Dataset d;
    d.inputs = TensorValue::zeros({k * per_class, spec.input_dim});
    d.labels.resize(static_cast<std::size_t>(k * per_class));
    std::size_t pos = 0;
    for (int c = 0; c < k; ++c)
      for (int s = 0; s < per_class; ++s) {
        for (int j = 0; j < spec.input_dim; ++j)
          d.inputs.data[pos * static_cast<std::size_t>(spec.input_dim) + static_cast<std::size_t>(j)] =
              spec.class_centers[static_cast<std::size_t>(c)][static_cast<std::size_t>(j)] +
              spec.noise_scale * normal01(rng);
        d.labels[pos] = c;
        ++pos;
      }
    return d;
  };

  DatasetSplit out;
  out.train = gen_block(n_train_per);
  out.test = gen_block(n_test_per);
  return out;
}

/// Seeded random centers, a shared default for the built-in family.
inline std::vector<std::vector<double>> random_centers(int classes, int dim, double scale, std::uint64_t seed) {
  Rng rng = make_rng(seed);
  std::vector<std::vector<double>> centers(static_cast<std::size_t>(classes));
  for (auto& c : centers) {
    c.resize(static_cast<std::size_t>(dim));
    for (double& v : c) v = scale * normal01(rng);
  }
  return centers;
}

// ---- the built-in four-task family -----------------------------------------
//
// Mirrors the structure used throughout the experiments: two binary "detect
// one raw class" tasks, a {0,1,2,3,else} grouping, and the full raw
// classification. All four tasks are declared over one shared label space so
// that a single network spec (one output width) serves every task and their
// Fisher vectors stay comparable.

struct FamilyOptions {
  int shared_classes = 10;  // label-space width shared by every task
  int per_class_train = 0;  // balanced subsample size; 0 = no balancing
  std::uint64_t balance_seed = 1;
};

inline std::vector<Task> make_task_family(const DatasetSplit& base, const FamilyOptions& opt) {
  auto detect = [](int target) {
    return [target](int raw) { return raw == target ? 1 : 0; };
  };
  auto group5 = [](int raw) { return raw <= 3 ? raw : 4; };
  auto identity = [](int raw) { return raw; };

  std::vector<Task> tasks;
  tasks.push_back(derive_task(base, detect(0), opt.shared_classes, "detect0"));
  tasks.push_back(derive_task(base, detect(6), opt.shared_classes, "detect6"));
  tasks.push_back(derive_task(base, group5, opt.shared_classes, "fiveway"));
  tasks.push_back(derive_task(base, identity, opt.shared_classes, "full"));
  if (opt.per_class_train > 0)
    for (auto& t : tasks) t.data = balanced_subsample(t.data, opt.per_class_train, opt.balance_seed);
  return tasks;
}

}  // namespace ftd
