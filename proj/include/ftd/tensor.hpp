#pragma once

#include <cmath>
#include <cstdint>
#include <numeric>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace ftd {

using Shape = std::vector<int>;

inline std::int64_t shape_numel(const Shape& s) {
  std::int64_t n = 1;
  for (int d : s) {
    if (d < 0) throw std::invalid_argument("negative dimension in shape");
    n *= d;
  }
  return n;
}

inline std::string shape_str(const Shape& s) {
  std::ostringstream os;
  os << '(';
  for (std::size_t i = 0; i < s.size(); ++i) os << (i ? "," : "") << s[i];
  os << ')';
  return os.str();
}

/// Dense row-major tensor of 64-bit floats.
struct TensorValue {
  Shape shape;
  std::vector<double> data;

  TensorValue() = default;
  TensorValue(Shape s, std::vector<double> d) : shape(std::move(s)), data(std::move(d)) {
    if (shape_numel(shape) != static_cast<std::int64_t>(data.size()))
      throw std::invalid_argument("tensor shape " + shape_str(shape) + " does not match data length " +
                                  std::to_string(data.size()));
  }

  static TensorValue zeros(Shape s) {
    auto n = shape_numel(s);
    return TensorValue(std::move(s), std::vector<double>(static_cast<std::size_t>(n), 0.0));
  }
  static TensorValue full(Shape s, double v) {
    auto n = shape_numel(s);
    return TensorValue(std::move(s), std::vector<double>(static_cast<std::size_t>(n), v));
  }
  static TensorValue scalar(double v) { return TensorValue(Shape{}, {v}); }

  std::int64_t numel() const { return static_cast<std::int64_t>(data.size()); }

  bool all_finite() const {
    for (double v : data)
      if (!std::isfinite(v)) return false;
    return true;
  }

  bool same_shape(const TensorValue& o) const { return shape == o.shape; }
};

inline bool operator==(const TensorValue& a, const TensorValue& b) {
  return a.shape == b.shape && a.data == b.data;
}

/// Parameter or gradient entry; sets are kept in declaration order.
struct NamedTensor {
  std::string name;
  TensorValue value;
};

using ParamSet = std::vector<NamedTensor>;

inline const TensorValue& find_tensor(const ParamSet& set, const std::string& name) {
  for (const auto& p : set)
    if (p.name == name) return p.value;
  throw std::out_of_range("no tensor named '" + name + "'");
}

inline std::int64_t total_numel(const ParamSet& set) {
  std::int64_t n = 0;
  for (const auto& p : set) n += p.value.numel();
  return n;
}

/// Concatenates every tensor of the set into one vector, in declaration order.
inline std::vector<double> flatten(const ParamSet& set) {
  std::vector<double> out;
  out.reserve(static_cast<std::size_t>(total_numel(set)));
  for (const auto& p : set) out.insert(out.end(), p.value.data.begin(), p.value.data.end());
  return out;
}

}  // namespace ftd
