#pragma once

// Reverse-mode differentiation over small dense networks. A ComputeGraph is
// built once for a fixed batch size (rebuilding is cheap at this scale),
// evaluated with forward(), and differentiated with backward(). Shapes are
// validated at build time; forward rejects non-finite activations.
//
// Conventions, fixed so every numeric oracle is unambiguous:
//   - convolution is cross-correlation (no kernel flip), zero padding
//   - average pooling divides by the full kernel area (padding included)
//   - mse is the mean over all elements, no 1/2 factor
//   - cross_entropy consumes probabilities (softmax output) and integer
//     class labels, and averages -log p[label] over the batch

#include <cmath>
#include <cstdint>
#include <limits>
#include <map>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "ftd/tensor.hpp"

namespace ftd {

enum class Op {
  Input,
  Target,
  Param,
  Matmul,
  Conv2d,
  MaxPool2d,
  AvgPool2d,
  Relu,
  Softmax,
  CrossEntropy,
  Mse,
  Add,
  Concat,
  Zero,
  Identity,
  Reshape,
  Scale,
};

inline const char* op_name(Op op) {
  switch (op) {
    case Op::Input: return "input";
    case Op::Target: return "target";
    case Op::Param: return "param";
    case Op::Matmul: return "matmul";
    case Op::Conv2d: return "conv2d";
    case Op::MaxPool2d: return "maxpool2d";
    case Op::AvgPool2d: return "avgpool2d";
    case Op::Relu: return "relu";
    case Op::Softmax: return "softmax";
    case Op::CrossEntropy: return "cross_entropy";
    case Op::Mse: return "mse";
    case Op::Add: return "add";
    case Op::Concat: return "concat";
    case Op::Zero: return "zero";
    case Op::Identity: return "identity";
    case Op::Reshape: return "reshape";
    case Op::Scale: return "scale";
  }
  return "?";
}

struct ConvAttrs {
  int stride = 1;
  int pad_h = 0;
  int pad_w = 0;
  int dilation = 1;
};

struct PoolAttrs {
  int kernel_h = 3;
  int kernel_w = 3;
  int stride = 1;
  int pad = 1;
};

class ComputeGraph {
 public:
  // ---- builders (return node ids; shapes validated immediately) ----

  int input(Shape s) {
    if (input_node_ >= 0) throw std::invalid_argument("graph already has an input node");
    input_node_ = add_node(Op::Input, {}, std::move(s));
    return input_node_;
  }

  int target(Shape s) {
    if (target_node_ >= 0) throw std::invalid_argument("graph already has a target node");
    target_node_ = add_node(Op::Target, {}, std::move(s));
    return target_node_;
  }

  int param(const std::string& name, TensorValue init) {
    if (param_index_.count(name)) throw std::invalid_argument("duplicate parameter '" + name + "'");
    Shape s = init.shape;
    int id = add_node(Op::Param, {}, std::move(s));
    nodes_[id].param = name;
    values_[id] = std::move(init);
    param_index_[name] = static_cast<int>(param_nodes_.size());
    param_nodes_.push_back(id);
    return id;
  }

  int matmul(int a, int b) {
    const Shape& sa = node_shape(a);
    const Shape& sb = node_shape(b);
    if (sa.size() != 2 || sb.size() != 2 || sa[1] != sb[0])
      throw std::invalid_argument(std::string("matmul: incompatible shapes ") + shape_str(sa) + " x " + shape_str(sb));
    return add_node(Op::Matmul, {a, b}, Shape{sa[0], sb[1]});
  }

  int conv2d(int x, int w, int bias, ConvAttrs attrs) {
    const Shape& sx = node_shape(x);
    const Shape& sw = node_shape(w);
    if (sx.size() != 4 || sw.size() != 4)
      throw std::invalid_argument(std::string("conv2d: need 4-d input and kernel, got ") + shape_str(sx) + " and " +
                                  shape_str(sw));
    if (sx[1] != sw[1])
      throw std::invalid_argument("conv2d: input channels " + std::to_string(sx[1]) + " != kernel channels " +
                                  std::to_string(sw[1]));
    if (bias >= 0) {
      const Shape& sbias = node_shape(bias);
      if (sbias.size() != 1 || sbias[0] != sw[0])
        throw std::invalid_argument("conv2d: bias shape " + shape_str(sbias) + " does not match out channels " +
                                    std::to_string(sw[0]));
    }
    int ho = out_extent(sx[2], sw[2], attrs.pad_h, attrs.stride, attrs.dilation);
    int wo = out_extent(sx[3], sw[3], attrs.pad_w, attrs.stride, attrs.dilation);
    if (ho <= 0 || wo <= 0)
      throw std::invalid_argument(std::string("conv2d: empty output for input ") + shape_str(sx) + " kernel " +
                                  shape_str(sw));
    std::vector<int> in = {x, w};
    if (bias >= 0) in.push_back(bias);
    int id = add_node(Op::Conv2d, std::move(in), Shape{sx[0], sw[0], ho, wo});
    nodes_[id].conv = attrs;
    return id;
  }

  int max_pool2d(int x, PoolAttrs attrs) { return pool_node(Op::MaxPool2d, x, attrs); }
  int avg_pool2d(int x, PoolAttrs attrs) { return pool_node(Op::AvgPool2d, x, attrs); }

  int relu(int x) { return add_node(Op::Relu, {x}, node_shape(x)); }

  int softmax(int x) {
    const Shape& s = node_shape(x);
    if (s.empty()) throw std::invalid_argument("softmax: scalar input");
    return add_node(Op::Softmax, {x}, s);
  }

  int cross_entropy(int probs, int labels) {
    const Shape& sp = node_shape(probs);
    const Shape& sl = node_shape(labels);
    if (sp.size() != 2) throw std::invalid_argument("cross_entropy: probabilities must be (batch,classes), got " + shape_str(sp));
    if (sl.size() != 1 || sl[0] != sp[0])
      throw std::invalid_argument("cross_entropy: labels shape " + shape_str(sl) + " does not match batch " +
                                  std::to_string(sp[0]));
    return add_node(Op::CrossEntropy, {probs, labels}, Shape{});
  }

  int mse(int pred, int target) {
    if (node_shape(pred) != node_shape(target))
      throw std::invalid_argument(std::string("mse: shape mismatch ") + shape_str(node_shape(pred)) + " vs " +
                                  shape_str(node_shape(target)));
    return add_node(Op::Mse, {pred, target}, Shape{});
  }

  int add(int a, int b) {
    const Shape& sa = node_shape(a);
    const Shape& sb = node_shape(b);
    bool bias_style = sa.size() == 2 && sb.size() == 1 && sa[1] == sb[0];
    if (sa != sb && !bias_style)
      throw std::invalid_argument(std::string("add: shape mismatch ") + shape_str(sa) + " vs " + shape_str(sb));
    return add_node(Op::Add, {a, b}, sa);
  }

  int concat(int a, int b, int axis) {
    const Shape& sa = node_shape(a);
    const Shape& sb = node_shape(b);
    if (sa.size() != sb.size() || axis < 0 || axis >= static_cast<int>(sa.size()))
      throw std::invalid_argument(std::string("concat: incompatible ranks ") + shape_str(sa) + " vs " + shape_str(sb));
    Shape out = sa;
    for (std::size_t i = 0; i < sa.size(); ++i) {
      if (static_cast<int>(i) == axis) continue;
      if (sa[i] != sb[i])
        throw std::invalid_argument(std::string("concat: shape mismatch off axis ") + shape_str(sa) + " vs " +
                                    shape_str(sb));
    }
    out[static_cast<std::size_t>(axis)] += sb[static_cast<std::size_t>(axis)];
    int id = add_node(Op::Concat, {a, b}, std::move(out));
    nodes_[id].axis = axis;
    return id;
  }

  int zero(int x) { return add_node(Op::Zero, {x}, node_shape(x)); }
  int identity(int x) { return add_node(Op::Identity, {x}, node_shape(x)); }

  int reshape(int x, Shape s) {
    if (shape_numel(s) != shape_numel(node_shape(x)))
      throw std::invalid_argument(std::string("reshape: ") + shape_str(node_shape(x)) + " to " + shape_str(s) +
                                  " changes element count");
    return add_node(Op::Reshape, {x}, std::move(s));
  }

  int scale(int x, double alpha) {
    int id = add_node(Op::Scale, {x}, node_shape(x));
    nodes_[id].alpha = alpha;
    return id;
  }

  // ---- parameters ----

  const std::vector<int>& param_nodes() const { return param_nodes_; }

  std::vector<std::string> param_names() const {
    std::vector<std::string> out;
    out.reserve(param_nodes_.size());
    for (int id : param_nodes_) out.push_back(nodes_[static_cast<std::size_t>(id)].param);
    return out;
  }

  TensorValue& param_value(const std::string& name) {
    auto it = param_index_.find(name);
    if (it == param_index_.end()) throw std::out_of_range("no parameter '" + name + "'");
    return values_[static_cast<std::size_t>(param_nodes_[static_cast<std::size_t>(it->second)])];
  }

  ParamSet get_params() const {
    ParamSet out;
    out.reserve(param_nodes_.size());
    for (int id : param_nodes_)
      out.push_back({nodes_[static_cast<std::size_t>(id)].param, values_[static_cast<std::size_t>(id)]});
    return out;
  }

  void set_params(const ParamSet& params) {
    for (const auto& p : params) {
      TensorValue& slot = param_value(p.name);
      if (slot.shape != p.value.shape)
        throw std::invalid_argument("parameter '" + p.name + "' shape " + shape_str(p.value.shape) +
                                    " does not match declared " + shape_str(slot.shape));
      slot = p.value;
    }
  }

  // ---- execution ----

  int output_node() const {
    if (nodes_.empty()) throw std::logic_error("empty graph");
    return static_cast<int>(nodes_.size()) - 1;
  }

  /// Evaluates every node in declaration order and returns the last node's
  /// value. Placeholder tensors are required iff declared.
  const TensorValue& forward(const TensorValue* in, const TensorValue* tgt) {
    bind(input_node_, in, "input");
    bind(target_node_, tgt, "target");
    for (std::size_t i = 0; i < nodes_.size(); ++i) {
      eval_node(static_cast<int>(i));
      if (!values_[i].all_finite())
        throw std::runtime_error(std::string("non-finite value in ") + op_name(nodes_[i].op) + " node " +
                                 std::to_string(i));
    }
    forward_done_ = true;
    return values_[nodes_.size() - 1];
  }

  const TensorValue& forward(const TensorValue& in, const TensorValue& tgt) { return forward(&in, &tgt); }
  const TensorValue& forward(const TensorValue& in) { return forward(&in, nullptr); }
  const TensorValue& forward() { return forward(nullptr, nullptr); }

  /// Convenience for loss graphs: forward and return the scalar value.
  double forward_loss(const TensorValue& in, const TensorValue& tgt) {
    const TensorValue& out = forward(&in, &tgt);
    if (out.numel() != 1) throw std::logic_error("forward_loss: output is not scalar");
    return out.data[0];
  }

  /// Reverse pass from the last node seeded with d(out) = 1 (scalar outputs).
  void backward() {
    const TensorValue& out = value(output_node());
    if (out.numel() != 1) throw std::logic_error("backward: output is not scalar, use backward_from");
    TensorValue seed = out;
    seed.data[0] = 1.0;
    backward_from(seed);
  }

  /// Reverse pass with an injected output adjoint (same shape as the output).
  void backward_from(const TensorValue& out_grad) {
    if (!forward_done_) throw std::logic_error("backward called before forward");
    if (out_grad.shape != nodes_.back().shape)
      throw std::invalid_argument("output gradient shape " + shape_str(out_grad.shape) + " does not match output " +
                                  shape_str(nodes_.back().shape));
    grads_.assign(nodes_.size(), TensorValue{});
    for (std::size_t i = 0; i < nodes_.size(); ++i) grads_[i] = TensorValue::zeros(nodes_[i].shape);
    grads_.back() = out_grad;
    for (int i = static_cast<int>(nodes_.size()) - 1; i >= 0; --i) backprop_node(i);
    backward_done_ = true;
  }

  const TensorValue& value(int node) const {
    check_node(node);
    return values_[static_cast<std::size_t>(node)];
  }

  const TensorValue& grad_of_node(int node) const {
    if (!backward_done_) throw std::logic_error("gradient requested before backward");
    check_node(node);
    return grads_[static_cast<std::size_t>(node)];
  }

  /// Gradient for every parameter, in declaration order.
  ParamSet gradients() const {
    if (!backward_done_) throw std::logic_error("gradient requested before backward");
    ParamSet out;
    out.reserve(param_nodes_.size());
    for (int id : param_nodes_)
      out.push_back({nodes_[static_cast<std::size_t>(id)].param, grads_[static_cast<std::size_t>(id)]});
    return out;
  }

  bool has_input() const { return input_node_ >= 0; }
  bool has_target() const { return target_node_ >= 0; }
  const Shape& input_shape() const { return node_shape(require(input_node_, "input")); }
  const Shape& target_shape() const { return node_shape(require(target_node_, "target")); }
  const Shape& node_shape(int id) const {
    check_node(id);
    return nodes_[static_cast<std::size_t>(id)].shape;
  }

 private:
  struct Node {
    Op op;
    std::vector<int> in;
    Shape shape;
    ConvAttrs conv;
    PoolAttrs pool;
    int axis = 0;
    double alpha = 1.0;
    std::string param;
  };

  static int out_extent(int in, int k, int pad, int stride, int dil) {
    return (in + 2 * pad - dil * (k - 1) - 1) / stride + 1;
  }

  int require(int id, const char* what) const {
    if (id < 0) throw std::logic_error(std::string("graph has no ") + what + " node");
    return id;
  }

  void check_node(int id) const {
    if (id < 0 || id >= static_cast<int>(nodes_.size())) throw std::out_of_range("bad node id");
  }

  int add_node(Op op, std::vector<int> in, Shape shape) {
    for (int i : in) check_node(i);
    nodes_.push_back(Node{op, std::move(in), std::move(shape), {}, {}, 0, 1.0, {}});
    values_.emplace_back();
    return static_cast<int>(nodes_.size()) - 1;
  }

  int pool_node(Op op, int x, PoolAttrs attrs) {
    const Shape& s = node_shape(x);
    if (s.size() != 4) throw std::invalid_argument(std::string("pool: need 4-d input, got ") + shape_str(s));
    int ho = out_extent(s[2], attrs.kernel_h, attrs.pad, attrs.stride, 1);
    int wo = out_extent(s[3], attrs.kernel_w, attrs.pad, attrs.stride, 1);
    if (ho <= 0 || wo <= 0) throw std::invalid_argument(std::string("pool: empty output for input ") + shape_str(s));
    int id = add_node(op, {x}, Shape{s[0], s[1], ho, wo});
    nodes_[id].pool = attrs;
    return id;
  }

  void bind(int node, const TensorValue* v, const char* what) {
    if (node < 0) {
      return;  // placeholder not declared; extra tensors are ignored
    }
    if (!v) throw std::invalid_argument(std::string(what) + " tensor required but not provided");
    if (v->shape != nodes_[static_cast<std::size_t>(node)].shape)
      throw std::invalid_argument(std::string(what) + " shape " + shape_str(v->shape) + " does not match declared " +
                                  shape_str(nodes_[static_cast<std::size_t>(node)].shape));
    values_[static_cast<std::size_t>(node)] = *v;
  }

  const TensorValue& in_val(const Node& n, std::size_t i) const {
    return values_[static_cast<std::size_t>(n.in[i])];
  }
  TensorValue& in_grad(const Node& n, std::size_t i) { return grads_[static_cast<std::size_t>(n.in[i])]; }

  // ---- forward kernels ----

  void eval_node(int id) {
    Node& n = nodes_[static_cast<std::size_t>(id)];
    TensorValue& out = values_[static_cast<std::size_t>(id)];
    switch (n.op) {
      case Op::Input:
      case Op::Target:
      case Op::Param:
        if (out.shape != n.shape) throw std::logic_error(std::string(op_name(n.op)) + " value not bound");
        return;
      case Op::Matmul: {
        const TensorValue& a = in_val(n, 0);
        const TensorValue& b = in_val(n, 1);
        int m = a.shape[0], k = a.shape[1], p = b.shape[1];
        out = TensorValue::zeros(n.shape);
        for (int i = 0; i < m; ++i)
          for (int t = 0; t < k; ++t) {
            double av = a.data[static_cast<std::size_t>(i * k + t)];
            if (av == 0.0) continue;
            const double* brow = &b.data[static_cast<std::size_t>(t * p)];
            double* orow = &out.data[static_cast<std::size_t>(i * p)];
            for (int j = 0; j < p; ++j) orow[j] += av * brow[j];
          }
        return;
      }
      case Op::Conv2d: return conv_forward(n, out);
      case Op::MaxPool2d: return maxpool_forward(id, n, out);
      case Op::AvgPool2d: return avgpool_forward(n, out);
      case Op::Relu: {
        const TensorValue& x = in_val(n, 0);
        out = x;
        for (double& v : out.data) v = v > 0.0 ? v : 0.0;
        return;
      }
      case Op::Softmax: return softmax_forward(n, out);
      case Op::CrossEntropy: return cross_entropy_forward(n, out);
      case Op::Mse: {
        const TensorValue& p = in_val(n, 0);
        const TensorValue& t = in_val(n, 1);
        double acc = 0.0;
        for (std::size_t i = 0; i < p.data.size(); ++i) {
          double d = p.data[i] - t.data[i];
          acc += d * d;
        }
        out = TensorValue::scalar(acc / static_cast<double>(p.data.size()));
        return;
      }
      case Op::Add: {
        const TensorValue& a = in_val(n, 0);
        const TensorValue& b = in_val(n, 1);
        out = a;
        if (a.shape == b.shape) {
          for (std::size_t i = 0; i < out.data.size(); ++i) out.data[i] += b.data[i];
        } else {  // (batch,d) + (d,)
          int batch = a.shape[0], d = a.shape[1];
          for (int i = 0; i < batch; ++i)
            for (int j = 0; j < d; ++j) out.data[static_cast<std::size_t>(i * d + j)] += b.data[static_cast<std::size_t>(j)];
        }
        return;
      }
      case Op::Concat: return concat_forward(n, out);
      case Op::Zero: out = TensorValue::zeros(n.shape); return;
      case Op::Identity: out = in_val(n, 0); return;
      case Op::Reshape:
        out = in_val(n, 0);
        out.shape = n.shape;
        return;
      case Op::Scale: {
        out = in_val(n, 0);
        for (double& v : out.data) v *= n.alpha;
        return;
      }
    }
  }

  void conv_forward(const Node& n, TensorValue& out) {
    const TensorValue& x = in_val(n, 0);
    const TensorValue& w = in_val(n, 1);
    const double* bias = n.in.size() > 2 ? in_val(n, 2).data.data() : nullptr;
    int batch = x.shape[0], ci = x.shape[1], h = x.shape[2], wd = x.shape[3];
    int co = w.shape[0], kh = w.shape[2], kw = w.shape[3];
    int ho = n.shape[2], wo = n.shape[3];
    const ConvAttrs& a = n.conv;
    out = TensorValue::zeros(n.shape);
    for (int b = 0; b < batch; ++b)
      for (int oc = 0; oc < co; ++oc)
        for (int oh = 0; oh < ho; ++oh)
          for (int ow = 0; ow < wo; ++ow) {
            double acc = bias ? bias[oc] : 0.0;
            for (int ic = 0; ic < ci; ++ic) {
              const double* xp = &x.data[static_cast<std::size_t>(((b * ci + ic) * h) * wd)];
              const double* wp = &w.data[static_cast<std::size_t>(((oc * ci + ic) * kh) * kw)];
              for (int r = 0; r < kh; ++r) {
                int ih = oh * a.stride - a.pad_h + r * a.dilation;
                if (ih < 0 || ih >= h) continue;
                for (int c = 0; c < kw; ++c) {
                  int iw = ow * a.stride - a.pad_w + c * a.dilation;
                  if (iw < 0 || iw >= wd) continue;
                  acc += xp[ih * wd + iw] * wp[r * kw + c];
                }
              }
            }
            out.data[static_cast<std::size_t>(((b * co + oc) * ho + oh) * wo + ow)] = acc;
          }
  }

  void maxpool_forward(int id, const Node& n, TensorValue& out) {
    const TensorValue& x = in_val(n, 0);
    int batch = x.shape[0], ch = x.shape[1], h = x.shape[2], wd = x.shape[3];
    int ho = n.shape[2], wo = n.shape[3];
    const PoolAttrs& a = n.pool;
    out = TensorValue::zeros(n.shape);
    auto& arg = pool_argmax_[id];
    arg.assign(out.data.size(), -1);
    for (int b = 0; b < batch; ++b)
      for (int c = 0; c < ch; ++c) {
        const double* xp = &x.data[static_cast<std::size_t>((b * ch + c) * h * wd)];
        for (int oh = 0; oh < ho; ++oh)
          for (int ow = 0; ow < wo; ++ow) {
            double best = -std::numeric_limits<double>::infinity();
            std::int64_t best_idx = -1;
            for (int r = 0; r < a.kernel_h; ++r) {
              int ih = oh * a.stride - a.pad + r;
              if (ih < 0 || ih >= h) continue;
              for (int cc = 0; cc < a.kernel_w; ++cc) {
                int iw = ow * a.stride - a.pad + cc;
                if (iw < 0 || iw >= wd) continue;
                double v = xp[ih * wd + iw];
                if (v > best) {
                  best = v;
                  best_idx = (b * ch + c) * static_cast<std::int64_t>(h * wd) + ih * wd + iw;
                }
              }
            }
            std::size_t oidx = static_cast<std::size_t>(((b * ch + c) * ho + oh) * wo + ow);
            out.data[oidx] = best_idx >= 0 ? best : 0.0;
            arg[oidx] = best_idx;
          }
      }
  }

  void avgpool_forward(const Node& n, TensorValue& out) {
    const TensorValue& x = in_val(n, 0);
    int batch = x.shape[0], ch = x.shape[1], h = x.shape[2], wd = x.shape[3];
    int ho = n.shape[2], wo = n.shape[3];
    const PoolAttrs& a = n.pool;
    double inv_area = 1.0 / (a.kernel_h * a.kernel_w);
    out = TensorValue::zeros(n.shape);
    for (int b = 0; b < batch; ++b)
      for (int c = 0; c < ch; ++c) {
        const double* xp = &x.data[static_cast<std::size_t>((b * ch + c) * h * wd)];
        for (int oh = 0; oh < ho; ++oh)
          for (int ow = 0; ow < wo; ++ow) {
            double acc = 0.0;
            for (int r = 0; r < a.kernel_h; ++r) {
              int ih = oh * a.stride - a.pad + r;
              if (ih < 0 || ih >= h) continue;
              for (int cc = 0; cc < a.kernel_w; ++cc) {
                int iw = ow * a.stride - a.pad + cc;
                if (iw < 0 || iw >= wd) continue;
                acc += xp[ih * wd + iw];
              }
            }
            out.data[static_cast<std::size_t>(((b * ch + c) * ho + oh) * wo + ow)] = acc * inv_area;
          }
      }
  }

  void softmax_forward(const Node& n, TensorValue& out) {
    const TensorValue& x = in_val(n, 0);
    int k = x.shape.back();
    std::int64_t rows = x.numel() / k;
    out = x;
    for (std::int64_t r = 0; r < rows; ++r) {
      double* row = &out.data[static_cast<std::size_t>(r * k)];
      double mx = row[0];
      for (int j = 1; j < k; ++j) mx = std::max(mx, row[j]);
      double sum = 0.0;
      for (int j = 0; j < k; ++j) {
        row[j] = std::exp(row[j] - mx);
        sum += row[j];
      }
      for (int j = 0; j < k; ++j) row[j] /= sum;
    }
  }

  void cross_entropy_forward(const Node& n, TensorValue& out) {
    const TensorValue& p = in_val(n, 0);
    const TensorValue& labels = in_val(n, 1);
    int batch = p.shape[0], k = p.shape[1];
    double acc = 0.0;
    for (int b = 0; b < batch; ++b) {
      int y = label_at(labels, b, k);
      double v = p.data[static_cast<std::size_t>(b * k + y)];
      acc -= std::log(std::max(v, 1e-300));
    }
    out = TensorValue::scalar(acc / batch);
  }

  void concat_forward(const Node& n, TensorValue& out) {
    const TensorValue& a = in_val(n, 0);
    const TensorValue& b = in_val(n, 1);
    out = TensorValue::zeros(n.shape);
    std::int64_t outer = 1, inner = 1;
    for (int i = 0; i < n.axis; ++i) outer *= a.shape[static_cast<std::size_t>(i)];
    for (std::size_t i = static_cast<std::size_t>(n.axis) + 1; i < a.shape.size(); ++i) inner *= a.shape[i];
    std::int64_t wa = a.shape[static_cast<std::size_t>(n.axis)] * inner;
    std::int64_t wb = b.shape[static_cast<std::size_t>(n.axis)] * inner;
    for (std::int64_t o = 0; o < outer; ++o) {
      std::copy_n(&a.data[static_cast<std::size_t>(o * wa)], wa, &out.data[static_cast<std::size_t>(o * (wa + wb))]);
      std::copy_n(&b.data[static_cast<std::size_t>(o * wb)], wb, &out.data[static_cast<std::size_t>(o * (wa + wb) + wa)]);
    }
  }

  static int label_at(const TensorValue& labels, int b, int num_classes) {
    double raw = labels.data[static_cast<std::size_t>(b)];
    int y = static_cast<int>(std::llround(raw));
    if (y < 0 || y >= num_classes || std::abs(raw - y) > 1e-9)
      throw std::invalid_argument("cross_entropy: label " + std::to_string(raw) + " outside 0.." +
                                  std::to_string(num_classes - 1));
    return y;
  }

  // ---- backward kernels ----

  void backprop_node(int id) {
    Node& n = nodes_[static_cast<std::size_t>(id)];
    const TensorValue& gy = grads_[static_cast<std::size_t>(id)];
    switch (n.op) {
      case Op::Input:
      case Op::Target:
      case Op::Param:
      case Op::Zero:
        return;
      case Op::Matmul: {
        const TensorValue& a = in_val(n, 0);
        const TensorValue& b = in_val(n, 1);
        TensorValue& ga = in_grad(n, 0);
        TensorValue& gb = in_grad(n, 1);
        int m = a.shape[0], k = a.shape[1], p = b.shape[1];
        for (int i = 0; i < m; ++i)
          for (int t = 0; t < k; ++t) {
            const double* gyrow = &gy.data[static_cast<std::size_t>(i * p)];
            const double* brow = &b.data[static_cast<std::size_t>(t * p)];
            double acc = 0.0;
            for (int j = 0; j < p; ++j) acc += gyrow[j] * brow[j];
            ga.data[static_cast<std::size_t>(i * k + t)] += acc;
            double av = a.data[static_cast<std::size_t>(i * k + t)];
            if (av != 0.0) {
              double* gbrow = &gb.data[static_cast<std::size_t>(t * p)];
              for (int j = 0; j < p; ++j) gbrow[j] += av * gyrow[j];
            }
          }
        return;
      }
      case Op::Conv2d: return conv_backward(n, gy);
      case Op::MaxPool2d: {
        const auto& arg = pool_argmax_.at(id);
        TensorValue& gx = in_grad(n, 0);
        for (std::size_t i = 0; i < gy.data.size(); ++i)
          if (arg[i] >= 0) gx.data[static_cast<std::size_t>(arg[i])] += gy.data[i];
        return;
      }
      case Op::AvgPool2d: return avgpool_backward(n, gy);
      case Op::Relu: {
        const TensorValue& x = in_val(n, 0);
        TensorValue& gx = in_grad(n, 0);
        for (std::size_t i = 0; i < x.data.size(); ++i)
          if (x.data[i] > 0.0) gx.data[i] += gy.data[i];
        return;
      }
      case Op::Softmax: {
        const TensorValue& s = values_[static_cast<std::size_t>(id)];
        TensorValue& gx = in_grad(n, 0);
        int k = s.shape.back();
        std::int64_t rows = s.numel() / k;
        for (std::int64_t r = 0; r < rows; ++r) {
          const double* sr = &s.data[static_cast<std::size_t>(r * k)];
          const double* gr = &gy.data[static_cast<std::size_t>(r * k)];
          double dot = 0.0;
          for (int j = 0; j < k; ++j) dot += sr[j] * gr[j];
          double* gxr = &gx.data[static_cast<std::size_t>(r * k)];
          for (int j = 0; j < k; ++j) gxr[j] += sr[j] * (gr[j] - dot);
        }
        return;
      }
      case Op::CrossEntropy: {
        const TensorValue& p = in_val(n, 0);
        const TensorValue& labels = in_val(n, 1);
        TensorValue& gp = in_grad(n, 0);
        int batch = p.shape[0], k = p.shape[1];
        double g = gy.data[0] / batch;
        for (int b = 0; b < batch; ++b) {
          int y = label_at(labels, b, k);
          double v = std::max(p.data[static_cast<std::size_t>(b * k + y)], 1e-300);
          gp.data[static_cast<std::size_t>(b * k + y)] -= g / v;
        }
        return;
      }
      case Op::Mse: {
        const TensorValue& p = in_val(n, 0);
        const TensorValue& t = in_val(n, 1);
        TensorValue& gp = in_grad(n, 0);
        TensorValue& gt = in_grad(n, 1);
        double g = 2.0 * gy.data[0] / static_cast<double>(p.data.size());
        for (std::size_t i = 0; i < p.data.size(); ++i) {
          double d = g * (p.data[i] - t.data[i]);
          gp.data[i] += d;
          gt.data[i] -= d;
        }
        return;
      }
      case Op::Add: {
        const TensorValue& a = in_val(n, 0);
        const TensorValue& b = in_val(n, 1);
        TensorValue& ga = in_grad(n, 0);
        TensorValue& gb = in_grad(n, 1);
        if (a.shape == b.shape) {
          for (std::size_t i = 0; i < gy.data.size(); ++i) {
            ga.data[i] += gy.data[i];
            gb.data[i] += gy.data[i];
          }
        } else {
          int batch = a.shape[0], d = a.shape[1];
          for (int i = 0; i < batch; ++i)
            for (int j = 0; j < d; ++j) {
              double g = gy.data[static_cast<std::size_t>(i * d + j)];
              ga.data[static_cast<std::size_t>(i * d + j)] += g;
              gb.data[static_cast<std::size_t>(j)] += g;
            }
        }
        return;
      }
      case Op::Concat: {
        const TensorValue& a = in_val(n, 0);
        const TensorValue& b = in_val(n, 1);
        TensorValue& ga = in_grad(n, 0);
        TensorValue& gb = in_grad(n, 1);
        std::int64_t outer = 1, inner = 1;
        for (int i = 0; i < n.axis; ++i) outer *= a.shape[static_cast<std::size_t>(i)];
        for (std::size_t i = static_cast<std::size_t>(n.axis) + 1; i < a.shape.size(); ++i) inner *= a.shape[i];
        std::int64_t wa = a.shape[static_cast<std::size_t>(n.axis)] * inner;
        std::int64_t wb = b.shape[static_cast<std::size_t>(n.axis)] * inner;
        for (std::int64_t o = 0; o < outer; ++o) {
          for (std::int64_t i = 0; i < wa; ++i)
            ga.data[static_cast<std::size_t>(o * wa + i)] += gy.data[static_cast<std::size_t>(o * (wa + wb) + i)];
          for (std::int64_t i = 0; i < wb; ++i)
            gb.data[static_cast<std::size_t>(o * wb + i)] += gy.data[static_cast<std::size_t>(o * (wa + wb) + wa + i)];
        }
        return;
      }
      case Op::Identity: {
        TensorValue& gx = in_grad(n, 0);
        for (std::size_t i = 0; i < gy.data.size(); ++i) gx.data[i] += gy.data[i];
        return;
      }
      case Op::Reshape: {
        TensorValue& gx = in_grad(n, 0);
        for (std::size_t i = 0; i < gy.data.size(); ++i) gx.data[i] += gy.data[i];
        return;
      }
      case Op::Scale: {
        TensorValue& gx = in_grad(n, 0);
        for (std::size_t i = 0; i < gy.data.size(); ++i) gx.data[i] += n.alpha * gy.data[i];
        return;
      }
    }
  }

  void conv_backward(const Node& n, const TensorValue& gy) {
    const TensorValue& x = in_val(n, 0);
    const TensorValue& w = in_val(n, 1);
    TensorValue& gx = in_grad(n, 0);
    TensorValue& gw = in_grad(n, 1);
    double* gbias = n.in.size() > 2 ? in_grad(n, 2).data.data() : nullptr;
    int batch = x.shape[0], ci = x.shape[1], h = x.shape[2], wd = x.shape[3];
    int co = w.shape[0], kh = w.shape[2], kw = w.shape[3];
    int ho = n.shape[2], wo = n.shape[3];
    const ConvAttrs& a = n.conv;
    for (int b = 0; b < batch; ++b)
      for (int oc = 0; oc < co; ++oc)
        for (int oh = 0; oh < ho; ++oh)
          for (int ow = 0; ow < wo; ++ow) {
            double g = gy.data[static_cast<std::size_t>(((b * co + oc) * ho + oh) * wo + ow)];
            if (gbias) gbias[oc] += g;
            if (g == 0.0) continue;
            for (int ic = 0; ic < ci; ++ic) {
              const double* xp = &x.data[static_cast<std::size_t>((b * ci + ic) * h * wd)];
              double* gxp = &gx.data[static_cast<std::size_t>((b * ci + ic) * h * wd)];
              const double* wp = &w.data[static_cast<std::size_t>((oc * ci + ic) * kh * kw)];
              double* gwp = &gw.data[static_cast<std::size_t>((oc * ci + ic) * kh * kw)];
              for (int r = 0; r < kh; ++r) {
                int ih = oh * a.stride - a.pad_h + r * a.dilation;
                if (ih < 0 || ih >= h) continue;
                for (int c = 0; c < kw; ++c) {
                  int iw = ow * a.stride - a.pad_w + c * a.dilation;
                  if (iw < 0 || iw >= wd) continue;
                  gwp[r * kw + c] += g * xp[ih * wd + iw];
                  gxp[ih * wd + iw] += g * wp[r * kw + c];
                }
              }
            }
          }
  }

  void avgpool_backward(const Node& n, const TensorValue& gy) {
    const TensorValue& x = in_val(n, 0);
    TensorValue& gx = in_grad(n, 0);
    int batch = x.shape[0], ch = x.shape[1], h = x.shape[2], wd = x.shape[3];
    int ho = n.shape[2], wo = n.shape[3];
    const PoolAttrs& a = n.pool;
    double inv_area = 1.0 / (a.kernel_h * a.kernel_w);
    for (int b = 0; b < batch; ++b)
      for (int c = 0; c < ch; ++c) {
        double* gxp = &gx.data[static_cast<std::size_t>((b * ch + c) * h * wd)];
        for (int oh = 0; oh < ho; ++oh)
          for (int ow = 0; ow < wo; ++ow) {
            double g = gy.data[static_cast<std::size_t>(((b * ch + c) * ho + oh) * wo + ow)] * inv_area;
            if (g == 0.0) continue;
            for (int r = 0; r < a.kernel_h; ++r) {
              int ih = oh * a.stride - a.pad + r;
              if (ih < 0 || ih >= h) continue;
              for (int cc = 0; cc < a.kernel_w; ++cc) {
                int iw = ow * a.stride - a.pad + cc;
                if (iw < 0 || iw >= wd) continue;
                gxp[ih * wd + iw] += g;
              }
            }
          }
      }
  }

  std::vector<Node> nodes_;
  std::vector<TensorValue> values_;
  std::vector<TensorValue> grads_;
  std::map<int, std::vector<std::int64_t>> pool_argmax_;
  std::vector<int> param_nodes_;
  std::map<std::string, int> param_index_;
  int input_node_ = -1;
  int target_node_ = -1;
  bool forward_done_ = false;
  bool backward_done_ = false;
};

/// One (input, target) pair.
struct Sample {
  TensorValue input;
  TensorValue target;
};

/// Loops single-sample passes over a batch-1 loss graph; one gradient set per
/// sample, equal to backward on that sample alone.
inline std::vector<ParamSet> per_sample_grads(ComputeGraph& g, const std::vector<Sample>& samples) {
  if (samples.empty()) throw std::invalid_argument("per_sample_grads: empty dataset");
  std::vector<ParamSet> out;
  out.reserve(samples.size());
  for (const auto& s : samples) {
    g.forward(s.input, s.target);
    g.backward();
    out.push_back(g.gradients());
  }
  return out;
}

}  // namespace ftd
