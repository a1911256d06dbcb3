#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <string>
#include <vector>

#include "sgspen/errors.hpp"
#include "sgspen/tensor.hpp"

namespace sgspen {

struct NodeId {
  std::size_t index = 0;
  friend bool operator==(NodeId, NodeId) = default;
};

using InputMap = std::map<std::string, Array>;

struct Gradients {
  ParamSet params;
  InputMap inputs;
};

/// A fixed computation from named inputs and parameters to one scalar,
/// differentiated in reverse mode.
///
/// The graph is built once and evaluated many times. Each node keeps its
/// last value and adjoint, so a Graph must not be evaluated from two threads
/// at once. Copies are independent.
///
/// Inputs may be marked "variable": after one full forward(), reforward()
/// recomputes only nodes downstream of the variable inputs and
/// backward_variable() returns gradients for those inputs alone. This is the
/// inner loop of gradient-based inference, where x and the parameters stay
/// fixed and only y moves.
class Graph {
 public:
  enum class Op {
    input,
    param,
    constant,
    matvec,
    affine,
    add,
    mul,
    scale,
    relu,
    softplus,
    softmax,
    sum,
    dot,
    concat,
    select,
    mean_pool,
  };

  // ---- construction -------------------------------------------------------

  NodeId input(const std::string& name, std::size_t size) {
    for (const auto& n : nodes_)
      if (n.op == Op::input && n.name == name)
        throw ContractError("Graph: duplicate input '" + name + "'");
    Node n{Op::input};
    n.name = name;
    n.value = Array({size});
    return push(std::move(n));
  }

  NodeId param(const std::string& name) {
    for (std::size_t i = 0; i < nodes_.size(); ++i)
      if (nodes_[i].op == Op::param && nodes_[i].name == name) return NodeId{i};
    Node n{Op::param};
    n.name = name;
    return push(std::move(n));
  }

  NodeId constant(Array value) {
    Node n{Op::constant};
    n.value = std::move(value);
    return push(std::move(n));
  }

  /// W x for a param/constant matrix W of shape [m, n].
  NodeId matvec(NodeId w, NodeId x) { return push(make(Op::matvec, {w, x})); }
  /// W x + b.
  NodeId affine(NodeId w, NodeId x, NodeId b) { return push(make(Op::affine, {w, x, b})); }
  NodeId add(NodeId a, NodeId b) { return push(make(Op::add, {a, b})); }
  NodeId mul(NodeId a, NodeId b) { return push(make(Op::mul, {a, b})); }
  NodeId scale(NodeId a, double c) {
    Node n = make(Op::scale, {a});
    n.coeff = c;
    return push(std::move(n));
  }
  NodeId relu(NodeId a) { return push(make(Op::relu, {a})); }
  NodeId softplus(NodeId a) { return push(make(Op::softplus, {a})); }
  NodeId softmax(NodeId a) { return push(make(Op::softmax, {a})); }
  NodeId sum(NodeId a) { return push(make(Op::sum, {a})); }
  NodeId dot(NodeId a, NodeId b) { return push(make(Op::dot, {a, b})); }
  NodeId concat(const std::vector<NodeId>& parts) { return push(make(Op::concat, parts)); }
  NodeId select(NodeId a, std::size_t index) {
    Node n = make(Op::select, {a});
    n.attr = {index};
    return push(std::move(n));
  }
  /// Non-overlapping k x k average pooling of a row-major h x w image.
  NodeId mean_pool(NodeId a, std::size_t h, std::size_t w, std::size_t k) {
    if (k == 0 || h % k != 0 || w % k != 0)
      throw ContractError("Graph: mean_pool needs k dividing both image dimensions");
    Node n = make(Op::mean_pool, {a});
    n.attr = {h, w, k};
    return push(std::move(n));
  }

  void set_output(NodeId id) { output_ = id.index; }
  NodeId output() const { return NodeId{output_}; }
  std::size_t num_nodes() const { return nodes_.size(); }

  std::vector<std::string> input_names() const {
    std::vector<std::string> names;
    for (const auto& n : nodes_)
      if (n.op == Op::input) names.push_back(n.name);
    return names;
  }

  NodeId input_node(const std::string& name) const {
    for (std::size_t i = 0; i < nodes_.size(); ++i)
      if (nodes_[i].op == Op::input && nodes_[i].name == name) return NodeId{i};
    throw ContractError("Graph: no input named '" + name + "'");
  }

  // ---- binding ------------------------------------------------------------

  void set_input(NodeId id, std::span<const double> values) {
    Node& n = nodes_.at(id.index);
    if (n.op != Op::input) throw ContractError("Graph: node is not an input");
    if (values.size() != n.value.size())
      throw DataError("Graph: input '" + n.name + "' expects " + std::to_string(n.value.size()) +
                      " values, got " + std::to_string(values.size()));
    std::copy(values.begin(), values.end(), n.value.data());
  }

  void set_input(const std::string& name, std::span<const double> values) {
    set_input(input_node(name), values);
  }

  /// Marks which inputs reforward()/backward_variable() treat as moving.
  void set_variable_inputs(const std::vector<std::string>& names) {
    for (auto& n : nodes_) n.variable = false;
    for (const auto& name : names) nodes_[input_node(name).index].variable = true;
    for (auto& n : nodes_) {
      if (n.op == Op::input) continue;
      for (auto p : n.inputs)
        if (nodes_[p].variable) n.variable = true;
    }
  }

  // ---- evaluation ---------------------------------------------------------

  /// Evaluates every node with the currently bound inputs.
  double forward(const ParamSet& params) {
    resolve_params(params);
    for (std::size_t i = 0; i < nodes_.size(); ++i) eval(i);
    forward_done_ = true;
    return scalar_output();
  }

  double forward(const ParamSet& params, const InputMap& inputs) {
    for (const auto& [name, arr] : inputs) set_input(name, arr.span());
    return forward(params);
  }

  /// Re-evaluates only nodes that depend on variable inputs. Valid only when
  /// parameters and non-variable inputs are unchanged since the last forward().
  double reforward() {
    if (!forward_done_) throw ContractError("Graph: reforward() before forward()");
    for (std::size_t i = 0; i < nodes_.size(); ++i)
      if (nodes_[i].variable && nodes_[i].op != Op::input) eval(i);
    return scalar_output();
  }

  /// Full reverse pass; gradients of the output w.r.t. every param and input.
  Gradients backward() {
    if (!forward_done_) throw ContractError("Graph: backward() called before forward()");
    Gradients g;
    g.params = params_->zeros_like();
    backward_accumulate(1.0, g.params);
    for (const auto& n : nodes_)
      if (n.op == Op::input) g.inputs.emplace(n.name, n.grad);
    return g;
  }

  /// grad += seed * d(output)/d(params).
  void backward_accumulate(double seed, ParamSet& grad) {
    if (!forward_done_) throw ContractError("Graph: backward() called before forward()");
    grad.require_same_layout(*params_);
    sweep(seed, false);
    for (const auto& n : nodes_) {
      if (n.op != Op::param) continue;
      auto& dst = grad.entries()[n.param_index].value.values();
      const auto& src = n.grad.values();
      for (std::size_t j = 0; j < dst.size(); ++j) dst[j] += src[j];
    }
  }

  /// Reverse pass restricted to variable nodes; read the results with
  /// grad_of() on the variable inputs.
  void backward_variable() {
    if (!forward_done_) throw ContractError("Graph: backward() called before forward()");
    sweep(1.0, true);
  }

  const Array& grad_of(NodeId id) const { return nodes_.at(id.index).grad; }
  const Array& value_of(NodeId id) const { return nodes_.at(id.index).value; }

  /// Smallest |pre-activation| seen at any ReLU during the last evaluation.
  /// Finite-difference checks skip draws that sit too close to a kink.
  double kink_margin() const {
    double m = std::numeric_limits<double>::infinity();
    for (const auto& n : nodes_)
      if (n.op == Op::relu) m = std::min(m, n.kink);
    return m;
  }

 private:
  struct Node {
    Op op;
    std::vector<std::size_t> inputs{};
    std::vector<std::size_t> attr{};
    std::string name{};
    double coeff = 0.0;
    Array value{};
    Array grad{};
    const Array* param_value = nullptr;
    std::size_t param_index = 0;
    bool variable = false;
    double kink = std::numeric_limits<double>::infinity();
  };

  Node make(Op op, std::vector<NodeId> ins) {
    Node n{op};
    for (auto id : ins) {
      if (id.index >= nodes_.size()) throw ContractError("Graph: node input out of range");
      n.inputs.push_back(id.index);
    }
    return n;
  }

  NodeId push(Node n) {
    nodes_.push_back(std::move(n));
    output_ = nodes_.size() - 1;
    return NodeId{nodes_.size() - 1};
  }

  static const char* op_name(Op op) {
    switch (op) {
      case Op::input: return "input";
      case Op::param: return "param";
      case Op::constant: return "constant";
      case Op::matvec: return "matvec";
      case Op::affine: return "affine";
      case Op::add: return "add";
      case Op::mul: return "mul";
      case Op::scale: return "scale";
      case Op::relu: return "relu";
      case Op::softplus: return "softplus";
      case Op::softmax: return "softmax";
      case Op::sum: return "sum";
      case Op::dot: return "dot";
      case Op::concat: return "concat";
      case Op::select: return "select";
      case Op::mean_pool: return "mean_pool";
    }
    return "?";
  }

  [[noreturn]] void shape_error(std::size_t i, const std::string& what) const {
    const Node& n = nodes_[i];
    std::string label = std::string(op_name(n.op)) + " node #" + std::to_string(i);
    if (!n.name.empty()) label += " ('" + n.name + "')";
    throw DataError("Graph: shape mismatch at " + label + ": " + what);
  }

  void resolve_params(const ParamSet& params) {
    params_ = &params;
    for (auto& n : nodes_) {
      if (n.op != Op::param) continue;
      n.param_index = params.index_of(n.name);
      n.param_value = &params.entries()[n.param_index].value;
    }
  }

  const Array& val(std::size_t i) const {
    const Node& n = nodes_[i];
    return n.op == Op::param ? *n.param_value : n.value;
  }

  double scalar_output() const {
    const Array& v = val(output_);
    if (v.size() != 1) throw DataError("Graph: output node is not a scalar");
    return v[0];
  }

  static double softplus_fn(double x) { return std::max(x, 0.0) + std::log1p(std::exp(-std::abs(x))); }
  static double sigmoid(double x) {
    if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
    const double e = std::exp(x);
    return e / (1.0 + e);
  }

  void eval(std::size_t i) {
    Node& n = nodes_[i];
    switch (n.op) {
      case Op::input:
      case Op::constant:
      case Op::param:
        return;
      case Op::matvec:
      case Op::affine: {
        const Array& w = val(n.inputs[0]);
        const Array& x = val(n.inputs[1]);
        if (w.shape().size() != 2 || w.shape()[1] != x.size())
          shape_error(i, "matrix " + shape_string(w.shape()) + " times vector of length " +
                             std::to_string(x.size()));
        const std::size_t m = w.shape()[0], k = w.shape()[1];
        n.value.reset({m});
        const double* wd = w.data();
        const double* xd = x.data();
        double* out = n.value.data();
        for (std::size_t r = 0; r < m; ++r) {
          double s = 0.0;
          const double* row = wd + r * k;
          for (std::size_t c = 0; c < k; ++c) s += row[c] * xd[c];
          out[r] = s;
        }
        if (n.op == Op::affine) {
          const Array& b = val(n.inputs[2]);
          if (b.size() != m) shape_error(i, "bias of length " + std::to_string(b.size()) +
                                                " for output length " + std::to_string(m));
          for (std::size_t r = 0; r < m; ++r) out[r] += b[r];
        }
        return;
      }
      case Op::add:
      case Op::mul:
      case Op::dot: {
        const Array& a = val(n.inputs[0]);
        const Array& b = val(n.inputs[1]);
        if (a.size() != b.size())
          shape_error(i, "operands of length " + std::to_string(a.size()) + " and " +
                             std::to_string(b.size()));
        if (n.op == Op::dot) {
          double s = 0.0;
          for (std::size_t j = 0; j < a.size(); ++j) s += a[j] * b[j];
          n.value.reset({1});
          n.value[0] = s;
        } else {
          n.value.reset({a.size()});
          for (std::size_t j = 0; j < a.size(); ++j)
            n.value[j] = n.op == Op::add ? a[j] + b[j] : a[j] * b[j];
        }
        return;
      }
      case Op::scale: {
        const Array& a = val(n.inputs[0]);
        n.value.reset({a.size()});
        for (std::size_t j = 0; j < a.size(); ++j) n.value[j] = n.coeff * a[j];
        return;
      }
      case Op::relu: {
        const Array& a = val(n.inputs[0]);
        n.value.reset({a.size()});
        double kink = std::numeric_limits<double>::infinity();
        for (std::size_t j = 0; j < a.size(); ++j) {
          n.value[j] = a[j] > 0.0 ? a[j] : 0.0;
          kink = std::min(kink, std::abs(a[j]));
        }
        n.kink = kink;
        return;
      }
      case Op::softplus: {
        const Array& a = val(n.inputs[0]);
        n.value.reset({a.size()});
        for (std::size_t j = 0; j < a.size(); ++j) n.value[j] = softplus_fn(a[j]);
        return;
      }
      case Op::softmax: {
        const Array& a = val(n.inputs[0]);
        if (a.size() == 0) shape_error(i, "softmax of empty vector");
        n.value.reset({a.size()});
        softmax_into(a.span(), n.value.span());
        return;
      }
      case Op::sum: {
        const Array& a = val(n.inputs[0]);
        double s = 0.0;
        for (double v : a.values()) s += v;
        n.value.reset({1});
        n.value[0] = s;
        return;
      }
      case Op::concat: {
        std::size_t total = 0;
        for (auto p : n.inputs) total += val(p).size();
        n.value.reset({total});
        std::size_t off = 0;
        for (auto p : n.inputs) {
          const Array& a = val(p);
          std::copy(a.data(), a.data() + a.size(), n.value.data() + off);
          off += a.size();
        }
        return;
      }
      case Op::select: {
        const Array& a = val(n.inputs[0]);
        if (n.attr[0] >= a.size())
          shape_error(i, "index " + std::to_string(n.attr[0]) + " into length " +
                             std::to_string(a.size()));
        n.value.reset({1});
        n.value[0] = a[n.attr[0]];
        return;
      }
      case Op::mean_pool: {
        const Array& a = val(n.inputs[0]);
        const std::size_t h = n.attr[0], w = n.attr[1], k = n.attr[2];
        if (a.size() != h * w)
          shape_error(i, "image of " + std::to_string(a.size()) + " pixels, expected " +
                             std::to_string(h) + "x" + std::to_string(w));
        const std::size_t oh = h / k, ow = w / k;
        n.value.reset({oh * ow});
        n.value.fill(0.0);
        const double inv = 1.0 / static_cast<double>(k * k);
        for (std::size_t r = 0; r < h; ++r)
          for (std::size_t c = 0; c < w; ++c) n.value[(r / k) * ow + c / k] += a[r * w + c] * inv;
        return;
      }
    }
  }

  Array& grad_buf(std::size_t i) { return nodes_[i].grad; }

  void sweep(double seed, bool variable_only) {
    for (std::size_t i = 0; i < nodes_.size(); ++i) {
      Node& n = nodes_[i];
      if (variable_only && !n.variable) continue;
      n.grad.reset(val(i).shape());
      n.grad.fill(0.0);
    }
    if (variable_only && !nodes_[output_].variable) return;
    nodes_[output_].grad[0] = seed;
    for (std::size_t i = output_ + 1; i-- > 0;) {
      Node& n = nodes_[i];
      if (variable_only && !n.variable) continue;
      propagate(i, variable_only);
    }
  }

  // Whether node p should receive an adjoint from its consumer.
  bool wants(std::size_t p, bool variable_only) const {
    const Op op = nodes_[p].op;
    if (op == Op::constant) return false;
    return !variable_only || nodes_[p].variable;
  }

  void propagate(std::size_t i, bool vo) {
    Node& n = nodes_[i];
    const Array& g = n.grad;
    switch (n.op) {
      case Op::input:
      case Op::param:
      case Op::constant:
        return;
      case Op::matvec:
      case Op::affine: {
        const auto wi = n.inputs[0], xi = n.inputs[1];
        const Array& w = val(wi);
        const Array& x = val(xi);
        const std::size_t m = w.shape()[0], k = w.shape()[1];
        if (wants(wi, vo)) {
          double* gw = grad_buf(wi).data();
          for (std::size_t r = 0; r < m; ++r) {
            const double gr = g[r];
            if (gr == 0.0) continue;
            double* row = gw + r * k;
            for (std::size_t c = 0; c < k; ++c) row[c] += gr * x[c];
          }
        }
        if (wants(xi, vo)) {
          double* gx = grad_buf(xi).data();
          const double* wd = w.data();
          for (std::size_t r = 0; r < m; ++r) {
            const double gr = g[r];
            if (gr == 0.0) continue;
            const double* row = wd + r * k;
            for (std::size_t c = 0; c < k; ++c) gx[c] += gr * row[c];
          }
        }
        if (n.op == Op::affine && wants(n.inputs[2], vo)) {
          Array& gb = grad_buf(n.inputs[2]);
          for (std::size_t r = 0; r < m; ++r) gb[r] += g[r];
        }
        return;
      }
      case Op::add: {
        for (auto p : n.inputs) {
          if (!wants(p, vo)) continue;
          Array& gp = grad_buf(p);
          for (std::size_t j = 0; j < g.size(); ++j) gp[j] += g[j];
        }
        return;
      }
      case Op::mul: {
        const auto a = n.inputs[0], b = n.inputs[1];
        if (wants(a, vo)) {
          Array& ga = grad_buf(a);
          const Array& vb = val(b);
          for (std::size_t j = 0; j < g.size(); ++j) ga[j] += g[j] * vb[j];
        }
        if (wants(b, vo)) {
          Array& gb = grad_buf(b);
          const Array& va = val(a);
          for (std::size_t j = 0; j < g.size(); ++j) gb[j] += g[j] * va[j];
        }
        return;
      }
      case Op::dot: {
        const auto a = n.inputs[0], b = n.inputs[1];
        const double g0 = g[0];
        if (wants(a, vo)) {
          Array& ga = grad_buf(a);
          const Array& vb = val(b);
          for (std::size_t j = 0; j < ga.size(); ++j) ga[j] += g0 * vb[j];
        }
        if (wants(b, vo)) {
          Array& gb = grad_buf(b);
          const Array& va = val(a);
          for (std::size_t j = 0; j < gb.size(); ++j) gb[j] += g0 * va[j];
        }
        return;
      }
      case Op::scale: {
        const auto a = n.inputs[0];
        if (!wants(a, vo)) return;
        Array& ga = grad_buf(a);
        for (std::size_t j = 0; j < g.size(); ++j) ga[j] += n.coeff * g[j];
        return;
      }
      case Op::relu: {
        const auto a = n.inputs[0];
        if (!wants(a, vo)) return;
        Array& ga = grad_buf(a);
        const Array& va = val(a);
        // Subgradient 0 at the kink.
        for (std::size_t j = 0; j < g.size(); ++j)
          if (va[j] > 0.0) ga[j] += g[j];
        return;
      }
      case Op::softplus: {
        const auto a = n.inputs[0];
        if (!wants(a, vo)) return;
        Array& ga = grad_buf(a);
        const Array& va = val(a);
        for (std::size_t j = 0; j < g.size(); ++j) ga[j] += g[j] * sigmoid(va[j]);
        return;
      }
      case Op::softmax: {
        const auto a = n.inputs[0];
        if (!wants(a, vo)) return;
        Array& ga = grad_buf(a);
        const Array& s = n.value;
        double gs = 0.0;
        for (std::size_t j = 0; j < g.size(); ++j) gs += g[j] * s[j];
        for (std::size_t j = 0; j < g.size(); ++j) ga[j] += s[j] * (g[j] - gs);
        return;
      }
      case Op::sum: {
        const auto a = n.inputs[0];
        if (!wants(a, vo)) return;
        Array& ga = grad_buf(a);
        for (std::size_t j = 0; j < ga.size(); ++j) ga[j] += g[0];
        return;
      }
      case Op::concat: {
        std::size_t off = 0;
        for (auto p : n.inputs) {
          const std::size_t len = val(p).size();
          if (wants(p, vo)) {
            Array& gp = grad_buf(p);
            for (std::size_t j = 0; j < len; ++j) gp[j] += g[off + j];
          }
          off += len;
        }
        return;
      }
      case Op::select: {
        const auto a = n.inputs[0];
        if (!wants(a, vo)) return;
        grad_buf(a)[n.attr[0]] += g[0];
        return;
      }
      case Op::mean_pool: {
        const auto a = n.inputs[0];
        if (!wants(a, vo)) return;
        Array& ga = grad_buf(a);
        const std::size_t h = n.attr[0], w = n.attr[1], k = n.attr[2];
        const std::size_t ow = w / k;
        const double inv = 1.0 / static_cast<double>(k * k);
        for (std::size_t r = 0; r < h; ++r)
          for (std::size_t c = 0; c < w; ++c) ga[r * w + c] += g[(r / k) * ow + c / k] * inv;
        return;
      }
    }
  }

  std::vector<Node> nodes_;
  std::size_t output_ = 0;
  const ParamSet* params_ = nullptr;
  bool forward_done_ = false;
};

/// Largest relative error between analytic and central-difference gradients
/// over every parameter and input coordinate.
///
/// relative error = |analytic - numeric| / max(|analytic|, |numeric|, floor)
/// The floor keeps coordinates whose true gradient is ~0 from dividing
/// roundoff by roundoff.
inline double finite_diff_check(Graph& graph, const ParamSet& params, const InputMap& inputs,
                                double eps, double floor = 1e-3) {
  if (!(eps > 0)) throw ContractError("finite_diff_check: eps must be positive");
  ParamSet p = params;
  InputMap in = inputs;
  graph.forward(p, in);
  const Gradients g = graph.backward();

  double worst = 0.0;
  auto rel = [&](double a, double n) {
    return std::abs(a - n) / std::max({std::abs(a), std::abs(n), floor});
  };
  for (std::size_t e = 0; e < p.size(); ++e) {
    auto& vals = p.entries()[e].value.values();
    const auto& ga = g.params.entries()[e].value.values();
    for (std::size_t j = 0; j < vals.size(); ++j) {
      const double orig = vals[j];
      vals[j] = orig + eps;
      const double up = graph.forward(p, in);
      vals[j] = orig - eps;
      const double dn = graph.forward(p, in);
      vals[j] = orig;
      worst = std::max(worst, rel(ga[j], (up - dn) / (2 * eps)));
    }
  }
  for (auto& [name, arr] : in) {
    const Array& ga = g.inputs.at(name);
    for (std::size_t j = 0; j < arr.size(); ++j) {
      const double orig = arr[j];
      arr[j] = orig + eps;
      const double up = graph.forward(p, in);
      arr[j] = orig - eps;
      const double dn = graph.forward(p, in);
      arr[j] = orig;
      worst = std::max(worst, rel(ga[j], (up - dn) / (2 * eps)));
    }
  }
  graph.forward(p, in);
  return worst;
}

}  // namespace sgspen
