#pragma once

#include <cstdint>
#include <functional>
#include <utility>
#include <vector>

#include "dynaflow/tensor.hpp"

namespace dynaflow {

enum class Op : std::uint8_t {
  kInput,
  kConstant,
  kAdd,
  kSub,
  kMul,
  kDiv,
  kMatMul,
  kTanh,
  kSin,
  kCos,
  kExp,
  kClamp,
  kSum,
  kMean,
  kPow,
  kConcat,
  kSlice,
};

class Tape;

// Handle to a node on a tape. Cheap to copy; arithmetic on Vars appends
// primitive nodes to the owning tape.
class Var {
 public:
  Var() = default;
  Tape& tape() const { return *tape_; }
  std::size_t id() const { return id_; }
  const Tensor& value() const;

 private:
  friend class Tape;
  Var(Tape* tape, std::size_t id) : tape_(tape), id_(id) {}
  Tape* tape_ = nullptr;
  std::size_t id_ = 0;
};

// Linear record of primitive operations. Nodes are appended in evaluation
// order, so inputs always precede their consumers and a single reverse sweep
// visits each node exactly once. Immutable once recording finishes.
class Tape {
 public:
  struct Node {
    Op op;
    std::vector<std::size_t> ins;
    Tensor value;
    bool needs_grad = false;
    // op-specific parameters
    double scalar = 0.0;             // pow exponent
    Tensor lo, hi;                   // clamp bounds
    int axis = 0;                    // concat/slice
    std::size_t start = 0, len = 0;  // slice
  };

  Var input(Tensor v) {
    std::size_t id = push(Op::kInput, {}, std::move(v), true);
    inputs_.push_back(id);
    return Var(this, id);
  }

  Var constant(Tensor v) { return Var(this, push(Op::kConstant, {}, std::move(v), false)); }
  Var constant(double v) { return constant(Tensor::scalar(v)); }

  Var add(Var a, Var b) { return binary(Op::kAdd, a, b, dynaflow::add(val(a), val(b))); }
  Var sub(Var a, Var b) { return binary(Op::kSub, a, b, dynaflow::sub(val(a), val(b))); }
  Var mul(Var a, Var b) { return binary(Op::kMul, a, b, dynaflow::mul(val(a), val(b))); }
  Var div(Var a, Var b) { return binary(Op::kDiv, a, b, dynaflow::div(val(a), val(b))); }
  Var matmul(Var a, Var b) {
    return binary(Op::kMatMul, a, b, dynaflow::matmul(val(a), val(b)));
  }

  Var tanh(Var a) { return unary(Op::kTanh, a, dynaflow::tanh(val(a))); }
  Var sin(Var a) { return unary(Op::kSin, a, dynaflow::sin(val(a))); }
  Var cos(Var a) { return unary(Op::kCos, a, dynaflow::cos(val(a))); }
  Var exp(Var a) { return unary(Op::kExp, a, dynaflow::exp(val(a))); }
  Var sum(Var a) { return unary(Op::kSum, a, dynaflow::sum(val(a))); }
  Var mean(Var a) { return unary(Op::kMean, a, dynaflow::mean(val(a))); }

  Var pow(Var a, double p) {
    std::size_t id = unary_id(Op::kPow, a, dynaflow::pow(val(a), p));
    nodes_[id].scalar = p;
    return Var(this, id);
  }

  Var clamp(Var a, Tensor lo, Tensor hi) {
    std::size_t id = unary_id(Op::kClamp, a, dynaflow::clamp(val(a), lo, hi));
    nodes_[id].lo = std::move(lo);
    nodes_[id].hi = std::move(hi);
    return Var(this, id);
  }
  Var clamp(Var a, double lo, double hi) {
    return clamp(a, Tensor::scalar(lo), Tensor::scalar(hi));
  }

  Var concat(const std::vector<Var>& parts, int axis) {
    std::vector<Tensor> vals;
    std::vector<std::size_t> ins;
    bool ng = false;
    for (Var p : parts) {
      check_owned(p);
      vals.push_back(val(p));
      ins.push_back(p.id());
      ng = ng || nodes_[p.id()].needs_grad;
    }
    std::size_t id = push(Op::kConcat, std::move(ins), dynaflow::concat(vals, axis), ng);
    nodes_[id].axis = axis;
    return Var(this, id);
  }
  Var concat(Var a, Var b, int axis) { return concat(std::vector<Var>{a, b}, axis); }

  Var slice(Var a, int axis, std::size_t start, std::size_t len) {
    std::size_t id = unary_id(Op::kSlice, a, dynaflow::slice(val(a), axis, start, len));
    nodes_[id].axis = axis;
    nodes_[id].start = start;
    nodes_[id].len = len;
    return Var(this, id);
  }

  void mark_output(Var v) {
    check_owned(v);
    outputs_.push_back(v.id());
  }

  const Tensor& value(Var v) const { return nodes_[v.id()].value; }
  const Tensor& value(std::size_t id) const { return nodes_[id].value; }
  std::size_t num_nodes() const { return nodes_.size(); }
  const std::vector<std::size_t>& input_ids() const { return inputs_; }
  const std::vector<std::size_t>& output_ids() const { return outputs_; }
  const Node& node(std::size_t id) const { return nodes_[id]; }

  // Reverse sweep: returns d(seed . output) / d(input) for every input, in
  // the order inputs were registered. Inputs that do not reach the output
  // come back as zeros.
  std::vector<Tensor> backward(const Tensor& seed) const {
    if (outputs_.size() != 1)
      throw ValidationError("backward: tape must have exactly one output");
    const std::size_t out = outputs_[0];
    if (seed.shape() != nodes_[out].value.shape())
      throw ValidationError("backward: seed shape " + shape_str(seed) +
                            " does not match output shape " +
                            shape_str(nodes_[out].value));

    std::vector<Tensor> grads(nodes_.size());
    std::vector<bool> has(nodes_.size(), false);
    grads[out] = seed;
    has[out] = true;

    for (std::size_t idx = nodes_.size(); idx-- > 0;) {
      const Node& n = nodes_[idx];
      if (!has[idx] || !n.needs_grad) continue;
      propagate(idx, grads[idx], grads, has);
    }

    std::vector<Tensor> result;
    result.reserve(inputs_.size());
    for (std::size_t id : inputs_) {
      if (has[id])
        result.push_back(grads[id]);
      else
        result.push_back(Tensor::zeros(nodes_[id].value.shape()));
    }
    return result;
  }

 private:
  std::size_t push(Op op, std::vector<std::size_t> ins, Tensor value, bool needs_grad) {
    Node n;
    n.op = op;
    n.ins = std::move(ins);
    n.value = std::move(value);
    n.needs_grad = needs_grad;
    nodes_.push_back(std::move(n));
    return nodes_.size() - 1;
  }

  void check_owned(Var v) const {
    if (v.tape_ != this) throw ValidationError("Var belongs to a different tape");
  }

  const Tensor& val(Var v) const {
    check_owned(v);
    return nodes_[v.id()].value;
  }

  Var binary(Op op, Var a, Var b, Tensor value) {
    check_owned(a);
    check_owned(b);
    bool ng = nodes_[a.id()].needs_grad || nodes_[b.id()].needs_grad;
    return Var(this, push(op, {a.id(), b.id()}, std::move(value), ng));
  }

  std::size_t unary_id(Op op, Var a, Tensor value) {
    check_owned(a);
    return push(op, {a.id()}, std::move(value), nodes_[a.id()].needs_grad);
  }

  Var unary(Op op, Var a, Tensor value) { return Var(this, unary_id(op, a, std::move(value))); }

  void accumulate(std::size_t id, Tensor g, std::vector<Tensor>& grads,
                  std::vector<bool>& has) const {
    if (!nodes_[id].needs_grad) return;
    if (!has[id]) {
      grads[id] = std::move(g);
      has[id] = true;
    } else {
      grads[id] = dynaflow::add(grads[id], g);
    }
  }

  // Reduce a broadcast-shaped gradient onto the operand's own shape.
  static Tensor reduceonto(const Tensor& g, const Tensor& operand) {
    return detail::reduce_to(g, operand.rows(), operand.cols(), operand.shape());
  }

  void propagate(std::size_t idx, const Tensor& g, std::vector<Tensor>& grads,
                 std::vector<bool>& has) const {
    const Node& n = nodes_[idx];
    switch (n.op) {
      case Op::kInput:
      case Op::kConstant:
        return;
      case Op::kAdd: {
        const Tensor& a = nodes_[n.ins[0]].value;
        const Tensor& b = nodes_[n.ins[1]].value;
        accumulate(n.ins[0], reduceonto(g, a), grads, has);
        accumulate(n.ins[1], reduceonto(g, b), grads, has);
        return;
      }
      case Op::kSub: {
        const Tensor& a = nodes_[n.ins[0]].value;
        const Tensor& b = nodes_[n.ins[1]].value;
        accumulate(n.ins[0], reduceonto(g, a), grads, has);
        accumulate(n.ins[1], reduceonto(dynaflow::mul(g, Tensor::scalar(-1.0)), b),
                   grads, has);
        return;
      }
      case Op::kMul: {
        const Tensor& a = nodes_[n.ins[0]].value;
        const Tensor& b = nodes_[n.ins[1]].value;
        accumulate(n.ins[0], reduceonto(dynaflow::mul(g, b), a), grads, has);
        accumulate(n.ins[1], reduceonto(dynaflow::mul(g, a), b), grads, has);
        return;
      }
      case Op::kDiv: {
        const Tensor& a = nodes_[n.ins[0]].value;
        const Tensor& b = nodes_[n.ins[1]].value;
        accumulate(n.ins[0], reduceonto(dynaflow::div(g, b), a), grads, has);
        Tensor gb = dynaflow::mul(dynaflow::div(dynaflow::mul(g, a),
                                                dynaflow::mul(b, b)),
                                  Tensor::scalar(-1.0));
        accumulate(n.ins[1], reduceonto(gb, b), grads, has);
        return;
      }
      case Op::kMatMul: {
        const Tensor& a = nodes_[n.ins[0]].value;
        const Tensor& b = nodes_[n.ins[1]].value;
        if (nodes_[n.ins[0]].needs_grad)
          accumulate(n.ins[0], detail::matmul_nt(g, b), grads, has);
        if (nodes_[n.ins[1]].needs_grad)
          accumulate(n.ins[1], detail::matmul_tn(a, g), grads, has);
        return;
      }
      case Op::kTanh: {
        Tensor d = dynaflow::sub(Tensor::scalar(1.0), dynaflow::mul(n.value, n.value));
        accumulate(n.ins[0], dynaflow::mul(g, d), grads, has);
        return;
      }
      case Op::kSin: {
        accumulate(n.ins[0], dynaflow::mul(g, dynaflow::cos(nodes_[n.ins[0]].value)),
                   grads, has);
        return;
      }
      case Op::kCos: {
        Tensor d = dynaflow::mul(dynaflow::sin(nodes_[n.ins[0]].value),
                                 Tensor::scalar(-1.0));
        accumulate(n.ins[0], dynaflow::mul(g, d), grads, has);
        return;
      }
      case Op::kExp: {
        accumulate(n.ins[0], dynaflow::mul(g, n.value), grads, has);
        return;
      }
      case Op::kClamp: {
        // Zero gradient at and beyond the bounds (saturation semantics).
        const Tensor& a = nodes_[n.ins[0]].value;
        Tensor above_lo = detail::ew_binary(
            a, n.lo, "clampgrad", [](double x, double l) { return x > l ? 1.0 : 0.0; });
        Tensor below_hi = detail::ew_binary(
            a, n.hi, "clampgrad", [](double x, double h) { return x < h ? 1.0 : 0.0; });
        accumulate(n.ins[0], dynaflow::mul(dynaflow::mul(g, above_lo), below_hi),
                   grads, has);
        return;
      }
      case Op::kSum: {
        accumulate(n.ins[0],
                   Tensor::full(nodes_[n.ins[0]].value.shape(), g[0]), grads, has);
        return;
      }
      case Op::kMean: {
        const Tensor& a = nodes_[n.ins[0]].value;
        accumulate(n.ins[0],
                   Tensor::full(a.shape(), g[0] / static_cast<double>(a.numel())),
                   grads, has);
        return;
      }
      case Op::kPow: {
        const Tensor& a = nodes_[n.ins[0]].value;
        Tensor d = dynaflow::mul(dynaflow::pow(a, n.scalar - 1.0),
                                 Tensor::scalar(n.scalar));
        accumulate(n.ins[0], dynaflow::mul(g, d), grads, has);
        return;
      }
      case Op::kConcat: {
        std::size_t off = 0;
        for (std::size_t in : n.ins) {
          const Tensor& part = nodes_[in].value;
          std::size_t extent = n.axis == 0 ? part.rows() : part.cols();
          Tensor gp = dynaflow::slice(g, n.axis, off, extent);
          accumulate(in, Tensor(part.shape(), std::move(gp.data())), grads, has);
          off += extent;
        }
        return;
      }
      case Op::kSlice: {
        const Tensor& a = nodes_[n.ins[0]].value;
        Tensor ga = Tensor::zeros(a.shape());
        const std::size_t R = a.rows(), C = a.cols();
        if (n.axis == 0) {
          std::copy(g.data().begin(), g.data().end(),
                    ga.data().begin() + n.start * C);
        } else {
          for (std::size_t i = 0; i < g.rows(); ++i)
            std::copy(g.data().begin() + i * n.len,
                      g.data().begin() + (i + 1) * n.len,
                      ga.data().begin() + i * C + n.start);
        }
        (void)R;
        accumulate(n.ins[0], std::move(ga), grads, has);
        return;
      }
    }
    throw NumericError("backward: unsupported op on tape");
  }

  std::vector<Node> nodes_;
  std::vector<std::size_t> inputs_;
  std::vector<std::size_t> outputs_;
};

inline const Tensor& Var::value() const { return tape_->value(*this); }

// Var arithmetic

inline Var operator+(Var a, Var b) { return a.tape().add(a, b); }
inline Var operator-(Var a, Var b) { return a.tape().sub(a, b); }
inline Var operator*(Var a, Var b) { return a.tape().mul(a, b); }
inline Var operator/(Var a, Var b) { return a.tape().div(a, b); }
inline Var operator+(Var a, double s) { return a.tape().add(a, a.tape().constant(s)); }
inline Var operator-(Var a, double s) { return a.tape().sub(a, a.tape().constant(s)); }
inline Var operator*(Var a, double s) { return a.tape().mul(a, a.tape().constant(s)); }
inline Var operator/(Var a, double s) { return a.tape().div(a, a.tape().constant(s)); }
inline Var operator+(double s, Var a) { return a.tape().add(a.tape().constant(s), a); }
inline Var operator-(double s, Var a) { return a.tape().sub(a.tape().constant(s), a); }
inline Var operator*(double s, Var a) { return a.tape().mul(a.tape().constant(s), a); }

inline Var matmul(Var a, Var b) { return a.tape().matmul(a, b); }
inline Var tanh(Var a) { return a.tape().tanh(a); }
inline Var sin(Var a) { return a.tape().sin(a); }
inline Var cos(Var a) { return a.tape().cos(a); }
inline Var exp(Var a) { return a.tape().exp(a); }
inline Var sum(Var a) { return a.tape().sum(a); }
inline Var mean(Var a) { return a.tape().mean(a); }
inline Var pow(Var a, double p) { return a.tape().pow(a, p); }
inline Var clamp(Var a, const Tensor& lo, const Tensor& hi) { return a.tape().clamp(a, lo, hi); }
inline Var clamp(Var a, double lo, double hi) { return a.tape().clamp(a, lo, hi); }
inline Var concat(Var a, Var b, int axis) { return a.tape().concat(a, b, axis); }
inline Var concat(const std::vector<Var>& parts, int axis) {
  if (parts.empty()) throw ValidationError("concat: no operands");
  return parts[0].tape().concat(parts, axis);
}
inline Var slice(Var a, int axis, std::size_t start, std::size_t len) {
  return a.tape().slice(a, axis, start, len);
}

// Lift a constant tensor into the value domain of a template computation:
// identity for plain tensors, an untracked constant node when tracing.
inline Tensor lift(const Tensor& c, const Tensor&) { return c; }
inline Var lift(const Tensor& c, const Var& anchor) { return anchor.tape().constant(c); }

// ---------------------------------------------------------------------------

using TracedFn = std::function<std::vector<Var>(Tape&, const std::vector<Var>&)>;
using ScalarFn = std::function<Var(Tape&, const std::vector<Var>&)>;

struct Recording {
  std::vector<Tensor> outputs;
  Tape tape;
};

inline Recording record(const TracedFn& fn, const std::vector<Tensor>& inputs) {
  Recording rec;
  std::vector<Var> vars;
  vars.reserve(inputs.size());
  for (const Tensor& t : inputs) {
    require_finite(t, "record input");
    vars.push_back(rec.tape.input(t));
  }
  std::vector<Var> outs = fn(rec.tape, vars);
  for (Var o : outs) {
    rec.tape.mark_output(o);
    rec.outputs.push_back(rec.tape.value(o));
  }
  return rec;
}

inline Recording record(const ScalarFn& fn, const std::vector<Tensor>& inputs) {
  return record(TracedFn([&fn](Tape& t, const std::vector<Var>& v) {
                  return std::vector<Var>{fn(t, v)};
                }),
                inputs);
}

inline std::vector<Tensor> backward(const Tape& tape, const Tensor& seed) {
  return tape.backward(seed);
}

// Max relative error between the reverse-mode gradient of a scalar-valued
// computation and central finite differences with step h.
inline double check_gradient(const ScalarFn& fn, const std::vector<Tensor>& inputs,
                             double h = 1e-5) {
  Recording rec = record(fn, inputs);
  if (rec.outputs.size() != 1 || rec.outputs[0].numel() != 1)
    throw ValidationError("check_gradient: computation must be scalar-valued");
  std::vector<Tensor> analytic = rec.tape.backward(Tensor::scalar(1.0));

  auto eval = [&fn](const std::vector<Tensor>& xs) {
    return record(fn, xs).outputs[0][0];
  };

  double worst = 0.0;
  std::vector<Tensor> probe = inputs;
  for (std::size_t i = 0; i < inputs.size(); ++i) {
    for (std::size_t k = 0; k < inputs[i].numel(); ++k) {
      const double orig = probe[i][k];
      probe[i][k] = orig + h;
      const double fp = eval(probe);
      probe[i][k] = orig - h;
      const double fm = eval(probe);
      probe[i][k] = orig;
      const double fd = (fp - fm) / (2.0 * h);
      const double err = std::abs(analytic[i][k] - fd) / std::max(1.0, std::abs(fd));
      worst = std::max(worst, err);
    }
  }
  return worst;
}

}  // namespace dynaflow
