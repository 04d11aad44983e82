// Reverse-mode differentiation tape. One tape per forward pass; nodes are
// appended in topological order and backward() replays them in reverse,
// producing one gradient per registered parameter.
#pragma once

#include <array>
#include <limits>
#include <map>
#include <string>
#include <vector>

#include "monet/tensor.hpp"

namespace monet::ad {

enum class OpKind {
  leaf,
  matmul,
  add,
  sub,
  hadamard,
  div,
  scale,
  sigmoid,
  tanh,
  softplus,
  elu_plus_one,
  exp,
  sqrt,
  square,
  sum,
  mean,
  concat,
  slice,
  transpose,
  softmax_rows,
  mse_loss,
  cross_entropy_loss,
};

const char* op_name(OpKind kind);

struct Var {
  static constexpr std::size_t npos = std::numeric_limits<std::size_t>::max();
  std::size_t id = npos;
  bool valid() const { return id != npos; }
};

struct OpAttrs {
  double scalar = 0.0;
  int axis = 0;
  std::size_t start = 0;
  std::size_t len = 0;
};

struct BackwardResult {
  std::map<std::string, Tensor> grads;
  bool disconnected = false;  // root unreachable from every registered parameter
};

class Tape {
 public:
  Var parameter(const std::string& name, Tensor init);
  Var constant(Tensor value);

  // Generic entry point; the named wrappers below all go through here.
  Var record_op(OpKind kind, const std::vector<Var>& inputs, OpAttrs attrs = {});

  Var matmul(Var a, Var b) { return record_op(OpKind::matmul, {a, b}); }
  Var add(Var a, Var b) { return record_op(OpKind::add, {a, b}); }
  Var sub(Var a, Var b) { return record_op(OpKind::sub, {a, b}); }
  Var hadamard(Var a, Var b) { return record_op(OpKind::hadamard, {a, b}); }
  Var div(Var a, Var b) { return record_op(OpKind::div, {a, b}); }
  Var scale(Var a, double c) {
    OpAttrs at;
    at.scalar = c;
    return record_op(OpKind::scale, {a}, at);
  }
  Var sigmoid(Var a) { return record_op(OpKind::sigmoid, {a}); }
  Var tanh(Var a) { return record_op(OpKind::tanh, {a}); }
  Var softplus(Var a) { return record_op(OpKind::softplus, {a}); }
  Var elu_plus_one(Var a) { return record_op(OpKind::elu_plus_one, {a}); }
  Var exp(Var a) { return record_op(OpKind::exp, {a}); }
  Var sqrt(Var a) { return record_op(OpKind::sqrt, {a}); }
  Var square(Var a) { return record_op(OpKind::square, {a}); }
  Var sum(Var a) { return record_op(OpKind::sum, {a}); }
  Var mean(Var a) { return record_op(OpKind::mean, {a}); }
  Var concat(Var a, Var b, int axis) {
    OpAttrs at;
    at.axis = axis;
    return record_op(OpKind::concat, {a, b}, at);
  }
  Var slice(Var a, int axis, std::size_t start, std::size_t len) {
    OpAttrs at;
    at.axis = axis;
    at.start = start;
    at.len = len;
    return record_op(OpKind::slice, {a}, at);
  }
  Var transpose(Var a) { return record_op(OpKind::transpose, {a}); }
  Var softmax_rows(Var a) { return record_op(OpKind::softmax_rows, {a}); }
  Var mse_loss(Var pred, Var target) { return record_op(OpKind::mse_loss, {pred, target}); }
  // labels: one class id per logits row, stored as doubles
  Var cross_entropy_loss(Var logits, Var labels) {
    return record_op(OpKind::cross_entropy_loss, {logits, labels});
  }

  const Tensor& value(Var v) const { return nodes_[check(v)].value; }

  // Gradient of the last backward() root w.r.t. node v (zeros if untouched).
  Tensor grad(Var v) const;

  BackwardResult backward(Var root);

  std::size_t size() const { return nodes_.size(); }
  const std::map<std::string, std::size_t>& parameters() const { return params_; }
  Var param_var(const std::string& name) const;

 private:
  struct Node {
    OpKind kind = OpKind::leaf;
    std::array<std::size_t, 2> in{Var::npos, Var::npos};
    int n_in = 0;
    OpAttrs attrs;
    Tensor value;
    bool requires_grad = false;
  };

  std::size_t check(Var v) const;
  Tensor& grad_buf(std::size_t id, const std::vector<std::size_t>& shape);
  void accumulate(std::size_t id, const Tensor& g);

  std::vector<Node> nodes_;
  std::map<std::string, std::size_t> params_;
  std::vector<Tensor> grads_;  // per-node, populated by backward()
};

namespace testing {
// Multiplies the named op's vector-Jacobian product by `factor` during
// backward(). Used by the verify suite's mutation check only.
void set_vjp_corruption(OpKind kind, double factor);
void clear_vjp_corruption();
}  // namespace testing

}  // namespace monet::ad
