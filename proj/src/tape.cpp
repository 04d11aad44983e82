#include "monet/tape.hpp"

#include <algorithm>
#include <cmath>

namespace monet::ad {

const char* op_name(OpKind kind) {
  switch (kind) {
    case OpKind::leaf: return "leaf";
    case OpKind::matmul: return "matmul";
    case OpKind::add: return "add";
    case OpKind::sub: return "sub";
    case OpKind::hadamard: return "hadamard";
    case OpKind::div: return "div";
    case OpKind::scale: return "scale";
    case OpKind::sigmoid: return "sigmoid";
    case OpKind::tanh: return "tanh";
    case OpKind::softplus: return "softplus";
    case OpKind::elu_plus_one: return "elu_plus_one";
    case OpKind::exp: return "exp";
    case OpKind::sqrt: return "sqrt";
    case OpKind::square: return "square";
    case OpKind::sum: return "sum";
    case OpKind::mean: return "mean";
    case OpKind::concat: return "concat";
    case OpKind::slice: return "slice";
    case OpKind::transpose: return "transpose";
    case OpKind::softmax_rows: return "softmax_rows";
    case OpKind::mse_loss: return "mse_loss";
    case OpKind::cross_entropy_loss: return "cross_entropy_loss";
  }
  return "?";
}

namespace {

struct Corruption {
  bool active = false;
  OpKind kind = OpKind::leaf;
  double factor = 1.0;
};
Corruption g_corruption;

[[noreturn]] void op_error(OpKind kind, const std::string& msg) {
  throw std::invalid_argument(std::string(op_name(kind)) + ": " + msg);
}

void require_same_shape(OpKind kind, const Tensor& a, const Tensor& b) {
  if (!a.same_shape(b))
    op_error(kind, "shape mismatch " + a.shape_str() + " vs " + b.shape_str());
}

Tensor softmax_rows_value(const Tensor& x) {
  Tensor out = x;
  const std::size_t r = x.rows(), c = x.cols();
  for (std::size_t i = 0; i < r; ++i) {
    double mx = -std::numeric_limits<double>::infinity();
    for (std::size_t j = 0; j < c; ++j) mx = std::max(mx, x(i, j));
    double z = 0.0;
    for (std::size_t j = 0; j < c; ++j) {
      out(i, j) = std::exp(x(i, j) - mx);
      z += out(i, j);
    }
    for (std::size_t j = 0; j < c; ++j) out(i, j) /= z;
  }
  return out;
}

}  // namespace

namespace testing {
void set_vjp_corruption(OpKind kind, double factor) { g_corruption = {true, kind, factor}; }
void clear_vjp_corruption() { g_corruption = {}; }
}  // namespace testing

std::size_t Tape::check(Var v) const {
  if (!v.valid() || v.id >= nodes_.size())
    throw std::invalid_argument("Tape: invalid node handle");
  return v.id;
}

Var Tape::parameter(const std::string& name, Tensor init) {
  if (params_.count(name))
    throw std::invalid_argument("Tape: duplicate parameter '" + name + "'");
  Node n;
  n.kind = OpKind::leaf;
  n.value = std::move(init);
  n.requires_grad = true;
  nodes_.push_back(std::move(n));
  params_[name] = nodes_.size() - 1;
  return Var{nodes_.size() - 1};
}

Var Tape::constant(Tensor value) {
  Node n;
  n.kind = OpKind::leaf;
  n.value = std::move(value);
  n.requires_grad = false;
  nodes_.push_back(std::move(n));
  return Var{nodes_.size() - 1};
}

Var Tape::param_var(const std::string& name) const {
  auto it = params_.find(name);
  if (it == params_.end()) throw std::invalid_argument("Tape: unknown parameter '" + name + "'");
  return Var{it->second};
}

Var Tape::record_op(OpKind kind, const std::vector<Var>& inputs, OpAttrs attrs) {
  if (kind == OpKind::leaf) op_error(kind, "leaf is not a recordable op");
  Node n;
  n.kind = kind;
  n.attrs = attrs;
  n.n_in = static_cast<int>(inputs.size());
  if (n.n_in < 1 || n.n_in > 2) op_error(kind, "operation takes 1 or 2 inputs");
  for (int i = 0; i < n.n_in; ++i) {
    n.in[i] = check(inputs[i]);
    n.requires_grad = n.requires_grad || nodes_[n.in[i]].requires_grad;
  }
  const Tensor& a = nodes_[n.in[0]].value;
  const Tensor* b = n.n_in == 2 ? &nodes_[n.in[1]].value : nullptr;

  switch (kind) {
    case OpKind::matmul:
      n.value = monet::matmul(a, *b);
      break;
    case OpKind::add:
      n.value = monet::add(a, *b);
      break;
    case OpKind::sub:
      n.value = monet::sub(a, *b);
      break;
    case OpKind::hadamard:
      n.value = monet::hadamard(a, *b);
      break;
    case OpKind::div: {
      require_same_shape(kind, a, *b);
      for (double v : b->data())
        if (v == 0.0) op_error(kind, "division by a tensor containing zero");
      n.value = a;
      for (std::size_t i = 0; i < a.numel(); ++i) n.value[i] = a[i] / (*b)[i];
      break;
    }
    case OpKind::scale:
      n.value = monet::scale(a, attrs.scalar);
      break;
    case OpKind::sigmoid:
      n.value = map_unary(a, +[](double x) { return sigmoid_scalar(x); });
      break;
    case OpKind::tanh:
      n.value = map_unary(a, +[](double x) { return std::tanh(x); });
      break;
    case OpKind::softplus:
      n.value = map_unary(a, +[](double x) { return softplus_scalar(x); });
      break;
    case OpKind::elu_plus_one:
      n.value = map_unary(a, +[](double x) { return elu_plus_one_scalar(x); });
      break;
    case OpKind::exp:
      n.value = map_unary(a, +[](double x) { return std::exp(x); });
      if (!n.value.all_finite()) op_error(kind, "overflow to non-finite value");
      break;
    case OpKind::sqrt:
      for (double v : a.data())
        if (v < 0.0) op_error(kind, "negative input");
      n.value = map_unary(a, +[](double x) { return std::sqrt(x); });
      break;
    case OpKind::square:
      n.value = map_unary(a, +[](double x) { return x * x; });
      break;
    case OpKind::sum:
    case OpKind::mean: {
      double s = 0.0;
      for (double v : a.data()) s += v;
      if (kind == OpKind::mean) s /= static_cast<double>(a.numel());
      n.value = Tensor::scalar(s);
      break;
    }
    case OpKind::concat: {
      if (attrs.axis == 0) {
        if (a.rank() == 1 && b->rank() == 1) {
          std::vector<double> d = a.data();
          d.insert(d.end(), b->data().begin(), b->data().end());
          n.value = Tensor::vector(std::move(d));
        } else if (a.rank() == 2 && b->rank() == 2 && a.cols() == b->cols()) {
          Tensor out({a.rows() + b->rows(), a.cols()});
          std::copy(a.data().begin(), a.data().end(), out.data().begin());
          std::copy(b->data().begin(), b->data().end(), out.data().begin() + a.numel());
          n.value = std::move(out);
        } else {
          op_error(kind, "axis-0 shapes do not conform: " + a.shape_str() + " and " +
                             b->shape_str());
        }
      } else if (attrs.axis == 1) {
        if (a.rank() != 2 || b->rank() != 2 || a.rows() != b->rows())
          op_error(kind, "axis-1 shapes do not conform: " + a.shape_str() + " and " +
                             b->shape_str());
        Tensor out({a.rows(), a.cols() + b->cols()});
        for (std::size_t i = 0; i < a.rows(); ++i) {
          for (std::size_t j = 0; j < a.cols(); ++j) out(i, j) = a(i, j);
          for (std::size_t j = 0; j < b->cols(); ++j) out(i, a.cols() + j) = (*b)(i, j);
        }
        n.value = std::move(out);
      } else {
        op_error(kind, "axis must be 0 or 1");
      }
      break;
    }
    case OpKind::slice: {
      const std::size_t start = attrs.start, len = attrs.len;
      if (len == 0) op_error(kind, "zero-length slice");
      if (attrs.axis == 0) {
        if (a.rank() == 1) {
          if (start + len > a.numel()) op_error(kind, "out of range");
          std::vector<double> d(a.data().begin() + start, a.data().begin() + start + len);
          n.value = Tensor::vector(std::move(d));
        } else {
          if (start + len > a.rows()) op_error(kind, "row range out of bounds");
          Tensor out({len, a.cols()});
          std::copy(a.data().begin() + start * a.cols(),
                    a.data().begin() + (start + len) * a.cols(), out.data().begin());
          n.value = std::move(out);
        }
      } else if (attrs.axis == 1) {
        if (a.rank() != 2 || start + len > a.cols()) op_error(kind, "column range out of bounds");
        Tensor out({a.rows(), len});
        for (std::size_t i = 0; i < a.rows(); ++i)
          for (std::size_t j = 0; j < len; ++j) out(i, j) = a(i, start + j);
        n.value = std::move(out);
      } else {
        op_error(kind, "axis must be 0 or 1");
      }
      break;
    }
    case OpKind::transpose:
      n.value = monet::transpose(a);
      break;
    case OpKind::softmax_rows:
      if (a.rank() != 2) op_error(kind, "expects rank-2 tensor");
      n.value = softmax_rows_value(a);
      break;
    case OpKind::mse_loss: {
      require_same_shape(kind, a, *b);
      double s = 0.0;
      for (std::size_t i = 0; i < a.numel(); ++i) {
        const double d = a[i] - (*b)[i];
        s += d * d;
      }
      n.value = Tensor::scalar(s / static_cast<double>(a.numel()));
      break;
    }
    case OpKind::cross_entropy_loss: {
      if (a.rank() != 2) op_error(kind, "logits must be rank-2");
      if (b->numel() != a.rows()) op_error(kind, "one label per logits row required");
      double total = 0.0;
      for (std::size_t i = 0; i < a.rows(); ++i) {
        const double lab = (*b)[i];
        const auto cls = static_cast<std::size_t>(lab);
        if (lab != std::floor(lab) || cls >= a.cols())
          op_error(kind, "label out of range at row " + std::to_string(i));
        double mx = -std::numeric_limits<double>::infinity();
        for (std::size_t j = 0; j < a.cols(); ++j) mx = std::max(mx, a(i, j));
        double z = 0.0;
        for (std::size_t j = 0; j < a.cols(); ++j) z += std::exp(a(i, j) - mx);
        total += mx + std::log(z) - a(i, cls);
      }
      n.value = Tensor::scalar(total / static_cast<double>(a.rows()));
      break;
    }
    case OpKind::leaf:
      break;
  }

  nodes_.push_back(std::move(n));
  return Var{nodes_.size() - 1};
}

Tensor& Tape::grad_buf(std::size_t id, const std::vector<std::size_t>& shape) {
  if (grads_[id].empty()) grads_[id] = Tensor::zeros(shape);
  return grads_[id];
}

void Tape::accumulate(std::size_t id, const Tensor& g) {
  Tensor& buf = grad_buf(id, nodes_[id].value.shape());
  for (std::size_t i = 0; i < g.numel(); ++i) buf[i] += g[i];
}

Tensor Tape::grad(Var v) const {
  const std::size_t id = check(v);
  if (id < grads_.size() && !grads_[id].empty()) return grads_[id];
  return Tensor::zeros(nodes_[id].value.shape());
}

BackwardResult Tape::backward(Var root) {
  const std::size_t root_id = check(root);
  if (nodes_[root_id].value.numel() != 1)
    throw std::invalid_argument("backward: root is not scalar");

  // Reachability from the root back to any registered parameter.
  std::vector<char> reach(nodes_.size(), 0);
  {
    std::vector<std::size_t> stack{root_id};
    reach[root_id] = 1;
    while (!stack.empty()) {
      const std::size_t id = stack.back();
      stack.pop_back();
      const Node& n = nodes_[id];
      for (int i = 0; i < n.n_in; ++i)
        if (!reach[n.in[i]]) {
          reach[n.in[i]] = 1;
          stack.push_back(n.in[i]);
        }
    }
  }
  bool connected = false;
  for (const auto& [name, id] : params_) connected = connected || reach[id];

  grads_.assign(nodes_.size(), Tensor());
  grads_[root_id] = Tensor::scalar(1.0);

  for (std::size_t id = root_id + 1; id-- > 0;) {
    const Node& n = nodes_[id];
    if (n.kind == OpKind::leaf || grads_[id].empty() || !n.requires_grad) continue;
    Tensor g = grads_[id];
    if (g_corruption.active && g_corruption.kind == n.kind)
      g = monet::scale(g, g_corruption.factor);

    const Tensor& a = nodes_[n.in[0]].value;
    const Tensor* b = n.n_in == 2 ? &nodes_[n.in[1]].value : nullptr;
    const bool need_a = nodes_[n.in[0]].requires_grad;
    const bool need_b = n.n_in == 2 && nodes_[n.in[1]].requires_grad;
    const Tensor& y = n.value;

    switch (n.kind) {
      case OpKind::matmul: {
        if (need_a) accumulate(n.in[0], monet::matmul(g, monet::transpose(*b)));
        if (need_b) accumulate(n.in[1], monet::matmul(monet::transpose(a), g));
        break;
      }
      case OpKind::add: {
        if (need_a) accumulate(n.in[0], g);
        if (need_b) accumulate(n.in[1], g);
        break;
      }
      case OpKind::sub: {
        if (need_a) accumulate(n.in[0], g);
        if (need_b) accumulate(n.in[1], monet::scale(g, -1.0));
        break;
      }
      case OpKind::hadamard: {
        if (need_a) accumulate(n.in[0], monet::hadamard(g, *b));
        if (need_b) accumulate(n.in[1], monet::hadamard(g, a));
        break;
      }
      case OpKind::div: {
        if (need_a) {
          Tensor ga = g;
          for (std::size_t i = 0; i < ga.numel(); ++i) ga[i] /= (*b)[i];
          accumulate(n.in[0], ga);
        }
        if (need_b) {
          Tensor gb = g;
          for (std::size_t i = 0; i < gb.numel(); ++i)
            gb[i] *= -a[i] / ((*b)[i] * (*b)[i]);
          accumulate(n.in[1], gb);
        }
        break;
      }
      case OpKind::scale:
        accumulate(n.in[0], monet::scale(g, n.attrs.scalar));
        break;
      case OpKind::sigmoid: {
        Tensor ga = g;
        for (std::size_t i = 0; i < ga.numel(); ++i) ga[i] *= y[i] * (1.0 - y[i]);
        accumulate(n.in[0], ga);
        break;
      }
      case OpKind::tanh: {
        Tensor ga = g;
        for (std::size_t i = 0; i < ga.numel(); ++i) ga[i] *= 1.0 - y[i] * y[i];
        accumulate(n.in[0], ga);
        break;
      }
      case OpKind::softplus: {
        Tensor ga = g;
        for (std::size_t i = 0; i < ga.numel(); ++i) ga[i] *= sigmoid_scalar(a[i]);
        accumulate(n.in[0], ga);
        break;
      }
      case OpKind::elu_plus_one: {
        Tensor ga = g;
        for (std::size_t i = 0; i < ga.numel(); ++i)
          ga[i] *= a[i] >= 0.0 ? 1.0 : std::exp(a[i]);
        accumulate(n.in[0], ga);
        break;
      }
      case OpKind::exp: {
        Tensor ga = g;
        for (std::size_t i = 0; i < ga.numel(); ++i) ga[i] *= y[i];
        accumulate(n.in[0], ga);
        break;
      }
      case OpKind::sqrt: {
        Tensor ga = g;
        for (std::size_t i = 0; i < ga.numel(); ++i) ga[i] *= 0.5 / y[i];
        accumulate(n.in[0], ga);
        break;
      }
      case OpKind::square: {
        Tensor ga = g;
        for (std::size_t i = 0; i < ga.numel(); ++i) ga[i] *= 2.0 * a[i];
        accumulate(n.in[0], ga);
        break;
      }
      case OpKind::sum:
        accumulate(n.in[0], Tensor::full(a.shape(), g.item()));
        break;
      case OpKind::mean:
        accumulate(n.in[0], Tensor::full(a.shape(), g.item() / static_cast<double>(a.numel())));
        break;
      case OpKind::concat: {
        if (n.attrs.axis == 0) {
          if (need_a) {
            Tensor ga(a.shape());
            std::copy(g.data().begin(), g.data().begin() + a.numel(), ga.data().begin());
            accumulate(n.in[0], ga);
          }
          if (need_b) {
            Tensor gb(b->shape());
            std::copy(g.data().begin() + a.numel(), g.data().end(), gb.data().begin());
            accumulate(n.in[1], gb);
          }
        } else {
          if (need_a) {
            Tensor ga(a.shape());
            for (std::size_t i = 0; i < a.rows(); ++i)
              for (std::size_t j = 0; j < a.cols(); ++j) ga(i, j) = g(i, j);
            accumulate(n.in[0], ga);
          }
          if (need_b) {
            Tensor gb(b->shape());
            for (std::size_t i = 0; i < b->rows(); ++i)
              for (std::size_t j = 0; j < b->cols(); ++j) gb(i, j) = g(i, a.cols() + j);
            accumulate(n.in[1], gb);
          }
        }
        break;
      }
      case OpKind::slice: {
        Tensor ga(a.shape());
        if (n.attrs.axis == 0) {
          if (a.rank() == 1) {
            for (std::size_t i = 0; i < n.attrs.len; ++i) ga[n.attrs.start + i] = g[i];
          } else {
            std::copy(g.data().begin(), g.data().end(),
                      ga.data().begin() + n.attrs.start * a.cols());
          }
        } else {
          for (std::size_t i = 0; i < a.rows(); ++i)
            for (std::size_t j = 0; j < n.attrs.len; ++j) ga(i, n.attrs.start + j) = g(i, j);
        }
        accumulate(n.in[0], ga);
        break;
      }
      case OpKind::transpose:
        accumulate(n.in[0], monet::transpose(g));
        break;
      case OpKind::softmax_rows: {
        Tensor ga(a.shape());
        for (std::size_t i = 0; i < a.rows(); ++i) {
          double gy = 0.0;
          for (std::size_t j = 0; j < a.cols(); ++j) gy += g(i, j) * y(i, j);
          for (std::size_t j = 0; j < a.cols(); ++j) ga(i, j) = y(i, j) * (g(i, j) - gy);
        }
        accumulate(n.in[0], ga);
        break;
      }
      case OpKind::mse_loss: {
        const double c = 2.0 * g.item() / static_cast<double>(a.numel());
        if (need_a || need_b) {
          Tensor d = monet::sub(a, *b);
          if (need_a) accumulate(n.in[0], monet::scale(d, c));
          if (need_b) accumulate(n.in[1], monet::scale(d, -c));
        }
        break;
      }
      case OpKind::cross_entropy_loss: {
        if (need_a) {
          Tensor ga = softmax_rows_value(a);
          const double c = g.item() / static_cast<double>(a.rows());
          for (std::size_t i = 0; i < a.rows(); ++i) {
            ga(i, static_cast<std::size_t>((*b)[i])) -= 1.0;
            for (std::size_t j = 0; j < a.cols(); ++j) ga(i, j) *= c;
          }
          accumulate(n.in[0], ga);
        }
        break;
      }
      case OpKind::leaf:
        break;
    }
  }

  BackwardResult result;
  result.disconnected = !connected;
  for (const auto& [name, id] : params_) {
    result.grads[name] =
        grads_[id].empty() ? Tensor::zeros(nodes_[id].value.shape()) : grads_[id];
  }
  return result;
}

}  // namespace monet::ad
