#include "monet/cells.hpp"

#include <cmath>
#include <stdexcept>

namespace monet::cells {

using ad::Tape;
using ad::Var;

Activation activation_from_string(const std::string& s) {
  if (s == "tanh") return Activation::tanh;
  if (s == "sigmoid") return Activation::sigmoid;
  throw std::invalid_argument("unknown activation '" + s + "'");
}

Schedule schedule_from_string(const std::string& s) {
  if (s == "constant") return Schedule::constant;
  if (s == "nag") return Schedule::nag;
  if (s == "scheduled_restart") return Schedule::scheduled_restart;
  throw std::invalid_argument("unknown momentum schedule '" + s + "'");
}

double MomentumHyper::mu_at(long t) const {
  if (t < 1) throw std::invalid_argument("momentum schedule: t must be >= 1");
  switch (schedule) {
    case Schedule::constant:
      if (mu < 0.0 || mu >= 1.0)
        throw std::invalid_argument("constant schedule requires 0 <= mu < 1");
      return mu;
    case Schedule::nag:
      return static_cast<double>(t - 1) / static_cast<double>(t + 2);
    case Schedule::scheduled_restart: {
      if (restart < 1) throw std::invalid_argument("scheduled restart requires F >= 1");
      const long r = t % restart;
      return static_cast<double>(r) / static_cast<double>(r + 3);
    }
  }
  return 0.0;
}

static Var apply_act(Tape& tape, Activation act, Var pre) {
  return act == Activation::tanh ? tape.tanh(pre) : tape.sigmoid(pre);
}

Var augment_ones(Tape& tape, Var x) {
  const std::size_t rows = tape.value(x).rows();
  return tape.concat(x, tape.constant(Tensor::ones({rows, 1})), 1);
}

CellVars zero_cell_state(Tape& tape, std::size_t batch, std::size_t hidden,
                         bool with_second_moment) {
  CellVars s;
  s.h = tape.constant(Tensor::zeros({batch, hidden}));
  s.v = tape.constant(Tensor::zeros({batch, hidden}));
  if (with_second_moment) s.m = tape.constant(Tensor::zeros({batch, hidden}));
  return s;
}

Var recurrent_step(Tape& tape, const RnnWeights& w, Var h_prev, Var x_aug) {
  Var pre = tape.add(tape.matmul(h_prev, tape.transpose(w.u)),
                     tape.matmul(x_aug, tape.transpose(w.w)));
  return apply_act(tape, w.act, pre);
}

CellVars momentum_step(Tape& tape, const RnnWeights& w, const MomentumHyper& hyper,
                       const CellVars& state, Var x_aug, long t) {
  const double mu = hyper.mu_at(t);
  Var wx = tape.matmul(x_aug, tape.transpose(w.w));
  Var v = tape.add(tape.scale(state.v, mu), tape.scale(wx, hyper.s));
  Var recur = tape.matmul(state.h, tape.transpose(w.u));
  Var drive = hyper.parameterization == Parameterization::v_form
                  ? v
                  : tape.matmul(v, tape.transpose(w.u));
  CellVars out;
  out.h = apply_act(tape, w.act, tape.add(recur, drive));
  out.v = v;
  out.m = state.m;
  return out;
}

Tensor momentum_step_single_eq(const Tensor& u, const Tensor& w, Activation act, double mu,
                               double s, const Tensor& h_prev, const Tensor& h_prev2,
                               const Tensor& x_aug) {
  Tensor inv = h_prev;
  for (auto& y : inv.data()) {
    if (act == Activation::tanh) {
      if (y <= -1.0 || y >= 1.0)
        throw std::domain_error("momentum_step_single_eq: atanh argument out of (-1,1)");
      y = std::atanh(y);
    } else {
      if (y <= 0.0 || y >= 1.0)
        throw std::domain_error("momentum_step_single_eq: logit argument out of (0,1)");
      y = std::log(y / (1.0 - y));
    }
  }
  Tensor pre = matmul(sub(h_prev, scale(h_prev2, mu)), transpose(u));
  pre = add(pre, scale(inv, mu));
  pre = add(pre, scale(matmul(x_aug, transpose(w)), s));
  for (auto& y : pre.data())
    y = act == Activation::tanh ? std::tanh(y) : sigmoid_scalar(y);
  return pre;
}

LstmVars lstm_step(Tape& tape, const LstmWeights& w, const LstmVars& state, Var x_aug) {
  auto gate_pre = [&](Var uu, Var ww) {
    return tape.add(tape.matmul(state.h, tape.transpose(uu)),
                    tape.matmul(x_aug, tape.transpose(ww)));
  };
  Var i = tape.sigmoid(gate_pre(w.u_i, w.w_i));
  Var c_tilde = tape.tanh(gate_pre(w.u_c, w.w_c));
  Var c = w.forget_gate
              ? tape.add(tape.hadamard(tape.sigmoid(gate_pre(w.u_f, w.w_f)), state.c),
                         tape.hadamard(i, c_tilde))
              : tape.add(state.c, tape.hadamard(i, c_tilde));
  Var o = tape.sigmoid(gate_pre(w.u_o, w.w_o));
  return LstmVars{tape.hadamard(o, tape.tanh(c)), c};
}

MomentumLstmVars zero_momentum_lstm_state(Tape& tape, std::size_t batch, std::size_t hidden,
                                          bool forget_gate) {
  MomentumLstmVars s;
  auto zeros = [&] { return tape.constant(Tensor::zeros({batch, hidden})); };
  s.h = zeros();
  s.c = zeros();
  s.v_i = zeros();
  s.v_c = zeros();
  s.v_o = zeros();
  if (forget_gate) s.v_f = zeros();
  return s;
}

MomentumLstmVars momentum_lstm_step(Tape& tape, const LstmWeights& w,
                                    const MomentumHyper& hyper, const MomentumLstmVars& state,
                                    Var x_aug, long t) {
  const double mu = hyper.mu_at(t);
  auto stream = [&](Var prev, Var ww) {
    Var wx = tape.matmul(x_aug, tape.transpose(ww));
    return tape.add(tape.scale(prev, mu), tape.scale(wx, hyper.s));
  };
  MomentumLstmVars out;
  out.v_i = stream(state.v_i, w.w_i);
  out.v_c = stream(state.v_c, w.w_c);
  out.v_o = stream(state.v_o, w.w_o);
  auto gate_pre = [&](Var uu, Var v) {
    return tape.add(tape.matmul(state.h, tape.transpose(uu)), v);
  };
  Var i = tape.sigmoid(gate_pre(w.u_i, out.v_i));
  Var c_tilde = tape.tanh(gate_pre(w.u_c, out.v_c));
  if (w.forget_gate) {
    out.v_f = stream(state.v_f, w.w_f);
    Var f = tape.sigmoid(gate_pre(w.u_f, out.v_f));
    out.c = tape.add(tape.hadamard(f, state.c), tape.hadamard(i, c_tilde));
  } else {
    out.c = tape.add(state.c, tape.hadamard(i, c_tilde));
  }
  Var o = tape.sigmoid(gate_pre(w.u_o, out.v_o));
  out.h = tape.hadamard(o, tape.tanh(out.c));
  return out;
}

CellVars adam_cell_step(Tape& tape, const RnnWeights& w, const AdamCellHyper& hyper,
                        const CellVars& state, Var x_aug) {
  if (!state.m.valid())
    throw std::invalid_argument("adam_cell_step: state lacks the second-moment stream");
  Var wx = tape.matmul(x_aug, tape.transpose(w.w));
  Var v = tape.add(tape.scale(state.v, hyper.mu), tape.scale(wx, hyper.s));
  Var m = tape.add(tape.scale(state.m, hyper.beta),
                   tape.scale(tape.hadamard(wx, wx), 1.0 - hyper.beta));
  Var denom = tape.add(tape.sqrt(m),
                       tape.constant(Tensor::full(tape.value(m).shape(), hyper.eps)));
  Var pre = tape.add(tape.matmul(state.h, tape.transpose(w.u)), tape.div(v, denom));
  return CellVars{apply_act(tape, w.act, pre), v, m};
}

std::vector<double> hidden_gradient_norms(const Tape& tape, const std::vector<Var>& h_trace) {
  std::vector<double> norms;
  norms.reserve(h_trace.size());
  for (Var h : h_trace) norms.push_back(norm2(tape.grad(h)));
  return norms;
}

std::vector<double> state_gradient_norms(const Tape& tape,
                                         const std::vector<std::vector<Var>>& traces) {
  std::vector<double> norms;
  norms.reserve(traces.size());
  for (const auto& bundle : traces) {
    double s = 0.0;
    for (Var v : bundle) {
      const Tensor g = tape.grad(v);
      s += dot(g, g);
    }
    norms.push_back(std::sqrt(s));
  }
  return norms;
}

}  // namespace monet::cells
