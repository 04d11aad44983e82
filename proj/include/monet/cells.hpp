// Recurrent cells: plain, momentum (v- and u-parameterizations, NAG and
// scheduled-restart coefficient schedules), LSTM with per-gate momentum
// streams, and Adam/RMSProp cells. Hidden states are row vectors (batch rows),
// and the input bias is absorbed: callers pass x augmented with a ones column.
#pragma once

#include <string>
#include <vector>

#include "monet/tape.hpp"

namespace monet::cells {

enum class Activation { tanh, sigmoid };

Activation activation_from_string(const std::string& s);

enum class Schedule { constant, nag, scheduled_restart };

Schedule schedule_from_string(const std::string& s);

enum class Parameterization { v_form, u_form };

struct MomentumHyper {
  double mu = 0.6;       // momentum coefficient (constant schedule)
  double s = 1.0;        // step-size analog
  Schedule schedule = Schedule::constant;
  int restart = 64;      // F, scheduled_restart only
  Parameterization parameterization = Parameterization::v_form;

  // coefficient at timestep t (1-based)
  double mu_at(long t) const;
};

struct RnnWeights {
  ad::Var u;  // h x h
  ad::Var w;  // h x (d+1), bias absorbed
  Activation act = Activation::tanh;
};

struct CellVars {
  ad::Var h;
  ad::Var v;
  ad::Var m;  // Adam/RMSProp second-moment stream only
};

// Appends a ones column: (B x d) -> (B x d+1).
ad::Var augment_ones(ad::Tape& tape, ad::Var x);

// Zero-initialized state at t=0.
CellVars zero_cell_state(ad::Tape& tape, std::size_t batch, std::size_t hidden,
                         bool with_second_moment = false);

// h_t = act(h_prev U^T + x_aug W^T)
ad::Var recurrent_step(ad::Tape& tape, const RnnWeights& w, ad::Var h_prev, ad::Var x_aug);

// v-form: v_t = mu v_{t-1} + s x_aug W^T;  h_t = act(h_prev U^T + v_t)
// u-form: v_t = mu v_{t-1} + s x_aug W^T;  h_t = act(h_prev U^T + v_t U^T)
CellVars momentum_step(ad::Tape& tape, const RnnWeights& w, const MomentumHyper& hyper,
                       const CellVars& state, ad::Var x_aug, long t);

// Single-equation reformulation of the momentum cell; value-level only, used
// as an equivalence oracle. h_t = act(U(h_{t-1} - mu h_{t-2}) +
// mu act^{-1}(h_{t-1}) + s W x_aug), row-vector form. Throws std::domain_error
// when act^{-1} is evaluated outside its domain.
Tensor momentum_step_single_eq(const Tensor& u, const Tensor& w, Activation act, double mu,
                               double s, const Tensor& h_prev, const Tensor& h_prev2,
                               const Tensor& x_aug);

struct LstmWeights {
  ad::Var u_i, u_c, u_o;  // h x h
  ad::Var w_i, w_c, w_o;  // h x (d+1)
  bool forget_gate = false;
  ad::Var u_f, w_f;  // used when forget_gate
};

struct LstmVars {
  ad::Var h;
  ad::Var c;
};

// Gate equations with additive cell update c_t = c_{t-1} + i_t (.) c_tilde_t;
// the conventional forget-gate variant sits behind LstmWeights::forget_gate.
LstmVars lstm_step(ad::Tape& tape, const LstmWeights& w, const LstmVars& state, ad::Var x_aug);

struct MomentumLstmVars {
  ad::Var h;
  ad::Var c;
  ad::Var v_i, v_c, v_o, v_f;  // one momentum stream per gate input transform
};

MomentumLstmVars zero_momentum_lstm_state(ad::Tape& tape, std::size_t batch,
                                          std::size_t hidden, bool forget_gate);

MomentumLstmVars momentum_lstm_step(ad::Tape& tape, const LstmWeights& w,
                                    const MomentumHyper& hyper, const MomentumLstmVars& state,
                                    ad::Var x_aug, long t);

struct AdamCellHyper {
  double mu = 0.6;    // 0 gives the RMSProp cell
  double s = 1.0;
  double beta = 0.999;
  double eps = 1e-8;
};

// v_t = mu v + s Wx;  m_t = beta m + (1-beta)(Wx (.) Wx);
// h_t = act(h U^T + v_t / (sqrt(m_t) + eps))
CellVars adam_cell_step(ad::Tape& tape, const RnnWeights& w, const AdamCellHyper& hyper,
                        const CellVars& state, ad::Var x_aug);

// l2 norms of dL/dh_t for each recorded hidden state; call after
// Tape::backward so the norms come from the same pass as parameter gradients.
std::vector<double> hidden_gradient_norms(const ad::Tape& tape,
                                          const std::vector<ad::Var>& h_trace);

// Same, but over the full recurrent state bundle at each step (h and any
// momentum/second-moment streams). The eliminated one-equation form folds the
// momentum stream into h_t, so the comparable per-step quantity on the
// two-equation tape is the norm over the whole bundle.
std::vector<double> state_gradient_norms(const ad::Tape& tape,
                                         const std::vector<std::vector<ad::Var>>& traces);

}  // namespace monet::cells
