// ODE integration (adaptive Dormand-Prince 5(4), fixed-step RK4/Euler) with
// function-evaluation accounting, the plain/heavy-ball/generalized heavy-ball
// dynamics, and adjoint-based gradient computation for all three families.
#pragma once

#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "monet/finite_diff.hpp"
#include "monet/rng.hpp"
#include "monet/tensor.hpp"

namespace monet::ode {

enum class Method { dopri45, rk4, euler };
Method method_from_string(const std::string& s);

struct SolverOptions {
  Method method = Method::dopri45;
  double rtol = 1e-7;
  double atol = 1e-7;
  double fixed_dt = 0.01;  // rk4/euler only
  std::size_t max_steps = 10000000;
};

struct SolverStats {
  std::size_t forward_nfe = 0;
  std::size_t backward_nfe = 0;
  std::size_t accepted_steps = 0;
  std::size_t rejected_steps = 0;
  double rtol = 0.0;
  double atol = 0.0;
};

// Vector field f(h, t, theta) with registered parameters and an evaluation
// counter; the counter bumps exactly once per evaluation (vjp included).
class OdeFunc {
 public:
  virtual ~OdeFunc() = default;

  Tensor eval(const Tensor& h, double t) {
    ++nfe_;
    return eval_impl(h, t);
  }

  struct Vjp {
    Tensor f;          // forward value
    Tensor wrt_h;      // a^T df/dh, same shape as h
    GradMap wrt_params;
  };

  Vjp vjp(const Tensor& h, double t, const Tensor& a) {
    ++nfe_;
    return vjp_impl(h, t, a);
  }

  std::size_t nfe() const { return nfe_; }
  void reset_nfe() { nfe_ = 0; }

  virtual const ParamMap& params() const = 0;
  virtual void set_params(const ParamMap& p) = 0;

 protected:
  virtual Tensor eval_impl(const Tensor& h, double t) = 0;
  virtual Vjp vjp_impl(const Tensor& h, double t, const Tensor& a) = 0;

 private:
  std::size_t nfe_ = 0;
};

// Dense network with tanh hidden layers and a linear output layer. States are
// batch rows; dims = {in, hidden..., out}.
class MlpOdeFunc : public OdeFunc {
 public:
  MlpOdeFunc(std::vector<std::size_t> dims, Rng& rng, bool bias = true,
             std::string prefix = "f");
  MlpOdeFunc(std::vector<std::size_t> dims, ParamMap params, bool bias = true,
             std::string prefix = "f");

  const ParamMap& params() const override { return params_; }
  void set_params(const ParamMap& p) override { params_ = p; }
  std::size_t param_count() const;

 protected:
  Tensor eval_impl(const Tensor& h, double t) override;
  Vjp vjp_impl(const Tensor& h, double t, const Tensor& a) override;

 private:
  std::vector<std::size_t> dims_;
  bool bias_;
  std::string prefix_;
  ParamMap params_;
};

// Closed-form vector field, parameter-free; an analytic vjp may be supplied
// for adjoint tests.
class CallbackOdeFunc : public OdeFunc {
 public:
  using Fn = std::function<Tensor(const Tensor&, double)>;
  using VjpFn = std::function<Vjp(const Tensor&, double, const Tensor&)>;
  explicit CallbackOdeFunc(Fn fn, VjpFn vjp = nullptr)
      : fn_(std::move(fn)), vjp_(std::move(vjp)) {}
  const ParamMap& params() const override { return empty_; }
  void set_params(const ParamMap&) override {}

 protected:
  Tensor eval_impl(const Tensor& h, double t) override { return fn_(h, t); }
  Vjp vjp_impl(const Tensor& h, double t, const Tensor& a) override {
    if (!vjp_) throw std::runtime_error("CallbackOdeFunc has no vector-Jacobian product");
    return vjp_(h, t, a);
  }

 private:
  Fn fn_;
  VjpFn vjp_;
  ParamMap empty_;
};

struct OdeState {
  Tensor h;
  Tensor m;  // empty for plain NODE
  bool has_momentum() const { return !m.empty(); }
};

enum class GhbActivation { identity, tanh, hardtanh };
GhbActivation ghb_activation_from_string(const std::string& s);

// gamma = eps_cap * sigmoid(omega), xi = softplus(chi); both stay positive
// for every finite parameter value.
struct DampingParams {
  double omega = -3.0;
  double eps_cap = 1.0;
  double chi = 0.0;
  bool train_gamma = false;
  bool train_xi = false;
  double gamma() const { return eps_cap * sigmoid_scalar(omega); }
  double xi() const { return softplus_scalar(chi); }
  double dgamma_domega() const {
    const double s = sigmoid_scalar(omega);
    return eps_cap * s * (1.0 - s);
  }
  double dxi_dchi() const { return sigmoid_scalar(chi); }
};

enum class OdeModel { node, hbnode, ghbnode };
OdeModel ode_model_from_string(const std::string& s);

struct OdeDynamics {
  OdeModel model = OdeModel::node;
  double gamma = 0.0;  // hbnode/ghbnode damping
  double xi = 0.0;     // ghbnode restoring coefficient
  GhbActivation act = GhbActivation::identity;
};

// Time derivatives of the state under each model; each evaluates f once.
OdeState node_rhs(OdeFunc& f, const OdeState& s, double t);
OdeState hbnode_rhs(OdeFunc& f, const OdeState& s, double t, double gamma);
OdeState ghbnode_rhs(OdeFunc& f, const OdeState& s, double t, double gamma, double xi,
                     GhbActivation act);

std::pair<OdeState, SolverStats> integrate(OdeFunc& f, const OdeDynamics& dyn, OdeState y0,
                                           double t0, double t1, const SolverOptions& opts);

// As above but also reports the state at each requested time (strictly between
// t0 and t1, ordered in the direction of integration).
std::pair<OdeState, SolverStats> integrate_with_checkpoints(
    OdeFunc& f, const OdeDynamics& dyn, OdeState y0, double t0, double t1,
    const SolverOptions& opts, const std::vector<double>& times,
    std::vector<OdeState>* states_out);

struct AdjointSample {
  double t = 0.0;
  Tensor a_h;
  Tensor a_m;  // empty for plain NODE
  Tensor h;
  Tensor m;
};

struct AdjointOptions {
  SolverOptions solver;
  double clip_norm = 0.0;            // 0 disables adjoint-state clipping
  std::vector<double> checkpoints;   // times at which to record the adjoint
};

struct AdjointResult {
  GradMap param_grads;  // f parameters plus "omega"/"chi" when trainable
  Tensor dL_dh0;
  Tensor dL_dm0;  // empty for plain NODE
  SolverStats stats;
  std::vector<AdjointSample> trace;  // one entry per checkpoint, t descending
};

// Solves the adjoint system backward from t1 to t0, recomputing the state
// jointly, and accumulates dL/dtheta. Terminal conditions: a_h(T) = dL/dh_T,
// a_m(T) = 0 for momentum models whose loss reads h(T) only.
AdjointResult adjoint_backward(OdeFunc& f, const OdeDynamics& dyn, const OdeState& y_terminal,
                               const Tensor& dL_dhT, double t0, double t1,
                               const AdjointOptions& opts,
                               const DampingParams* damping = nullptr);

// ||(a_h, a_m)|| per checkpoint from an adjoint trace.
std::vector<std::pair<double, double>> adjoint_norm_trace(const std::vector<AdjointSample>& trace);

}  // namespace monet::ode
