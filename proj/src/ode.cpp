#include "monet/ode.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "monet/tape.hpp"

namespace monet::ode {

Method method_from_string(const std::string& s) {
  if (s == "dopri45") return Method::dopri45;
  if (s == "rk4") return Method::rk4;
  if (s == "euler") return Method::euler;
  throw std::invalid_argument("unknown solver method '" + s + "'");
}

GhbActivation ghb_activation_from_string(const std::string& s) {
  if (s == "identity") return GhbActivation::identity;
  if (s == "tanh") return GhbActivation::tanh;
  if (s == "hardtanh") return GhbActivation::hardtanh;
  throw std::invalid_argument("unknown ghbnode activation '" + s + "'");
}

OdeModel ode_model_from_string(const std::string& s) {
  if (s == "node") return OdeModel::node;
  if (s == "hbnode") return OdeModel::hbnode;
  if (s == "ghbnode") return OdeModel::ghbnode;
  throw std::invalid_argument("unknown ode model '" + s + "'");
}

namespace {

using Vec = std::vector<double>;
using FlatRhs = std::function<void(double, const Vec&, Vec&)>;

struct RawStats {
  std::size_t accepted = 0;
  std::size_t rejected = 0;
};

// Dormand-Prince 5(4) tableau.
constexpr double C2 = 1.0 / 5, C3 = 3.0 / 10, C4 = 4.0 / 5, C5 = 8.0 / 9;
constexpr double A21 = 1.0 / 5;
constexpr double A31 = 3.0 / 40, A32 = 9.0 / 40;
constexpr double A41 = 44.0 / 45, A42 = -56.0 / 15, A43 = 32.0 / 9;
constexpr double A51 = 19372.0 / 6561, A52 = -25360.0 / 2187, A53 = 64448.0 / 6561,
                 A54 = -212.0 / 729;
constexpr double A61 = 9017.0 / 3168, A62 = -355.0 / 33, A63 = 46732.0 / 5247, A64 = 49.0 / 176,
                 A65 = -5103.0 / 18656;
constexpr double A71 = 35.0 / 384, A73 = 500.0 / 1113, A74 = 125.0 / 192, A75 = -2187.0 / 6784,
                 A76 = 11.0 / 84;
// b - bhat, the embedded error weights
constexpr double E1 = 71.0 / 57600, E3 = -71.0 / 16695, E4 = 71.0 / 1920,
                 E5 = -17253.0 / 339200, E6 = 22.0 / 525, E7 = -1.0 / 40;

void check_finite(const Vec& y, double t) {
  for (double v : y)
    if (!std::isfinite(v))
      throw std::runtime_error("integrate: non-finite state at t=" + std::to_string(t));
}

RawStats integrate_dopri45(const FlatRhs& rhs, Vec& y, double t0, double t1,
                           const SolverOptions& opts) {
  const std::size_t n = y.size();
  const double dir = t1 > t0 ? 1.0 : -1.0;
  const double hmax = std::abs(t1 - t0);
  RawStats stats;

  Vec k1(n), k2(n), k3(n), k4(n), k5(n), k6(n), k7(n), ytmp(n), ynew(n);
  double t = t0;
  rhs(t, y, k1);

  // initial step: standard estimate from ||y||, ||f||; degenerate fields get
  // the whole interval and rely on the embedded error control
  double h;
  {
    double d0 = 0.0, d1 = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      const double sc = opts.atol + opts.rtol * std::abs(y[i]);
      d0 += (y[i] / sc) * (y[i] / sc);
      d1 += (k1[i] / sc) * (k1[i] / sc);
    }
    d0 = std::sqrt(d0 / static_cast<double>(n));
    d1 = std::sqrt(d1 / static_cast<double>(n));
    if (d0 < 1e-10 || d1 < 1e-10) {
      h = hmax;
    } else {
      const double h0 = 0.01 * d0 / d1;
      for (std::size_t i = 0; i < n; ++i) ytmp[i] = y[i] + dir * h0 * k1[i];
      rhs(t + dir * h0, ytmp, k2);
      double d2 = 0.0;
      for (std::size_t i = 0; i < n; ++i) {
        const double sc = opts.atol + opts.rtol * std::abs(y[i]);
        d2 += ((k2[i] - k1[i]) / sc) * ((k2[i] - k1[i]) / sc);
      }
      d2 = std::sqrt(d2 / static_cast<double>(n)) / h0;
      const double dm = std::max(d1, d2);
      const double h1 = dm <= 1e-15 ? std::max(1e-6, h0 * 1e-3) : std::pow(0.01 / dm, 0.2);
      h = std::min({100.0 * h0, h1, hmax});
    }
  }

  std::size_t steps = 0;
  while (dir * (t1 - t) > 0.0) {
    if (++steps > opts.max_steps)
      throw std::runtime_error("integrate: step budget exhausted at t=" + std::to_string(t));
    h = std::min(h, std::abs(t1 - t));
    if (t + dir * h == t)
      throw std::runtime_error("integrate: step size underflow at t=" + std::to_string(t));
    const double hd = dir * h;

    for (std::size_t i = 0; i < n; ++i) ytmp[i] = y[i] + hd * A21 * k1[i];
    rhs(t + C2 * hd, ytmp, k2);
    for (std::size_t i = 0; i < n; ++i) ytmp[i] = y[i] + hd * (A31 * k1[i] + A32 * k2[i]);
    rhs(t + C3 * hd, ytmp, k3);
    for (std::size_t i = 0; i < n; ++i)
      ytmp[i] = y[i] + hd * (A41 * k1[i] + A42 * k2[i] + A43 * k3[i]);
    rhs(t + C4 * hd, ytmp, k4);
    for (std::size_t i = 0; i < n; ++i)
      ytmp[i] = y[i] + hd * (A51 * k1[i] + A52 * k2[i] + A53 * k3[i] + A54 * k4[i]);
    rhs(t + C5 * hd, ytmp, k5);
    for (std::size_t i = 0; i < n; ++i)
      ytmp[i] = y[i] + hd * (A61 * k1[i] + A62 * k2[i] + A63 * k3[i] + A64 * k4[i] + A65 * k5[i]);
    rhs(t + hd, ytmp, k6);
    for (std::size_t i = 0; i < n; ++i)
      ynew[i] = y[i] + hd * (A71 * k1[i] + A73 * k3[i] + A74 * k4[i] + A75 * k5[i] + A76 * k6[i]);
    rhs(t + hd, ynew, k7);

    double err = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      const double e =
          hd * (E1 * k1[i] + E3 * k3[i] + E4 * k4[i] + E5 * k5[i] + E6 * k6[i] + E7 * k7[i]);
      const double sc = opts.atol + opts.rtol * std::max(std::abs(y[i]), std::abs(ynew[i]));
      err += (e / sc) * (e / sc);
    }
    err = std::sqrt(err / static_cast<double>(n));

    if (err <= 1.0) {
      t += hd;
      y = ynew;
      k1 = k7;  // first-same-as-last
      check_finite(y, t);
      ++stats.accepted;
      const double grow = err == 0.0 ? 10.0 : std::clamp(0.9 * std::pow(err, -0.2), 0.2, 10.0);
      h = std::min(h * grow, hmax);
    } else {
      ++stats.rejected;
      h *= std::clamp(0.9 * std::pow(err, -0.2), 0.2, 1.0);
    }
  }
  return stats;
}

RawStats integrate_fixed(const FlatRhs& rhs, Vec& y, double t0, double t1,
                         const SolverOptions& opts, bool rk4) {
  const std::size_t n = y.size();
  if (opts.fixed_dt <= 0.0) throw std::invalid_argument("integrate: fixed_dt must be positive");
  const auto steps = std::max<std::size_t>(
      1, static_cast<std::size_t>(std::ceil(std::abs(t1 - t0) / opts.fixed_dt)));
  const double h = (t1 - t0) / static_cast<double>(steps);
  Vec k1(n), k2(n), k3(n), k4(n), ytmp(n);
  double t = t0;
  for (std::size_t s = 0; s < steps; ++s) {
    rhs(t, y, k1);
    if (rk4) {
      for (std::size_t i = 0; i < n; ++i) ytmp[i] = y[i] + 0.5 * h * k1[i];
      rhs(t + 0.5 * h, ytmp, k2);
      for (std::size_t i = 0; i < n; ++i) ytmp[i] = y[i] + 0.5 * h * k2[i];
      rhs(t + 0.5 * h, ytmp, k3);
      for (std::size_t i = 0; i < n; ++i) ytmp[i] = y[i] + h * k3[i];
      rhs(t + h, ytmp, k4);
      for (std::size_t i = 0; i < n; ++i)
        y[i] += h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
    } else {
      for (std::size_t i = 0; i < n; ++i) y[i] += h * k1[i];
    }
    t = t0 + h * static_cast<double>(s + 1);
    check_finite(y, t);
  }
  return RawStats{steps, 0};
}

RawStats integrate_raw(const FlatRhs& rhs, Vec& y, double t0, double t1,
                       const SolverOptions& opts) {
  if (t0 == t1) throw std::invalid_argument("integrate: t0 and t1 must differ");
  switch (opts.method) {
    case Method::dopri45:
      if (opts.rtol <= 0.0 || opts.atol <= 0.0)
        throw std::invalid_argument("integrate: rtol and atol must be positive");
      return integrate_dopri45(rhs, y, t0, t1, opts);
    case Method::rk4:
      return integrate_fixed(rhs, y, t0, t1, opts, true);
    case Method::euler:
      return integrate_fixed(rhs, y, t0, t1, opts, false);
  }
  return {};
}

Tensor apply_ghb_act(const Tensor& m, GhbActivation act) {
  switch (act) {
    case GhbActivation::identity:
      return m;
    case GhbActivation::tanh:
      return map_unary(m, +[](double x) { return std::tanh(x); });
    case GhbActivation::hardtanh:
      return map_unary(m, +[](double x) { return std::clamp(x, -5.0, 5.0); });
  }
  return m;
}

Tensor ghb_act_prime(const Tensor& m, GhbActivation act) {
  switch (act) {
    case GhbActivation::identity:
      return Tensor::ones(m.shape());
    case GhbActivation::tanh: {
      Tensor d = m;
      for (auto& v : d.data()) {
        const double th = std::tanh(v);
        v = 1.0 - th * th;
      }
      return d;
    }
    case GhbActivation::hardtanh: {
      Tensor d = m;
      for (auto& v : d.data()) v = (v > -5.0 && v < 5.0) ? 1.0 : 0.0;
      return d;
    }
  }
  return m;
}

void copy_in(Vec& y, std::size_t offset, const Tensor& t) {
  std::copy(t.data().begin(), t.data().end(), y.begin() + offset);
}

Tensor copy_out(const Vec& y, std::size_t offset, const std::vector<std::size_t>& shape,
                std::size_t count) {
  Tensor t(shape);
  std::copy(y.begin() + offset, y.begin() + offset + count, t.data().begin());
  return t;
}

}  // namespace

OdeState node_rhs(OdeFunc& f, const OdeState& s, double t) {
  return OdeState{f.eval(s.h, t), Tensor()};
}

OdeState hbnode_rhs(OdeFunc& f, const OdeState& s, double t, double gamma) {
  if (!s.has_momentum()) throw std::invalid_argument("hbnode_rhs: state lacks momentum");
  Tensor dm = f.eval(s.h, t);
  for (std::size_t i = 0; i < dm.numel(); ++i) dm[i] -= gamma * s.m[i];
  return OdeState{s.m, std::move(dm)};
}

OdeState ghbnode_rhs(OdeFunc& f, const OdeState& s, double t, double gamma, double xi,
                     GhbActivation act) {
  if (!s.has_momentum()) throw std::invalid_argument("ghbnode_rhs: state lacks momentum");
  Tensor dm = f.eval(s.h, t);
  for (std::size_t i = 0; i < dm.numel(); ++i) dm[i] += -gamma * s.m[i] - xi * s.h[i];
  return OdeState{apply_ghb_act(s.m, act), std::move(dm)};
}

namespace {

OdeState model_rhs(OdeFunc& f, const OdeDynamics& dyn, const OdeState& s, double t) {
  switch (dyn.model) {
    case OdeModel::node:
      return node_rhs(f, s, t);
    case OdeModel::hbnode:
      return hbnode_rhs(f, s, t, dyn.gamma);
    case OdeModel::ghbnode:
      return ghbnode_rhs(f, s, t, dyn.gamma, dyn.xi, dyn.act);
  }
  return {};
}

}  // namespace

std::pair<OdeState, SolverStats> integrate_with_checkpoints(
    OdeFunc& f, const OdeDynamics& dyn, OdeState y0, double t0, double t1,
    const SolverOptions& opts, const std::vector<double>& times,
    std::vector<OdeState>* states_out) {
  if (dyn.model != OdeModel::node && !y0.has_momentum())
    throw std::invalid_argument("integrate: momentum models need an (h, m) state");

  const auto h_shape = y0.h.shape();
  const std::size_t n = y0.h.numel();
  const bool with_m = y0.has_momentum();

  Vec y(with_m ? 2 * n : n);
  copy_in(y, 0, y0.h);
  if (with_m) copy_in(y, n, y0.m);

  FlatRhs rhs = [&](double t, const Vec& yy, Vec& dy) {
    OdeState s;
    s.h = copy_out(yy, 0, h_shape, n);
    if (with_m) s.m = copy_out(yy, n, h_shape, n);
    OdeState d = model_rhs(f, dyn, s, t);
    copy_in(dy, 0, d.h);
    if (with_m) copy_in(dy, n, d.m);
  };

  const std::size_t nfe_before = f.nfe();
  RawStats raw;
  double cur = t0;
  for (double cp : times) {
    if ((t1 > t0 && (cp <= cur || cp > t1)) || (t1 < t0 && (cp >= cur || cp < t1)))
      throw std::invalid_argument("integrate: checkpoints must be ordered within (t0, t1]");
    const RawStats seg = integrate_raw(rhs, y, cur, cp, opts);
    raw.accepted += seg.accepted;
    raw.rejected += seg.rejected;
    cur = cp;
    if (states_out) {
      OdeState s;
      s.h = copy_out(y, 0, h_shape, n);
      if (with_m) s.m = copy_out(y, n, h_shape, n);
      states_out->push_back(std::move(s));
    }
  }
  if (cur != t1) {
    const RawStats seg = integrate_raw(rhs, y, cur, t1, opts);
    raw.accepted += seg.accepted;
    raw.rejected += seg.rejected;
  }

  OdeState out;
  out.h = copy_out(y, 0, h_shape, n);
  if (with_m) out.m = copy_out(y, n, h_shape, n);

  SolverStats stats;
  stats.forward_nfe = f.nfe() - nfe_before;
  stats.accepted_steps = raw.accepted;
  stats.rejected_steps = raw.rejected;
  stats.rtol = opts.rtol;
  stats.atol = opts.atol;
  return {std::move(out), stats};
}

std::pair<OdeState, SolverStats> integrate(OdeFunc& f, const OdeDynamics& dyn, OdeState y0,
                                           double t0, double t1, const SolverOptions& opts) {
  return integrate_with_checkpoints(f, dyn, std::move(y0), t0, t1, opts, {}, nullptr);
}

// ---------------------------------------------------------------------------
// MlpOdeFunc

MlpOdeFunc::MlpOdeFunc(std::vector<std::size_t> dims, Rng& rng, bool bias, std::string prefix)
    : dims_(std::move(dims)), bias_(bias), prefix_(std::move(prefix)) {
  if (dims_.size() < 2) throw std::invalid_argument("MlpOdeFunc: need at least in/out dims");
  for (std::size_t l = 0; l + 1 < dims_.size(); ++l) {
    params_[prefix_ + ".w" + std::to_string(l)] = rng.init_weight(dims_[l + 1], dims_[l]);
    if (bias_) {
      const double bound = 1.0 / std::sqrt(static_cast<double>(dims_[l]));
      params_[prefix_ + ".b" + std::to_string(l)] =
          rng.uniform_tensor({1, dims_[l + 1]}, -bound, bound);
    }
  }
}

MlpOdeFunc::MlpOdeFunc(std::vector<std::size_t> dims, ParamMap params, bool bias,
                       std::string prefix)
    : dims_(std::move(dims)), bias_(bias), prefix_(std::move(prefix)), params_(std::move(params)) {}

std::size_t MlpOdeFunc::param_count() const {
  std::size_t c = 0;
  for (const auto& [k, v] : params_) c += v.numel();
  return c;
}

Tensor MlpOdeFunc::eval_impl(const Tensor& h, double) {
  Tensor x = h;
  const std::size_t layers = dims_.size() - 1;
  for (std::size_t l = 0; l < layers; ++l) {
    x = matmul(x, transpose(params_.at(prefix_ + ".w" + std::to_string(l))));
    if (bias_) {
      const Tensor& b = params_.at(prefix_ + ".b" + std::to_string(l));
      for (std::size_t i = 0; i < x.rows(); ++i)
        for (std::size_t j = 0; j < x.cols(); ++j) x(i, j) += b(0, j);
    }
    if (l + 1 < layers)
      for (auto& v : x.data()) v = std::tanh(v);
  }
  return x;
}

OdeFunc::Vjp MlpOdeFunc::vjp_impl(const Tensor& h, double, const Tensor& a) {
  ad::Tape tape;
  ad::Var x = tape.parameter("__h", h);
  std::vector<ad::Var> ws, bs;
  const std::size_t layers = dims_.size() - 1;
  for (std::size_t l = 0; l < layers; ++l) {
    ws.push_back(tape.parameter(prefix_ + ".w" + std::to_string(l),
                                params_.at(prefix_ + ".w" + std::to_string(l))));
    if (bias_)
      bs.push_back(tape.parameter(prefix_ + ".b" + std::to_string(l),
                                  params_.at(prefix_ + ".b" + std::to_string(l))));
  }
  ad::Var ones = tape.constant(Tensor::ones({h.rows(), 1}));
  ad::Var cur = x;
  for (std::size_t l = 0; l < layers; ++l) {
    cur = tape.matmul(cur, tape.transpose(ws[l]));
    if (bias_) cur = tape.add(cur, tape.matmul(ones, bs[l]));
    if (l + 1 < layers) cur = tape.tanh(cur);
  }
  ad::Var pairing = tape.sum(tape.hadamard(tape.constant(a), cur));
  Vjp out;
  out.f = tape.value(cur);
  auto back = tape.backward(pairing);
  out.wrt_h = back.grads.at("__h");
  back.grads.erase("__h");
  out.wrt_params = std::move(back.grads);
  return out;
}

// ---------------------------------------------------------------------------
// Adjoint solves

AdjointResult adjoint_backward(OdeFunc& f, const OdeDynamics& dyn, const OdeState& y_terminal,
                               const Tensor& dL_dhT, double t0, double t1,
                               const AdjointOptions& opts, const DampingParams* damping) {
  const bool with_m = dyn.model != OdeModel::node;
  if (with_m && !y_terminal.has_momentum())
    throw std::invalid_argument("adjoint_backward: momentum models need an (h, m) state");
  if (!dL_dhT.same_shape(y_terminal.h))
    throw std::invalid_argument("adjoint_backward: dL/dh_T shape mismatch");

  const auto h_shape = y_terminal.h.shape();
  const std::size_t n = y_terminal.h.numel();
  const bool train_gamma = with_m && damping != nullptr && damping->train_gamma;
  const bool train_xi = dyn.model == OdeModel::ghbnode && damping != nullptr && damping->train_xi;

  // flat parameter layout in map order
  std::vector<std::pair<std::string, std::size_t>> param_sizes;
  std::size_t p_total = 0;
  for (const auto& [name, tensor] : f.params()) {
    param_sizes.emplace_back(name, tensor.numel());
    p_total += tensor.numel();
  }

  const std::size_t state_len =
      (with_m ? 4 * n : 2 * n) + p_total + (train_gamma ? 1 : 0) + (train_xi ? 1 : 0);
  const std::size_t off_m = n;
  const std::size_t off_ah = with_m ? 2 * n : n;
  const std::size_t off_am = with_m ? 3 * n : 0;
  const std::size_t off_p = with_m ? 4 * n : 2 * n;
  const std::size_t off_gamma = off_p + p_total;
  const std::size_t off_xi = off_gamma + (train_gamma ? 1 : 0);

  Vec y(state_len, 0.0);
  copy_in(y, 0, y_terminal.h);
  if (with_m) copy_in(y, off_m, y_terminal.m);
  copy_in(y, off_ah, dL_dhT);  // a_m(T) = 0 already

  FlatRhs rhs = [&](double t, const Vec& yy, Vec& dy) {
    std::fill(dy.begin(), dy.end(), 0.0);
    Tensor h = copy_out(yy, 0, h_shape, n);
    Tensor a_h = copy_out(yy, off_ah, h_shape, n);

    if (!with_m) {
      auto v = f.vjp(h, t, a_h);
      copy_in(dy, 0, v.f);  // dh/dt = f
      for (std::size_t i = 0; i < n; ++i) dy[off_ah + i] = -v.wrt_h[i];
      std::size_t off = off_p;
      for (const auto& [name, count] : param_sizes) {
        const Tensor& g = v.wrt_params.at(name);
        for (std::size_t i = 0; i < count; ++i) dy[off + i] = -g[i];
        off += count;
      }
      return;
    }

    Tensor m = copy_out(yy, off_m, h_shape, n);
    Tensor a_m = copy_out(yy, off_am, h_shape, n);
    auto v = f.vjp(h, t, a_m);

    if (dyn.model == OdeModel::hbnode) {
      copy_in(dy, 0, m);  // dh/dt = m
      for (std::size_t i = 0; i < n; ++i) {
        dy[off_m + i] = -dyn.gamma * m[i] + v.f[i];
        dy[off_ah + i] = -v.wrt_h[i];
        dy[off_am + i] = -a_h[i] + dyn.gamma * a_m[i];
      }
    } else {
      Tensor act_m = apply_ghb_act(m, dyn.act);
      Tensor act_d = ghb_act_prime(m, dyn.act);
      copy_in(dy, 0, act_m);
      for (std::size_t i = 0; i < n; ++i) {
        dy[off_m + i] = -dyn.gamma * m[i] + v.f[i] - dyn.xi * h[i];
        dy[off_ah + i] = -v.wrt_h[i] + dyn.xi * a_m[i];
        dy[off_am + i] = -a_h[i] * act_d[i] + dyn.gamma * a_m[i];
      }
    }

    std::size_t off = off_p;
    for (const auto& [name, count] : param_sizes) {
      const Tensor& g = v.wrt_params.at(name);
      for (std::size_t i = 0; i < count; ++i) dy[off + i] = -g[i];
      off += count;
    }
    if (train_gamma) {
      // d(rhs_m)/dgamma = -m, negated by the backward accumulation convention
      double s = 0.0;
      for (std::size_t i = 0; i < n; ++i) s += a_m[i] * m[i];
      dy[off_gamma] = s * damping->dgamma_domega();
    }
    if (train_xi) {
      double s = 0.0;
      for (std::size_t i = 0; i < n; ++i) s += a_m[i] * h[i];
      dy[off_xi] = s * damping->dxi_dchi();
    }
  };

  // backward integration from t1 down to t0, segmented at checkpoints
  std::vector<double> cps = opts.checkpoints;
  std::sort(cps.begin(), cps.end(), std::greater<>());
  if (opts.clip_norm > 0.0 && cps.empty()) {
    for (int i = 1; i < 8; ++i)
      cps.push_back(t1 - (t1 - t0) * static_cast<double>(i) / 8.0);
  }

  AdjointResult result;
  const std::size_t nfe_before = f.nfe();
  RawStats raw;

  auto record = [&](double t) {
    AdjointSample s;
    s.t = t;
    s.a_h = copy_out(y, off_ah, h_shape, n);
    if (with_m) s.a_m = copy_out(y, off_am, h_shape, n);
    s.h = copy_out(y, 0, h_shape, n);
    if (with_m) s.m = copy_out(y, off_m, h_shape, n);
    result.trace.push_back(std::move(s));
  };
  auto clip = [&] {
    if (opts.clip_norm <= 0.0) return;
    double s = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      s += y[off_ah + i] * y[off_ah + i];
      if (with_m) s += y[off_am + i] * y[off_am + i];
    }
    s = std::sqrt(s);
    if (s > opts.clip_norm) {
      const double c = opts.clip_norm / s;
      for (std::size_t i = 0; i < n; ++i) {
        y[off_ah + i] *= c;
        if (with_m) y[off_am + i] *= c;
      }
    }
  };

  double cur = t1;
  for (double cp : cps) {
    if (cp > cur || cp < t0)
      throw std::invalid_argument("adjoint_backward: checkpoints must lie in [t0, t1]");
    if (cp == cur) {
      record(cur);
      continue;
    }
    const RawStats seg = integrate_raw(rhs, y, cur, cp, opts.solver);
    raw.accepted += seg.accepted;
    raw.rejected += seg.rejected;
    cur = cp;
    record(cur);
    clip();
  }
  if (cur > t0) {
    const RawStats seg = integrate_raw(rhs, y, cur, t0, opts.solver);
    raw.accepted += seg.accepted;
    raw.rejected += seg.rejected;
  }

  result.dL_dh0 = copy_out(y, off_ah, h_shape, n);
  if (with_m) result.dL_dm0 = copy_out(y, off_am, h_shape, n);
  std::size_t off = off_p;
  for (const auto& [name, count] : param_sizes) {
    result.param_grads[name] = copy_out(y, off, f.params().at(name).shape(), count);
    off += count;
  }
  if (train_gamma) result.param_grads["omega"] = Tensor::vector({y[off_gamma]});
  if (train_xi) result.param_grads["chi"] = Tensor::vector({y[off_xi]});

  result.stats.backward_nfe = f.nfe() - nfe_before;
  result.stats.accepted_steps = raw.accepted;
  result.stats.rejected_steps = raw.rejected;
  result.stats.rtol = opts.solver.rtol;
  result.stats.atol = opts.solver.atol;
  return result;
}

std::vector<std::pair<double, double>> adjoint_norm_trace(
    const std::vector<AdjointSample>& trace) {
  std::vector<std::pair<double, double>> out;
  out.reserve(trace.size());
  for (const auto& s : trace) {
    double v = dot(s.a_h, s.a_h);
    if (!s.a_m.empty()) v += dot(s.a_m, s.a_m);
    out.emplace_back(s.t, std::sqrt(v));
  }
  return out;
}

}  // namespace monet::ode
