#include "monet/optim.hpp"

#include <cmath>
#include <stdexcept>

namespace monet {

OptKind opt_kind_from_string(const std::string& s) {
  if (s == "sgd") return OptKind::sgd;
  if (s == "heavy_ball") return OptKind::heavy_ball;
  if (s == "adam") return OptKind::adam;
  throw std::invalid_argument("unknown optimizer kind '" + s + "'");
}

const char* opt_kind_name(OptKind k) {
  switch (k) {
    case OptKind::sgd: return "sgd";
    case OptKind::heavy_ball: return "heavy_ball";
    case OptKind::adam: return "adam";
  }
  return "?";
}

void optimizer_step(OptimizerState& state, ParamMap& params, const GradMap& grads) {
  state.step += 1;
  for (auto& [name, x] : params) {
    auto it = grads.find(name);
    if (it == grads.end())
      throw std::invalid_argument("optimizer_step: missing gradient for '" + name + "'");
    const Tensor& g = it->second;
    if (!g.same_shape(x))
      throw std::invalid_argument("optimizer_step: shape mismatch for '" + name + "'");

    switch (state.kind) {
      case OptKind::sgd: {
        for (std::size_t i = 0; i < x.numel(); ++i) x[i] -= state.step_size * g[i];
        break;
      }
      case OptKind::heavy_ball: {
        auto [mit, inserted] = state.moment1.try_emplace(name, Tensor::zeros(x.shape()));
        Tensor& m = mit->second;
        for (std::size_t i = 0; i < x.numel(); ++i) {
          m[i] = state.beta * m[i] + g[i];
          x[i] -= state.step_size * m[i];
        }
        break;
      }
      case OptKind::adam: {
        auto [mit, mi] = state.moment1.try_emplace(name, Tensor::zeros(x.shape()));
        auto [vit, vi] = state.moment2.try_emplace(name, Tensor::zeros(x.shape()));
        Tensor& m = mit->second;
        Tensor& v = vit->second;
        const double c1 = 1.0 - std::pow(state.beta, static_cast<double>(state.step));
        const double c2 = 1.0 - std::pow(state.beta2, static_cast<double>(state.step));
        for (std::size_t i = 0; i < x.numel(); ++i) {
          m[i] = state.beta * m[i] + (1.0 - state.beta) * g[i];
          v[i] = state.beta2 * v[i] + (1.0 - state.beta2) * g[i] * g[i];
          x[i] -= state.step_size * (m[i] / c1) / (std::sqrt(v[i] / c2) + state.eps);
        }
        break;
      }
    }
  }
}

double global_grad_norm(const GradMap& grads) {
  double s = 0.0;
  for (const auto& [name, g] : grads)
    for (double v : g.data()) s += v * v;
  return std::sqrt(s);
}

void clip_grad_norm(GradMap& grads, double max_norm) {
  if (max_norm <= 0.0) throw std::invalid_argument("clip_grad_norm: max_norm must be positive");
  const double n = global_grad_norm(grads);
  if (n <= max_norm) return;
  const double c = max_norm / n;
  for (auto& [name, g] : grads)
    for (double& v : g.data()) v *= c;
}

}  // namespace monet
