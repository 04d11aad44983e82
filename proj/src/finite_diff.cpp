#include "monet/finite_diff.hpp"

#include <cmath>
#include <stdexcept>

namespace monet {

GradMap finite_difference_gradient(const std::function<double(const ParamMap&)>& f,
                                   ParamMap params, double h) {
  if (h <= 0.0) throw std::invalid_argument("finite_difference_gradient: h must be positive");
  GradMap grads;
  for (auto& [name, tensor] : params) {
    Tensor g(tensor.shape());
    for (std::size_t i = 0; i < tensor.numel(); ++i) {
      const double orig = tensor[i];
      tensor[i] = orig + h;
      const double fp = f(params);
      tensor[i] = orig - h;
      const double fm = f(params);
      tensor[i] = orig;
      if (!std::isfinite(fp) || !std::isfinite(fm))
        throw std::runtime_error("finite_difference_gradient: non-finite evaluation at '" +
                                 name + "'[" + std::to_string(i) + "]");
      g[i] = (fp - fm) / (2.0 * h);
    }
    grads[name] = std::move(g);
  }
  return grads;
}

double max_rel_err(const GradMap& got, const GradMap& expected) {
  double worst = 0.0;
  for (const auto& [name, e] : expected) {
    auto it = got.find(name);
    if (it == got.end())
      throw std::invalid_argument("max_rel_err: missing gradient for '" + name + "'");
    const Tensor& g = it->second;
    if (!g.same_shape(e))
      throw std::invalid_argument("max_rel_err: shape mismatch for '" + name + "'");
    for (std::size_t i = 0; i < e.numel(); ++i) {
      const double denom = std::max(1.0, std::abs(e[i]));
      worst = std::max(worst, std::abs(g[i] - e[i]) / denom);
    }
  }
  return worst;
}

}  // namespace monet
