// Parameter update rules: plain gradient step, heavy-ball momentum, and Adam,
// plus global-norm gradient clipping.
#pragma once

#include "monet/finite_diff.hpp"

namespace monet {

enum class OptKind { sgd, heavy_ball, adam };

struct OptimizerState {
  OptKind kind = OptKind::sgd;
  double step_size = 0.01;
  double beta = 0.9;    // heavy-ball momentum / Adam beta1
  double beta2 = 0.999; // Adam only
  double eps = 1e-8;    // Adam only
  long step = 0;
  GradMap moment1;  // momentum buffer / Adam first moment
  GradMap moment2;  // Adam second moment
};

OptKind opt_kind_from_string(const std::string& s);
const char* opt_kind_name(OptKind k);

// heavy-ball: m <- beta*m + g; x <- x - s*m.  sgd: x <- x - s*g.
// adam: bias-corrected first/second moments, x <- x - s*m_hat/(sqrt(v_hat)+eps).
void optimizer_step(OptimizerState& state, ParamMap& params, const GradMap& grads);

double global_grad_norm(const GradMap& grads);

// Scales every gradient by max_norm/g when the global l2 norm g exceeds
// max_norm; otherwise leaves grads untouched. Idempotent.
void clip_grad_norm(GradMap& grads, double max_norm);

}  // namespace monet
