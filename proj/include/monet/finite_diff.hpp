// Central finite differences over named parameters; the independent oracle
// for every gradient claim in the test suites.
#pragma once

#include <functional>
#include <map>
#include <string>

#include "monet/tensor.hpp"

namespace monet {

using ParamMap = std::map<std::string, Tensor>;
using GradMap = std::map<std::string, Tensor>;

GradMap finite_difference_gradient(const std::function<double(const ParamMap&)>& f,
                                   ParamMap params, double h = 1e-5);

// max over entries of |a-b| / max(1, |b|); used by gradient-check tests
double max_rel_err(const GradMap& got, const GradMap& expected);

}  // namespace monet
