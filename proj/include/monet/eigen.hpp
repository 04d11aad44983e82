// Dense real eigenvalue computation (balance, Hessenberg reduction, Francis
// double-shift QR) for the small diagnostic matrices used in the adjoint
// spectrum analysis, plus the eigenvalue pairing check.
#pragma once

#include <complex>
#include <utility>
#include <vector>

#include "monet/tensor.hpp"

namespace monet {

// Full complex spectrum of a square real matrix, multiplicities included.
std::vector<std::complex<double>> eigenvalues(const Tensor& m);

struct EigenPairingReport {
  std::vector<std::pair<std::complex<double>, std::complex<double>>> pairs;
  double max_pair_residual = 0.0;  // max over pairs of |sum - (-dt*gamma)|
};

// Builds H = [[0, J],[F, -gamma*I]], computes the spectrum of dt*H and pairs
// eigenvalues so that each pair sums to -dt*gamma.
EigenPairingReport eigen_pairing_check(const Tensor& f_avg, const Tensor& j_avg, double gamma,
                                       double dt);

}  // namespace monet
