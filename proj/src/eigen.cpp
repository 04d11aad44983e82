#include "monet/eigen.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>

namespace monet {

namespace {

using Mat = std::vector<std::vector<double>>;

double sign_of(double a, double b) { return b >= 0.0 ? std::abs(a) : -std::abs(a); }

// Iterative row/column norm equalization with exact powers of two, so no
// rounding error is introduced.
void balance(Mat& a, std::size_t n) {
  const double radix = 2.0;
  const double sqrdx = radix * radix;
  bool done = false;
  while (!done) {
    done = true;
    for (std::size_t i = 0; i < n; ++i) {
      double r = 0.0, c = 0.0;
      for (std::size_t j = 0; j < n; ++j) {
        if (j == i) continue;
        c += std::abs(a[j][i]);
        r += std::abs(a[i][j]);
      }
      if (c == 0.0 || r == 0.0) continue;
      double g = r / radix, f = 1.0;
      const double s = c + r;
      while (c < g) {
        f *= radix;
        c *= sqrdx;
      }
      g = r * radix;
      while (c > g) {
        f /= radix;
        c /= sqrdx;
      }
      if ((c + r) / f < 0.95 * s) {
        done = false;
        g = 1.0 / f;
        for (std::size_t j = 0; j < n; ++j) a[i][j] *= g;
        for (std::size_t j = 0; j < n; ++j) a[j][i] *= f;
      }
    }
  }
}

// Reduction to upper Hessenberg form by stabilized elementary similarity
// transformations.
void hessenberg(Mat& a, std::size_t n) {
  if (n < 3) return;
  for (std::size_t m = 1; m + 1 < n; ++m) {
    double x = 0.0;
    std::size_t pivot = m;
    for (std::size_t j = m; j < n; ++j) {
      if (std::abs(a[j][m - 1]) > std::abs(x)) {
        x = a[j][m - 1];
        pivot = j;
      }
    }
    if (pivot != m) {
      for (std::size_t j = m - 1; j < n; ++j) std::swap(a[pivot][j], a[m][j]);
      for (std::size_t j = 0; j < n; ++j) std::swap(a[j][pivot], a[j][m]);
    }
    if (x != 0.0) {
      for (std::size_t i = m + 1; i < n; ++i) {
        double y = a[i][m - 1];
        if (y == 0.0) continue;
        y /= x;
        a[i][m - 1] = 0.0;
        for (std::size_t j = m; j < n; ++j) a[i][j] -= y * a[m][j];
        for (std::size_t j = 0; j < n; ++j) a[j][m] += y * a[j][i];
      }
    }
  }
  for (std::size_t i = 2; i < n; ++i)
    for (std::size_t j = 0; j + 1 < i; ++j) a[i][j] = 0.0;
}

// Francis double-shift QR iteration on an upper Hessenberg matrix.
std::vector<std::complex<double>> hqr(Mat& a, std::size_t nsize) {
  std::vector<std::complex<double>> wri(nsize);
  const double eps = std::numeric_limits<double>::epsilon();
  const int n = static_cast<int>(nsize);
  int nn, m, l, k, j, its, i, mmin;
  double z, y, x, w, v, u, t, s, r, q, p;
  double anorm = 0.0;

  for (i = 0; i < n; ++i)
    for (j = std::max(i - 1, 0); j < n; ++j) anorm += std::abs(a[i][j]);
  if (anorm == 0.0) return wri;  // zero matrix

  nn = n - 1;
  t = 0.0;
  p = q = r = 0.0;
  while (nn >= 0) {
    its = 0;
    do {
      for (l = nn; l > 0; --l) {
        s = std::abs(a[l - 1][l - 1]) + std::abs(a[l][l]);
        if (s == 0.0) s = anorm;
        if (std::abs(a[l][l - 1]) <= eps * s) {
          a[l][l - 1] = 0.0;
          break;
        }
      }
      x = a[nn][nn];
      if (l == nn) {
        wri[nn--] = x + t;
      } else {
        y = a[nn - 1][nn - 1];
        w = a[nn][nn - 1] * a[nn - 1][nn];
        if (l == nn - 1) {
          p = 0.5 * (y - x);
          q = p * p + w;
          z = std::sqrt(std::abs(q));
          x += t;
          if (q >= 0.0) {
            z = p + sign_of(z, p);
            wri[nn - 1] = wri[nn] = x + z;
            if (z != 0.0) wri[nn] = x - w / z;
          } else {
            wri[nn] = std::complex<double>(x + p, -z);
            wri[nn - 1] = std::conj(wri[nn]);
          }
          nn -= 2;
        } else {
          if (its == 30)
            throw std::runtime_error("eigenvalues: QR iteration failed to converge");
          if (its == 10 || its == 20) {
            t += x;
            for (i = 0; i < nn + 1; ++i) a[i][i] -= x;
            s = std::abs(a[nn][nn - 1]) + std::abs(a[nn - 1][nn - 2]);
            y = x = 0.75 * s;
            w = -0.4375 * s * s;
          }
          ++its;
          for (m = nn - 2; m >= l; --m) {
            z = a[m][m];
            r = x - z;
            s = y - z;
            p = (r * s - w) / a[m + 1][m] + a[m][m + 1];
            q = a[m + 1][m + 1] - z - r - s;
            r = a[m + 2][m + 1];
            s = std::abs(p) + std::abs(q) + std::abs(r);
            p /= s;
            q /= s;
            r /= s;
            if (m == l) break;
            u = std::abs(a[m][m - 1]) * (std::abs(q) + std::abs(r));
            v = std::abs(p) *
                (std::abs(a[m - 1][m - 1]) + std::abs(z) + std::abs(a[m + 1][m + 1]));
            if (u <= eps * v) break;
          }
          for (i = m; i < nn - 1; ++i) {
            a[i + 2][i] = 0.0;
            if (i != m) a[i + 2][i - 1] = 0.0;
          }
          for (k = m; k < nn; ++k) {
            if (k != m) {
              p = a[k][k - 1];
              q = a[k + 1][k - 1];
              r = 0.0;
              if (k + 1 != nn) r = a[k + 2][k - 1];
              if ((x = std::abs(p) + std::abs(q) + std::abs(r)) != 0.0) {
                p /= x;
                q /= x;
                r /= x;
              }
            }
            if ((s = sign_of(std::sqrt(p * p + q * q + r * r), p)) != 0.0) {
              if (k == m) {
                if (l != m) a[k][k - 1] = -a[k][k - 1];
              } else {
                a[k][k - 1] = -s * x;
              }
              p += s;
              x = p / s;
              y = q / s;
              z = r / s;
              q /= p;
              r /= p;
              for (j = k; j < nn + 1; ++j) {
                p = a[k][j] + q * a[k + 1][j];
                if (k + 1 != nn) {
                  p += r * a[k + 2][j];
                  a[k + 2][j] -= p * z;
                }
                a[k + 1][j] -= p * y;
                a[k][j] -= p * x;
              }
              mmin = nn < k + 3 ? nn : k + 3;
              for (i = l; i < mmin + 1; ++i) {
                p = x * a[i][k] + y * a[i][k + 1];
                if (k + 1 != nn) {
                  p += z * a[i][k + 2];
                  a[i][k + 2] -= p * r;
                }
                a[i][k + 1] -= p * q;
                a[i][k] -= p;
              }
            }
          }
        }
      }
    } while (l + 1 < nn);
  }
  return wri;
}

}  // namespace

std::vector<std::complex<double>> eigenvalues(const Tensor& m) {
  if (m.rank() != 2 || m.rows() != m.cols())
    throw std::invalid_argument("eigenvalues: matrix must be square, got " + m.shape_str());
  if (!m.all_finite()) throw std::invalid_argument("eigenvalues: non-finite entries");
  const std::size_t n = m.rows();
  Mat a(n, std::vector<double>(n));
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j) a[i][j] = m(i, j);
  balance(a, n);
  hessenberg(a, n);
  auto wri = hqr(a, n);
  std::sort(wri.begin(), wri.end(), [](const auto& x, const auto& y) {
    if (x.real() != y.real()) return x.real() < y.real();
    return x.imag() < y.imag();
  });
  return wri;
}

EigenPairingReport eigen_pairing_check(const Tensor& f_avg, const Tensor& j_avg, double gamma,
                                       double dt) {
  if (f_avg.rank() != 2 || f_avg.rows() != f_avg.cols())
    throw std::invalid_argument("eigen_pairing_check: F must be square");
  if (j_avg.rank() != 2 || !j_avg.same_shape(f_avg))
    throw std::invalid_argument("eigen_pairing_check: J must be square and match F");
  const std::size_t n = f_avg.rows();

  Tensor h({2 * n, 2 * n});
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      h(i, n + j) = j_avg(i, j);
      h(n + i, j) = f_avg(i, j);
    }
    h(n + i, n + i) = -gamma;
  }
  auto spectrum = eigenvalues(scale(h, dt));

  // Each eigenvalue solves lambda*(lambda + dt*gamma) = dt^2*lambda_JF, so a
  // perfect pairing with pair sums -dt*gamma exists; recover it greedily.
  const std::complex<double> target(-dt * gamma, 0.0);
  EigenPairingReport report;
  std::vector<char> used(spectrum.size(), 0);
  for (std::size_t i = 0; i < spectrum.size(); ++i) {
    if (used[i]) continue;
    used[i] = 1;
    std::size_t best = 0;
    double best_res = std::numeric_limits<double>::infinity();
    for (std::size_t j = 0; j < spectrum.size(); ++j) {
      if (used[j]) continue;
      const double res = std::abs(spectrum[i] + spectrum[j] - target);
      if (res < best_res) {
        best_res = res;
        best = j;
      }
    }
    used[best] = 1;
    report.pairs.emplace_back(spectrum[i], spectrum[best]);
    report.max_pair_residual = std::max(report.max_pair_residual, best_res);
  }
  return report;
}

}  // namespace monet
