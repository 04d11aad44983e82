#include <cmath>
#include <complex>

#include "doctest.h"
#include "monet/eigen.hpp"
#include "monet/finite_diff.hpp"
#include "monet/optim.hpp"
#include "monet/rng.hpp"
#include "monet/tape.hpp"

using namespace monet;
using ad::OpKind;
using ad::Tape;
using ad::Var;

TEST_CASE("matmul with identity returns the input") {
  Tape tape;
  Rng rng(7);
  Tensor x = rng.uniform_tensor({2, 3}, -1.0, 1.0);
  Var vi = tape.constant(Tensor::identity(2));
  Var vx = tape.constant(x);
  Var y = tape.matmul(vi, vx);
  CHECK(max_abs_diff(tape.value(y), x) == doctest::Approx(0.0));
}

TEST_CASE("sigmoid at zero is one half") {
  Tape tape;
  Var y = tape.sigmoid(tape.constant(Tensor::vector({0.0})));
  CHECK(tape.value(y)[0] == doctest::Approx(0.5));
}

TEST_CASE("hadamard elementwise product") {
  Tape tape;
  Var y = tape.hadamard(tape.constant(Tensor::vector({1, 2, 3})),
                        tape.constant(Tensor::vector({4, 5, 6})));
  CHECK(tape.value(y)[0] == 4.0);
  CHECK(tape.value(y)[1] == 10.0);
  CHECK(tape.value(y)[2] == 18.0);
}

TEST_CASE("op error paths") {
  Tape tape;
  Var a = tape.constant(Tensor::vector({1, 2}));
  Var b = tape.constant(Tensor::vector({1, 2, 3}));
  CHECK_THROWS_AS(tape.add(a, b), std::invalid_argument);
  CHECK_THROWS_AS(tape.div(a, tape.constant(Tensor::vector({1, 0}))), std::invalid_argument);
  CHECK_THROWS_AS(tape.sqrt(tape.constant(Tensor::vector({-1, 4}))), std::invalid_argument);
  CHECK_THROWS_AS(tape.matmul(a, b), std::invalid_argument);
}

TEST_CASE("backward of sum of squares") {
  Tape tape;
  Var x = tape.parameter("x", Tensor::vector({1, 2}));
  Var loss = tape.sum(tape.hadamard(x, x));
  auto result = tape.backward(loss);
  CHECK_FALSE(result.disconnected);
  CHECK(result.grads.at("x")[0] == doctest::Approx(2.0));
  CHECK(result.grads.at("x")[1] == doctest::Approx(4.0));
}

TEST_CASE("backward flags a disconnected root") {
  Tape tape;
  Var x = tape.parameter("x", Tensor::vector({1, 2}));
  (void)x;
  Var c = tape.constant(Tensor::scalar(3.0));
  Var root = tape.scale(c, 2.0);
  auto result = tape.backward(root);
  CHECK(result.disconnected);
  CHECK(norm2(result.grads.at("x")) == doctest::Approx(0.0));
}

TEST_CASE("backward requires a scalar root") {
  Tape tape;
  Var x = tape.parameter("x", Tensor::vector({1, 2}));
  CHECK_THROWS_AS(tape.backward(x), std::invalid_argument);
}

TEST_CASE("two-layer tanh network gradients match finite differences") {
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    Rng rng(seed);
    ParamMap params;
    params["w1"] = rng.init_weight(4, 3);
    params["w2"] = rng.init_weight(1, 4);
    Tensor input = rng.uniform_tensor({3, 1}, -1.0, 1.0);

    auto loss_fn = [&](const ParamMap& p, Tape* tape_out, ad::BackwardResult* grads) {
      Tape tape;
      Var w1 = tape.parameter("w1", p.at("w1"));
      Var w2 = tape.parameter("w2", p.at("w2"));
      Var x = tape.constant(input);
      Var h = tape.tanh(tape.matmul(w1, x));
      Var y = tape.tanh(tape.matmul(w2, h));
      Var loss = tape.sum(tape.square(y));
      double value = tape.value(loss).item();
      if (grads) *grads = tape.backward(loss);
      (void)tape_out;
      return value;
    };

    ad::BackwardResult analytic;
    loss_fn(params, nullptr, &analytic);
    auto fd = finite_difference_gradient(
        [&](const ParamMap& p) { return loss_fn(p, nullptr, nullptr); }, params);
    CHECK(max_rel_err(analytic.grads, fd) < 1e-6);
  }
}

TEST_CASE("finite differences on closed forms") {
  ParamMap p{{"x", Tensor::vector({3.0})}};
  auto sq = [](const ParamMap& q) { return q.at("x")[0] * q.at("x")[0]; };
  CHECK(finite_difference_gradient(sq, p).at("x")[0] == doctest::Approx(6.0).epsilon(1e-9));

  auto constant = [](const ParamMap&) { return 42.0; };
  CHECK(finite_difference_gradient(constant, p).at("x")[0] == doctest::Approx(0.0));

  ParamMap p0{{"x", Tensor::vector({0.0})}};
  auto sine = [](const ParamMap& q) { return std::sin(q.at("x")[0]); };
  CHECK(finite_difference_gradient(sine, p0).at("x")[0] ==
        doctest::Approx(1.0).epsilon(1e-9));
}

TEST_CASE("heavy-ball with zero momentum reduces to sgd") {
  OptimizerState hb{OptKind::heavy_ball, 0.1, 0.0};
  ParamMap params{{"x", Tensor::vector({1.0})}};
  GradMap grads{{"x", Tensor::vector({2.0})}};
  optimizer_step(hb, params, grads);
  CHECK(params.at("x")[0] == doctest::Approx(0.8));

  // bitwise agreement with sgd on a random problem
  Rng rng(3);
  ParamMap pa{{"w", rng.uniform_tensor({4, 4}, -1, 1)}};
  ParamMap pb = pa;
  GradMap g{{"w", rng.uniform_tensor({4, 4}, -1, 1)}};
  OptimizerState s1{OptKind::heavy_ball, 0.05, 0.0};
  OptimizerState s2{OptKind::sgd, 0.05, 0.0};
  for (int i = 0; i < 3; ++i) {
    optimizer_step(s1, pa, g);
    optimizer_step(s2, pb, g);
  }
  for (std::size_t i = 0; i < pa.at("w").numel(); ++i)
    CHECK(pa.at("w")[i] == pb.at("w")[i]);
}

TEST_CASE("heavy-ball momentum accumulates") {
  OptimizerState hb{OptKind::heavy_ball, 1.0, 0.9};
  ParamMap params{{"x", Tensor::vector({0.0})}};
  GradMap grads{{"x", Tensor::vector({1.0})}};
  optimizer_step(hb, params, grads);
  CHECK(params.at("x")[0] == doctest::Approx(-1.0));
  optimizer_step(hb, params, grads);
  CHECK(params.at("x")[0] == doctest::Approx(-1.0 - 1.9));
}

TEST_CASE("adam converges on a quadratic") {
  OptimizerState adam{OptKind::adam, 0.1, 0.9};
  ParamMap params{{"x", Tensor::vector({1.0})}};
  for (int i = 0; i < 100; ++i) {
    GradMap grads{{"x", Tensor::vector({2.0 * params.at("x")[0]})}};
    optimizer_step(adam, params, grads);
  }
  CHECK(std::abs(params.at("x")[0]) < 0.05);
}

TEST_CASE("optimizer_step rejects shape mismatch") {
  OptimizerState s{OptKind::sgd, 0.1, 0.0};
  ParamMap params{{"x", Tensor::vector({1.0, 2.0})}};
  GradMap grads{{"x", Tensor::vector({1.0})}};
  CHECK_THROWS_AS(optimizer_step(s, params, grads), std::invalid_argument);
}

TEST_CASE("clip_grad_norm scales, preserves direction, and is idempotent") {
  GradMap g{{"a", Tensor::vector({6.0, 8.0})}};  // norm 10
  GradMap original = g;
  clip_grad_norm(g, 1.0);
  CHECK(global_grad_norm(g) == doctest::Approx(1.0));
  CHECK(g.at("a")[0] / g.at("a")[1] == doctest::Approx(6.0 / 8.0));
  GradMap once = g;
  clip_grad_norm(g, 1.0);
  for (std::size_t i = 0; i < 2; ++i) CHECK(g.at("a")[i] == once.at("a")[i]);

  GradMap small{{"a", Tensor::vector({0.3, 0.4})}};  // norm 0.5
  clip_grad_norm(small, 1.0);
  CHECK(small.at("a")[0] == 0.3);

  GradMap zeros{{"a", Tensor::vector({0.0, 0.0})}};
  clip_grad_norm(zeros, 1.0);
  CHECK(zeros.at("a")[0] == 0.0);
}

namespace {

// Characteristic polynomial coefficients by the Faddeev-LeVerrier recursion;
// independent of the QR path.
std::vector<double> char_poly(const Tensor& a) {
  const std::size_t n = a.rows();
  std::vector<double> c(n + 1, 0.0);
  c[n] = 1.0;
  Tensor m = a;
  for (std::size_t k = 1; k <= n; ++k) {
    if (k > 1) {
      Tensor shifted = m;
      for (std::size_t i = 0; i < n; ++i) shifted(i, i) += c[n - k + 1];
      m = matmul(a, shifted);
    }
    double tr = 0.0;
    for (std::size_t i = 0; i < n; ++i) tr += m(i, i);
    c[n - k] = -tr / static_cast<double>(k);
  }
  return c;
}

double eval_poly(const std::vector<double>& c, double x) {
  double v = 0.0;
  for (std::size_t k = c.size(); k-- > 0;) v = v * x + c[k];
  return v;
}

// All real roots of a polynomial with simple real roots, by grid scan and
// bisection over [-bound, bound].
std::vector<double> real_roots(const std::vector<double>& c, double bound) {
  const int grid = 200000;
  std::vector<double> roots;
  double prev_x = -bound, prev_v = eval_poly(c, prev_x);
  for (int i = 1; i <= grid; ++i) {
    const double x = -bound + 2.0 * bound * i / grid;
    const double v = eval_poly(c, x);
    if (prev_v == 0.0) roots.push_back(prev_x);
    if (prev_v * v < 0.0) {
      double lo = prev_x, hi = x;
      for (int it = 0; it < 200; ++it) {
        const double mid = 0.5 * (lo + hi);
        if (eval_poly(c, lo) * eval_poly(c, mid) <= 0.0)
          hi = mid;
        else
          lo = mid;
      }
      roots.push_back(0.5 * (lo + hi));
    }
    prev_x = x;
    prev_v = v;
  }
  return roots;
}

}  // namespace

TEST_CASE("eigenvalues of a diagonal matrix") {
  Tensor d({3, 3});
  d(0, 0) = 1;
  d(1, 1) = 2;
  d(2, 2) = 3;
  auto ev = eigenvalues(d);
  REQUIRE(ev.size() == 3);
  CHECK(ev[0] == std::complex<double>(1, 0));
  CHECK(ev[1] == std::complex<double>(2, 0));
  CHECK(ev[2] == std::complex<double>(3, 0));
}

TEST_CASE("eigenvalues of a rotation generator are +-i") {
  Tensor r = Tensor::matrix(2, 2, {0, 1, -1, 0});
  auto ev = eigenvalues(r);
  REQUIRE(ev.size() == 2);
  CHECK(std::abs(ev[0] - std::complex<double>(0, -1)) < 1e-12);
  CHECK(std::abs(ev[1] - std::complex<double>(0, 1)) < 1e-12);
}

TEST_CASE("eigenvalues reject non-square input") {
  CHECK_THROWS_AS(eigenvalues(Tensor({2, 3})), std::invalid_argument);
}

TEST_CASE("symmetric spectra match the characteristic-polynomial oracle") {
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    Rng rng(100 + seed);
    Tensor a({5, 5});
    for (std::size_t i = 0; i < 5; ++i)
      for (std::size_t j = 0; j <= i; ++j) a(i, j) = a(j, i) = rng.uniform(-1.0, 1.0);

    auto ev = eigenvalues(a);
    double bound = 0.0;
    for (std::size_t i = 0; i < 5; ++i) {
      double row = 0.0;
      for (std::size_t j = 0; j < 5; ++j) row += std::abs(a(i, j));
      bound = std::max(bound, row);
    }
    auto roots = real_roots(char_poly(a), bound + 1.0);
    REQUIRE(roots.size() == 5);
    for (std::size_t i = 0; i < 5; ++i) {
      CHECK(std::abs(ev[i].imag()) < 1e-10);
      CHECK(ev[i].real() == doctest::Approx(roots[i]).epsilon(1e-6));
    }
  }
}

TEST_CASE("spectra are similarity invariant") {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    Rng rng(200 + seed);
    const std::size_t n = 4;
    Tensor a = rng.uniform_tensor({n, n}, -1.0, 1.0);
    // well-conditioned P: identity plus a small perturbation
    Tensor p = Tensor::identity(n);
    for (auto& v : p.data()) v += rng.uniform(-0.2, 0.2);

    // invert p by Gauss-Jordan
    Tensor pi = Tensor::identity(n);
    Tensor w = p;
    for (std::size_t col = 0; col < n; ++col) {
      std::size_t piv = col;
      for (std::size_t r = col + 1; r < n; ++r)
        if (std::abs(w(r, col)) > std::abs(w(piv, col))) piv = r;
      for (std::size_t j = 0; j < n; ++j) {
        std::swap(w(col, j), w(piv, j));
        std::swap(pi(col, j), pi(piv, j));
      }
      const double d = w(col, col);
      for (std::size_t j = 0; j < n; ++j) {
        w(col, j) /= d;
        pi(col, j) /= d;
      }
      for (std::size_t r = 0; r < n; ++r) {
        if (r == col) continue;
        const double f = w(r, col);
        for (std::size_t j = 0; j < n; ++j) {
          w(r, j) -= f * w(col, j);
          pi(r, j) -= f * pi(col, j);
        }
      }
    }

    auto ev1 = eigenvalues(a);
    auto ev2 = eigenvalues(matmul(matmul(p, a), pi));
    REQUIRE(ev1.size() == ev2.size());
    // greedy multiset match
    std::vector<char> used(ev2.size(), 0);
    for (const auto& x : ev1) {
      double best = 1e100;
      std::size_t bi = 0;
      for (std::size_t j = 0; j < ev2.size(); ++j) {
        if (used[j]) continue;
        if (std::abs(x - ev2[j]) < best) {
          best = std::abs(x - ev2[j]);
          bi = j;
        }
      }
      used[bi] = 1;
      CHECK(best < 1e-6);
    }
  }
}

TEST_CASE("eigen pairing check on closed-form cases") {
  // J=I, F=-I, gamma=0: eigenvalues +-i, every pair sums to 0
  auto report = eigen_pairing_check(scale(Tensor::identity(3), -1.0), Tensor::identity(3), 0.0,
                                    1.0);
  CHECK(report.max_pair_residual < 1e-10);
  for (const auto& [x, y] : report.pairs) CHECK(std::abs(std::abs(x.imag()) - 1.0) < 1e-10);

  // scalar case: roots of lambda^2 + gamma*lambda - jf sum to -gamma exactly
  Tensor f1 = Tensor::matrix(1, 1, {0.7});
  Tensor j1 = Tensor::matrix(1, 1, {-0.3});
  auto r1 = eigen_pairing_check(f1, j1, 0.4, 1.0);
  CHECK(r1.max_pair_residual < 1e-12);

  // random blocks
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    Rng rng(300 + seed);
    const std::size_t n = 2 + seed % 3;
    Tensor f = rng.uniform_tensor({n, n}, -1.0, 1.0);
    Tensor j = rng.uniform_tensor({n, n}, -1.0, 1.0);
    const double gamma = (seed % 3) * 0.5;
    auto r = eigen_pairing_check(f, j, gamma, 1.0);
    CHECK(r.max_pair_residual < 1e-8);
  }
}

TEST_CASE("per-op gradients match finite differences") {
  // every differentiable binary/unary op on random conforming shapes
  const OpKind binary[] = {OpKind::add, OpKind::sub, OpKind::hadamard, OpKind::div};
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    Rng rng(400 + seed);
    const std::size_t r = 1 + rng.integer(4), c = 1 + rng.integer(4);

    for (OpKind kind : binary) {
      ParamMap p;
      p["a"] = rng.uniform_tensor({r, c}, -2.0, 2.0);
      p["b"] = rng.uniform_tensor({r, c}, 0.5, 2.0);  // away from zero for div
      auto run = [&](const ParamMap& q, ad::BackwardResult* out) {
        Tape tape;
        Var a = tape.parameter("a", q.at("a"));
        Var b = tape.parameter("b", q.at("b"));
        Var loss = tape.sum(tape.square(tape.record_op(kind, {a, b})));
        if (out) *out = tape.backward(loss);
        return tape.value(loss).item();
      };
      ad::BackwardResult analytic;
      run(p, &analytic);
      auto fd = finite_difference_gradient([&](const ParamMap& q) { return run(q, nullptr); },
                                           p);
      CAPTURE(ad::op_name(kind));
      CHECK(max_rel_err(analytic.grads, fd) < 1e-6);
    }

    const OpKind unary[] = {OpKind::sigmoid, OpKind::tanh,  OpKind::softplus,
                            OpKind::elu_plus_one, OpKind::exp, OpKind::sqrt,
                            OpKind::square, OpKind::sum,    OpKind::mean,
                            OpKind::transpose, OpKind::softmax_rows};
    for (OpKind kind : unary) {
      ParamMap p;
      p["a"] = rng.uniform_tensor({r, c}, 0.3, 2.0);  // sqrt domain; off elu kink
      auto run = [&](const ParamMap& q, ad::BackwardResult* out) {
        Tape tape;
        Var a = tape.parameter("a", q.at("a"));
        Var y = tape.record_op(kind, {a});
        Var loss = tape.sum(tape.square(y));
        if (out) *out = tape.backward(loss);
        return tape.value(loss).item();
      };
      ad::BackwardResult analytic;
      run(p, &analytic);
      auto fd = finite_difference_gradient([&](const ParamMap& q) { return run(q, nullptr); },
                                           p);
      CAPTURE(ad::op_name(kind));
      CHECK(max_rel_err(analytic.grads, fd) < 1e-6);
    }

    // matmul, concat, slice, scale with structure
    {
      ParamMap p;
      const std::size_t k = 1 + rng.integer(4);
      p["a"] = rng.uniform_tensor({r, k}, -1.5, 1.5);
      p["b"] = rng.uniform_tensor({k, c}, -1.5, 1.5);
      auto run = [&](const ParamMap& q, ad::BackwardResult* out) {
        Tape tape;
        Var a = tape.parameter("a", q.at("a"));
        Var b = tape.parameter("b", q.at("b"));
        Var mm = tape.matmul(a, b);
        Var cat = tape.concat(mm, tape.scale(mm, 0.5), 1);
        Var sl = tape.slice(cat, 1, c / 2, c);
        Var loss = tape.mean(tape.square(sl));
        if (out) *out = tape.backward(loss);
        return tape.value(loss).item();
      };
      ad::BackwardResult analytic;
      run(p, &analytic);
      auto fd = finite_difference_gradient([&](const ParamMap& q) { return run(q, nullptr); },
                                           p);
      CHECK(max_rel_err(analytic.grads, fd) < 1e-6);
    }

    // losses
    {
      ParamMap p;
      p["pred"] = rng.uniform_tensor({r, c}, -1.0, 1.0);
      Tensor target = rng.uniform_tensor({r, c}, -1.0, 1.0);
      auto run = [&](const ParamMap& q, ad::BackwardResult* out) {
        Tape tape;
        Var pr = tape.parameter("pred", q.at("pred"));
        Var loss = tape.mse_loss(pr, tape.constant(target));
        if (out) *out = tape.backward(loss);
        return tape.value(loss).item();
      };
      ad::BackwardResult analytic;
      run(p, &analytic);
      auto fd = finite_difference_gradient([&](const ParamMap& q) { return run(q, nullptr); },
                                           p);
      CHECK(max_rel_err(analytic.grads, fd) < 1e-6);
    }
    {
      const std::size_t classes = 2 + rng.integer(4);
      ParamMap p;
      p["logits"] = rng.uniform_tensor({r, classes}, -2.0, 2.0);
      Tensor labels({r});
      for (std::size_t i = 0; i < r; ++i)
        labels[i] = static_cast<double>(rng.integer(classes));
      auto run = [&](const ParamMap& q, ad::BackwardResult* out) {
        Tape tape;
        Var lg = tape.parameter("logits", q.at("logits"));
        Var loss = tape.cross_entropy_loss(lg, tape.constant(labels));
        if (out) *out = tape.backward(loss);
        return tape.value(loss).item();
      };
      ad::BackwardResult analytic;
      run(p, &analytic);
      auto fd = finite_difference_gradient([&](const ParamMap& q) { return run(q, nullptr); },
                                           p);
      CHECK(max_rel_err(analytic.grads, fd) < 1e-6);
    }
  }
}
