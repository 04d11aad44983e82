// Dense row-major tensors of doubles (rank 1 or 2) plus the plain-value
// arithmetic used by oracles, solvers, and inference paths.
#pragma once

#include <cmath>
#include <cstddef>
#include <initializer_list>
#include <stdexcept>
#include <string>
#include <vector>

namespace monet {

class Tensor {
 public:
  Tensor() = default;

  explicit Tensor(std::vector<std::size_t> shape)
      : shape_(std::move(shape)), data_(count(shape_), 0.0) {
    check_shape();
  }

  Tensor(std::vector<std::size_t> shape, std::vector<double> data)
      : shape_(std::move(shape)), data_(std::move(data)) {
    check_shape();
    if (count(shape_) != data_.size())
      throw std::invalid_argument("Tensor: shape does not match data length");
  }

  static Tensor zeros(std::vector<std::size_t> shape) { return Tensor(std::move(shape)); }

  static Tensor full(std::vector<std::size_t> shape, double v) {
    Tensor t(std::move(shape));
    for (auto& x : t.data_) x = v;
    return t;
  }

  static Tensor ones(std::vector<std::size_t> shape) { return full(std::move(shape), 1.0); }

  static Tensor scalar(double v) { return Tensor({1, 1}, {v}); }

  static Tensor vector(std::vector<double> values) {
    std::size_t n = values.size();
    return Tensor({n}, std::move(values));
  }

  static Tensor row(std::vector<double> values) {
    std::size_t n = values.size();
    return Tensor({1, n}, std::move(values));
  }

  static Tensor matrix(std::size_t r, std::size_t c, std::vector<double> values) {
    return Tensor({r, c}, std::move(values));
  }

  static Tensor identity(std::size_t n) {
    Tensor t({n, n});
    for (std::size_t i = 0; i < n; ++i) t(i, i) = 1.0;
    return t;
  }

  const std::vector<std::size_t>& shape() const { return shape_; }
  std::size_t rank() const { return shape_.size(); }
  std::size_t numel() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  std::size_t rows() const { return rank() == 2 ? shape_[0] : (rank() == 1 ? 1 : 0); }
  std::size_t cols() const { return rank() == 2 ? shape_[1] : (rank() == 1 ? shape_[0] : 0); }

  double& operator[](std::size_t i) { return data_[i]; }
  double operator[](std::size_t i) const { return data_[i]; }

  double& operator()(std::size_t i, std::size_t j) { return data_[i * cols() + j]; }
  double operator()(std::size_t i, std::size_t j) const { return data_[i * cols() + j]; }

  std::vector<double>& data() { return data_; }
  const std::vector<double>& data() const { return data_; }

  bool same_shape(const Tensor& other) const { return shape_ == other.shape_; }

  bool all_finite() const {
    for (double v : data_)
      if (!std::isfinite(v)) return false;
    return true;
  }

  double item() const {
    if (numel() != 1) throw std::invalid_argument("Tensor::item: tensor is not scalar");
    return data_[0];
  }

  std::string shape_str() const {
    std::string s = "(";
    for (std::size_t i = 0; i < shape_.size(); ++i)
      s += std::to_string(shape_[i]) + (i + 1 < shape_.size() ? "x" : "");
    return s + ")";
  }

 private:
  static std::size_t count(const std::vector<std::size_t>& shape) {
    std::size_t n = 1;
    for (auto d : shape) n *= d;
    return shape.empty() ? 0 : n;
  }

  void check_shape() const {
    if (shape_.size() < 1 || shape_.size() > 2)
      throw std::invalid_argument("Tensor: rank must be 1 or 2");
    for (auto d : shape_)
      if (d == 0) throw std::invalid_argument("Tensor: zero extent");
  }

  std::vector<std::size_t> shape_;
  std::vector<double> data_;
};

// Plain-value helpers (no tape involvement).
Tensor matmul(const Tensor& a, const Tensor& b);
Tensor transpose(const Tensor& a);
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor hadamard(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double c);
Tensor outer(const Tensor& u, const Tensor& v);  // column u times row v
double dot(const Tensor& a, const Tensor& b);
double norm2(const Tensor& a);
double max_abs_diff(const Tensor& a, const Tensor& b);

inline Tensor map_unary(const Tensor& a, double (*f)(double)) {
  Tensor out = a;
  for (auto& v : out.data()) v = f(v);
  return out;
}

inline double sigmoid_scalar(double x) {
  return x >= 0.0 ? 1.0 / (1.0 + std::exp(-x)) : std::exp(x) / (1.0 + std::exp(x));
}

inline double softplus_scalar(double x) {
  return x > 0.0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x));
}

inline double elu_plus_one_scalar(double x) { return x >= 0.0 ? x + 1.0 : std::exp(x); }

}  // namespace monet
