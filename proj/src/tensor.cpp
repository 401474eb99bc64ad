#include "salbench/tensor.hpp"

#include <cmath>
#include <sstream>
#include <stdexcept>

namespace salbench {

size_t shape_numel(const Shape& s) {
  size_t n = 1;
  for (size_t d : s) n *= d;
  return n;
}

std::string shape_str(const Shape& s) {
  std::ostringstream os;
  os << "[";
  for (size_t i = 0; i < s.size(); ++i) {
    if (i) os << "x";
    os << s[i];
  }
  os << "]";
  return os.str();
}

Tensor::Tensor(Shape shape) : shape_(std::move(shape)), data_(shape_numel(shape_), 0.0) {}

Tensor::Tensor(Shape shape, std::vector<double> data)
    : shape_(std::move(shape)), data_(std::move(data)) {
  if (shape_numel(shape_) != data_.size()) {
    throw std::invalid_argument("tensor: shape " + salbench::shape_str(shape_) +
                                " does not match data length " + std::to_string(data_.size()));
  }
}

Tensor Tensor::full(Shape shape, double value) {
  Tensor t(std::move(shape));
  for (auto& v : t.data_) v = value;
  return t;
}

bool Tensor::all_finite() const {
  for (double v : data_) {
    if (!std::isfinite(v)) return false;
  }
  return true;
}

double Tensor::frobenius_norm() const {
  double s = 0.0;
  for (double v : data_) s += v * v;
  return std::sqrt(s);
}

std::string Tensor::shape_str() const { return salbench::shape_str(shape_); }

void matmul_reference(const double* a, const double* b, double* c,
                      size_t m, size_t k, size_t n) {
  for (size_t i = 0; i < m; ++i) {
    for (size_t j = 0; j < n; ++j) {
      double acc = 0.0;
      for (size_t p = 0; p < k; ++p) {
        acc += a[i * k + p] * b[p * n + j];
      }
      c[i * n + j] = acc;
    }
  }
}

void matmul_kernel(const double* a, const double* b, double* c,
                   size_t m, size_t k, size_t n) {
  // Small products are not worth a parallel region.
  if (m * n * k < 65536) {
    matmul_reference(a, b, c, m, k, n);
    return;
  }
#pragma omp parallel for schedule(static)
  for (long long ii = 0; ii < static_cast<long long>(m); ++ii) {
    const size_t i = static_cast<size_t>(ii);
    for (size_t j = 0; j < n; ++j) {
      double acc = 0.0;
      for (size_t p = 0; p < k; ++p) {
        acc += a[i * k + p] * b[p * n + j];
      }
      c[i * n + j] = acc;
    }
  }
}

Tensor matmul(const Tensor& a, const Tensor& b) {
  size_t m, k, k2, n;
  bool a_vec = a.rank() == 1;
  bool b_vec = b.rank() == 1;
  if (a.rank() > 2 || b.rank() > 2 || a.rank() == 0 || b.rank() == 0) {
    throw std::invalid_argument("matmul: unsupported ranks " + a.shape_str() + ", " +
                                b.shape_str());
  }
  m = a_vec ? 1 : a.dim(0);
  k = a_vec ? a.dim(0) : a.dim(1);
  k2 = b_vec ? b.dim(0) : b.dim(0);
  n = b_vec ? 1 : b.dim(1);
  if (k != k2) {
    throw std::invalid_argument("matmul: shape mismatch " + a.shape_str() + " * " +
                                b.shape_str());
  }
  Shape out_shape;
  if (a_vec && b_vec) out_shape = {1};
  else if (a_vec) out_shape = {n};
  else if (b_vec) out_shape = {m};
  else out_shape = {m, n};
  Tensor c(out_shape);
  matmul_kernel(a.data(), b.data(), c.data(), m, k, n);
  return c;
}

Tensor transpose2d(const Tensor& a) {
  if (a.rank() != 2) {
    throw std::invalid_argument("transpose: expected rank-2 tensor, got " + a.shape_str());
  }
  Tensor t({a.dim(1), a.dim(0)});
  for (size_t i = 0; i < a.dim(0); ++i)
    for (size_t j = 0; j < a.dim(1); ++j) t.at(j, i) = a.at(i, j);
  return t;
}

}  // namespace salbench
