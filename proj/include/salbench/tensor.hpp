#pragma once

#include <cstddef>
#include <string>
#include <vector>

namespace salbench {

using Shape = std::vector<size_t>;

/// Dense row-major tensor of 64-bit floats. All numeric work in the project
/// runs in double precision; gradient checks at 1e-4..1e-6 are not feasible
/// in single precision.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(Shape shape);
  Tensor(Shape shape, std::vector<double> data);
  static Tensor zeros(Shape shape) { return Tensor(std::move(shape)); }
  static Tensor full(Shape shape, double value);
  static Tensor scalar(double value) { return Tensor({1}, {value}); }

  const Shape& shape() const { return shape_; }
  size_t rank() const { return shape_.size(); }
  size_t numel() const { return data_.size(); }
  size_t dim(size_t i) const { return shape_[i]; }

  double* data() { return data_.data(); }
  const double* data() const { return data_.data(); }
  double& operator[](size_t i) { return data_[i]; }
  double operator[](size_t i) const { return data_[i]; }

  // 2-d accessors (row-major).
  double& at(size_t r, size_t c) { return data_[r * shape_[1] + c]; }
  double at(size_t r, size_t c) const { return data_[r * shape_[1] + c]; }

  std::vector<double>& vec() { return data_; }
  const std::vector<double>& vec() const { return data_; }

  bool same_shape(const Tensor& o) const { return shape_ == o.shape_; }
  bool all_finite() const;
  double frobenius_norm() const;

  std::string shape_str() const;

 private:
  Shape shape_;
  std::vector<double> data_;
};

std::string shape_str(const Shape& s);
size_t shape_numel(const Shape& s);

// --- kernels ---------------------------------------------------------------
//
// matmul_reference is the serial triple loop kept as the testing oracle.
// matmul_kernel parallelizes over output rows with OpenMP; each output
// element is accumulated in the same order as the reference, so the two
// agree bit for bit and results do not depend on the thread count.

void matmul_reference(const double* a, const double* b, double* c,
                      size_t m, size_t k, size_t n);
void matmul_kernel(const double* a, const double* b, double* c,
                   size_t m, size_t k, size_t n);

/// c[m,n] = a[m,k] * b[k,n]. Vector operands are promoted: [k]*[k,n] -> [n],
/// [m,k]*[k] -> [m].
Tensor matmul(const Tensor& a, const Tensor& b);

Tensor transpose2d(const Tensor& a);

}  // namespace salbench
