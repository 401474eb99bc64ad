#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "salbench/rng.hpp"
#include "salbench/tensor.hpp"

using namespace salbench;

namespace {

Tensor random_tensor(Shape shape, RngStream& rng, double scale = 1.0) {
  Tensor t(std::move(shape));
  for (auto& v : t.vec()) v = rng.uniform(-scale, scale);
  return t;
}

// independent oracle: plain triple loop written out in the test
Tensor naive_matmul(const Tensor& a, const Tensor& b) {
  Tensor c({a.dim(0), b.dim(1)});
  for (size_t i = 0; i < a.dim(0); ++i)
    for (size_t j = 0; j < b.dim(1); ++j)
      for (size_t p = 0; p < a.dim(1); ++p) c.at(i, j) += a.at(i, p) * b.at(p, j);
  return c;
}

}  // namespace

TEST_CASE("tensor shape and data stay consistent") {
  Tensor t({2, 3});
  CHECK(t.numel() == 6);
  CHECK(t.rank() == 2);
  CHECK_THROWS(Tensor({2, 2}, {1.0, 2.0, 3.0}));
  CHECK(Tensor::scalar(4.0)[0] == 4.0);
  CHECK(Tensor::full({3}, 2.0).frobenius_norm() == doctest::Approx(std::sqrt(12.0)));
}

TEST_CASE("matmul matches the naive triple-loop oracle") {
  RngStream rng(7);
  Tensor a = random_tensor({2, 3}, rng);
  Tensor b = random_tensor({3, 4}, rng);
  Tensor c = matmul(a, b);
  Tensor expected = naive_matmul(a, b);
  REQUIRE(c.shape() == Shape{2, 4});
  for (size_t i = 0; i < c.numel(); ++i) CHECK(c[i] == doctest::Approx(expected[i]).epsilon(1e-14));

  for (int round = 0; round < 10; ++round) {
    size_t m = 1 + rng.uniform_index(6), k = 1 + rng.uniform_index(6), n = 1 + rng.uniform_index(6);
    Tensor x = random_tensor({m, k}, rng);
    Tensor y = random_tensor({k, n}, rng);
    Tensor z = matmul(x, y);
    Tensor want = naive_matmul(x, y);
    for (size_t i = 0; i < z.numel(); ++i) CHECK(z[i] == doctest::Approx(want[i]).epsilon(1e-13));
  }
}

TEST_CASE("matmul promotes vector operands") {
  RngStream rng(9);
  Tensor a = random_tensor({4}, rng);
  Tensor m = random_tensor({4, 3}, rng);
  Tensor v = matmul(a, m);  // [k] * [k,n] -> [n]
  REQUIRE(v.shape() == Shape{3});
  for (size_t j = 0; j < 3; ++j) {
    double want = 0.0;
    for (size_t p = 0; p < 4; ++p) want += a[p] * m.at(p, j);
    CHECK(v[j] == doctest::Approx(want));
  }
  Tensor w = matmul(m, random_tensor({3}, rng));  // [m,k] * [k] -> [m]
  CHECK(w.shape() == Shape{4});
}

TEST_CASE("matmul rejects mismatched shapes with a descriptive error") {
  Tensor a({2, 3});
  Tensor b({4, 5});
  CHECK_THROWS_WITH_AS(matmul(a, b), doctest::Contains("matmul"), std::invalid_argument);
  try {
    matmul(a, b);
  } catch (const std::invalid_argument& e) {
    std::string msg = e.what();
    CHECK(msg.find("[2x3]") != std::string::npos);
    CHECK(msg.find("[4x5]") != std::string::npos);
  }
}

TEST_CASE("parallel kernel agrees bit for bit with the serial reference") {
  // large enough to take the parallel path
  RngStream rng(11);
  size_t m = 96, k = 64, n = 48;
  Tensor a = random_tensor({m, k}, rng);
  Tensor b = random_tensor({k, n}, rng);
  std::vector<double> serial(m * n), parallel(m * n);
  matmul_reference(a.data(), b.data(), serial.data(), m, k, n);
  matmul_kernel(a.data(), b.data(), parallel.data(), m, k, n);
  for (size_t i = 0; i < serial.size(); ++i) CHECK(serial[i] == parallel[i]);
}

TEST_CASE("transpose") {
  Tensor a({2, 3}, {1, 2, 3, 4, 5, 6});
  Tensor t = transpose2d(a);
  REQUIRE(t.shape() == Shape{3, 2});
  CHECK(t.at(0, 0) == 1);
  CHECK(t.at(2, 1) == 6);
  CHECK_THROWS_AS(transpose2d(Tensor({4})), std::invalid_argument);
}

TEST_CASE("finiteness check") {
  Tensor t({2}, {1.0, 2.0});
  CHECK(t.all_finite());
  t[1] = std::numeric_limits<double>::infinity();
  CHECK(!t.all_finite());
}
