#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "salbench/rng.hpp"
#include "salbench/tape.hpp"

using namespace salbench;
using ad::NodeId;
using ad::Tape;

namespace {

Tensor random_tensor(Shape shape, RngStream& rng, double lo = -1.5, double hi = 1.5) {
  Tensor t(std::move(shape));
  for (auto& v : t.vec()) v = rng.uniform(lo, hi);
  return t;
}

// Finite-difference check for one op kind: f(x) = sum(weights * op(x)).
// The elementwise weights break softmax/layer-norm degeneracies.
double check_op(const ad::ScalarFn& f, const Tensor& point, double eps = 1e-5) {
  return ad::gradient_check(f, point, eps);
}

}  // namespace

TEST_CASE("forward op trivial values") {
  Tape tape;
  NodeId x = tape.leaf(Tensor::scalar(0.0));
  CHECK(tape.value(tape.sigmoid(x))[0] == doctest::Approx(0.5));

  NodeId z = tape.leaf(Tensor({3}));
  NodeId s = tape.softmax_rows(z);
  for (size_t i = 0; i < 3; ++i) CHECK(tape.value(s)[i] == doctest::Approx(1.0 / 3.0));
}

TEST_CASE("matmul forward on the tape matches a naive product") {
  RngStream rng(3);
  Tape tape;
  Tensor a = random_tensor({2, 3}, rng);
  Tensor b = random_tensor({3, 4}, rng);
  NodeId c = tape.matmul(tape.leaf(a), tape.leaf(b));
  for (size_t i = 0; i < 2; ++i) {
    for (size_t j = 0; j < 4; ++j) {
      double want = 0.0;
      for (size_t p = 0; p < 3; ++p) want += a.at(i, p) * b.at(p, j);
      CHECK(tape.value(c).at(i, j) == doctest::Approx(want));
    }
  }
}

TEST_CASE("backward of a sum is all ones") {
  Tape tape;
  NodeId x = tape.leaf(Tensor({2, 3}, {1, 2, 3, 4, 5, 6}), true);
  ad::GradientMap g = tape.backward(tape.sum_all(x));
  for (size_t i = 0; i < 6; ++i) CHECK(g.at(x)[i] == 1.0);
}

TEST_CASE("sigmoid derivative at zero is 0.25") {
  Tape tape;
  NodeId x = tape.leaf(Tensor::scalar(0.0), true);
  ad::GradientMap g = tape.backward(tape.sum_all(tape.sigmoid(x)));
  CHECK(g.at(x)[0] == doctest::Approx(0.25));
}

TEST_CASE("backward requires a scalar output") {
  Tape tape;
  NodeId x = tape.leaf(Tensor({3}), true);
  CHECK_THROWS_AS(tape.backward(x), std::invalid_argument);
}

TEST_CASE("two-layer composed function matches finite differences") {
  RngStream rng(17);
  for (int round = 0; round < 5; ++round) {
    Tensor w1 = random_tensor({4, 3}, rng);
    Tensor w2 = random_tensor({2, 4}, rng);
    auto f = [&](Tape& t, NodeId x) {
      NodeId h = t.tanh(t.matmul(t.constant(w1), x));
      NodeId o = t.sigmoid(t.matmul(t.constant(w2), h));
      return t.sum_all(o);
    };
    double err = ad::gradient_check(f, random_tensor({3}, rng), 1e-5);
    CHECK(err < 1e-6);
  }
}

TEST_CASE("gradient_check on a linear map is exact to rounding") {
  RngStream rng(23);
  Tensor w = random_tensor({5}, rng);
  auto f = [&](Tape& t, NodeId x) { return t.sum_all(t.mul(t.constant(w), x)); };
  CHECK(ad::gradient_check(f, random_tensor({5}, rng), 1e-5) < 1e-8);
}

TEST_CASE("gradient_check on a constant function returns zero") {
  auto f = [&](Tape& t, NodeId x) {
    (void)x;
    return t.leaf(Tensor::scalar(3.5));
  };
  // both analytic and numeric gradients vanish
  CHECK(ad::gradient_check(f, Tensor({4}), 1e-5) == 0.0);
}

TEST_CASE("gradient_check rejects non-positive epsilon") {
  auto f = [&](Tape& t, NodeId x) { return t.sum_all(x); };
  CHECK_THROWS_AS(ad::gradient_check(f, Tensor({2}), 0.0), std::invalid_argument);
}

TEST_CASE("every op kind matches central finite differences on random inputs") {
  RngStream rng(41);
  auto weighted_sum = [](Tape& t, NodeId node, const Tensor& weights) {
    return t.sum_all(t.mul(t.constant(weights), node));
  };

  struct OpCase {
    const char* name;
    Shape shape;
    std::function<NodeId(Tape&, NodeId, RngStream&)> build;
    double lo = -1.5, hi = 1.5;
  };

  std::vector<OpCase> cases;
  cases.push_back({"sigmoid", {7}, [](Tape& t, NodeId x, RngStream&) { return t.sigmoid(x); }});
  cases.push_back({"tanh", {7}, [](Tape& t, NodeId x, RngStream&) { return t.tanh(x); }});
  cases.push_back({"exp", {7}, [](Tape& t, NodeId x, RngStream&) { return t.exp(x); }});
  cases.push_back({"log", {7}, [](Tape& t, NodeId x, RngStream&) { return t.log(x); }, 0.4, 2.0});
  cases.push_back({"add", {6}, [](Tape& t, NodeId x, RngStream& r) {
                     RngStream rr(r.next_u64());
                     Tensor o({6});
                     for (auto& v : o.vec()) v = rr.uniform(-1, 1);
                     return t.add(x, t.constant(o));
                   }});
  cases.push_back({"mul", {6}, [](Tape& t, NodeId x, RngStream& r) {
                     RngStream rr(r.next_u64());
                     Tensor o({6});
                     for (auto& v : o.vec()) v = rr.uniform(0.2, 1.2);
                     return t.mul(x, t.constant(o));
                   }});
  cases.push_back({"scale", {6}, [](Tape& t, NodeId x, RngStream&) { return t.scale(x, -0.7); }});
  cases.push_back({"add_bias", {3, 4}, [](Tape& t, NodeId x, RngStream& r) {
                     RngStream rr(r.next_u64());
                     Tensor b({4});
                     for (auto& v : b.vec()) v = rr.uniform(-1, 1);
                     return t.add_bias(x, t.constant(b));
                   }});
  cases.push_back({"matmul_left", {3, 4}, [](Tape& t, NodeId x, RngStream& r) {
                     RngStream rr(r.next_u64());
                     Tensor b({4, 2});
                     for (auto& v : b.vec()) v = rr.uniform(-1, 1);
                     return t.matmul(x, t.constant(b));
                   }});
  cases.push_back({"matmul_right", {4, 2}, [](Tape& t, NodeId x, RngStream& r) {
                     RngStream rr(r.next_u64());
                     Tensor a({3, 4});
                     for (auto& v : a.vec()) v = rr.uniform(-1, 1);
                     return t.matmul(t.constant(a), x);
                   }});
  cases.push_back({"transpose", {3, 4}, [](Tape& t, NodeId x, RngStream&) {
                     return t.transpose(x);
                   }});
  cases.push_back({"softmax_rows", {3, 5}, [](Tape& t, NodeId x, RngStream&) {
                     return t.softmax_rows(x);
                   }});
  cases.push_back({"layer_norm", {3, 6}, [](Tape& t, NodeId x, RngStream& r) {
                     RngStream rr(r.next_u64());
                     Tensor g({6}), s({6});
                     for (auto& v : g.vec()) v = rr.uniform(0.5, 1.5);
                     for (auto& v : s.vec()) v = rr.uniform(-0.5, 0.5);
                     return t.layer_norm(x, t.constant(g), t.constant(s));
                   }});
  cases.push_back({"layer_norm_gain", {6}, [](Tape& t, NodeId x, RngStream& r) {
                     RngStream rr(r.next_u64());
                     Tensor a({2, 6}), s({6});
                     for (auto& v : a.vec()) v = rr.uniform(-1, 1);
                     for (auto& v : s.vec()) v = rr.uniform(-0.5, 0.5);
                     return t.layer_norm(t.constant(a), x, t.constant(s));
                   }, 0.5, 1.5});
  cases.push_back({"concat", {2, 3}, [](Tape& t, NodeId x, RngStream& r) {
                     RngStream rr(r.next_u64());
                     Tensor o({2, 2});
                     for (auto& v : o.vec()) v = rr.uniform(-1, 1);
                     return t.concat({x, t.constant(o)}, 1);
                   }});
  cases.push_back({"slice", {4, 5}, [](Tape& t, NodeId x, RngStream&) {
                     return t.slice(x, {1, 2}, {2, 3});
                   }});
  cases.push_back({"reshape", {4, 3}, [](Tape& t, NodeId x, RngStream&) {
                     return t.reshape(x, {2, 6});
                   }});
  cases.push_back({"gather_rows", {5, 3}, [](Tape& t, NodeId x, RngStream&) {
                     return t.gather_rows(x, {1, 3, 1, 4});
                   }});
  cases.push_back({"pick", {3, 4}, [](Tape& t, NodeId x, RngStream&) {
                     return t.pick(x, {{0, 1}, {2, 3}, {1, 0}});
                   }});
  cases.push_back({"sum_all", {7}, [](Tape& t, NodeId x, RngStream&) { return t.sum_all(x); }});
  cases.push_back({"mean_all", {7}, [](Tape& t, NodeId x, RngStream&) { return t.mean_all(x); }});

  for (const auto& c : cases) {
    CAPTURE(c.name);
    for (int round = 0; round < 20; ++round) {
      uint64_t round_seed = rng.next_u64();
      Tensor point = [&] {
        RngStream r(round_seed);
        return random_tensor(c.shape, r, c.lo, c.hi);
      }();
      auto f = [&](Tape& t, NodeId x) {
        RngStream op_rng(round_seed + 1);
        NodeId y = c.build(t, x, op_rng);
        RngStream w_rng(round_seed + 2);
        Tensor weights(t.value(y).shape());
        for (auto& v : weights.vec()) v = w_rng.uniform(-1.0, 1.0);
        return t.sum_all(t.mul(t.constant(weights), y));
      };
      double err = check_op(f, point);
      CHECK(err < 1e-6);
    }
  }
  (void)weighted_sum;
}

TEST_CASE("backward over the same tape twice is bit-identical") {
  RngStream rng(51);
  Tape tape;
  NodeId x = tape.leaf(random_tensor({4, 3}, rng), true);
  NodeId w = tape.leaf(random_tensor({3, 2}, rng), true);
  NodeId out = tape.sum_all(tape.tanh(tape.matmul(x, w)));
  ad::GradientMap g1 = tape.backward(out);
  ad::GradientMap g2 = tape.backward(out);
  for (NodeId id : {x, w}) {
    for (size_t i = 0; i < g1.at(id).numel(); ++i) CHECK(g1.at(id)[i] == g2.at(id)[i]);
  }
}

TEST_CASE("gradient of independent subgraphs adds linearly") {
  RngStream rng(61);
  Tensor xa = random_tensor({4}, rng);
  Tensor xb = random_tensor({4}, rng);

  auto grad_single = [](const Tensor& v, bool use_tanh) {
    Tape t;
    NodeId x = t.leaf(v, true);
    NodeId y = use_tanh ? t.tanh(x) : t.sigmoid(x);
    ad::GradientMap g = t.backward(t.sum_all(y));
    return g.at(x);
  };

  // one tape holding both independent subgraphs, summed
  Tape t;
  NodeId a = t.leaf(xa, true);
  NodeId b = t.leaf(xb, true);
  NodeId out = t.add(t.sum_all(t.tanh(a)), t.sum_all(t.sigmoid(b)));
  ad::GradientMap g = t.backward(t.sum_all(out));

  Tensor ga = grad_single(xa, true);
  Tensor gb = grad_single(xb, false);
  for (size_t i = 0; i < 4; ++i) {
    CHECK(g.at(a)[i] == doctest::Approx(ga[i]).epsilon(1e-15));
    CHECK(g.at(b)[i] == doctest::Approx(gb[i]).epsilon(1e-15));
  }
}

TEST_CASE("leaves not reached by the output get zero gradients") {
  Tape t;
  NodeId used = t.leaf(Tensor({2}, {1.0, 2.0}), true);
  NodeId unused = t.leaf(Tensor({3}, {1.0, 2.0, 3.0}), true);
  ad::GradientMap g = t.backward(t.sum_all(used));
  REQUIRE(g.contains(unused));
  for (size_t i = 0; i < 3; ++i) CHECK(g.at(unused)[i] == 0.0);
}

TEST_CASE("forward values stay finite on moderate inputs") {
  RngStream rng(71);
  Tape t;
  NodeId x = t.leaf(random_tensor({4, 4}, rng));
  NodeId y = t.softmax_rows(t.matmul(x, t.transpose(x)));
  CHECK(t.value(y).all_finite());
}
