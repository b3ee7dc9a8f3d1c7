// SPDX-License-Identifier: Apache-2.0
//
// Differentiable-core tests: forward values against hand computations,
// backward rules against finite differences, and the RNG/dropout determinism
// contracts.

#include <catch2/catch_amalgamated.hpp>

#include <cmath>

#include "tmlga/gradcheck.hpp"
#include "tmlga/rng.hpp"
#include "tmlga/tape.hpp"
#include "tmlga/tensor.hpp"

using namespace tmlga;
using Catch::Approx;

namespace {

Tensor random_tensor(std::vector<std::size_t> shape, RngState& rng, double lo = -1.0,
                     double hi = 1.0) {
  Tensor t(std::move(shape));
  for (std::size_t i = 0; i < t.numel(); ++i) t[i] = uniform(rng, lo, hi);
  return t;
}

}  // namespace

TEST_CASE("tensor shape validation") {
  REQUIRE_THROWS_AS(Tensor({0}), shape_error);
  REQUIRE_THROWS_AS(Tensor({2, 0}), shape_error);
  REQUIRE_THROWS_AS(Tensor({2}, {1.0, 2.0, 3.0}), shape_error);
  Tensor t({2, 3});
  REQUIRE(t.numel() == 6);
  REQUIRE(t.shape_str() == "[2x3]");
}

TEST_CASE("matmul forward values") {
  Tape tape;
  SECTION("identity") {
    Var eye = tape.constant(Tensor::matrix(3, 3, {1, 0, 0, 0, 1, 0, 0, 0, 1}));
    Var x = tape.constant(Tensor::matrix(3, 1, {1, 2, 3}));
    const Tensor& y = tape.value(matmul(eye, x));
    REQUIRE(y[0] == 1.0);
    REQUIRE(y[1] == 2.0);
    REQUIRE(y[2] == 3.0);
  }
  SECTION("zeros") {
    Var z = tape.constant(Tensor::zeros({2, 2}));
    Var a = tape.constant(Tensor::matrix(2, 2, {5, -3, 2, 7}));
    const Tensor& y = tape.value(matmul(z, a));
    for (std::size_t i = 0; i < 4; ++i) REQUIRE(y[i] == 0.0);
  }
  SECTION("hand multiplication") {
    Var a = tape.constant(Tensor::matrix(2, 2, {1, 2, 3, 4}));
    Var b = tape.constant(Tensor::matrix(2, 1, {5, 6}));
    const Tensor& y = tape.value(matmul(a, b));
    REQUIRE(y[0] == 17.0);
    REQUIRE(y[1] == 39.0);
  }
  SECTION("shape mismatch names both shapes") {
    Var a = tape.constant(Tensor::zeros({2, 3}));
    Var b = tape.constant(Tensor::zeros({2, 3}));
    REQUIRE_THROWS_MATCHES(matmul(a, b), shape_error,
                           Catch::Matchers::MessageMatches(
                               Catch::Matchers::ContainsSubstring("[2x3]")));
  }
}

TEST_CASE("unary op values") {
  Tape tape;
  SECTION("tanh of zero") {
    const Tensor& y = tape.value(tanh(tape.constant(Tensor::vector({0, 0}))));
    REQUIRE(y[0] == 0.0);
    REQUIRE(y[1] == 0.0);
  }
  SECTION("sigmoid symmetry point") {
    const Tensor& y = tape.value(sigmoid(tape.constant(Tensor::vector({0}))));
    REQUIRE(y[0] == Approx(0.5));
  }
  SECTION("log of e") {
    const Tensor& y = tape.value(log(tape.constant(Tensor::vector({std::exp(1.0)}))));
    REQUIRE(y[0] == Approx(1.0));
  }
  SECTION("log rejects non-positive entries naming the index") {
    Var x = tape.constant(Tensor::vector({1.0, -2.0}));
    REQUIRE_THROWS_MATCHES(log(x), domain_error,
                           Catch::Matchers::MessageMatches(
                               Catch::Matchers::ContainsSubstring("index 1")));
  }
}

TEST_CASE("softmax") {
  Tape tape;
  SECTION("constant input gives the uniform distribution") {
    const Tensor& y = tape.value(softmax(tape.constant(Tensor::vector({7.5, 7.5, 7.5, 7.5}))));
    for (std::size_t i = 0; i < 4; ++i) REQUIRE(y[i] == Approx(0.25).margin(1e-15));
  }
  SECTION("hand exp-normalize") {
    const Tensor& y =
        tape.value(softmax(tape.constant(Tensor::vector({0.0, std::log(3.0)}))));
    REQUIRE(y[0] == Approx(0.25).margin(1e-12));
    REQUIRE(y[1] == Approx(0.75).margin(1e-12));
  }
  SECTION("large logits do not overflow") {
    const Tensor& y = tape.value(softmax(tape.constant(Tensor::vector({1000.0, 1000.0}))));
    REQUIRE(y[0] == Approx(0.5));
    REQUIRE(y[1] == Approx(0.5));
    REQUIRE(y.all_finite());
  }
  SECTION("empty input is unconstructible") {
    REQUIRE_THROWS_AS(Tensor({0}), shape_error);
  }
  SECTION("sums to 1 and is shift invariant on random inputs") {
    RngState rng{11, 0};
    for (int it = 0; it < 200; ++it) {
      const std::size_t n = 1 + next_below(rng, 12);
      Tensor x = random_tensor({n}, rng, -30.0, 30.0);
      Tensor shifted = x;
      const double c = uniform(rng, -100.0, 100.0);
      for (std::size_t i = 0; i < n; ++i) shifted[i] += c;
      Tape t2;
      const Tensor& y = t2.value(softmax(t2.constant(x)));
      const Tensor& ys = t2.value(softmax(t2.constant(shifted)));
      double s = 0;
      for (std::size_t i = 0; i < n; ++i) {
        REQUIRE(y[i] >= 0.0);
        s += y[i];
        REQUIRE(std::fabs(y[i] - ys[i]) < 1e-12);
      }
      REQUIRE(std::fabs(s - 1.0) < 1e-12);
    }
  }
}

TEST_CASE("reduce_mean_rows") {
  Tape tape;
  SECTION("single row is the identity") {
    Var x = tape.constant(Tensor::matrix(1, 3, {4, 5, 6}));
    const Tensor& y = tape.value(mean_rows(x));
    REQUIRE(y[0] == 4.0);
    REQUIRE(y[1] == 5.0);
    REQUIRE(y[2] == 6.0);
  }
  SECTION("hand average") {
    Var x = tape.constant(Tensor::matrix(2, 2, {1, 3, 3, 1}));
    const Tensor& y = tape.value(mean_rows(x));
    REQUIRE(y[0] == 2.0);
    REQUIRE(y[1] == 2.0);
  }
  SECTION("zeros") {
    const Tensor& y = tape.value(mean_rows(tape.constant(Tensor::zeros({5, 4}))));
    for (std::size_t i = 0; i < 4; ++i) REQUIRE(y[i] == 0.0);
  }
}

TEST_CASE("dropout") {
  SECTION("eval mode is the identity") {
    Tape tape;
    RngState rng{3, 0};
    Var x = tape.constant(Tensor::vector({1, 2, 3}));
    Var y = dropout(x, 0.5, rng, /*training=*/false);
    REQUIRE(y.id == x.id);
    REQUIRE(rng.position == 0);  // no draws consumed
  }
  SECTION("p=0 in training keeps every entry") {
    Tape tape;
    RngState rng{3, 0};
    Var x = tape.constant(Tensor::vector({1, 2, 3}));
    const Tensor& y = tape.value(dropout(x, 0.0, rng, /*training=*/true));
    REQUIRE(y[0] == 1.0);
    REQUIRE(y[1] == 2.0);
    REQUIRE(y[2] == 3.0);
  }
  SECTION("surviving fraction near 1-p over a million entries") {
    Tape tape;
    RngState rng{99, 0};
    const std::size_t n = 1000000;
    Var x = tape.constant(Tensor::full({n}, 1.0));
    const Tensor& y = tape.value(dropout(x, 0.5, rng, /*training=*/true));
    std::size_t survived = 0;
    for (std::size_t i = 0; i < n; ++i) {
      if (y[i] != 0.0) ++survived;
    }
    const double frac = static_cast<double>(survived) / static_cast<double>(n);
    REQUIRE(frac > 0.49);
    REQUIRE(frac < 0.51);
  }
  SECTION("invalid probability") {
    Tape tape;
    RngState rng{3, 0};
    Var x = tape.constant(Tensor::vector({1}));
    REQUIRE_THROWS_AS(dropout(x, 1.0, rng, true), domain_error);
    REQUIRE_THROWS_AS(dropout(x, -0.1, rng, true), domain_error);
  }
  SECTION("identical rng state gives a bit-identical mask") {
    Tape t1, t2;
    RngState a{1234, 77}, b{1234, 77};
    Tensor x = Tensor::full({64}, 1.0);
    const Tensor& y1 = t1.value(dropout(t1.constant(x), 0.3, a, true));
    const Tensor& y2 = t2.value(dropout(t2.constant(x), 0.3, b, true));
    for (std::size_t i = 0; i < 64; ++i) REQUIRE(y1[i] == y2[i]);
    REQUIRE(a == b);
  }
}

TEST_CASE("backward") {
  SECTION("grad of sum is ones") {
    Tape tape;
    Var x = tape.leaf(Tensor::vector({4, -1, 2}), true);
    tape.backward(sum(x));
    const Tensor& g = tape.grad(x);
    REQUIRE(g[0] == 1.0);
    REQUIRE(g[1] == 1.0);
    REQUIRE(g[2] == 1.0);
  }
  SECTION("grad of sum of squares") {
    Tape tape;
    Var x = tape.leaf(Tensor::vector({1, 2}), true);
    tape.backward(sum(mul(x, x)));
    const Tensor& g = tape.grad(x);
    REQUIRE(g[0] == Approx(2.0));
    REQUIRE(g[1] == Approx(4.0));
  }
  SECTION("unused leaf gets zero gradient") {
    Tape tape;
    Var x = tape.leaf(Tensor::vector({1, 2}), true);
    Var w = tape.leaf(Tensor::vector({5, 5}), true);
    tape.backward(sum(x));
    const Tensor& g = tape.grad(w);
    REQUIRE(g[0] == 0.0);
    REQUIRE(g[1] == 0.0);
  }
  SECTION("non-scalar loss is rejected") {
    Tape tape;
    Var x = tape.leaf(Tensor::vector({1, 2}), true);
    REQUIRE_THROWS_AS(tape.backward(x), shape_error);
  }
  SECTION("backward is linear in the loss") {
    RngState rng{7, 0};
    for (int it = 0; it < 20; ++it) {
      Tensor x0 = random_tensor({5}, rng);
      const double alpha = uniform(rng, -2.0, 2.0), beta = uniform(rng, -2.0, 2.0);

      Tape tape;
      Var x = tape.leaf(x0, true);
      Var l1 = sum(mul(x, x));
      Var l2 = sum(tanh(x));
      Var combined = add(scale(l1, alpha), scale(l2, beta));

      tape.backward(l1);
      Tensor g1 = tape.grad(x);
      tape.backward(l2);
      Tensor g2 = tape.grad(x);
      tape.backward(combined);
      const Tensor& gc = tape.grad(x);
      for (std::size_t i = 0; i < 5; ++i) {
        REQUIRE(gc[i] == Approx(alpha * g1[i] + beta * g2[i]).margin(1e-10));
      }
    }
  }
}

TEST_CASE("grad_check harness") {
  SECTION("sum of tanh") {
    RngState rng{21, 0};
    std::vector<Tensor> in{random_tensor({8}, rng, -2.0, 2.0)};
    const double err =
        grad_check([](Tape&, const std::vector<Var>& v) { return sum(tanh(v[0])); }, in);
    REQUIRE(err <= 1e-6);
  }
  SECTION("constant function has zero error") {
    std::vector<Tensor> in{Tensor::vector({1.0, 2.0})};
    const double err = grad_check(
        [](Tape& t, const std::vector<Var>& v) {
          (void)v;
          return t.constant(Tensor::scalar(3.0));
        },
        in);
    REQUIRE(err == 0.0);
  }
}

TEST_CASE("every op passes grad_check on 100 random instances") {
  RngState rng{1001, 0};
  double worst = 0;
  for (int it = 0; it < 100; ++it) {
    {
      std::vector<Tensor> in{random_tensor({3, 4}, rng), random_tensor({4, 2}, rng)};
      worst = std::max(worst, grad_check([](Tape&, const std::vector<Var>& v) {
                         return sum(tanh(matmul(v[0], v[1])));
                       }, in));
    }
    {
      std::vector<Tensor> in{random_tensor({4, 3}, rng), random_tensor({3}, rng),
                             random_tensor({4}, rng)};
      worst = std::max(worst, grad_check([](Tape&, const std::vector<Var>& v) {
                         return sum(mul(sigmoid(matvec(v[0], v[1])), v[2]));
                       }, in));
    }
    {
      std::vector<Tensor> in{random_tensor({6}, rng, -3.0, 3.0)};
      const std::size_t k = next_below(rng, 6);
      worst = std::max(worst, grad_check([k](Tape&, const std::vector<Var>& v) {
                         return pick(softmax(v[0]), k);
                       }, in));
    }
    {
      std::vector<Tensor> in{random_tensor({3, 5}, rng), random_tensor({3}, rng)};
      worst = std::max(worst, grad_check([](Tape&, const std::vector<Var>& v) {
                         return sum(mean_rows(scale_rows(v[0], v[1])));
                       }, in));
    }
    {
      std::vector<Tensor> in{random_tensor({5}, rng, 0.3, 2.5), random_tensor({5}, rng)};
      worst = std::max(worst, grad_check([](Tape&, const std::vector<Var>& v) {
                         return sum(mul(log(v[0]), exp(scale(v[1], 0.5))));
                       }, in));
    }
  }
  INFO("worst relative error " << worst);
  REQUIRE(worst <= 1e-4);
}

TEST_CASE("rng determinism") {
  SECTION("identical state, identical stream") {
    RngState a{555, 0}, b{555, 0};
    for (int i = 0; i < 100; ++i) REQUIRE(next_u64(a) == next_u64(b));
  }
  SECTION("resume from a recorded position") {
    RngState a{999, 0};
    for (int i = 0; i < 10; ++i) next_u64(a);
    RngState b = a;
    std::vector<std::uint64_t> rest;
    for (int i = 0; i < 10; ++i) rest.push_back(next_u64(a));
    for (int i = 0; i < 10; ++i) REQUIRE(next_u64(b) == rest[static_cast<std::size_t>(i)]);
  }
  SECTION("forked streams are independent of draw order") {
    RngState a = fork(123, 1);
    RngState b = fork(123, 2);
    const std::uint64_t a1 = next_u64(a);
    const std::uint64_t b1 = next_u64(b);
    RngState a2 = fork(123, 1);
    REQUIRE(next_u64(a2) == a1);
    REQUIRE(a1 != b1);
  }
}
