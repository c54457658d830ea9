#include "disp/tensor.hpp"

#include <cmath>
#include <doctest.h>

#include "disp/errors.hpp"
#include "disp/rng.hpp"

using namespace disp;

namespace {

Tensor random_tensor(Shape shape, std::uint64_t seed, double lo = -1.0, double hi = 1.0,
                     bool requires_grad = false) {
  CounterRng rng(seed, 77);
  std::size_t n = 1;
  for (auto d : shape) n *= d;
  std::vector<double> v(n);
  for (std::size_t i = 0; i < n; ++i) v[i] = rng.uniform(i, lo, hi);
  return Tensor::from_values(std::move(shape), std::move(v), requires_grad);
}

}  // namespace

TEST_CASE("tanh at origin and basic forward values") {
  CHECK(tanh(Tensor::from_values({1}, {0.0})).item() == 0.0);

  Tensor v = l2_normalize(Tensor::from_values({2}, {3.0, 4.0}));
  CHECK(v.values()[0] == doctest::Approx(0.6));
  CHECK(v.values()[1] == doctest::Approx(0.8));

  CHECK(dot(v, v.detached()).item() == doctest::Approx(1.0));
}

TEST_CASE("shape mismatches are rejected with op name") {
  Tensor a = Tensor::zeros({2, 3});
  Tensor b = Tensor::zeros({2, 3});
  CHECK_THROWS_WITH_AS(matmul(a, b), doctest::Contains("matmul"), NumericError);
  CHECK_THROWS_AS(dot(Tensor::zeros({2}), Tensor::zeros({3})), NumericError);
  CHECK_THROWS_AS(add(Tensor::zeros({2, 2}), Tensor::zeros({3})), NumericError);
}

TEST_CASE("l2_normalize rejects degenerate vectors and stays unit-norm otherwise") {
  CHECK_THROWS_AS(l2_normalize(Tensor::zeros({4})), NumericError);

  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    Tensor x = random_tensor({5, 7}, seed);
    Tensor n = l2_normalize(x);
    for (std::size_t r = 0; r < 5; ++r) {
      double sq = 0.0;
      for (std::size_t c = 0; c < 7; ++c) sq += n.values()[r * 7 + c] * n.values()[r * 7 + c];
      CHECK(std::fabs(std::sqrt(sq) - 1.0) < 1e-12);
    }
  }
}

TEST_CASE("backward: tanh'(0) = 1") {
  Tensor x = Tensor::from_values({1}, {0.0}, true);
  Tensor y = tanh(x);
  backward(y);
  CHECK(x.grad()[0] == doctest::Approx(1.0));
}

TEST_CASE("backward: mean(abs(w)) subgradient") {
  Tensor w = Tensor::from_values({2}, {-2.0, 2.0}, true);
  backward(mean(abs(w)));
  CHECK(w.grad()[0] == doctest::Approx(-0.5));
  CHECK(w.grad()[1] == doctest::Approx(0.5));
}

TEST_CASE("backward: normalized-feature dot against finite differences") {
  // loss = <l2_normalize(v), c>, gradient lives in the component of c
  // orthogonal to vhat.
  Tensor c = Tensor::from_values({2}, {0.3, 0.7});
  auto f = [&](const Tensor& v) { return dot(l2_normalize(v), c); };
  Tensor v = Tensor::from_values({2}, {1.0, 0.0});
  CHECK(finite_difference_check(f, v, 1e-6) < 1e-6);

  Tensor var = v.detached(true);
  backward(f(var));
  // vhat = [1,0]; projection of c orthogonal to vhat is [0, 0.7].
  CHECK(var.grad()[0] == doctest::Approx(0.0).epsilon(1e-9));
  CHECK(var.grad()[1] == doctest::Approx(0.7));
}

TEST_CASE("backward rejects non-scalar loss") {
  Tensor x = Tensor::zeros({3}, true);
  CHECK_THROWS_AS(backward(tanh(x)), NumericError);
}

TEST_CASE("backward accumulates until reset, identically") {
  Tensor x = random_tensor({4}, 9, -1.0, 1.0, true);
  Tensor y = mean(tanh(x));
  backward(y);
  std::vector<double> once(x.grad().begin(), x.grad().end());
  backward(y);
  for (std::size_t i = 0; i < once.size(); ++i)
    CHECK(x.grad()[i] == 2.0 * once[i]);  // exact: same arithmetic twice

  x.zero_grad();
  backward(y);
  for (std::size_t i = 0; i < once.size(); ++i) CHECK(x.grad()[i] == once[i]);
}

TEST_CASE("finite_difference_check: constant function and step validation") {
  auto constant = [](const Tensor& x) { return Tensor::scalar(1.5, x.requires_grad()); };
  // Both gradients are zero; guarded denominator keeps the error at 0.
  Tensor x = random_tensor({3}, 3);
  CHECK(finite_difference_check(constant, x, 1e-5) == 0.0);
  CHECK_THROWS_AS(finite_difference_check(constant, x, 0.0), NumericError);
  CHECK_THROWS_AS(finite_difference_check(constant, x, 1e-2), NumericError);
}

TEST_CASE("finite_difference_check: sum(tanh(x)) high accuracy") {
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    Tensor x = random_tensor({8}, seed);
    auto f = [](const Tensor& t) { return sum(tanh(t)); };
    CHECK(finite_difference_check(f, x, 1e-5) < 1e-6);
  }
}

TEST_CASE("gradcheck every smooth primitive on 100 seeds") {
  // Points within `step` of a kink (abs, relu) are pushed away before the
  // check; the subgradient convention there is exercised elsewhere.
  const double step = 1e-5;
  auto away_from_zero = [&](Tensor t) {
    auto v = t.values_mut();
    for (double& x : v)
      if (std::fabs(x) < 10 * step) x = (x >= 0 ? 1.0 : -1.0) * 10 * step + x;
    return t;
  };

  for (std::uint64_t seed = 0; seed < 100; ++seed) {
    Tensor x = random_tensor({3, 4}, seed * 131 + 7);
    Tensor y = random_tensor({4, 3}, seed * 131 + 8);
    Tensor same = random_tensor({3, 4}, seed * 131 + 9);
    Tensor bias = random_tensor({4}, seed * 131 + 10);

    CHECK(finite_difference_check(
              [&](const Tensor& t) { return sum(matmul(t, y)); }, x, step) < 1e-5);
    CHECK(finite_difference_check(
              [&](const Tensor& t) { return sum(matmul(x, t)); }, y, step) < 1e-5);
    CHECK(finite_difference_check(
              [&](const Tensor& t) { return sum(transpose(t)); }, x, step) < 1e-5);
    CHECK(finite_difference_check(
              [&](const Tensor& t) { return sum(add(t, same)); }, x, step) < 1e-5);
    CHECK(finite_difference_check(
              [&](const Tensor& t) { return sum(add(x, t)); }, bias, step) < 1e-5);
    CHECK(finite_difference_check(
              [&](const Tensor& t) { return sum(mul(t, same)); }, x, step) < 1e-5);
    CHECK(finite_difference_check(
              [&](const Tensor& t) { return sum(scale(t, -2.5)); }, x, step) < 1e-5);
    CHECK(finite_difference_check(
              [&](const Tensor& t) { return mean(tanh(t)); }, x, step) < 1e-5);
    CHECK(finite_difference_check(
              [&](const Tensor& t) { return sum(relu(t)); }, away_from_zero(x.detached()),
              step) < 1e-5);
    CHECK(finite_difference_check(
              [&](const Tensor& t) { return sum(abs(t)); }, away_from_zero(x.detached()),
              step) < 1e-5);
    CHECK(finite_difference_check(
              [&](const Tensor& t) { return mean(l2_normalize(t)); }, x, step) < 1e-5);

    Tensor u = random_tensor({6}, seed * 131 + 11);
    Tensor w = random_tensor({6}, seed * 131 + 12);
    CHECK(finite_difference_check([&](const Tensor& t) { return dot(t, w); }, u, step) < 1e-5);

    std::vector<int> labels = {0, 2, 1};
    CHECK(finite_difference_check(
              [&](const Tensor& t) { return softmax_cross_entropy(t, labels); },
              random_tensor({3, 3}, seed * 131 + 13), step) < 1e-5);
  }
}

TEST_CASE("gradcheck conv2d and avg_pool") {
  const double step = 1e-5;
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    Tensor x = random_tensor({2, 2, 5, 5}, seed * 17 + 1);
    Tensor w = random_tensor({3, 2, 3, 3}, seed * 17 + 2);
    Tensor b = random_tensor({3}, seed * 17 + 3);

    auto via_x = [&](const Tensor& t) { return sum(conv2d(t, w, b, 2, 1)); };
    auto via_w = [&](const Tensor& t) { return sum(conv2d(x, t, b, 2, 1)); };
    auto via_b = [&](const Tensor& t) { return sum(conv2d(x, w, t, 2, 1)); };
    CHECK(finite_difference_check(via_x, x, step) < 1e-5);
    CHECK(finite_difference_check(via_w, w, step) < 1e-5);
    CHECK(finite_difference_check(via_b, b, step) < 1e-5);

    CHECK(finite_difference_check(
              [](const Tensor& t) { return mean(avg_pool_global(t)); },
              random_tensor({2, 3, 4, 4}, seed * 17 + 4), step) < 1e-5);
  }
}

TEST_CASE("conv2d matches a direct loop at one fixed case") {
  // 1x1x3x3 input, 1x1x2x2 kernel, stride 1, no padding.
  Tensor x = Tensor::from_values({1, 1, 3, 3}, {1, 2, 3, 4, 5, 6, 7, 8, 9});
  Tensor w = Tensor::from_values({1, 1, 2, 2}, {1, 0, 0, -1});
  Tensor out = conv2d(x, w, Tensor(), 1, 0);
  REQUIRE(out.shape() == Shape{1, 1, 2, 2});
  // cross-correlation: x[i,j] - x[i+1,j+1]
  CHECK(out.values()[0] == doctest::Approx(1.0 - 5.0));
  CHECK(out.values()[1] == doctest::Approx(2.0 - 6.0));
  CHECK(out.values()[2] == doctest::Approx(4.0 - 8.0));
  CHECK(out.values()[3] == doctest::Approx(5.0 - 9.0));
}

TEST_CASE("softmax_cross_entropy value on a known case") {
  // logits row [0,0]: loss = log 2 regardless of label.
  Tensor logits = Tensor::from_values({1, 2}, {0.0, 0.0});
  CHECK(softmax_cross_entropy(logits, {1}).item() == doctest::Approx(std::log(2.0)));
  CHECK_THROWS_AS(softmax_cross_entropy(logits, {2}), NumericError);
}

TEST_CASE("no computation record without requires_grad") {
  Tensor x = Tensor::zeros({2, 2});
  Tensor y = tanh(x);
  CHECK_FALSE(y.requires_grad());
  CHECK(y.node()->inputs.empty());
}
