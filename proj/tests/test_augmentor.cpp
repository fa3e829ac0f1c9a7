#include <catch2/catch_amalgamated.hpp>

#include "macs/augmentor.hpp"

using namespace macs;

namespace {
Tensor ramp(int d, int T) {
  Tensor t({d, T});
  for (int i = 0; i < t.numel(); ++i) t.v[i] = 0.01 * i;
  return t;
}
}  // namespace

TEST_CASE("augment with sigma 0 is the identity") {
  Tensor x = ramp(4, 25);
  CHECK(bitwise_equal(augment(x, 0.0, 123), x));
}

TEST_CASE("augment noise has the requested variance") {
  Tensor x = Tensor::zeros({100, 100});  // d*T = 1e4
  Tensor y = augment(x, 1.0, 7);
  double mean = 0.0;
  for (double v : y.v) mean += v;
  mean /= y.numel();
  double var = 0.0;
  for (double v : y.v) var += (v - mean) * (v - mean);
  var /= y.numel() - 1;
  CHECK(var > 0.94);
  CHECK(var < 1.06);
}

TEST_CASE("augment is deterministic given seed") {
  Tensor x = ramp(3, 40);
  CHECK(bitwise_equal(augment(x, 0.5, 99), augment(x, 0.5, 99)));
  CHECK_FALSE(bitwise_equal(augment(x, 0.5, 99), augment(x, 0.5, 100)));
  CHECK_THROWS_AS(augment(x, -0.1, 0), std::invalid_argument);
}

TEST_CASE("dual_views draws two independent variants") {
  Tensor x = ramp(4, 50);
  SECTION("zero range keeps both views equal to the input") {
    AugmentConfig cfg{0.0, 0.0, true};
    auto [a, b] = dual_views(x, cfg, 3);
    CHECK(bitwise_equal(a, x));
    CHECK(bitwise_equal(b, x));
  }
  SECTION("positive range separates the views") {
    AugmentConfig cfg{0.05, 0.2, true};
    auto [a, b] = dual_views(x, cfg, 3);
    CHECK(max_abs_diff(a, b) > 0.0);
    CHECK(max_abs_diff(a, x) > 0.0);
  }
  SECTION("invalid range rejected") {
    AugmentConfig cfg{0.3, 0.1, true};
    CHECK_THROWS_AS(dual_views(x, cfg, 0), std::invalid_argument);
  }
}

TEST_CASE("augmentation is mean-preserving over many draws") {
  Tensor x = ramp(2, 5);
  AugmentConfig cfg{0.1, 0.1, false};
  const int n = 1000;
  Tensor acc = Tensor::zeros(x.shape);
  for (int k = 0; k < n; ++k) {
    auto [a, b] = dual_views(x, cfg, 1000 + k);
    for (int i = 0; i < x.numel(); ++i) acc.v[i] += a.v[i];
  }
  const double bound = 3.0 * 0.1 / std::sqrt(static_cast<double>(n));
  for (int i = 0; i < x.numel(); ++i)
    CHECK(std::abs(acc.v[i] / n - x.v[i]) < bound);
}
