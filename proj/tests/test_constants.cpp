#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "normlab/constants.hpp"
#include "normlab/error.hpp"
#include "normlab/rng.hpp"

using namespace normlab;

TEST_CASE("c_l1 closed form") {
  CHECK(c_l1() == doctest::Approx(1.2533141373155003).epsilon(1e-12));
  CHECK(c_l1() * c_l1() == doctest::Approx(std::atan(1.0) * 2.0).epsilon(1e-15));

  // E(|z|) * c_l1 == 1 for standard normal z
  Rng rng(5);
  const std::size_t trials = 1000000;
  double sum = 0.0, sumsq = 0.0;
  for (std::size_t i = 0; i < trials; ++i) {
    const double a = std::fabs(rng.normal());
    sum += a;
    sumsq += a * a;
  }
  const double mean = sum / trials;
  const double sd = std::sqrt((sumsq - sum * sum / trials) / (trials - 1));
  const double se = sd / std::sqrt(static_cast<double>(trials));
  CHECK(std::fabs(mean * c_l1() - 1.0) <= 3.0 * se * c_l1());
}

TEST_CASE("c_linf closed form and bounds") {
  CHECK(c_linf(2) == doctest::Approx(1.31088).epsilon(1e-4));
  CHECK_THROWS_AS(c_linf(1), ValueError);

  // c_linf(n) * sqrt(2 ln n) is a constant for every n
  const double pi = std::atan(1.0) * 4.0;
  const double target = (1.0 + std::sqrt(pi * std::log(4.0))) / 2.0;
  CHECK(target == doctest::Approx(1.543).epsilon(1e-3));
  for (std::size_t n : {2, 16, 64, 256, 1024, 65536}) {
    CHECK(c_linf(n) * std::sqrt(2.0 * std::log(static_cast<double>(n))) ==
          doctest::Approx(target).epsilon(1e-12));
  }

  // strictly decreasing in n
  double prev = c_linf(2);
  for (std::size_t n = 3; n < 40; ++n) {
    CHECK(c_linf(n) < prev);
    prev = c_linf(n);
  }
  CHECK(c_linf(1024) < c_linf(16));
}

TEST_CASE("c_topk endpoints and interpolation") {
  for (std::size_t n : {2, 16, 256}) {
    CHECK(c_topk(n, n) == c_l1());      // exact endpoint
    CHECK(c_topk(n, 1) == c_linf(n));   // exact endpoint
  }
  const double mid = c_topk(256, 10);
  CHECK(mid > c_linf(256));
  CHECK(mid < c_l1());
  // linear in k
  const double a = c_linf(256), b = c_l1();
  CHECK(mid == doctest::Approx(a + (9.0 / 255.0) * (b - a)).epsilon(1e-14));

  CHECK_THROWS_AS(c_topk(16, 0), ValueError);
  CHECK_THROWS_AS(c_topk(16, 17), ValueError);
}

TEST_CASE("mc_dispersion_ratio: identity, corridor, determinism") {
  // L1 identity: scaled mean absolute deviation is an unbiased sigma
  // estimator, so the ratio sits within sampling noise of 1 for every n.
  for (std::size_t n : {16, 64, 256, 1024}) {
    const McEstimate est = mc_dispersion_ratio({Scheme::L1, n}, 50000, 101 + n);
    CHECK(std::fabs(est.value - 1.0) <= 5.0 * est.stderr_);
  }

  // Linf corridor from the expectation bounds on the maximum deviation
  for (std::size_t n : {16, 256}) {
    const McEstimate est = mc_dispersion_ratio({Scheme::Linf, n}, 50000, 202 + n);
    CHECK(est.value >= 0.74);
    CHECK(est.value <= 1.56);
  }

  // Top(n) is bit-identical to L1 under a shared seed
  {
    const McEstimate l1 = mc_dispersion_ratio({Scheme::L1, 256}, 20000, 33);
    const McEstimate tk = mc_dispersion_ratio({Scheme::TopK, 256, 256}, 20000, 33);
    CHECK(l1.value == tk.value);
    CHECK(l1.stderr_ == tk.stderr_);
  }

  // Top(10 of 256) lands between the Linf and L1 ratios
  {
    const McEstimate tk = mc_dispersion_ratio({Scheme::TopK, 256, 10}, 20000, 44);
    const McEstimate li = mc_dispersion_ratio({Scheme::Linf, 256}, 20000, 44);
    CHECK(tk.value > 0.74);
    CHECK(tk.value < li.value + 0.5);
  }

  // determinism
  const McEstimate a = mc_dispersion_ratio({Scheme::Linf, 64}, 5000, 7);
  const McEstimate b = mc_dispersion_ratio({Scheme::Linf, 64}, 5000, 7);
  CHECK(a.value == b.value);
  CHECK(a.stderr_ == b.stderr_);
}
