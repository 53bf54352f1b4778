#pragma once

#include <cstddef>
#include <cstdint>

#include "normlab/rng.hpp"

namespace normlab {

// Scheme-dependent constants that rescale an L^p dispersion statistic into an
// estimator of the Gaussian standard deviation.
enum class Scheme { L1, Linf, TopK };

// sqrt(pi/2): rescales the mean absolute deviation of a Gaussian (a
// half-normal expectation of sigma*sqrt(2/pi)) back to sigma.
double c_l1();

// (1 + sqrt(pi ln 4)) / (2 sqrt(2 ln n)) for n >= 2. Multiplying the
// sqrt(2 ln n) growth of the expected maximum absolute deviation keeps the
// scaled statistic inside a fixed corridor around sigma; the product
// c_linf(n) * sqrt(2 ln n) is independent of n.
double c_linf(std::size_t n);

// Linear interpolation in k between c_linf(n) at k=1 and c_l1() at k=n,
// with both endpoints returned exactly.
double c_topk(std::size_t n, std::size_t k);

struct ConstantQuery {
  Scheme scheme;
  std::size_t n;
  std::size_t k = 1;  // TopK only
};

struct McEstimate {
  double value = 0.0;
  double stderr_ = 0.0;
  std::size_t trials = 0;
  std::uint64_t seed = 0;
};

// Monte Carlo oracle: draws `trials` batches of n i.i.d. standard normals,
// computes the scheme's constant-scaled dispersion per batch (deviations taken
// from the true mean 0, matching the identity the constants are derived from),
// and returns the mean ratio to the true sigma=1 with its standard error.
McEstimate mc_dispersion_ratio(const ConstantQuery& query, std::size_t trials,
                               std::uint64_t seed);

}  // namespace normlab
