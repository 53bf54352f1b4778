#include "normlab/constants.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <vector>

#include "normlab/error.hpp"

namespace normlab {

double c_l1() { return std::sqrt(std::atan(1.0) * 2.0); }  // sqrt(pi/2)

double c_linf(std::size_t n) {
  if (n < 2) throw ValueError("c_linf requires n >= 2, got n=" + std::to_string(n));
  const double pi = std::atan(1.0) * 4.0;
  const double num = 1.0 + std::sqrt(pi * std::log(4.0));
  return num / (2.0 * std::sqrt(2.0 * std::log(static_cast<double>(n))));
}

double c_topk(std::size_t n, std::size_t k) {
  if (k < 1 || k > n) {
    throw ValueError("c_topk requires 1 <= k <= n, got k=" + std::to_string(k) +
                     ", n=" + std::to_string(n));
  }
  // Exact endpoints: Top(n) is the L1 statistic, Top(1) is the Linf statistic.
  if (k == n) return c_l1();
  if (k == 1) return c_linf(n);
  const double t = static_cast<double>(k - 1) / static_cast<double>(n - 1);
  const double lo = c_linf(n);
  return lo + t * (c_l1() - lo);
}

McEstimate mc_dispersion_ratio(const ConstantQuery& query, std::size_t trials,
                               std::uint64_t seed) {
  if (trials < 1) throw ValueError("mc_dispersion_ratio requires trials >= 1");
  const std::size_t n = query.n;
  if (n < 1) throw ValueError("mc_dispersion_ratio requires n >= 1");
  if (query.scheme == Scheme::Linf && n < 2) {
    throw ValueError("Linf dispersion requires n >= 2");
  }

  double constant = 0.0;
  std::size_t k = 0;
  switch (query.scheme) {
    case Scheme::L1:
      constant = c_l1();
      break;
    case Scheme::Linf:
      constant = c_linf(n);
      break;
    case Scheme::TopK:
      k = query.k;
      constant = c_topk(n, k);
      break;
  }

  Rng rng(seed);
  std::vector<double> batch(n);
  std::vector<std::size_t> order(n);

  double sum = 0.0, sumsq = 0.0;
  for (std::size_t t = 0; t < trials; ++t) {
    for (std::size_t i = 0; i < n; ++i) batch[i] = rng.normal();

    double dispersion = 0.0;
    switch (query.scheme) {
      case Scheme::L1: {
        double acc = 0.0;
        for (double v : batch) acc += std::fabs(v);
        dispersion = constant * acc / static_cast<double>(n);
        break;
      }
      case Scheme::Linf: {
        double m = std::fabs(batch[0]);
        for (std::size_t i = 1; i < n; ++i) m = std::max(m, std::fabs(batch[i]));
        dispersion = constant * m;
        break;
      }
      case Scheme::TopK: {
        if (k == n) {
          // Same summation order as L1, so Top(n) is bit-identical to it.
          double acc = 0.0;
          for (double v : batch) acc += std::fabs(v);
          dispersion = constant * acc / static_cast<double>(n);
        } else {
          std::iota(order.begin(), order.end(), std::size_t{0});
          std::nth_element(order.begin(), order.begin() + (k - 1), order.end(),
                           [&](std::size_t a, std::size_t b) {
                             const double fa = std::fabs(batch[a]), fb = std::fabs(batch[b]);
                             return fa > fb || (fa == fb && a < b);
                           });
          std::sort(order.begin(), order.begin() + k);
          double acc = 0.0;
          for (std::size_t i = 0; i < k; ++i) acc += std::fabs(batch[order[i]]);
          dispersion = constant * acc / static_cast<double>(k);
        }
        break;
      }
    }
    sum += dispersion;
    sumsq += dispersion * dispersion;
  }

  McEstimate est;
  est.trials = trials;
  est.seed = seed;
  est.value = sum / static_cast<double>(trials);
  if (trials > 1) {
    const double var =
        std::max(0.0, (sumsq - sum * sum / static_cast<double>(trials)) /
                          static_cast<double>(trials - 1));
    est.stderr_ = std::sqrt(var / static_cast<double>(trials));
  }
  return est;
}

}  // namespace normlab
