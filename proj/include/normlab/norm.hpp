#pragma once

#include <cstddef>
#include <utility>
#include <vector>

#include "normlab/tensor.hpp"

namespace normlab {

enum class Metric { L2, L1, Linf, TopK };

// Configuration of one normalization layer. axis 0 reduces over the batch
// (batch norm, stats per feature column); axis 1 reduces over features
// (layer norm, stats per row). Inputs are rank-2.
struct NormScheme {
  Metric metric = Metric::L2;
  std::size_t axis = 0;
  std::size_t k = 1;         // TopK only; checked against the reduction size at call time
  double epsilon = 1e-5;     // added to the constant-scaled dispersion
  bool affine = true;
  bool mean_only = false;
};

// Per-feature statistics plus running estimates for evaluation mode.
struct NormStats {
  Tensor mean;
  Tensor dispersion;  // constant-scaled denominator, targets sigma
  Tensor running_mean;
  Tensor running_dispersion;
  double momentum = 0.9;
  bool initialized = false;  // running estimates populated by at least one train step
};

// Everything the backward pass needs. For L1 only the signs of the centered
// activations are kept, never the centered values themselves; for Linf/TopK
// the selected indices per feature are kept.
struct NormCache {
  Tensor x_hat;       // normalized (or, mean-only: centered) input
  Tensor dispersion;  // per feature, before epsilon
  Tensor denom;       // dispersion + epsilon
  Tensor sign;        // L1: sign(x - mean), values in {-1, 0, 1}
  std::vector<std::vector<std::size_t>> selected;  // Linf/TopK: indices per slice
  Tensor gamma;
  NormScheme scheme;
  std::size_t rows = 0, cols = 0;
  bool train = false;  // backward requires a train-mode cache
};

enum class StatsMode { Train, Eval };

struct NormGrads {
  Tensor grad_x;
  Tensor grad_gamma;
  Tensor grad_beta;
};

// Per-feature mean and constant-scaled dispersion of x along the scheme axis.
// The reduction size must be at least 2.
NormStats compute_stats(const Tensor& x, const NormScheme& scheme);

// y = gamma * (x - mean) / (dispersion + epsilon) + beta, with mean/dispersion
// from the batch in Train mode (also updating the running estimates) or from
// the running estimates in Eval mode. mean_only skips the division.
std::pair<Tensor, NormCache> norm_forward(const Tensor& x, const NormScheme& scheme,
                                          const Tensor& gamma, const Tensor& beta,
                                          StatsMode mode, NormStats& stats);

// Exact gradient of the Train-mode forward, treating batch statistics as
// functions of x. L1 routes the dispersion gradient through the cached signs;
// Linf/TopK route it through the cached selected indices (1/k share each).
NormGrads norm_backward(const Tensor& grad_y, const NormCache& cache,
                        const NormScheme& scheme);

// running <- momentum * running + (1 - momentum) * batch, for mean and dispersion.
void update_running(NormStats& stats, const Tensor& batch_mean,
                    const Tensor& batch_dispersion);

// Fresh stats holder for a layer with `features` per-feature slots.
NormStats make_norm_stats(std::size_t features, PrecisionMode mode, double momentum = 0.9);

}  // namespace normlab
