#include "normlab/norm.hpp"

#include <cmath>

#include "normlab/constants.hpp"
#include "normlab/error.hpp"

namespace normlab {

namespace {

void check_input(const Tensor& x, const NormScheme& scheme) {
  if (x.rank() != 2) throw ShapeError("normalization expects a rank-2 input");
  if (scheme.axis > 1) throw ShapeError("normalization axis must be 0 or 1");
  if (scheme.epsilon <= 0.0) throw ValueError("epsilon must be positive");
}

std::size_t reduction_size(const Tensor& x, const NormScheme& scheme) {
  return x.shape()[scheme.axis];
}

// Affine parameters are per feature column; broadcast shape is [1, d].
Tensor as_row(const Tensor& v, std::size_t d) {
  if (v.size() != d) throw ShapeError("affine parameter size mismatch");
  return reshape(v, {1, d});
}

}  // namespace

NormStats make_norm_stats(std::size_t features, PrecisionMode mode, double momentum) {
  NormStats s;
  s.mean = Tensor::zeros({1, features}, mode);
  s.dispersion = Tensor::full({1, features}, 1.0, mode);
  s.running_mean = Tensor::zeros({1, features}, mode);
  s.running_dispersion = Tensor::full({1, features}, 1.0, mode);
  s.momentum = momentum;
  s.initialized = false;
  return s;
}

NormStats compute_stats(const Tensor& x, const NormScheme& scheme) {
  check_input(x, scheme);
  const std::size_t n = reduction_size(x, scheme);
  if (n < 2) {
    throw ValueError("reduction too small: normalization needs at least 2 values, got " +
                     std::to_string(n));
  }

  NormStats stats;
  stats.mean = reduce_mean(x, scheme.axis);
  const Tensor centered = sub(x, stats.mean);

  switch (scheme.metric) {
    case Metric::L2:
      stats.dispersion = sqrt(reduce_mean(mul(centered, centered), scheme.axis));
      break;
    case Metric::L1:
      stats.dispersion = scale(reduce_mean(abs(centered), scheme.axis), c_l1());
      break;
    case Metric::Linf:
      stats.dispersion = scale(reduce_max_abs(centered, scheme.axis), c_linf(n));
      break;
    case Metric::TopK:
      stats.dispersion =
          scale(topk_abs(centered, scheme.axis, scheme.k), c_topk(n, scheme.k));
      break;
  }
  return stats;
}

void update_running(NormStats& stats, const Tensor& batch_mean,
                    const Tensor& batch_dispersion) {
  if (!stats.running_mean.same_shape(batch_mean) ||
      !stats.running_dispersion.same_shape(batch_dispersion)) {
    throw ShapeError("running statistics shape mismatch");
  }
  const double m = stats.momentum;
  stats.running_mean = add(scale(stats.running_mean, m), scale(batch_mean, 1.0 - m));
  stats.running_dispersion =
      add(scale(stats.running_dispersion, m), scale(batch_dispersion, 1.0 - m));
  stats.initialized = true;
}

std::pair<Tensor, NormCache> norm_forward(const Tensor& x, const NormScheme& scheme,
                                          const Tensor& gamma, const Tensor& beta,
                                          StatsMode mode, NormStats& stats) {
  check_input(x, scheme);
  const std::size_t rows = x.shape()[0], cols = x.shape()[1];

  // Layer-norm (axis 1) statistics are per sample, so evaluation recomputes
  // them from the input; running estimates only apply to the batch axis.
  const bool use_running = (mode == StatsMode::Eval && scheme.axis == 0);

  Tensor mean, dispersion;
  NormCache cache;
  if (use_running) {
    if (!stats.initialized) {
      throw StateError("running statistics uninitialized: eval before any train step");
    }
    mean = stats.running_mean;
    dispersion = stats.running_dispersion;
  } else {
    NormStats batch = compute_stats(x, scheme);
    mean = batch.mean;
    dispersion = batch.dispersion;
    if (mode == StatsMode::Train && scheme.axis == 0) {
      stats.mean = batch.mean;
      stats.dispersion = batch.dispersion;
      update_running(stats, batch.mean, batch.dispersion);
    }
  }

  const Tensor centered = sub(x, mean);
  Tensor x_hat;
  Tensor denom;
  if (scheme.mean_only) {
    x_hat = centered;
    denom = Tensor::full(dispersion.shape(), 1.0, x.mode());
  } else {
    denom = add_scalar(dispersion, scheme.epsilon);
    x_hat = div(centered, denom);
  }

  Tensor y;
  Tensor gamma_row;
  if (scheme.affine) {
    gamma_row = as_row(gamma, cols);
    y = add(mul(x_hat, gamma_row), as_row(beta, cols));
  } else {
    gamma_row = Tensor::full({1, cols}, 1.0, x.mode());
    y = x_hat;
  }

  cache.x_hat = x_hat;
  cache.dispersion = dispersion;
  cache.denom = denom;
  cache.gamma = gamma_row;
  cache.scheme = scheme;
  cache.rows = rows;
  cache.cols = cols;
  cache.train = (mode == StatsMode::Train);

  if (!scheme.mean_only) {
    switch (scheme.metric) {
      case Metric::L1:
        cache.sign = sign(centered);
        break;
      case Metric::Linf:
        cache.selected = topk_select(centered, scheme.axis, 1);
        break;
      case Metric::TopK:
        cache.selected = topk_select(centered, scheme.axis, scheme.k);
        break;
      case Metric::L2:
        break;
    }
  }
  return {y, cache};
}

NormGrads norm_backward(const Tensor& grad_y, const NormCache& cache,
                        const NormScheme& scheme) {
  if (!cache.train) {
    throw StateError("cache mismatch: backward requires a train-mode forward cache");
  }
  if (grad_y.rank() != 2 || grad_y.shape()[0] != cache.rows ||
      grad_y.shape()[1] != cache.cols) {
    throw StateError("cache mismatch: gradient shape differs from cached forward");
  }
  const std::size_t axis = scheme.axis;
  const std::size_t n = axis == 0 ? cache.rows : cache.cols;

  NormGrads out;
  if (scheme.affine) {
    out.grad_beta = reshape(reduce_sum(grad_y, 0), {cache.cols});
    out.grad_gamma = reshape(reduce_sum(mul(grad_y, cache.x_hat), 0), {cache.cols});
  }

  const Tensor g_hat = scheme.affine ? mul(grad_y, cache.gamma) : grad_y;
  const Tensor g_centered = sub(g_hat, reduce_mean(g_hat, axis));

  if (scheme.mean_only) {
    out.grad_x = g_centered;
    return out;
  }

  const Tensor t1 = div(g_centered, cache.denom);
  const Tensor dot = reduce_sum(mul(g_hat, cache.x_hat), axis);
  const Tensor coeff = div(dot, cache.denom);  // per feature

  Tensor d_disp_dx;  // [rows, cols], derivative of the dispersion w.r.t. x
  switch (scheme.metric) {
    case Metric::L2: {
      // dD/dx = x_hat * denom / (n * D); zero subgradient where D == 0.
      Tensor factor(cache.dispersion.shape(), grad_y.mode());
      const Element e = grad_y.mode().element;
      for (std::size_t i = 0; i < factor.size(); ++i) {
        const double disp = cache.dispersion[i];
        if (disp > 0.0) {
          const double nd = quantize(static_cast<double>(n) * disp, e);
          factor.set(i, quantize(cache.denom[i] / nd, e));
        }
      }
      d_disp_dx = mul(cache.x_hat, factor);
      break;
    }
    case Metric::L1:
    case Metric::Linf:
    case Metric::TopK: {
      // Shared selected-sign path. B holds the sign of the centered value at
      // every contributing position, zero elsewhere; the dispersion gradient
      // distributes a 1/k share to each contributor and the mean-coupling term
      // removes the per-feature average. With k = n and everything selected
      // this reduces bit-for-bit to the L1 formula.
      Tensor b;
      std::size_t k_div;
      if (scheme.metric == Metric::L1) {
        b = cache.sign;
        k_div = n;
      } else {
        k_div = scheme.metric == Metric::Linf ? 1 : scheme.k;
        b = Tensor::zeros({cache.rows, cache.cols}, grad_y.mode());
        const Tensor sg = sign(cache.x_hat);
        // selected[] holds one entry per slice, in slice iteration order.
        std::size_t slice = 0;
        if (axis == 0) {
          for (std::size_t j = 0; j < cache.cols; ++j, ++slice) {
            for (std::size_t i : cache.selected[slice]) {
              b.set(i * cache.cols + j, sg[i * cache.cols + j]);
            }
          }
        } else {
          for (std::size_t i = 0; i < cache.rows; ++i, ++slice) {
            for (std::size_t j : cache.selected[slice]) {
              b.set(i * cache.cols + j, sg[i * cache.cols + j]);
            }
          }
        }
      }
      double constant;
      if (scheme.metric == Metric::L1) {
        constant = c_l1();
      } else if (scheme.metric == Metric::Linf) {
        constant = c_linf(n);
      } else {
        constant = c_topk(n, scheme.k);
      }
      d_disp_dx = scale(sub(b, reduce_mean(b, axis)),
                        constant / static_cast<double>(k_div));
      break;
    }
  }

  out.grad_x = sub(t1, mul(d_disp_dx, coeff));
  return out;
}

}  // namespace normlab
