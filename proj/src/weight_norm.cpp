#include "normlab/weight_norm.hpp"

#include <cmath>

#include "normlab/error.hpp"

namespace normlab {

NormOrder norm_order_from_string(const std::string& name) {
  if (name == "1" || name == "l1") return NormOrder::L1;
  if (name == "2" || name == "l2") return NormOrder::L2;
  if (name == "inf" || name == "linf") return NormOrder::Linf;
  throw ValueError("unknown norm order: " + name);
}

std::string to_string(NormOrder p) {
  switch (p) {
    case NormOrder::L1:
      return "1";
    case NormOrder::L2:
      return "2";
    case NormOrder::Linf:
      return "inf";
  }
  return "?";
}

namespace {

void check_matrix(const Tensor& v) {
  if (v.rank() != 2) throw ShapeError("weight tensor must be rank-2 [channels, fan_in]");
}

}  // namespace

double channel_norm(const Tensor& v, std::size_t channel, NormOrder p) {
  check_matrix(v);
  const std::size_t fan = v.shape()[1];
  const std::size_t base = channel * fan;
  double acc = 0.0;
  switch (p) {
    case NormOrder::L1:
      for (std::size_t j = 0; j < fan; ++j) acc += std::fabs(v[base + j]);
      return acc;
    case NormOrder::L2:
      for (std::size_t j = 0; j < fan; ++j) acc += v[base + j] * v[base + j];
      return std::sqrt(acc);
    case NormOrder::Linf:
      for (std::size_t j = 0; j < fan; ++j) acc = std::max(acc, std::fabs(v[base + j]));
      return acc;
  }
  return acc;
}

Tensor wn_effective(const Tensor& v, const Tensor& g) {
  check_matrix(v);
  const std::size_t channels = v.shape()[0], fan = v.shape()[1];
  if (g.size() != channels) throw ShapeError("scale vector size must match channel count");

  Tensor w(v.shape(), v.mode());
  for (std::size_t i = 0; i < channels; ++i) {
    const double norm = channel_norm(v, i, NormOrder::L2);
    if (norm == 0.0) throw ValueError("zero-norm channel " + std::to_string(i));
    const double s = g[i] / norm;
    for (std::size_t j = 0; j < fan; ++j) w.set(i * fan + j, v[i * fan + j] * s);
  }
  return w;
}

Tensor bwn_effective(const Tensor& v, double rho, NormOrder p) {
  check_matrix(v);
  if (rho <= 0.0) throw ValueError("rho must be positive");
  const std::size_t channels = v.shape()[0], fan = v.shape()[1];

  Tensor w(v.shape(), v.mode());
  for (std::size_t i = 0; i < channels; ++i) {
    const double norm = channel_norm(v, i, p);
    if (norm == 0.0) throw ValueError("zero-norm channel " + std::to_string(i));
    const double s = rho / norm;
    for (std::size_t j = 0; j < fan; ++j) w.set(i * fan + j, v[i * fan + j] * s);
  }
  return w;
}

double rho_init(const Tensor& v0, NormOrder p, std::size_t channels) {
  check_matrix(v0);
  if (channels == 0) throw ValueError("channel count must be positive");
  double entry_norm = 0.0;
  switch (p) {
    case NormOrder::L1: {
      for (std::size_t i = 0; i < v0.size(); ++i) entry_norm += std::fabs(v0[i]);
      return entry_norm / static_cast<double>(channels);
    }
    case NormOrder::L2: {
      for (std::size_t i = 0; i < v0.size(); ++i) entry_norm += v0[i] * v0[i];
      return std::sqrt(entry_norm) / std::sqrt(static_cast<double>(channels));
    }
    case NormOrder::Linf: {
      // N^(1/p) -> 1 as p -> inf, so rho is the entrywise max.
      for (std::size_t i = 0; i < v0.size(); ++i) {
        entry_norm = std::max(entry_norm, std::fabs(v0[i]));
      }
      return entry_norm;
    }
  }
  return entry_norm;
}

WnGrads wn_backward(const Tensor& grad_w, const Tensor& v, const Tensor& g) {
  check_matrix(v);
  if (!grad_w.same_shape(v)) throw ShapeError("gradient shape must match v");
  const std::size_t channels = v.shape()[0], fan = v.shape()[1];
  if (g.size() != channels) throw ShapeError("scale vector size must match channel count");

  WnGrads out;
  out.grad_v = Tensor(v.shape(), v.mode());
  out.grad_g = Tensor({channels}, v.mode());
  for (std::size_t i = 0; i < channels; ++i) {
    const std::size_t base = i * fan;
    const double norm = channel_norm(v, i, NormOrder::L2);
    if (norm == 0.0) throw ValueError("zero-norm channel " + std::to_string(i));
    double dot = 0.0;
    for (std::size_t j = 0; j < fan; ++j) dot += grad_w[base + j] * v[base + j];
    out.grad_g.set(i, dot / norm);
    const double lead = g[i] / norm;
    const double pull = g[i] * dot / (norm * norm * norm);
    for (std::size_t j = 0; j < fan; ++j) {
      out.grad_v.set(base + j, lead * grad_w[base + j] - pull * v[base + j]);
    }
  }
  return out;
}

Tensor bwn_backward(const Tensor& grad_w, const Tensor& v, double rho, NormOrder p) {
  check_matrix(v);
  if (!grad_w.same_shape(v)) throw ShapeError("gradient shape must match v");
  const std::size_t channels = v.shape()[0], fan = v.shape()[1];

  Tensor grad_v(v.shape(), v.mode());
  for (std::size_t i = 0; i < channels; ++i) {
    const std::size_t base = i * fan;
    const double norm = channel_norm(v, i, p);
    if (norm == 0.0) throw ValueError("zero-norm channel " + std::to_string(i));

    // grad_v = (rho/||v||) grad_w - (rho/||v||^2) (grad_w . v) dnorm_dv
    double dot = 0.0;
    for (std::size_t j = 0; j < fan; ++j) dot += grad_w[base + j] * v[base + j];
    const double lead = rho / norm;
    const double pull = rho * dot / (norm * norm);

    switch (p) {
      case NormOrder::L2:
        for (std::size_t j = 0; j < fan; ++j) {
          grad_v.set(base + j, lead * grad_w[base + j] - pull * v[base + j] / norm);
        }
        break;
      case NormOrder::L1:
        for (std::size_t j = 0; j < fan; ++j) {
          const double s = v[base + j] > 0.0 ? 1.0 : (v[base + j] < 0.0 ? -1.0 : 0.0);
          grad_v.set(base + j, lead * grad_w[base + j] - pull * s);
        }
        break;
      case NormOrder::Linf: {
        std::size_t q = 0;
        double best = std::fabs(v[base]);
        for (std::size_t j = 1; j < fan; ++j) {
          const double a = std::fabs(v[base + j]);
          if (a > best) {
            best = a;
            q = j;
          }
        }
        for (std::size_t j = 0; j < fan; ++j) {
          double g = lead * grad_w[base + j];
          if (j == q) g -= pull * (v[base + q] > 0.0 ? 1.0 : -1.0);
          grad_v.set(base + j, g);
        }
        break;
      }
    }
  }
  return grad_v;
}

}  // namespace normlab
