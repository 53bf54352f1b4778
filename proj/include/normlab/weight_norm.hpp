#pragma once

#include <cstddef>
#include <string>

#include "normlab/tensor.hpp"

namespace normlab {

// Norm order for weight reparameterizations.
enum class NormOrder { L1, L2, Linf };

NormOrder norm_order_from_string(const std::string& name);
std::string to_string(NormOrder p);

// ||v_i||_p of one channel (row) of a [N x fan_in] tensor, in F64.
double channel_norm(const Tensor& v, std::size_t channel, NormOrder p);

// Original weight-norm: w_i = g_i * v_i / ||v_i||_2 with a free per-channel
// scale g (rank-1, N entries).
Tensor wn_effective(const Tensor& v, const Tensor& g);

// Bounded weight-norm: w_i = rho * v_i / ||v_i||_p with a fixed per-layer
// scalar rho, so every channel always satisfies ||w_i||_p == rho.
Tensor bwn_effective(const Tensor& v, double rho, NormOrder p);

// rho = ||V||_p of the freshly initialized weight over N^(1/p): the entrywise
// Frobenius norm over sqrt(N) for p=2, the entrywise absolute sum over N for
// p=1, the entrywise max for p=inf. Computed once at step 0, never updated.
double rho_init(const Tensor& v0, NormOrder p, std::size_t channels);

// Chain rule through the bounded reparameterization. For p=2 this is the
// scaled tangent projection (rho/||v_i||)(I - v_hat v_hat^T) grad_w_i; p=1
// routes the norm derivative through sign(v), p=inf through the per-channel
// absolute argmax (lowest index on ties).
Tensor bwn_backward(const Tensor& grad_w, const Tensor& v, double rho, NormOrder p);

// Chain rule through the free-scale parameterization w_i = g_i v_i / ||v_i||_2.
struct WnGrads {
  Tensor grad_v;
  Tensor grad_g;
};
WnGrads wn_backward(const Tensor& grad_w, const Tensor& v, const Tensor& g);

}  // namespace normlab
