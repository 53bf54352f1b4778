#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include "normlab/norm.hpp"
#include "normlab/tensor.hpp"
#include "normlab/weight_norm.hpp"

namespace normlab {

enum class ActivationKind { Ramp, Tanh, None };
enum class WeightMode { Plain, WN, BWN };

ActivationKind activation_from_string(const std::string& name);
WeightMode weight_mode_from_string(const std::string& name);

// One hidden stage: linear or 3x3-style convolution, optional normalization,
// activation. Master parameters are held in F64 and cast to the run precision
// on use.
struct LayerSpec {
  enum class Kind { Linear, Conv } kind = Kind::Linear;
  std::size_t out = 0;     // output features (linear) or channels (conv)
  std::size_t kernel = 3;  // conv only; odd, stride 1, same padding
};

struct ModelSpec {
  std::size_t input_dim = 0;  // flattened input size
  // Conv chains interpret the input as [channels, height, width].
  std::size_t image_c = 1, image_h = 0, image_w = 0;
  std::vector<LayerSpec> hidden;
  std::size_t classes = 2;

  bool use_norm = true;
  NormScheme norm;  // applied per hidden stage over the batch axis
  double stats_momentum = 0.9;
  WeightMode weight_mode = WeightMode::Plain;
  NormOrder weight_p = NormOrder::L2;
  ActivationKind activation = ActivationKind::Ramp;
};

// Reparameterized weight bundle for one layer.
struct WeightParams {
  Tensor v;     // [out, fan_in]; the trained parameter (plain weights when mode=Plain)
  Tensor g;     // WN only, [out]
  Tensor bias;  // [out]
  double rho = 1.0;  // BWN only; fixed at initialization
  WeightMode mode = WeightMode::Plain;
  NormOrder p = NormOrder::L2;

  Tensor effective() const;  // the weight actually multiplied against inputs
  std::size_t channels() const { return v.shape()[0]; }
  std::size_t fan_in() const { return v.shape()[1]; }
};

struct Block {
  LayerSpec spec;
  WeightParams weights;
  // normalization state (per output feature); gamma/beta master copies
  NormStats stats;
  Tensor gamma, beta;
  // conv geometry resolved at build time
  std::size_t in_c = 0, in_h = 0, in_w = 0;
};

struct BlockCache {
  Tensor input;      // layer input as seen by the matmul ([rows, fan_in])
  Tensor pre_norm;   // [rows, out]
  NormCache norm;
  Tensor post_norm;  // activation input
  std::size_t rows = 0;
};

struct ModelCache {
  std::vector<BlockCache> blocks;
  Tensor features;  // classifier input [n, feat]
  std::size_t batch = 0;
};

struct ParamGrads {
  std::vector<Tensor> v, g, bias, gamma, beta;  // per hidden block
  Tensor cls_w, cls_b;
};

class Model {
 public:
  ModelSpec spec;
  std::vector<Block> blocks;
  WeightParams classifier;  // always a plain linear head
  std::size_t feature_dim = 0;

  // Forward to logits [n, classes]. Train mode updates running statistics.
  // All tensor arithmetic runs in `pm`; master parameters are quantized into
  // it on entry.
  Tensor forward(const Tensor& x, StatsMode mode, PrecisionMode pm,
                 ModelCache* cache = nullptr);

  // Backward from d(loss)/d(logits); requires the cache of the matching
  // Train-mode forward. Gradients are returned widened to F64 master form.
  ParamGrads backward(const Tensor& grad_logits, const ModelCache& cache,
                      PrecisionMode pm);

  // L2 norm of each channel's effective weight, for one hidden block.
  std::vector<double> channel_norms(std::size_t block_index) const;

  std::size_t classes() const { return spec.classes; }
};

// Fan-scaled Gaussian initialization (std sqrt(2/fan_in)); BWN layers fix rho
// from the initial weights, WN layers start with g_i = ||v_i||_2 so the
// parameterization is initially the identity.
Model build_model(const ModelSpec& spec, std::uint64_t seed);

// Equivalent model with every hidden rho folded forward into the classifier:
// hidden rhos become 1, biases and normalization shifts are rescaled along the
// path, and the classifier weights absorb the accumulated product. Requires
// positively 1-homogeneous hidden activations. Stages whose normalization
// divides by a dispersion are scale-transparent and contribute no factor.
Model fold_rho_into_classifier(const Model& model);

// Stable softmax cross entropy on widened logits; returns the mean loss and
// writes d(loss)/d(logits) (mean reduction) if grad is non-null.
double softmax_cross_entropy(const Tensor& logits, const std::vector<int>& labels,
                             Tensor* grad);

}  // namespace normlab
