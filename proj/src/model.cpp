#include "normlab/model.hpp"

#include <cmath>

#include "normlab/error.hpp"
#include "normlab/rng.hpp"

namespace normlab {

ActivationKind activation_from_string(const std::string& name) {
  if (name == "ramp" || name == "relu") return ActivationKind::Ramp;
  if (name == "tanh") return ActivationKind::Tanh;
  if (name == "none") return ActivationKind::None;
  throw ValueError("unknown activation: " + name);
}

WeightMode weight_mode_from_string(const std::string& name) {
  if (name == "plain") return WeightMode::Plain;
  if (name == "wn") return WeightMode::WN;
  if (name == "bwn") return WeightMode::BWN;
  throw ValueError("unknown weight mode: " + name);
}

Tensor WeightParams::effective() const {
  switch (mode) {
    case WeightMode::Plain:
      return v;
    case WeightMode::WN:
      return wn_effective(v, g);
    case WeightMode::BWN:
      return bwn_effective(v, rho, p);
  }
  return v;
}

// --- conv plumbing (exact data movement; arithmetic stays in tensor ops) -----

namespace {

struct ConvGeom {
  std::size_t n, c, h, w, k, pad;
};

// [n, c*h*w] rows -> [n*h*w, c*k*k] patch matrix, zero padded, stride 1.
Tensor im2col(const Tensor& x, const ConvGeom& g) {
  Tensor cols({g.n * g.h * g.w, g.c * g.k * g.k}, x.mode());
  const std::size_t chw = g.c * g.h * g.w;
  for (std::size_t i = 0; i < g.n; ++i) {
    for (std::size_t y = 0; y < g.h; ++y) {
      for (std::size_t xx = 0; xx < g.w; ++xx) {
        const std::size_t row = (i * g.h + y) * g.w + xx;
        for (std::size_t cc = 0; cc < g.c; ++cc) {
          for (std::size_t dy = 0; dy < g.k; ++dy) {
            for (std::size_t dx = 0; dx < g.k; ++dx) {
              const long sy = static_cast<long>(y + dy) - static_cast<long>(g.pad);
              const long sx = static_cast<long>(xx + dx) - static_cast<long>(g.pad);
              double val = 0.0;
              if (sy >= 0 && sy < static_cast<long>(g.h) && sx >= 0 &&
                  sx < static_cast<long>(g.w)) {
                val = x[i * chw + (cc * g.h + static_cast<std::size_t>(sy)) * g.w +
                        static_cast<std::size_t>(sx)];
              }
              cols.set(row * g.c * g.k * g.k + (cc * g.k + dy) * g.k + dx, val);
            }
          }
        }
      }
    }
  }
  return cols;
}

// Scatter-add transpose of im2col; accumulation is sequential so Half-mode
// rounding stays deterministic.
Tensor col2im(const Tensor& cols, const ConvGeom& g) {
  Tensor x({g.n, g.c * g.h * g.w}, cols.mode());
  const std::size_t chw = g.c * g.h * g.w;
  for (std::size_t i = 0; i < g.n; ++i) {
    for (std::size_t y = 0; y < g.h; ++y) {
      for (std::size_t xx = 0; xx < g.w; ++xx) {
        const std::size_t row = (i * g.h + y) * g.w + xx;
        for (std::size_t cc = 0; cc < g.c; ++cc) {
          for (std::size_t dy = 0; dy < g.k; ++dy) {
            for (std::size_t dx = 0; dx < g.k; ++dx) {
              const long sy = static_cast<long>(y + dy) - static_cast<long>(g.pad);
              const long sx = static_cast<long>(xx + dx) - static_cast<long>(g.pad);
              if (sy < 0 || sy >= static_cast<long>(g.h) || sx < 0 ||
                  sx >= static_cast<long>(g.w)) {
                continue;
              }
              const std::size_t dst = i * chw +
                                      (cc * g.h + static_cast<std::size_t>(sy)) * g.w +
                                      static_cast<std::size_t>(sx);
              const double add =
                  cols[row * g.c * g.k * g.k + (cc * g.k + dy) * g.k + dx];
              x.set(dst, x[dst] + add);
            }
          }
        }
      }
    }
  }
  return x;
}

// [n*h*w, ch] rows (ordered sample, y, x) -> [n, ch*h*w] image layout.
Tensor rows_to_images(const Tensor& rows, std::size_t n, std::size_t ch, std::size_t h,
                      std::size_t w) {
  Tensor img({n, ch * h * w}, rows.mode());
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t y = 0; y < h; ++y) {
      for (std::size_t xx = 0; xx < w; ++xx) {
        const std::size_t row = (i * h + y) * w + xx;
        for (std::size_t c = 0; c < ch; ++c) {
          img.set(i * ch * h * w + (c * h + y) * w + xx, rows[row * ch + c]);
        }
      }
    }
  }
  return img;
}

Tensor images_to_rows(const Tensor& img, std::size_t n, std::size_t ch, std::size_t h,
                      std::size_t w) {
  Tensor rows({n * h * w, ch}, img.mode());
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t y = 0; y < h; ++y) {
      for (std::size_t xx = 0; xx < w; ++xx) {
        const std::size_t row = (i * h + y) * w + xx;
        for (std::size_t c = 0; c < ch; ++c) {
          rows.set(row * ch + c, img[i * ch * h * w + (c * h + y) * w + xx]);
        }
      }
    }
  }
  return rows;
}

Tensor apply_activation(const Tensor& z, ActivationKind kind) {
  switch (kind) {
    case ActivationKind::Ramp: {
      Tensor out(z.shape(), z.mode());
      for (std::size_t i = 0; i < z.size(); ++i) out.set(i, z[i] > 0.0 ? z[i] : 0.0);
      return out;
    }
    case ActivationKind::Tanh: {
      Tensor out(z.shape(), z.mode());
      for (std::size_t i = 0; i < z.size(); ++i) out.set(i, std::tanh(z[i]));
      return out;
    }
    case ActivationKind::None:
      return z;
  }
  return z;
}

Tensor activation_backward(const Tensor& grad_out, const Tensor& z, ActivationKind kind) {
  switch (kind) {
    case ActivationKind::Ramp: {
      Tensor out(z.shape(), z.mode());
      for (std::size_t i = 0; i < z.size(); ++i) {
        out.set(i, z[i] > 0.0 ? grad_out[i] : 0.0);
      }
      return out;
    }
    case ActivationKind::Tanh: {
      Tensor out(z.shape(), z.mode());
      const Element e = z.mode().element;
      for (std::size_t i = 0; i < z.size(); ++i) {
        const double th = quantize(std::tanh(z[i]), e);
        const double d = quantize(1.0 - quantize(th * th, e), e);
        out.set(i, grad_out[i] * d);
      }
      return out;
    }
    case ActivationKind::None:
      return grad_out;
  }
  return grad_out;
}

}  // namespace

// --- model ---------------------------------------------------------------------

Tensor Model::forward(const Tensor& x, StatsMode mode, PrecisionMode pm,
                      ModelCache* cache) {
  if (x.rank() != 2 || x.shape()[1] != spec.input_dim) {
    throw ShapeError("model input must be [batch, " + std::to_string(spec.input_dim) + "]");
  }
  const std::size_t n = x.shape()[0];
  Tensor cur = cast(x, pm);
  if (cache) {
    cache->blocks.clear();
    cache->batch = n;
  }

  for (std::size_t bi = 0; bi < blocks.size(); ++bi) {
    Block& blk = blocks[bi];
    // One precision per run: migrate the stats holder on first use.
    if (!(blk.stats.mean.mode() == pm)) {
      const bool was_init = blk.stats.initialized;
      NormStats migrated = make_norm_stats(blk.weights.channels(), pm, blk.stats.momentum);
      migrated.mean = cast(blk.stats.mean, pm);
      migrated.dispersion = cast(blk.stats.dispersion, pm);
      migrated.running_mean = cast(blk.stats.running_mean, pm);
      migrated.running_dispersion = cast(blk.stats.running_dispersion, pm);
      migrated.initialized = was_init;
      blk.stats = migrated;
    }

    BlockCache bc;
    Tensor rows_in;  // [rows, fan_in]
    if (blk.spec.kind == LayerSpec::Kind::Conv) {
      const ConvGeom geom{n, blk.in_c, blk.in_h, blk.in_w, blk.spec.kernel,
                          blk.spec.kernel / 2};
      rows_in = im2col(cur, geom);
    } else {
      rows_in = cur;
    }
    bc.input = rows_in;
    bc.rows = rows_in.shape()[0];

    const Tensor w = cast(blk.weights.effective(), pm);
    Tensor pre = matmul(rows_in, transpose2d(w));
    pre = add(pre, reshape(cast(blk.weights.bias, pm), {1, blk.weights.channels()}));
    bc.pre_norm = pre;

    Tensor z = pre;
    if (spec.use_norm) {
      auto [y, nc] = norm_forward(pre, spec.norm, cast(blk.gamma, pm),
                                  cast(blk.beta, pm), mode, blk.stats);
      z = y;
      bc.norm = std::move(nc);
    }
    bc.post_norm = z;
    Tensor act = apply_activation(z, spec.activation);

    if (blk.spec.kind == LayerSpec::Kind::Conv) {
      const bool last_conv = bi + 1 >= blocks.size() ||
                             blocks[bi + 1].spec.kind != LayerSpec::Kind::Conv;
      if (last_conv) {
        // global average pool: [n*h*w, ch] -> [n, ch]
        const std::size_t ch = blk.weights.channels();
        Tensor img = rows_to_images(act, n, ch, blk.in_h, blk.in_w);
        Tensor flat = reshape(img, {n * ch, blk.in_h * blk.in_w});
        cur = reshape(reduce_mean(flat, 1), {n, ch});
      } else {
        cur = rows_to_images(act, n, blk.weights.channels(), blk.in_h, blk.in_w);
      }
    } else {
      cur = act;
    }
    if (cache) cache->blocks.push_back(std::move(bc));
  }

  if (cache) cache->features = cur;
  const Tensor wc = cast(classifier.effective(), pm);
  Tensor logits = matmul(cur, transpose2d(wc));
  logits = add(logits, reshape(cast(classifier.bias, pm), {1, spec.classes}));
  return logits;
}

ParamGrads Model::backward(const Tensor& grad_logits, const ModelCache& cache,
                           PrecisionMode pm) {
  const std::size_t n = cache.batch;
  ParamGrads grads;
  grads.v.resize(blocks.size());
  grads.g.resize(blocks.size());
  grads.bias.resize(blocks.size());
  grads.gamma.resize(blocks.size());
  grads.beta.resize(blocks.size());

  // classifier
  const Tensor wc = cast(classifier.effective(), pm);
  grads.cls_w = cast(matmul(transpose2d(grad_logits), cache.features), PrecisionMode::f64());
  grads.cls_b = cast(reshape(reduce_sum(grad_logits, 0), {spec.classes}), PrecisionMode::f64());
  Tensor grad_cur = matmul(grad_logits, wc);  // [n, feat]

  for (std::size_t bi = blocks.size(); bi-- > 0;) {
    const Block& blk = blocks[bi];
    const BlockCache& bc = cache.blocks[bi];
    const std::size_t ch = blk.weights.channels();

    Tensor grad_act;  // gradient at the activation output, in row layout
    if (blk.spec.kind == LayerSpec::Kind::Conv) {
      const bool last_conv =
          bi + 1 >= blocks.size() || blocks[bi + 1].spec.kind != LayerSpec::Kind::Conv;
      if (last_conv) {
        // pool backward: spread grad/(h*w) over the spatial grid
        const std::size_t hw = blk.in_h * blk.in_w;
        Tensor spread({n * ch, hw}, grad_cur.mode());
        const Element e = grad_cur.mode().element;
        for (std::size_t i = 0; i < n * ch; ++i) {
          const double gv = quantize(grad_cur[i] / static_cast<double>(hw), e);
          for (std::size_t s = 0; s < hw; ++s) spread.set(i * hw + s, gv);
        }
        grad_act = images_to_rows(reshape(spread, {n, ch * hw}), n, ch, blk.in_h, blk.in_w);
      } else {
        grad_act = images_to_rows(grad_cur, n, ch, blk.in_h, blk.in_w);
      }
    } else {
      grad_act = grad_cur;
    }

    Tensor grad_z = activation_backward(grad_act, bc.post_norm, spec.activation);

    Tensor grad_pre;
    if (spec.use_norm) {
      const NormGrads ng = norm_backward(grad_z, bc.norm, spec.norm);
      grad_pre = ng.grad_x;
      if (spec.norm.affine) {
        grads.gamma[bi] = cast(ng.grad_gamma, PrecisionMode::f64());
        grads.beta[bi] = cast(ng.grad_beta, PrecisionMode::f64());
      }
    } else {
      grad_pre = grad_z;
    }

    grads.bias[bi] = cast(reshape(reduce_sum(grad_pre, 0), {ch}), PrecisionMode::f64());
    const Tensor grad_w_eff =
        cast(matmul(transpose2d(grad_pre), bc.input), PrecisionMode::f64());

    // Chain into the master parameterization (kept in F64).
    switch (blk.weights.mode) {
      case WeightMode::Plain:
        grads.v[bi] = grad_w_eff;
        break;
      case WeightMode::BWN:
        grads.v[bi] = bwn_backward(grad_w_eff, blk.weights.v, blk.weights.rho,
                                   blk.weights.p);
        break;
      case WeightMode::WN: {
        WnGrads wg = wn_backward(grad_w_eff, blk.weights.v, blk.weights.g);
        grads.v[bi] = std::move(wg.grad_v);
        grads.g[bi] = std::move(wg.grad_g);
        break;
      }
    }

    if (bi > 0) {
      const Tensor w = cast(blk.weights.effective(), pm);
      Tensor grad_rows = matmul(grad_pre, w);  // [rows, fan_in]
      if (blk.spec.kind == LayerSpec::Kind::Conv) {
        const ConvGeom geom{n, blk.in_c, blk.in_h, blk.in_w, blk.spec.kernel,
                            blk.spec.kernel / 2};
        grad_cur = col2im(grad_rows, geom);
      } else {
        grad_cur = grad_rows;
      }
    }
  }
  return grads;
}

std::vector<double> Model::channel_norms(std::size_t block_index) const {
  const Block& blk = blocks.at(block_index);
  const Tensor w = blk.weights.effective();
  std::vector<double> norms(blk.weights.channels());
  for (std::size_t i = 0; i < norms.size(); ++i) {
    norms[i] = channel_norm(w, i, NormOrder::L2);
  }
  return norms;
}

Model build_model(const ModelSpec& spec, std::uint64_t seed) {
  if (spec.input_dim == 0) throw ShapeError("model input dimension must be positive");
  if (spec.classes < 2) throw ShapeError("model needs at least 2 classes");

  Model m;
  m.spec = spec;
  Rng rng(seed);

  auto gaussian = [&rng](std::vector<std::size_t> shape, double std) {
    std::size_t count = 1;
    for (std::size_t d : shape) count *= d;
    std::vector<double> vals(count);
    for (auto& v : vals) v = rng.normal() * std;
    return Tensor::from(std::move(shape), std::move(vals));
  };

  std::size_t c = spec.image_c, h = spec.image_h, w = spec.image_w;
  std::size_t flat = spec.input_dim;
  bool conv_done = false;

  for (const auto& ls : spec.hidden) {
    Block blk;
    blk.spec = ls;
    std::size_t fan_in;
    if (ls.kind == LayerSpec::Kind::Conv) {
      if (conv_done) throw ShapeError("conv layers must precede linear layers");
      if (h == 0 || w == 0) throw ShapeError("conv chain requires image dimensions");
      if (c * h * w != flat) throw ShapeError("image dimensions do not match input size");
      if (ls.kernel % 2 == 0 || ls.kernel == 0) throw ShapeError("kernel must be odd");
      blk.in_c = c;
      blk.in_h = h;
      blk.in_w = w;
      fan_in = c * ls.kernel * ls.kernel;
      c = ls.out;
      flat = c * h * w;
    } else {
      conv_done = true;
      fan_in = flat;
      flat = ls.out;
    }

    blk.weights.mode = spec.weight_mode;
    blk.weights.p = spec.weight_p;
    blk.weights.v = gaussian({ls.out, fan_in}, std::sqrt(2.0 / static_cast<double>(fan_in)));
    blk.weights.bias = Tensor::zeros({ls.out});
    if (spec.weight_mode == WeightMode::BWN) {
      blk.weights.rho = rho_init(blk.weights.v, spec.weight_p, ls.out);
    } else if (spec.weight_mode == WeightMode::WN) {
      Tensor g({ls.out}, PrecisionMode::f64());
      for (std::size_t i = 0; i < ls.out; ++i) {
        g.set(i, channel_norm(blk.weights.v, i, NormOrder::L2));
      }
      blk.weights.g = g;
    }

    blk.gamma = Tensor::full({ls.out}, 1.0);
    blk.beta = Tensor::zeros({ls.out});
    blk.stats = make_norm_stats(ls.out, PrecisionMode::f64(), spec.stats_momentum);
    m.blocks.push_back(std::move(blk));
  }

  // Conv chains feed the classifier through global average pooling.
  const bool ends_in_conv =
      !spec.hidden.empty() && spec.hidden.back().kind == LayerSpec::Kind::Conv;
  m.feature_dim = ends_in_conv ? c : flat;

  m.classifier.mode = WeightMode::Plain;
  m.classifier.v = gaussian({spec.classes, m.feature_dim},
                            std::sqrt(2.0 / static_cast<double>(m.feature_dim)));
  m.classifier.bias = Tensor::zeros({spec.classes});
  return m;
}

Model fold_rho_into_classifier(const Model& model) {
  const bool any_bwn = [&] {
    for (const auto& b : model.blocks) {
      if (b.weights.mode == WeightMode::BWN && b.weights.rho != 1.0) return true;
    }
    return model.classifier.mode == WeightMode::BWN;
  }();
  if (any_bwn && model.spec.activation == ActivationKind::Tanh) {
    throw StateError("non-homogeneous activation: rho folding requires a positively "
                     "1-homogeneous nonlinearity");
  }

  Model out = model;
  double s = 1.0;  // factor by which the current block's input is divided
  for (auto& blk : out.blocks) {
    double local = s;
    if (blk.weights.mode == WeightMode::BWN) {
      local *= blk.weights.rho;
      blk.weights.rho = 1.0;
    }
    if (local != 1.0) {
      blk.weights.bias = scale(blk.weights.bias, 1.0 / local);
    }
    const bool divides = out.spec.use_norm && !out.spec.norm.mean_only;
    if (divides) {
      // A dispersion-dividing normalization erases the incoming scale.
      s = 1.0;
    } else {
      if (out.spec.use_norm && local != 1.0) {
        blk.beta = scale(blk.beta, 1.0 / local);
      }
      s = local;
    }
  }

  Tensor eff = out.classifier.effective();
  out.classifier.mode = WeightMode::Plain;
  out.classifier.g = Tensor();
  out.classifier.rho = 1.0;
  out.classifier.v = s != 1.0 ? scale(eff, s) : eff;
  return out;
}

double softmax_cross_entropy(const Tensor& logits, const std::vector<int>& labels,
                             Tensor* grad) {
  if (logits.rank() != 2 || logits.shape()[0] != labels.size()) {
    throw ShapeError("logits must be [batch, classes] matching the label count");
  }
  const std::size_t n = logits.shape()[0], classes = logits.shape()[1];
  if (grad) *grad = Tensor({n, classes}, PrecisionMode::f64());

  double total = 0.0;
  std::vector<double> p(classes);
  for (std::size_t i = 0; i < n; ++i) {
    const int label = labels[i];
    if (label < 0 || static_cast<std::size_t>(label) >= classes) {
      throw ValueError("label out of range: " + std::to_string(label));
    }
    double m = logits[i * classes];
    for (std::size_t j = 1; j < classes; ++j) m = std::max(m, logits[i * classes + j]);
    double z = 0.0;
    for (std::size_t j = 0; j < classes; ++j) {
      p[j] = std::exp(logits[i * classes + j] - m);
      z += p[j];
    }
    for (std::size_t j = 0; j < classes; ++j) p[j] /= z;
    total += -std::log(p[static_cast<std::size_t>(label)]);
    if (grad) {
      for (std::size_t j = 0; j < classes; ++j) {
        const double ind = j == static_cast<std::size_t>(label) ? 1.0 : 0.0;
        grad->set(i * classes + j, (p[j] - ind) / static_cast<double>(n));
      }
    }
  }
  return total / static_cast<double>(n);
}

}  // namespace normlab
