#include "normlab/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>

#include "normlab/error.hpp"
#include "normlab/rng.hpp"

namespace normlab {

ModelSpec model_spec_from_config(const ExperimentConfig& cfg, std::size_t input_dim,
                                 std::size_t classes) {
  ModelSpec spec;
  spec.input_dim = input_dim;
  spec.classes = classes;
  spec.activation = activation_from_string(cfg.activation);
  spec.weight_mode = weight_mode_from_string(cfg.weight_mode);
  spec.weight_p = norm_order_from_string(cfg.weight_p);
  spec.stats_momentum = cfg.momentum;

  if (cfg.arch == "mlp") {
    for (std::size_t h : cfg.hidden) {
      LayerSpec ls;
      ls.kind = LayerSpec::Kind::Linear;
      ls.out = h;
      spec.hidden.push_back(ls);
    }
  } else if (cfg.arch == "cnn") {
    spec.image_c = cfg.image_c;
    spec.image_h = cfg.image_h;
    spec.image_w = cfg.image_w;
    for (std::size_t ch : cfg.conv_channels) {
      LayerSpec ls;
      ls.kind = LayerSpec::Kind::Conv;
      ls.out = ch;
      ls.kernel = cfg.kernel;
      spec.hidden.push_back(ls);
    }
  } else {
    throw ValueError("unknown arch: " + cfg.arch);
  }

  spec.use_norm = cfg.norm != "none";
  spec.norm.axis = 0;
  if (cfg.norm_axis == "layer") spec.norm.axis = 1;
  else if (cfg.norm_axis != "batch") throw ValueError("unknown norm axis: " + cfg.norm_axis);
  spec.norm.epsilon = cfg.epsilon;
  spec.norm.affine = true;
  spec.norm.mean_only = false;
  if (cfg.norm == "l2") spec.norm.metric = Metric::L2;
  else if (cfg.norm == "l1") spec.norm.metric = Metric::L1;
  else if (cfg.norm == "linf") spec.norm.metric = Metric::Linf;
  else if (cfg.norm == "topk") {
    spec.norm.metric = Metric::TopK;
    spec.norm.k = cfg.topk_k;
  } else if (cfg.norm == "mean_only") {
    spec.norm.metric = Metric::L2;
    spec.norm.mean_only = true;
  } else if (cfg.norm != "none") {
    throw ValueError("unknown norm: " + cfg.norm);
  }
  return spec;
}

Dataset dataset_from_config(const ExperimentConfig& cfg) {
  if (cfg.source == "synthetic") {
    // Dataset seed is decoupled from the run seed so arms that perturb the
    // run seed still see identical data.
    return make_synthetic(cfg.samples, cfg.features, 9000 + cfg.seed, cfg.input_scale);
  }
  if (cfg.source == "csv") {
    Dataset ds = load_csv_dataset(cfg.path);
    if (cfg.input_scale != 1.0) {
      ds.x = scale(ds.x, cfg.input_scale);
    }
    return ds;
  }
  if (cfg.source == "idx") {
    Dataset ds = load_idx_dataset(cfg.path, cfg.labels_path);
    if (cfg.input_scale != 1.0) {
      ds.x = scale(ds.x, cfg.input_scale);
    }
    return ds;
  }
  throw ValueError("unknown dataset source: " + cfg.source);
}

double evaluate_accuracy(Model& model, const Dataset& ds, PrecisionMode pm) {
  if (ds.size() == 0) return 0.0;
  // Before the first train step the running statistics are empty; evaluate a
  // throwaway copy in train mode so the real model's estimates stay untouched.
  const bool uninit = model.spec.use_norm && model.spec.norm.axis == 0 &&
                      !model.blocks.empty() && !model.blocks.front().stats.initialized;
  if (uninit) {
    Model probe = model;
    const Tensor logits = probe.forward(ds.x, StatsMode::Train, pm);
    const std::size_t n = ds.size(), c = model.classes();
    std::size_t hits = 0;
    for (std::size_t i = 0; i < n; ++i) {
      std::size_t best = 0;
      double bv = logits[i * c];
      for (std::size_t j = 1; j < c; ++j) {
        if (logits[i * c + j] > bv) {
          bv = logits[i * c + j];
          best = j;
        }
      }
      if (static_cast<int>(best) == ds.y[i]) ++hits;
    }
    return static_cast<double>(hits) / static_cast<double>(n);
  }
  const Tensor logits = model.forward(ds.x, StatsMode::Eval, pm);
  const std::size_t n = ds.size(), c = model.classes();
  std::size_t hits = 0;
  for (std::size_t i = 0; i < n; ++i) {
    std::size_t best = 0;
    double bv = logits[i * c];
    for (std::size_t j = 1; j < c; ++j) {
      if (logits[i * c + j] > bv) {
        bv = logits[i * c + j];
        best = j;
      }
    }
    if (static_cast<int>(best) == ds.y[i]) ++hits;
  }
  return static_cast<double>(hits) / static_cast<double>(n);
}

namespace {

Tensor gather_rows(const Tensor& x, const std::vector<std::size_t>& idx) {
  const std::size_t d = x.shape()[1];
  Tensor out({idx.size(), d}, x.mode());
  for (std::size_t i = 0; i < idx.size(); ++i) {
    for (std::size_t j = 0; j < d; ++j) out.set(i * d + j, x[idx[i] * d + j]);
  }
  return out;
}

// Per-channel SGD with an individually corrected learning rate.
Tensor sgd_rows_corrected(const Tensor& w, const Tensor& grad, double base_eta,
                          double lambda, const Trajectory& ref, std::size_t step,
                          std::size_t layer) {
  const std::size_t channels = w.shape()[0], fan = w.shape()[1];
  Tensor out(w.shape(), w.mode());
  for (std::size_t i = 0; i < channels; ++i) {
    double norm2 = 0.0;
    for (std::size_t j = 0; j < fan; ++j) norm2 += w[i * fan + j] * w[i * fan + j];
    const double ref_norm = ref.lookup(step, layer, i);
    const double eta = base_eta * norm2 / (ref_norm * ref_norm);
    for (std::size_t j = 0; j < fan; ++j) {
      const std::size_t p = i * fan + j;
      out.set(p, w[p] - eta * (grad[p] + lambda * w[p]));
    }
  }
  return out;
}

// Rescale every channel to its per-channel target norm (norm scheduling).
Tensor rows_to_targets(const Tensor& w, const std::vector<double>& targets) {
  const std::size_t channels = w.shape()[0], fan = w.shape()[1];
  Tensor out(w.shape(), w.mode());
  for (std::size_t i = 0; i < channels; ++i) {
    double norm = 0.0;
    for (std::size_t j = 0; j < fan; ++j) norm += w[i * fan + j] * w[i * fan + j];
    norm = std::sqrt(norm);
    if (norm == 0.0) throw ValueError("zero-norm channel during norm scheduling");
    const double s = targets[i] / norm;
    for (std::size_t j = 0; j < fan; ++j) out.set(i * fan + j, w[i * fan + j] * s);
  }
  return out;
}

}  // namespace

RunResult train_with_model(const ExperimentConfig& cfg, const Trajectory* replay,
                           Model* out_model) {
  if (cfg.batch < 2) throw ValueError("batch size must be at least 2");
  const PrecisionMode pm = precision_from_string(cfg.precision);
  const Dataset full = dataset_from_config(cfg);
  auto [train_set, val_set] = split_dataset(full, cfg.split, cfg.seed * 7919 + 17);

  Model model = build_model(
      model_spec_from_config(cfg, full.features(), full.classes), cfg.seed);

  OptimizerMode omode;
  if (cfg.opt_mode == "plain") omode = OptimizerMode::Plain;
  else if (cfg.opt_mode == "lr_correction") omode = OptimizerMode::LrCorrection;
  else if (cfg.opt_mode == "norm_schedule") omode = OptimizerMode::NormSchedule;
  else throw ValueError("unknown optimizer mode: " + cfg.opt_mode);

  Trajectory loaded_replay;
  const Trajectory* ref = replay;
  if (omode != OptimizerMode::Plain && ref == nullptr) {
    if (cfg.trajectory.empty()) {
      throw StateError("missing trajectory: the " + cfg.opt_mode +
                       " mode needs recorded reference norms");
    }
    loaded_replay = Trajectory::load_csv(cfg.trajectory);
    ref = &loaded_replay;
  }

  const std::size_t steps_per_epoch = train_set.size() / cfg.batch;
  if (cfg.epochs > 0 && steps_per_epoch == 0) {
    throw ValueError("training set smaller than one batch");
  }

  OptimizerConfig ocfg;
  ocfg.eta = cfg.lr;
  ocfg.weight_decay = cfg.weight_decay;
  ocfg.mode = omode;
  if (cfg.lr_decay_every > 0) {
    for (std::size_t e = cfg.lr_decay_every; e < cfg.epochs; e += cfg.lr_decay_every) {
      ocfg.schedule.push_back({e * steps_per_epoch, cfg.lr_decay_factor});
    }
  }
  validate(ocfg);

  RunResult result;
  result.initial_val_acc = evaluate_accuracy(model, val_set, pm);

  std::size_t step = 0;
  const double sqrt10 = std::sqrt(10.0);

  for (std::size_t epoch = 0; epoch < cfg.epochs && !result.diverged; ++epoch) {
    // Seeded per-epoch shuffle; identical config => identical batch order.
    std::vector<std::size_t> order(train_set.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    Rng shuffle_rng(cfg.seed * 1000003 + epoch + 1);
    for (std::size_t i = order.size(); i > 1; --i) {
      std::swap(order[i - 1], order[shuffle_rng.below(i)]);
    }

    double loss_sum = 0.0;
    std::size_t loss_count = 0;
    bool epoch_diverged = false;

    for (std::size_t b = 0; b < steps_per_epoch; ++b, ++step) {
      std::vector<std::size_t> idx(order.begin() + b * cfg.batch,
                                   order.begin() + (b + 1) * cfg.batch);
      Tensor bx = gather_rows(train_set.x, idx);
      std::vector<int> by(idx.size());
      for (std::size_t i = 0; i < idx.size(); ++i) by[i] = train_set.y[idx[i]];

      // Pre-update norms: the reference record for replay modes.
      for (std::size_t li = 0; li < model.blocks.size(); ++li) {
        const auto norms = model.channel_norms(li);
        for (std::size_t ci = 0; ci < norms.size(); ++ci) {
          result.trajectory.add(step, li, ci, norms[ci]);
        }
      }

      ModelCache cache;
      const Tensor logits = model.forward(bx, StatsMode::Train, pm, &cache);
      Tensor grad_logits_f64;
      const double loss = softmax_cross_entropy(logits, by, &grad_logits_f64);
      if (!std::isfinite(loss)) {
        result.diverged = true;
        result.diverged_epoch = epoch;
        result.diverged_step = step;
        epoch_diverged = true;
        loss_sum += loss;
        ++loss_count;
        break;
      }
      loss_sum += loss;
      ++loss_count;

      const Tensor grad_logits = cast(grad_logits_f64, pm);
      const ParamGrads grads = model.backward(grad_logits, cache, pm);

      const double eta = lr_at(ocfg, step);
      const double base_eta = ocfg.eta;  // norm scheduling keeps lr constant
      std::size_t decay_events = 0;
      for (const auto& ev : ocfg.schedule) {
        if (ev.step <= step) ++decay_events;
      }

      for (std::size_t li = 0; li < model.blocks.size(); ++li) {
        Block& blk = model.blocks[li];
        const double lambda = cfg.wd_last_layer_only ? 0.0 : cfg.weight_decay;

        switch (omode) {
          case OptimizerMode::Plain:
            blk.weights.v = sgd_step(blk.weights.v, grads.v[li], eta, lambda);
            break;
          case OptimizerMode::LrCorrection:
            blk.weights.v = sgd_rows_corrected(blk.weights.v, grads.v[li], eta, 0.0,
                                               *ref, step, li);
            break;
          case OptimizerMode::NormSchedule: {
            blk.weights.v = sgd_step(blk.weights.v, grads.v[li], base_eta, 0.0);
            std::vector<double> targets(blk.weights.channels());
            const double factor = std::pow(sqrt10, static_cast<double>(decay_events));
            for (std::size_t ci = 0; ci < targets.size(); ++ci) {
              targets[ci] = ref->lookup(step, li, ci) * factor;
            }
            blk.weights.v = rows_to_targets(blk.weights.v, targets);
            break;
          }
        }
        if (blk.weights.mode == WeightMode::WN && grads.g[li].size() > 0) {
          blk.weights.g = sgd_step(blk.weights.g, grads.g[li], eta, 0.0);
        }
        blk.weights.bias = sgd_step(blk.weights.bias, grads.bias[li], eta, 0.0);
        if (model.spec.use_norm && model.spec.norm.affine) {
          blk.gamma = sgd_step(blk.gamma, grads.gamma[li], eta, 0.0);
          blk.beta = sgd_step(blk.beta, grads.beta[li], eta, 0.0);
        }
      }
      {
        const double cls_lambda = cfg.wd_last_layer_only ? cfg.weight_decay : 0.0;
        const double cls_eta = omode == OptimizerMode::NormSchedule ? base_eta : eta;
        model.classifier.v = sgd_step(model.classifier.v, grads.cls_w, cls_eta, cls_lambda);
        model.classifier.bias = sgd_step(model.classifier.bias, grads.cls_b, cls_eta, 0.0);
      }
    }

    EpochLog log;
    log.epoch = epoch;
    log.train_loss = loss_count > 0 ? loss_sum / static_cast<double>(loss_count)
                                    : std::numeric_limits<double>::quiet_NaN();
    log.val_acc = epoch_diverged ? 0.0 : evaluate_accuracy(model, val_set, pm);
    double mean_norm = 0.0, max_norm = 0.0;
    std::size_t count = 0;
    for (std::size_t li = 0; li < model.blocks.size(); ++li) {
      for (double nn : model.channel_norms(li)) {
        mean_norm += nn;
        max_norm = std::max(max_norm, nn);
        ++count;
      }
    }
    log.mean_norm = count > 0 ? mean_norm / static_cast<double>(count) : 0.0;
    log.max_norm = max_norm;
    log.diverged = epoch_diverged;
    result.epochs.push_back(log);
  }

  result.final_val_acc = result.diverged
                             ? (result.epochs.empty() ? 0.0 : result.epochs.back().val_acc)
                             : (cfg.epochs == 0 ? result.initial_val_acc
                                                : result.epochs.back().val_acc);
  if (out_model) *out_model = std::move(model);
  return result;
}

RunResult train(const ExperimentConfig& cfg, const Trajectory* replay) {
  return train_with_model(cfg, replay, nullptr);
}

void emit_csv(const RunResult& result, const std::string& path) {
  std::ofstream f(path);
  if (!f) throw IoError("cannot open for writing: " + path);
  f << "epoch,train_loss,val_acc,mean_norm,max_norm,diverged\n";
  char buf[256];
  for (const auto& e : result.epochs) {
    std::snprintf(buf, sizeof buf, "%zu,%.6f,%.6f,%.6f,%.6f,%d", e.epoch, e.train_loss,
                  e.val_acc, e.mean_norm, e.max_norm, e.diverged ? 1 : 0);
    f << buf << '\n';
  }
  if (!f) throw IoError("write failed: " + path);
}

}  // namespace normlab
