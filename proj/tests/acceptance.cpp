// Acceptance suite: one pass/fail line per criterion, exit code = failures.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdint>
#include <fstream>
#include <functional>
#include <sstream>
#include <string>
#include <vector>

#include "normlab/config.hpp"
#include "normlab/constants.hpp"
#include "normlab/error.hpp"
#include "normlab/experiments.hpp"
#include "normlab/half.hpp"
#include "normlab/model.hpp"
#include "normlab/norm.hpp"
#include "normlab/optim.hpp"
#include "normlab/rng.hpp"
#include "normlab/trainer.hpp"
#include "normlab/weight_norm.hpp"

using namespace normlab;

namespace {

int g_failures = 0;

void report(int id, const std::string& name, bool ok, double seconds,
            const std::string& detail) {
  std::printf("%s  %2d  %-22s  (%6.1fs)  %s\n", ok ? "PASS" : "FAIL", id, name.c_str(),
              seconds, detail.c_str());
  std::fflush(stdout);
  if (!ok) ++g_failures;
}

void run(int id, const std::string& name, double budget_s,
         const std::function<std::pair<bool, std::string>()>& body) {
  const auto t0 = std::chrono::steady_clock::now();
  bool ok = false;
  std::string detail;
  try {
    auto [o, d] = body();
    ok = o;
    detail = d;
  } catch (const std::exception& e) {
    detail = std::string("exception: ") + e.what();
  }
  const double secs =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  if (secs > budget_s) {
    ok = false;
    detail += "  [over time budget]";
  }
  report(id, name, ok, secs, detail);
}

std::string fmt(const char* f, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, v);
  return buf;
}

ExperimentConfig desk_config() {
  ExperimentConfig cfg;
  cfg.samples = 4096;
  cfg.features = 32;
  cfg.split = 0.5;
  cfg.hidden = {64, 32};
  cfg.epochs = 20;
  cfg.batch = 64;
  cfg.lr = 0.1;
  cfg.lr_decay_every = 10;
  cfg.seed = 1;
  return cfg;
}

std::string slurp(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot open: " + path);
  std::stringstream ss;
  ss << f.rdbuf();
  return ss.str();
}

Tensor random_tensor(std::vector<std::size_t> shape, std::uint64_t seed,
                     double spread = 1.0) {
  std::size_t count = 1;
  for (std::size_t d : shape) count *= d;
  Rng rng(seed);
  std::vector<double> vals(count);
  for (auto& v : vals) v = rng.normal() * spread;
  return Tensor::from(std::move(shape), std::move(vals));
}

// probe . norm_forward(x) for finite differencing
double norm_probe(const Tensor& x, const NormScheme& scheme, const Tensor& gamma,
                  const Tensor& beta, const Tensor& probe) {
  NormStats stats = make_norm_stats(x.shape()[1], x.mode());
  auto [y, cache] = norm_forward(x, scheme, gamma, beta, StatsMode::Train, stats);
  double acc = 0.0;
  for (std::size_t i = 0; i < y.size(); ++i) acc += y[i] * probe[i];
  return acc;
}

double max_rel_grad_err(const NormScheme& scheme, std::uint64_t seed) {
  const std::size_t rows = 8, cols = 4;
  Tensor x = random_tensor({rows, cols}, seed);
  const Tensor gamma = random_tensor({cols}, seed + 1, 0.3);
  const Tensor beta = random_tensor({cols}, seed + 2, 0.3);
  const Tensor probe = random_tensor({rows, cols}, seed + 3);

  NormStats stats = make_norm_stats(cols, x.mode());
  auto [y, cache] = norm_forward(x, scheme, gamma, beta, StatsMode::Train, stats);
  const NormGrads grads = norm_backward(probe, cache, scheme);

  const double h = 1e-6;
  double worst = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    Tensor xp = x, xm = x;
    xp.set(i, x[i] + h);
    xm.set(i, x[i] - h);
    const double fd = (norm_probe(xp, scheme, gamma, beta, probe) -
                       norm_probe(xm, scheme, gamma, beta, probe)) /
                      (2.0 * h);
    const double an = grads.grad_x[i];
    worst = std::max(worst,
                     std::fabs(fd - an) / std::max({std::fabs(fd), std::fabs(an), 1e-4}));
  }
  return worst;
}

}  // namespace

int main() {
  std::printf("acceptance suite\n");

  // 1. L1 constant identity at n=256, 1e6 trials
  run(1, "constants-l1-identity", 30.0, [] {
    const McEstimate est = mc_dispersion_ratio({Scheme::L1, 256}, 1000000, 20180101);
    const bool ok = std::fabs(est.value - 1.0) <= 0.01;
    return std::make_pair(ok, "ratio=" + fmt("%.6f", est.value) +
                                  " stderr=" + fmt("%.2e", est.stderr_));
  });

  // 2. Linf corridor at n in {16, 256}
  run(2, "constants-linf-corridor", 30.0, [] {
    std::string detail;
    bool ok = true;
    for (std::size_t n : {std::size_t{16}, std::size_t{256}}) {
      const McEstimate est = mc_dispersion_ratio({Scheme::Linf, n}, 200000, 20180202 + n);
      ok = ok && est.value >= 0.74 && est.value <= 1.56;
      detail += "n" + std::to_string(n) + "=" + fmt("%.4f", est.value) + " ";
    }
    return std::make_pair(ok, detail + "corridor=[0.74,1.56]");
  });

  // 3. gradient suite: batch-norm metrics, layer-norm axis, BWN
  run(3, "gradient-suite", 10.0, [] {
    double worst = 0.0;
    NormScheme s;
    for (Metric m : {Metric::L2, Metric::L1, Metric::Linf, Metric::TopK}) {
      s = NormScheme{};
      s.metric = m;
      s.k = 2;
      worst = std::max(worst, max_rel_grad_err(s, 1000 + static_cast<int>(m)));
    }
    s = NormScheme{};
    s.axis = 1;  // layer-norm axis
    worst = std::max(worst, max_rel_grad_err(s, 2000));

    // BWN backward vs finite differences through the reparameterization
    const Tensor v = random_tensor({8, 4}, 3000);
    const Tensor probe = random_tensor({8, 4}, 3001);
    const double rho = 1.4;
    const Tensor gv = bwn_backward(probe, v, rho, NormOrder::L2);
    const double h = 1e-6;
    for (std::size_t i = 0; i < v.size(); ++i) {
      Tensor vp = v, vm = v;
      vp.set(i, v[i] + h);
      vm.set(i, v[i] - h);
      const Tensor wp = bwn_effective(vp, rho, NormOrder::L2);
      const Tensor wm = bwn_effective(vm, rho, NormOrder::L2);
      double fd = 0.0;
      for (std::size_t j = 0; j < v.size(); ++j) {
        fd += probe[j] * (wp[j] - wm[j]) / (2.0 * h);
      }
      worst = std::max(
          worst, std::fabs(fd - gv[i]) / std::max({std::fabs(fd), std::fabs(gv[i]), 1e-4}));
    }
    return std::make_pair(worst <= 1e-5, "max_rel_err=" + fmt("%.2e", worst));
  });

  // 4. scale invariance of the forward pass and gradient halving
  run(4, "scale-invariance", 5.0, [] {
    // activations through a linear layer, then alpha-scaled
    const Tensor x = random_tensor({16, 8}, 41);
    const Tensor w = random_tensor({8, 4}, 42, 0.5);
    const Tensor wx = matmul(x, w);
    const Tensor gamma = random_tensor({4}, 43, 0.2);
    const Tensor beta = random_tensor({4}, 44, 0.2);

    double worst_fwd = 0.0;
    for (Metric m : {Metric::L2, Metric::L1, Metric::Linf, Metric::TopK}) {
      NormScheme scheme;
      scheme.metric = m;
      scheme.k = 3;
      scheme.epsilon = 1e-300;  // inert guard: the property under test is the
                                // normalization's own invariance
      for (double alpha : {0.01, 100.0}) {
        NormStats s1 = make_norm_stats(4, wx.mode());
        NormStats s2 = make_norm_stats(4, wx.mode());
        auto [y1, c1] = norm_forward(wx, scheme, gamma, beta, StatsMode::Train, s1);
        auto [y2, c2] =
            norm_forward(scale(wx, alpha), scheme, gamma, beta, StatsMode::Train, s2);
        for (std::size_t i = 0; i < y1.size(); ++i) {
          worst_fwd = std::max(worst_fwd,
                               std::fabs(y2[i] - y1[i]) / std::max(1.0, std::fabs(y1[i])));
        }
      }
    }

    // gradient halving under weight doubling
    const Objective obj = make_scale_invariant_objective(32, 64, 45);
    const Tensor w0 = random_tensor({32}, 46);
    const Tensor g1 = obj.gradient(w0);
    const Tensor g2 = obj.gradient(scale(w0, 2.0));
    const Tensor half_g1 = scale(g1, 0.5);
    const double grad_err = l2_norm(sub(g2, half_g1)) / l2_norm(half_g1);

    const bool ok = worst_fwd <= 1e-6 && grad_err <= 1e-6;
    return std::make_pair(ok, "fwd_rel=" + fmt("%.2e", worst_fwd) +
                                  " grad_rel=" + fmt("%.2e", grad_err));
  });

  // 5. direction-update claim: second-order residual scaling
  run(5, "direction-claim", 10.0, [] {
    const Objective obj = make_scale_invariant_objective(32, 64, 51);
    const Tensor w0 = random_tensor({32}, 52);
    const ClaimReport rep = verify_direction_claim(obj, w0, 1e-3);
    const bool ok = rep.ratio_at_half_eta >= 3.5 && rep.ratio_at_half_eta <= 4.5;
    return std::make_pair(ok, "ratio=" + fmt("%.4f", rep.ratio_at_half_eta) +
                                  " residual=" + fmt("%.2e", rep.residual));
  });

  // 6. Top(n) == L1 and Top(1) == Linf, bitwise, forward and backward
  run(6, "topk-equivalence", 5.0, [] {
    const std::size_t rows = 8, cols = 4;
    const Tensor x = random_tensor({rows, cols}, 61);
    const Tensor gamma = random_tensor({cols}, 62, 0.2);
    const Tensor beta = random_tensor({cols}, 63, 0.2);
    const Tensor probe = random_tensor({rows, cols}, 64);

    auto forward_backward = [&](Metric m, std::size_t k) {
      NormScheme scheme;
      scheme.metric = m;
      scheme.k = k;
      NormStats stats = make_norm_stats(cols, x.mode());
      auto [y, cache] = norm_forward(x, scheme, gamma, beta, StatsMode::Train, stats);
      const NormGrads g = norm_backward(probe, cache, scheme);
      return std::make_pair(y, g);
    };

    const auto [y_l1, g_l1] = forward_backward(Metric::L1, 1);
    const auto [y_tn, g_tn] = forward_backward(Metric::TopK, rows);
    const auto [y_li, g_li] = forward_backward(Metric::Linf, 1);
    const auto [y_t1, g_t1] = forward_backward(Metric::TopK, 1);

    bool ok = true;
    for (std::size_t i = 0; i < y_l1.size(); ++i) {
      ok = ok && y_l1[i] == y_tn[i] && y_li[i] == y_t1[i];
      ok = ok && g_l1.grad_x[i] == g_tn.grad_x[i] && g_li.grad_x[i] == g_t1.grad_x[i];
    }
    for (std::size_t j = 0; j < cols; ++j) {
      ok = ok && g_l1.grad_gamma[j] == g_tn.grad_gamma[j];
      ok = ok && g_l1.grad_beta[j] == g_tn.grad_beta[j];
      ok = ok && g_li.grad_gamma[j] == g_t1.grad_gamma[j];
    }
    return std::make_pair(ok, std::string("bitwise forward+backward"));
  });

  // 7. weight-decay / learning-rate / norm-schedule equivalence at desk scale
  run(7, "wd-equivalence", 600.0, [] {
    ExperimentConfig cfg = desk_config();
    cfg.weight_decay = 0.0005;
    const ExperimentSummary s = run_experiment("wd-equivalence", cfg, "acc_out/wd");
    const double gap_corr = s.metrics.at("gap_corrected");
    const double gap_sched = s.metrics.at("gap_norm_sched");
    const bool growth = s.metrics.at("wd_off_growth_flag") > 0.5;
    const bool ok = gap_corr <= 0.02 && gap_sched <= 0.02 && growth;
    return std::make_pair(
        ok, "gap_corrected=" + fmt("%.4f", gap_corr) + " gap_sched=" +
                fmt("%.4f", gap_sched) + " wd_off_grown=" +
                fmt("%.3f", s.metrics.at("wd_off_fraction_grown")));
  });

  // 8. half precision: unit-level overflow fact and training-level contrast
  run(8, "half-precision", 600.0, [] {
    // (a) every representable value above 255.9 squares to +inf while its
    // absolute value stays finite
    bool unit_ok = true;
    for (std::uint32_t bits = 0; bits < 0x7C00; ++bits) {
      const int e = (bits >> 10) & 0x1f;
      const int m = bits & 0x3ff;
      const double v = e == 0 ? std::ldexp(static_cast<double>(m), -24)
                              : std::ldexp(static_cast<double>(1024 + m), e - 25);
      if (v <= 255.9) continue;
      const Tensor t = Tensor::from({1}, {v}, PrecisionMode::half());
      const bool sq_inf = std::isinf(mul(t, t)[0]);
      const bool abs_fin = std::isfinite(abs(t)[0]);
      unit_ok = unit_ok && sq_inf && abs_fin;
    }

    // (b) desk training on inputs pre-scaled to ~300 magnitude
    ExperimentConfig cfg = desk_config();
    cfg.epochs = 12;
    cfg.input_scale = 100.0;  // cluster radius 3 puts typical features near 300
    const ExperimentSummary s = run_experiment("half-precision", cfg, "acc_out/half");
    const bool l2_flag = s.metrics.at("flag_l2") > 0.5;
    const bool l1_ok = s.metrics.at("flag_l1") < 0.5 &&
                       std::fabs(s.metrics.at("gap_l1")) <= 0.02;
    const bool ok = unit_ok && l2_flag && l1_ok;
    return std::make_pair(
        ok, std::string("unit=") + (unit_ok ? "ok" : "BAD") +
                " l2_half_flag=" + (l2_flag ? "set" : "UNSET") +
                " l1_gap=" + fmt("%.4f", s.metrics.at("gap_l1")));
  });

  // 9. BWN: channel norms pinned to rho, rho from init, folding preserves outputs
  run(9, "bwn-invariance", 300.0, [] {
    ExperimentConfig cfg = desk_config();
    cfg.weight_mode = "bwn";
    cfg.norm = "mean_only";
    cfg.epochs = 10;
    cfg.lr = 0.05;

    // rho at t=0 equals the Frobenius norm of the fresh init over sqrt(N)
    Model fresh = build_model(model_spec_from_config(cfg, cfg.features, 2), cfg.seed);
    bool rho_ok = true;
    for (const auto& blk : fresh.blocks) {
      double fro = 0.0;
      for (std::size_t i = 0; i < blk.weights.v.size(); ++i) {
        fro += blk.weights.v[i] * blk.weights.v[i];
      }
      const double expect =
          std::sqrt(fro) / std::sqrt(static_cast<double>(blk.weights.channels()));
      rho_ok = rho_ok && std::fabs(blk.weights.rho - expect) <= 1e-12 * expect;
    }

    const ExperimentSummary s = run_experiment("bwn-invariance", cfg, "acc_out/bwn");
    const double dev = s.metrics.at("max_norm_rel_dev");
    const double fold = s.metrics.at("fold_rel_err");
    const bool ok = rho_ok && dev <= 1e-6 && fold <= 1e-9;
    return std::make_pair(ok, "norm_dev=" + fmt("%.2e", dev) +
                                  " fold_err=" + fmt("%.2e", fold) +
                                  (rho_ok ? "" : " rho_init=BAD"));
  });

  // 10. L^p comparison at desk scale: L1 and Top(10 of 64) within one point of L2
  run(10, "lp-compare", 600.0, [] {
    ExperimentConfig cfg = desk_config();
    cfg.topk_k = 10;  // of batch 64
    const ExperimentSummary s = run_experiment("lp-compare", cfg, "acc_out/lp");
    const double gap_l1 = s.metrics.at("gap_l1");
    const double gap_tk = s.metrics.at("gap_topk");
    const bool ok = gap_l1 <= 0.01 && gap_tk <= 0.01;
    return std::make_pair(ok, "gap_l1=" + fmt("%.4f", gap_l1) + " gap_topk=" +
                                  fmt("%.4f", gap_tk) + " linf_acc=" +
                                  fmt("%.4f", s.metrics.at("acc_linf")) + " (may trail)");
  });

  // 11. determinism: byte-identical CSV outputs across reruns
  run(11, "determinism", 300.0, [] {
    ExperimentConfig cfg = desk_config();
    cfg.epochs = 5;

    const ExperimentSummary c1 = run_experiment("constants", cfg, "acc_out/det_c1");
    const ExperimentSummary c2 = run_experiment("constants", cfg, "acc_out/det_c2");
    bool ok = slurp("acc_out/det_c1/constants.csv") == slurp("acc_out/det_c2/constants.csv");

    const RunResult r1 = train(cfg);
    const RunResult r2 = train(cfg);
    emit_csv(r1, "acc_out/det_r1.csv");
    emit_csv(r2, "acc_out/det_r2.csv");
    ok = ok && slurp("acc_out/det_r1.csv") == slurp("acc_out/det_r2.csv");

    r1.trajectory.save_csv("acc_out/det_t1.csv");
    r2.trajectory.save_csv("acc_out/det_t2.csv");
    ok = ok && slurp("acc_out/det_t1.csv") == slurp("acc_out/det_t2.csv");

    const ExperimentSummary w1 = run_experiment("claim", cfg, "acc_out/det_w1");
    const ExperimentSummary w2 = run_experiment("claim", cfg, "acc_out/det_w2");
    ok = ok && slurp("acc_out/det_w1/claim.csv") == slurp("acc_out/det_w2/claim.csv");

    return std::make_pair(ok, std::string("constants+train+trajectory+claim CSVs"));
  });

  std::printf("%d criterion(s) failed\n", g_failures);
  return g_failures;
}
