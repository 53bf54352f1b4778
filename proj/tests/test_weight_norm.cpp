#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <vector>

#include "normlab/error.hpp"
#include "normlab/model.hpp"
#include "normlab/rng.hpp"
#include "normlab/weight_norm.hpp"

using namespace normlab;

namespace {

Tensor random_matrix(std::size_t rows, std::size_t cols, std::uint64_t seed,
                     double spread = 1.0) {
  Rng rng(seed);
  std::vector<double> vals(rows * cols);
  for (auto& v : vals) v = rng.normal() * spread;
  return Tensor::from({rows, cols}, std::move(vals));
}

}  // namespace

TEST_CASE("wn_effective") {
  const Tensor v = Tensor::from({1, 2}, {3.0, 4.0});
  const Tensor g = Tensor::from({1}, {5.0});
  const Tensor w = wn_effective(v, g);
  CHECK(w[0] == doctest::Approx(3.0).epsilon(1e-15));
  CHECK(w[1] == doctest::Approx(4.0).epsilon(1e-15));

  const Tensor v2 = Tensor::from({1, 2}, {1.0, 0.0});
  CHECK(wn_effective(v2, Tensor::from({1}, {2.0}))[0] == 2.0);

  // ||w_i|| == |g_i| on random channels
  const Tensor vr = random_matrix(6, 9, 42);
  Rng rng(43);
  std::vector<double> gs(6);
  for (auto& x : gs) x = rng.normal() * 2.0;
  const Tensor gr = Tensor::from({6}, gs);
  const Tensor wr = wn_effective(vr, gr);
  for (std::size_t i = 0; i < 6; ++i) {
    CHECK(channel_norm(wr, i, NormOrder::L2) ==
          doctest::Approx(std::fabs(gs[i])).epsilon(1e-12));
  }

  CHECK_THROWS_AS(wn_effective(Tensor::zeros({1, 3}), Tensor::from({1}, {1.0})),
                  ValueError);
}

TEST_CASE("bwn_effective") {
  CHECK(bwn_effective(Tensor::from({1, 2}, {3.0, 4.0}), 1.0, NormOrder::L2)[0] ==
        doctest::Approx(0.6).epsilon(1e-15));
  const Tensor w1 = bwn_effective(Tensor::from({1, 2}, {1.0, 1.0}), 2.0, NormOrder::L1);
  CHECK(w1[0] == doctest::Approx(1.0).epsilon(1e-15));
  CHECK(w1[1] == doctest::Approx(1.0).epsilon(1e-15));
  const Tensor wi = bwn_effective(Tensor::from({1, 2}, {2.0, -4.0}), 1.0, NormOrder::Linf);
  CHECK(wi[0] == doctest::Approx(0.5).epsilon(1e-15));
  CHECK(wi[1] == doctest::Approx(-1.0).epsilon(1e-15));

  // norm invariant: every channel norm equals rho after arbitrary updates to v
  Rng rng(51);
  Tensor v = random_matrix(5, 7, 52);
  const double rho = 1.7;
  for (NormOrder p : {NormOrder::L1, NormOrder::L2, NormOrder::Linf}) {
    Tensor vv = v;
    for (int step = 0; step < 10; ++step) {
      // random perturbation standing in for an optimizer update
      std::vector<double> noise(vv.size());
      for (auto& x : noise) x = rng.normal() * 0.3;
      vv = add(vv, Tensor::from({5, 7}, noise));
      const Tensor w = bwn_effective(vv, rho, p);
      for (std::size_t i = 0; i < 5; ++i) {
        CHECK(channel_norm(w, i, p) == doctest::Approx(rho).epsilon(1e-6));
      }
    }
  }

  CHECK_THROWS_AS(bwn_effective(Tensor::zeros({1, 3}), 1.0, NormOrder::L2), ValueError);
}

TEST_CASE("rho_init") {
  CHECK(rho_init(Tensor::identity(2), NormOrder::L2, 2) == doctest::Approx(1.0).epsilon(1e-15));
  CHECK(rho_init(Tensor::full({2, 3}, 1.0), NormOrder::L1, 2) ==
        doctest::Approx(3.0).epsilon(1e-15));
  CHECK(rho_init(Tensor::from({2, 2}, {0.5, -2.0, 1.0, 0.25}), NormOrder::Linf, 2) ==
        doctest::Approx(2.0).epsilon(1e-15));
}

TEST_CASE("bwn_backward is the tangent projection") {
  // gradient parallel to v vanishes
  {
    const Tensor v = Tensor::from({1, 2}, {3.0, 4.0});
    const Tensor grad_w = Tensor::from({1, 2}, {0.6, 0.8});
    const Tensor gv = bwn_backward(grad_w, v, 2.0, NormOrder::L2);
    CHECK(std::fabs(gv[0]) <= 1e-14);
    CHECK(std::fabs(gv[1]) <= 1e-14);
  }
  // orthogonal gradient with ||v|| == rho passes through unchanged
  {
    const Tensor v = Tensor::from({1, 2}, {3.0, 4.0});
    const Tensor grad_w = Tensor::from({1, 2}, {-0.8, 0.6});
    const Tensor gv = bwn_backward(grad_w, v, 5.0, NormOrder::L2);
    CHECK(gv[0] == doctest::Approx(-0.8).epsilon(1e-12));
    CHECK(gv[1] == doctest::Approx(0.6).epsilon(1e-12));
  }

  // finite differences through bwn_effective for every norm order
  for (NormOrder p : {NormOrder::L2, NormOrder::L1, NormOrder::Linf}) {
    const std::size_t rows = 4, cols = 6;
    const Tensor v = random_matrix(rows, cols, 61 + static_cast<int>(p));
    const Tensor probe = random_matrix(rows, cols, 71);
    const double rho = 1.3;

    const Tensor w = bwn_effective(v, rho, p);
    const Tensor gv = bwn_backward(probe, v, rho, p);

    const double h = 1e-6;
    for (std::size_t i = 0; i < v.size(); ++i) {
      Tensor vp = v, vm = v;
      vp.set(i, v[i] + h);
      vm.set(i, v[i] - h);
      const Tensor wp = bwn_effective(vp, rho, p);
      const Tensor wm = bwn_effective(vm, rho, p);
      double fd = 0.0;
      for (std::size_t j = 0; j < w.size(); ++j) {
        fd += probe[j] * (wp[j] - wm[j]) / (2.0 * h);
      }
      CHECK(std::fabs(fd - gv[i]) /
                std::max({std::fabs(fd), std::fabs(gv[i]), 1e-6}) <=
            1e-5);
    }
  }

  // p=2: grad_v is orthogonal to v channelwise
  {
    const Tensor v = random_matrix(3, 8, 81);
    const Tensor probe = random_matrix(3, 8, 82);
    const Tensor gv = bwn_backward(probe, v, 2.2, NormOrder::L2);
    for (std::size_t i = 0; i < 3; ++i) {
      double dot = 0.0, nv = 0.0, ng = 0.0;
      for (std::size_t j = 0; j < 8; ++j) {
        dot += gv[i * 8 + j] * v[i * 8 + j];
        nv += v[i * 8 + j] * v[i * 8 + j];
        ng += gv[i * 8 + j] * gv[i * 8 + j];
      }
      CHECK(std::fabs(dot) <= 1e-10 * std::sqrt(nv) * std::sqrt(ng));
    }
  }
}

TEST_CASE("wn_backward finite differences") {
  const std::size_t rows = 3, cols = 5;
  const Tensor v = random_matrix(rows, cols, 91);
  Rng rng(92);
  std::vector<double> gs(rows);
  for (auto& x : gs) x = 0.5 + std::fabs(rng.normal());
  const Tensor g = Tensor::from({rows}, gs);
  const Tensor probe = random_matrix(rows, cols, 93);

  const WnGrads wg = wn_backward(probe, v, g);
  const double h = 1e-6;
  for (std::size_t i = 0; i < v.size(); ++i) {
    Tensor vp = v, vm = v;
    vp.set(i, v[i] + h);
    vm.set(i, v[i] - h);
    double fd = 0.0;
    const Tensor wp = wn_effective(vp, g), wm = wn_effective(vm, g);
    for (std::size_t j = 0; j < v.size(); ++j) fd += probe[j] * (wp[j] - wm[j]) / (2 * h);
    CHECK(std::fabs(fd - wg.grad_v[i]) /
              std::max({std::fabs(fd), std::fabs(wg.grad_v[i]), 1e-6}) <=
          1e-5);
  }
  for (std::size_t i = 0; i < rows; ++i) {
    Tensor gp = g, gm = g;
    gp.set(i, g[i] + h);
    gm.set(i, g[i] - h);
    double fd = 0.0;
    const Tensor wp = wn_effective(v, gp), wm = wn_effective(v, gm);
    for (std::size_t j = 0; j < v.size(); ++j) fd += probe[j] * (wp[j] - wm[j]) / (2 * h);
    CHECK(std::fabs(fd - wg.grad_g[i]) /
              std::max({std::fabs(fd), std::fabs(wg.grad_g[i]), 1e-6}) <=
          1e-5);
  }

  // g_i = ||v_i|| makes the parameterization the identity on v
  Tensor gid({rows}, PrecisionMode::f64());
  for (std::size_t i = 0; i < rows; ++i) gid.set(i, channel_norm(v, i, NormOrder::L2));
  const Tensor w = wn_effective(v, gid);
  for (std::size_t i = 0; i < v.size(); ++i) {
    CHECK(w[i] == doctest::Approx(v[i]).epsilon(1e-13));
  }
}

TEST_CASE("fold_rho_into_classifier") {
  // two-layer linear chain without normalization: rhos (2, 3) move into the
  // classifier as a factor of 6
  {
    ModelSpec spec;
    spec.input_dim = 4;
    spec.classes = 2;
    spec.hidden = {{LayerSpec::Kind::Linear, 5, 3}, {LayerSpec::Kind::Linear, 6, 3}};
    spec.use_norm = false;
    spec.weight_mode = WeightMode::BWN;
    spec.activation = ActivationKind::Ramp;
    Model m = build_model(spec, 7);
    m.blocks[0].weights.rho = 2.0;
    m.blocks[1].weights.rho = 3.0;

    const Tensor cls_before = m.classifier.effective();
    Model folded = fold_rho_into_classifier(m);
    CHECK(folded.blocks[0].weights.rho == 1.0);
    CHECK(folded.blocks[1].weights.rho == 1.0);
    const Tensor cls_after = folded.classifier.effective();
    for (std::size_t i = 0; i < cls_before.size(); ++i) {
      CHECK(cls_after[i] == doctest::Approx(6.0 * cls_before[i]).epsilon(1e-12));
    }

    const Tensor x = random_matrix(8, 4, 99);
    const Tensor a = m.forward(x, StatsMode::Train, PrecisionMode::f64());
    const Tensor b = folded.forward(x, StatsMode::Train, PrecisionMode::f64());
    for (std::size_t i = 0; i < a.size(); ++i) {
      CHECK(std::fabs(a[i] - b[i]) <= 1e-12 * std::max(1.0, std::fabs(a[i])));
    }
  }

  // all rhos already 1: model unchanged
  {
    ModelSpec spec;
    spec.input_dim = 4;
    spec.classes = 2;
    spec.hidden = {{LayerSpec::Kind::Linear, 5, 3}};
    spec.use_norm = false;
    spec.weight_mode = WeightMode::BWN;
    Model m = build_model(spec, 8);
    m.blocks[0].weights.rho = 1.0;
    Model folded = fold_rho_into_classifier(m);
    const Tensor a = m.classifier.effective();
    const Tensor b = folded.classifier.effective();
    for (std::size_t i = 0; i < a.size(); ++i) CHECK(a[i] == b[i]);
  }

  // single-layer model: the classifier absorbs its own rho
  {
    ModelSpec spec;
    spec.input_dim = 4;
    spec.classes = 3;
    spec.use_norm = false;
    Model m = build_model(spec, 9);
    m.classifier.mode = WeightMode::BWN;
    m.classifier.rho = rho_init(m.classifier.v, NormOrder::L2, 3);
    const Tensor eff_before = m.classifier.effective();
    Model folded = fold_rho_into_classifier(m);
    CHECK(folded.classifier.mode == WeightMode::Plain);
    const Tensor eff_after = folded.classifier.effective();
    for (std::size_t i = 0; i < eff_before.size(); ++i) {
      CHECK(eff_after[i] == doctest::Approx(eff_before[i]).epsilon(1e-13));
    }
  }

  // ramp + mean-only normalization chain: outputs preserved on 100 inputs
  {
    ModelSpec spec;
    spec.input_dim = 6;
    spec.classes = 2;
    spec.hidden = {{LayerSpec::Kind::Linear, 10, 3}, {LayerSpec::Kind::Linear, 8, 3}};
    spec.use_norm = true;
    spec.norm.mean_only = true;
    spec.weight_mode = WeightMode::BWN;
    Model m = build_model(spec, 10);
    // make the betas nonzero so the shift rescaling is actually exercised
    for (auto& blk : m.blocks) {
      Rng rng(123);
      std::vector<double> b(blk.beta.size());
      for (auto& x : b) x = rng.normal() * 0.2;
      blk.beta = Tensor::from({blk.beta.size()}, b);
    }
    Model folded = fold_rho_into_classifier(m);
    const Tensor x = random_matrix(100, 6, 101);
    const Tensor a = m.forward(x, StatsMode::Train, PrecisionMode::f64());
    const Tensor b = folded.forward(x, StatsMode::Train, PrecisionMode::f64());
    for (std::size_t i = 0; i < a.size(); ++i) {
      CHECK(std::fabs(a[i] - b[i]) <= 1e-9 * std::max(1.0, std::fabs(a[i])));
    }
  }

  // non-homogeneous activation is rejected
  {
    ModelSpec spec;
    spec.input_dim = 4;
    spec.classes = 2;
    spec.hidden = {{LayerSpec::Kind::Linear, 5, 3}};
    spec.use_norm = false;
    spec.weight_mode = WeightMode::BWN;
    spec.activation = ActivationKind::Tanh;
    Model m = build_model(spec, 11);
    m.blocks[0].weights.rho = 2.0;
    CHECK_THROWS_AS(fold_rho_into_classifier(m), StateError);
  }
}

TEST_CASE("mean-only composition is invariant to v rescaling") {
  ModelSpec spec;
  spec.input_dim = 6;
  spec.classes = 2;
  spec.hidden = {{LayerSpec::Kind::Linear, 10, 3}};
  spec.use_norm = true;
  spec.norm.mean_only = true;
  spec.weight_mode = WeightMode::BWN;

  Model a = build_model(spec, 31);
  Model b = build_model(spec, 31);
  // rescale the direction parameters; the effective weights only see v/||v||
  for (auto& blk : b.blocks) blk.weights.v = scale(blk.weights.v, 37.5);

  const Tensor x = random_matrix(12, 6, 32);
  const Tensor ya = a.forward(x, StatsMode::Train, PrecisionMode::f64());
  const Tensor yb = b.forward(x, StatsMode::Train, PrecisionMode::f64());
  for (std::size_t i = 0; i < ya.size(); ++i) {
    CHECK(ya[i] == doctest::Approx(yb[i]).epsilon(1e-10));
  }
}
