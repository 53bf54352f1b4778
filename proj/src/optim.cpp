#include "normlab/optim.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <memory>
#include <set>
#include <utility>

#include "normlab/error.hpp"
#include "normlab/norm.hpp"
#include "normlab/rng.hpp"

namespace normlab {

void validate(const OptimizerConfig& cfg) {
  if (cfg.eta <= 0.0) throw ValueError("learning rate must be positive");
  if (cfg.weight_decay < 0.0) throw ValueError("weight decay must be non-negative");
  std::size_t prev = 0;
  bool first = true;
  for (const auto& ev : cfg.schedule) {
    if (ev.multiplier <= 0.0) throw ValueError("schedule multipliers must be positive");
    if (!first && ev.step <= prev) {
      throw ValueError("schedule events must have strictly increasing steps");
    }
    prev = ev.step;
    first = false;
  }
}

double lr_at(const OptimizerConfig& cfg, std::size_t step) {
  double eta = cfg.eta;
  for (const auto& ev : cfg.schedule) {
    if (ev.step <= step) eta *= ev.multiplier;
  }
  return eta;
}

Tensor sgd_step(const Tensor& w, const Tensor& grad, double eta, double lambda) {
  if (!w.same_shape(grad)) throw ShapeError("sgd_step: gradient shape must match weights");
  if (eta <= 0.0) throw ValueError("sgd_step: eta must be positive");
  Tensor out(w.shape(), w.mode());
  for (std::size_t i = 0; i < w.size(); ++i) {
    out.set(i, w[i] - eta * (grad[i] + lambda * w[i]));
  }
  return out;
}

double effective_step(double eta, const Tensor& w) {
  const double norm = l2_norm(w);
  if (norm == 0.0) throw ValueError("effective_step: zero-norm weight");
  return eta / (norm * norm);
}

double lr_correction(double eta, const Tensor& w, double w_ref_norm) {
  if (w_ref_norm <= 0.0) throw ValueError("lr_correction: reference norm must be positive");
  const double norm = l2_norm(w);
  return eta * (norm * norm) / (w_ref_norm * w_ref_norm);
}

NormScheduleResult norm_schedule_step(const Tensor& w, double target_norm,
                                      bool decay_event) {
  if (target_norm <= 0.0) throw ValueError("norm_schedule_step: target must be positive");
  double target = target_norm;
  if (decay_event) target *= std::sqrt(10.0);

  NormScheduleResult out;
  out.target = target;
  if (w.rank() == 1) {
    const double norm = l2_norm(w);
    if (norm == 0.0) throw ValueError("norm_schedule_step: zero-norm weight");
    Tensor r(w.shape(), w.mode());
    for (std::size_t i = 0; i < w.size(); ++i) r.set(i, w[i] * (target / norm));
    out.w = r;
    return out;
  }
  if (w.rank() != 2) throw ShapeError("norm_schedule_step expects rank 1 or 2");

  const std::size_t channels = w.shape()[0], fan = w.shape()[1];
  Tensor r(w.shape(), w.mode());
  for (std::size_t i = 0; i < channels; ++i) {
    double norm = 0.0;
    for (std::size_t j = 0; j < fan; ++j) norm += w[i * fan + j] * w[i * fan + j];
    norm = std::sqrt(norm);
    if (norm == 0.0) {
      throw ValueError("norm_schedule_step: zero-norm channel " + std::to_string(i));
    }
    const double s = target / norm;
    for (std::size_t j = 0; j < fan; ++j) r.set(i * fan + j, w[i * fan + j] * s);
  }
  out.w = r;
  return out;
}

// --- trajectory ---------------------------------------------------------------------

void Trajectory::add(std::size_t step, std::size_t layer, std::size_t channel,
                     double norm) {
  if (norm <= 0.0) throw ValueError("trajectory norms must be positive");
  records_[{step, layer, channel}] = norm;
}

double Trajectory::lookup(std::size_t step, std::size_t layer, std::size_t channel) const {
  const auto it = records_.find({step, layer, channel});
  if (it == records_.end()) {
    throw StateError("missing trajectory record for step " + std::to_string(step) +
                     ", layer " + std::to_string(layer) + ", channel " +
                     std::to_string(channel));
  }
  return it->second;
}

std::vector<TrajectoryRecord> Trajectory::records() const {
  std::vector<TrajectoryRecord> out;
  out.reserve(records_.size());
  for (const auto& [key, norm] : records_) {
    out.push_back({std::get<0>(key), std::get<1>(key), std::get<2>(key), norm});
  }
  return out;
}

void Trajectory::save_csv(const std::string& path) const {
  std::ofstream f(path);
  if (!f) throw IoError("cannot open for writing: " + path);
  f << "step,layer,channel,norm\n";
  char buf[64];
  for (const auto& [key, norm] : records_) {
    std::snprintf(buf, sizeof buf, "%.12f", norm);
    f << std::get<0>(key) << ',' << std::get<1>(key) << ',' << std::get<2>(key) << ','
      << buf << '\n';
  }
  if (!f) throw IoError("write failed: " + path);
}

Trajectory Trajectory::load_csv(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw IoError("cannot open: " + path);
  std::string line;
  if (!std::getline(f, line)) throw ParseError("empty trajectory file", 0);
  if (line != "step,layer,channel,norm") {
    throw ParseError("bad trajectory header: " + line, 0);
  }
  Trajectory traj;
  std::size_t lineno = 1;
  while (std::getline(f, line)) {
    ++lineno;
    if (line.empty()) continue;
    std::size_t step = 0, layer = 0, channel = 0;
    double norm = 0.0;
    if (std::sscanf(line.c_str(), "%zu,%zu,%zu,%lf", &step, &layer, &channel, &norm) != 4) {
      throw ParseError("bad trajectory row: " + line, lineno);
    }
    traj.add(step, layer, channel, norm);
  }
  return traj;
}

GrowthReport analyze_norm_growth(const Trajectory& traj) {
  GrowthReport report;
  const auto recs = traj.records();
  if (recs.empty()) return report;

  std::set<std::size_t> steps;
  for (const auto& r : recs) steps.insert(r.step);
  const std::size_t first_step = *steps.begin();
  const std::size_t last_step = *steps.rbegin();

  // Trailing window: last quarter of the logged steps, at least 10 of them.
  std::vector<std::size_t> ordered(steps.begin(), steps.end());
  const std::size_t window = std::max<std::size_t>(10, ordered.size() / 4);
  const std::size_t window_start =
      ordered.size() > window ? ordered[ordered.size() - window] : ordered.front();

  std::map<std::pair<std::size_t, std::size_t>, std::pair<double, double>> first_last;
  std::map<std::pair<std::size_t, std::size_t>, std::pair<double, double>> window_range;
  for (const auto& r : recs) {
    const std::pair<std::size_t, std::size_t> ch{r.layer, r.channel};
    if (r.step == first_step) first_last[ch].first = r.norm;
    if (r.step == last_step) first_last[ch].second = r.norm;
    if (r.step >= window_start) {
      auto it = window_range.find(ch);
      if (it == window_range.end()) {
        window_range[ch] = {r.norm, r.norm};
      } else {
        it->second.first = std::min(it->second.first, r.norm);
        it->second.second = std::max(it->second.second, r.norm);
      }
    }
  }

  std::size_t grown = 0;
  for (const auto& [ch, fl] : first_last) {
    if (fl.second > fl.first) ++grown;
  }
  report.fraction_grown =
      first_last.empty() ? 0.0 : static_cast<double>(grown) / first_last.size();
  report.growth_flag = report.fraction_grown >= 0.9;

  double worst = 1.0;
  for (const auto& [ch, mm] : window_range) {
    if (mm.first > 0.0) worst = std::max(worst, mm.second / mm.first);
  }
  report.trailing_max_min_ratio = worst;
  report.bounded_flag = worst < 2.0;
  return report;
}

// --- direction-update claim --------------------------------------------------------

namespace {

Tensor unit_direction(const Tensor& w) {
  const double norm = l2_norm(w);
  if (norm == 0.0) throw ValueError("zero-norm weight");
  return scale(w, 1.0 / norm);
}

double dot_all(const Tensor& a, const Tensor& b) {
  double acc = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) acc += a[i] * b[i];
  return acc;
}

}  // namespace

ClaimReport verify_direction_claim(const Objective& objective, const Tensor& w0,
                                   double eta) {
  if (eta <= 0.0) throw ValueError("eta must be positive");

  // Invariance precheck: L(2w) must equal L(w) to relative 1e-8.
  const double l1 = objective.loss(w0);
  const double l2 = objective.loss(scale(w0, 2.0));
  const double scale_err = std::fabs(l2 - l1) / std::max(std::fabs(l1), 1e-12);
  if (scale_err > 1e-8) {
    throw StateError("objective is not scale invariant: relative loss change " +
                     std::to_string(scale_err));
  }

  ClaimReport report;
  report.eta = eta;

  // Gradient scaling: grad at 2w should be half the grad at w.
  {
    const Tensor g1 = objective.gradient(w0);
    const Tensor g2 = objective.gradient(scale(w0, 2.0));
    const Tensor half_g1 = scale(g1, 0.5);
    const Tensor diff = sub(g2, half_g1);
    report.grad_scaling_rel_err = l2_norm(diff) / std::max(l2_norm(half_g1), 1e-300);
  }

  const Tensor w_hat = unit_direction(w0);
  const double rho2 = l2_norm(w0) * l2_norm(w0);
  const Tensor grad_at_hat = objective.gradient(w_hat);

  const auto residual_for = [&](double step_size) {
    const Tensor g = objective.gradient(w0);
    const Tensor w_next = sgd_step(w0, g, step_size, 0.0);
    const Tensor actual = unit_direction(w_next);

    // claimed: w_hat - (eta / rho^2) (I - w_hat w_hat^T) grad L(w_hat)
    const double radial = dot_all(w_hat, grad_at_hat);
    const Tensor projected = sub(grad_at_hat, scale(w_hat, radial));
    const Tensor update = scale(projected, step_size / rho2);
    const Tensor claimed = sub(w_hat, update);
    return std::pair<double, Tensor>(l2_norm(sub(actual, claimed)), update);
  };

  const auto [res_full, update_full] = residual_for(eta);
  const auto [res_half, update_half] = residual_for(eta / 2.0);
  report.residual = res_full;
  report.residual_half = res_half;
  report.ratio_at_half_eta = res_half > 0.0 ? res_full / res_half : 0.0;
  report.projection_dot =
      std::fabs(dot_all(update_full, w_hat)) / std::max(l2_norm(update_full), 1e-300);
  return report;
}

Objective make_scale_invariant_objective(std::size_t dim, std::size_t batch,
                                         std::uint64_t seed, double epsilon) {
  Rng rng(seed);
  std::vector<double> xs(batch * dim), ts(batch);
  for (auto& v : xs) v = rng.normal();
  for (auto& v : ts) v = rng.normal();

  auto x = std::make_shared<Tensor>(Tensor::from({batch, dim}, xs));
  auto t = std::make_shared<Tensor>(Tensor::from({batch, 1}, ts));

  NormScheme scheme;
  scheme.metric = Metric::L2;
  scheme.axis = 0;
  scheme.affine = false;
  // epsilon = 0 keeps the objective exactly scale invariant; a positive value
  // deliberately breaks the precheck for the error-path tests.
  scheme.epsilon = epsilon > 0.0 ? epsilon : 1e-300;

  const std::size_t n = batch;

  Objective obj;
  obj.loss = [x, t, scheme, n](const Tensor& w) {
    const Tensor a = matmul(*x, reshape(w, {w.size(), 1}));
    NormStats stats = make_norm_stats(1, a.mode());
    auto [y, cache] = norm_forward(a, scheme, Tensor(), Tensor(), StatsMode::Train, stats);
    double acc = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      const double d = y[i] - (*t)[i];
      acc += d * d;
    }
    return acc / static_cast<double>(n);
  };
  obj.gradient = [x, t, scheme, n](const Tensor& w) {
    const Tensor a = matmul(*x, reshape(w, {w.size(), 1}));
    NormStats stats = make_norm_stats(1, a.mode());
    auto [y, cache] = norm_forward(a, scheme, Tensor(), Tensor(), StatsMode::Train, stats);
    Tensor grad_y({n, 1}, a.mode());
    for (std::size_t i = 0; i < n; ++i) {
      grad_y.set(i, 2.0 * (y[i] - (*t)[i]) / static_cast<double>(n));
    }
    const NormGrads grads = norm_backward(grad_y, cache, scheme);
    const Tensor grad_a = grads.grad_x;  // [n, 1]
    const Tensor grad_w = matmul(transpose2d(*x), grad_a);  // [dim, 1]
    return reshape(grad_w, {w.size()});
  };
  return obj;
}

}  // namespace normlab
