#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <map>
#include <string>
#include <tuple>
#include <vector>

#include "normlab/tensor.hpp"

namespace normlab {

enum class OptimizerMode { Plain, LrCorrection, NormSchedule };

struct ScheduleEvent {
  std::size_t step = 0;
  double multiplier = 1.0;
};

struct OptimizerConfig {
  double eta = 0.1;
  double weight_decay = 0.0;
  std::vector<ScheduleEvent> schedule;  // strictly increasing steps, multipliers > 0
  OptimizerMode mode = OptimizerMode::Plain;
};

// Validates the config invariants (eta > 0, multipliers > 0, strictly
// increasing event steps) and returns the learning rate effective at `step`
// (the base eta times every multiplier whose event step is <= step).
void validate(const OptimizerConfig& cfg);
double lr_at(const OptimizerConfig& cfg, std::size_t step);

// w' = w - eta * (grad + lambda * w).
Tensor sgd_step(const Tensor& w, const Tensor& grad, double eta, double lambda);

// eta / ||w||_2^2: first-order magnitude of the weight-direction update for a
// layer whose output is invariant to the weight scale.
double effective_step(double eta, const Tensor& w);

// eta * ||w||^2 / ||w_ref||^2: per-channel learning-rate correction that
// replays the effective step size of a reference run whose norms were
// recorded.
double lr_correction(double eta, const Tensor& w, double w_ref_norm);

// Rescale the weights to a target norm without touching their direction: each
// channel (row) of a rank-2 tensor, or the whole vector for rank-1. On a decay
// event the target is first multiplied by sqrt(10), dividing the effective
// step size by exactly 10 while the learning rate stays constant.
struct NormScheduleResult {
  Tensor w;
  double target = 0.0;
};
NormScheduleResult norm_schedule_step(const Tensor& w, double target_norm,
                                      bool decay_event);

// --- trajectory log ------------------------------------------------------------

// Per-step, per-channel weight-norm record from a reference run.
struct TrajectoryRecord {
  std::size_t step = 0;
  std::size_t layer = 0;
  std::size_t channel = 0;
  double norm = 0.0;
};

// Ordered collection of records with CSV persistence. File format: header
// `step,layer,channel,norm`, one row per record, ordered by (step, layer,
// channel).
class Trajectory {
 public:
  void add(std::size_t step, std::size_t layer, std::size_t channel, double norm);
  double lookup(std::size_t step, std::size_t layer, std::size_t channel) const;
  bool empty() const { return records_.empty(); }
  std::size_t size() const { return records_.size(); }

  std::vector<TrajectoryRecord> records() const;

  void save_csv(const std::string& path) const;
  static Trajectory load_csv(const std::string& path);

 private:
  std::map<std::tuple<std::size_t, std::size_t, std::size_t>, double> records_;
};

// Growth analysis over a logged run: fraction of channels whose final norm
// exceeds their initial norm, and the max/min norm ratio over the trailing
// window (last quarter of logged steps, at least 10).
struct GrowthReport {
  double fraction_grown = 0.0;
  bool growth_flag = false;             // final > initial for >= 90% of channels
  double trailing_max_min_ratio = 0.0;  // worst channel
  bool bounded_flag = false;            // trailing ratio < 2 for every channel
};
GrowthReport analyze_norm_growth(const Trajectory& traj);

// --- direction-update claim -----------------------------------------------------

// A differentiable objective with L(alpha * w) = L(w) for alpha > 0.
struct Objective {
  std::function<double(const Tensor&)> loss;
  std::function<Tensor(const Tensor&)> gradient;
};

// Numeric check of the first-order direction update
//   w_hat' = w_hat - eta ||w||^-2 (I - w_hat w_hat^T) grad L(w_hat) + O(eta^2):
// runs one SGD step, compares the actual next direction against the claimed
// one, and reports how the residual shrinks when eta is halved (ratio ~4 for a
// second-order residual). Throws if the objective fails the invariance
// precheck.
struct ClaimReport {
  double eta = 0.0;
  double residual = 0.0;
  double residual_half = 0.0;
  double ratio_at_half_eta = 0.0;
  double grad_scaling_rel_err = 0.0;  // || grad(2w) - grad(w)/2 || / || grad(w)/2 ||
  double projection_dot = 0.0;        // |claimed update . w_hat| / ||claimed update||
};
ClaimReport verify_direction_claim(const Objective& objective, const Tensor& w0,
                                   double eta);

// Builds the standard scale-invariant test objective: a fixed random batch
// through a single linear channel, batch-normalized with epsilon = 0, against
// fixed targets under mean squared error.
Objective make_scale_invariant_objective(std::size_t dim, std::size_t batch,
                                         std::uint64_t seed, double epsilon = 0.0);

}  // namespace normlab
