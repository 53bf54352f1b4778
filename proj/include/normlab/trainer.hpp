#pragma once

#include <string>
#include <vector>

#include "normlab/config.hpp"
#include "normlab/dataset.hpp"
#include "normlab/model.hpp"
#include "normlab/optim.hpp"

namespace normlab {

struct EpochLog {
  std::size_t epoch = 0;
  double train_loss = 0.0;
  double val_acc = 0.0;
  double mean_norm = 0.0;  // over normalized-layer channels
  double max_norm = 0.0;
  bool diverged = false;
};

struct RunResult {
  std::vector<EpochLog> epochs;
  double initial_val_acc = 0.0;
  double final_val_acc = 0.0;
  bool diverged = false;
  std::size_t diverged_epoch = 0;
  std::size_t diverged_step = 0;
  Trajectory trajectory;  // pre-update channel norms, every step, hidden layers
};

// Assemble the model spec / optimizer config implied by an experiment config.
ModelSpec model_spec_from_config(const ExperimentConfig& cfg, std::size_t input_dim,
                                 std::size_t classes);
Dataset dataset_from_config(const ExperimentConfig& cfg);

// Minibatch SGD over the configured dataset/model/precision. Deterministic in
// (config, seed): data order, initialization and arithmetic are all seeded.
// A NaN/inf training-loss reading aborts the run and sets the diverged flag.
// `replay` provides the reference norms for the lr_correction / norm_schedule
// optimizer modes (read from cfg.trajectory when null).
RunResult train(const ExperimentConfig& cfg, const Trajectory* replay = nullptr);

// As train(), but exposes the trained model (for invariance checks).
RunResult train_with_model(const ExperimentConfig& cfg, const Trajectory* replay,
                           Model* out_model);

// header `epoch,train_loss,val_acc,mean_norm,max_norm,diverged`; one row per
// completed epoch; fixed 6-decimal formatting so identical runs produce
// byte-identical files.
void emit_csv(const RunResult& result, const std::string& path);

// Validation accuracy of a model over a dataset (eval-mode forward).
double evaluate_accuracy(Model& model, const Dataset& ds, PrecisionMode pm);

}  // namespace normlab
