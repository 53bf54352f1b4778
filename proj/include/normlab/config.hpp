#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace normlab {

// Flat sectioned key-value experiment configuration. Unknown sections or keys
// are parse errors. The NORMLAB_SEED environment variable overrides the seed.
struct ExperimentConfig {
  // [dataset]
  std::string source = "synthetic";  // synthetic | csv | idx
  std::string path;                  // csv file, or idx images file
  std::string labels_path;           // idx labels file
  double split = 0.5;                // train fraction
  std::size_t samples = 4096;        // synthetic only
  std::size_t features = 32;         // synthetic only
  double input_scale = 1.0;

  // [model]
  std::string arch = "mlp";  // mlp | cnn
  std::vector<std::size_t> hidden = {64, 32};
  std::vector<std::size_t> conv_channels = {16, 32, 32, 64};
  std::size_t image_h = 8, image_w = 8, image_c = 1;
  std::size_t kernel = 3;
  std::string norm = "l2";  // l2 | l1 | linf | topk | mean_only | none
  std::size_t topk_k = 10;
  std::string norm_axis = "batch";  // batch | layer
  double epsilon = 1e-5;
  double momentum = 0.9;
  std::string weight_mode = "plain";  // plain | wn | bwn
  std::string weight_p = "2";         // 1 | 2 | inf
  std::string activation = "ramp";

  // [optimizer]
  double lr = 0.1;
  double weight_decay = 0.0;
  std::size_t lr_decay_every = 10;  // epochs; 0 disables decay
  double lr_decay_factor = 0.1;
  std::string opt_mode = "plain";  // plain | lr_correction | norm_schedule
  std::string trajectory;          // reference norms for the replay modes
  bool wd_last_layer_only = false;

  // [run]
  std::size_t epochs = 20;
  std::size_t batch = 64;
  std::string precision = "f64";  // f64 | f32 | half | half_wide
  std::uint64_t seed = 1;
};

ExperimentConfig parse_config_file(const std::string& path);
ExperimentConfig parse_config_text(const std::string& text);

// Applies the NORMLAB_SEED override if the variable is set.
void apply_env_overrides(ExperimentConfig& cfg);

}  // namespace normlab
