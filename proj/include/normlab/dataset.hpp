#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "normlab/tensor.hpp"

namespace normlab {

struct Dataset {
  Tensor x;            // [samples, features], F64
  std::vector<int> y;  // integer class labels
  std::size_t classes = 0;

  std::size_t size() const { return y.size(); }
  std::size_t features() const { return x.rank() == 2 ? x.shape()[1] : 0; }
};

// CSV rows: label in the first column, features after. Labels must be
// non-negative integers; the class count is max(label)+1.
Dataset load_csv_dataset(const std::string& path);
void save_csv_dataset(const Dataset& ds, const std::string& path);

// IDX pair: images file (magic 0x00000803, big-endian dims [count, rows,
// cols], u8 pixels scaled to [0,1]) and labels file (magic 0x00000801).
Dataset load_idx_dataset(const std::string& images_path, const std::string& labels_path);
void save_idx_dataset(const Dataset& ds, std::size_t rows, std::size_t cols,
                      const std::string& images_path, const std::string& labels_path);

// Bundled synthetic two-class task: each class is a pair of opposite Gaussian
// clusters along one of two orthogonal directions (so the classes are not
// linearly separable), unit isotropic noise, features multiplied by
// `input_scale`. Deterministic in the seed.
Dataset make_synthetic(std::size_t samples, std::size_t dim, std::uint64_t seed,
                       double input_scale = 1.0);

// Disjoint, exhaustive split after a seeded shuffle; the first
// round(train_fraction * size) samples form the training set.
std::pair<Dataset, Dataset> split_dataset(const Dataset& ds, double train_fraction,
                                          std::uint64_t seed);

}  // namespace normlab
