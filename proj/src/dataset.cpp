#include "normlab/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "normlab/error.hpp"
#include "normlab/rng.hpp"

namespace normlab {

namespace {

int parse_label(const std::string& field, std::size_t line) {
  try {
    std::size_t pos = 0;
    const long v = std::stol(field, &pos);
    if (pos != field.size()) throw ParseError("trailing characters in label", line);
    if (v < 0) throw ValueError("label out of range: " + std::to_string(v));
    return static_cast<int>(v);
  } catch (const std::invalid_argument&) {
    throw ParseError("bad label field '" + field + "'", line);
  } catch (const std::out_of_range&) {
    throw ParseError("label field out of range", line);
  }
}

}  // namespace

Dataset load_csv_dataset(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw IoError("cannot open: " + path);

  std::vector<double> values;
  std::vector<int> labels;
  std::size_t features = 0;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(f, line)) {
    ++lineno;
    if (line.empty()) continue;
    std::stringstream ss(line);
    std::string field;
    std::size_t col = 0;
    std::size_t row_features = 0;
    while (std::getline(ss, field, ',')) {
      if (col == 0) {
        labels.push_back(parse_label(field, lineno));
      } else {
        try {
          std::size_t pos = 0;
          values.push_back(std::stod(field, &pos));
          if (pos != field.size()) throw ParseError("trailing characters in field", lineno);
        } catch (const std::invalid_argument&) {
          throw ParseError("bad numeric field '" + field + "'", lineno);
        }
        ++row_features;
      }
      ++col;
    }
    if (features == 0) {
      features = row_features;
      if (features == 0) throw ParseError("row has no feature columns", lineno);
    } else if (row_features != features) {
      throw ParseError("inconsistent column count", lineno);
    }
  }
  if (labels.empty()) throw ParseError("empty dataset", 0);

  Dataset ds;
  ds.x = Tensor::from({labels.size(), features}, std::move(values));
  ds.y = std::move(labels);
  ds.classes = static_cast<std::size_t>(*std::max_element(ds.y.begin(), ds.y.end())) + 1;
  return ds;
}

void save_csv_dataset(const Dataset& ds, const std::string& path) {
  std::ofstream f(path);
  if (!f) throw IoError("cannot open for writing: " + path);
  const std::size_t n = ds.size(), d = ds.features();
  char buf[64];
  for (std::size_t i = 0; i < n; ++i) {
    f << ds.y[i];
    for (std::size_t j = 0; j < d; ++j) {
      std::snprintf(buf, sizeof buf, "%.17g", ds.x[i * d + j]);
      f << ',' << buf;
    }
    f << '\n';
  }
  if (!f) throw IoError("write failed: " + path);
}

namespace {

constexpr std::uint32_t kIdxImagesMagic = 0x00000803;
constexpr std::uint32_t kIdxLabelsMagic = 0x00000801;

std::string read_file(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot open: " + path);
  return std::string((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
}

std::uint32_t get_u32_be(const std::string& buf, std::size_t off) {
  if (off + 4 > buf.size()) throw ParseError("truncated file", off);
  std::uint32_t v = 0;
  for (int i = 0; i < 4; ++i) {
    v = (v << 8) | static_cast<unsigned char>(buf[off + static_cast<std::size_t>(i)]);
  }
  return v;
}

void put_u32_be(std::string& buf, std::uint32_t v) {
  for (int i = 3; i >= 0; --i) buf.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

}  // namespace

Dataset load_idx_dataset(const std::string& images_path, const std::string& labels_path) {
  const std::string img = read_file(images_path);
  if (get_u32_be(img, 0) != kIdxImagesMagic) throw ParseError("bad image magic", 0);
  const std::size_t count = get_u32_be(img, 4);
  const std::size_t rows = get_u32_be(img, 8);
  const std::size_t cols = get_u32_be(img, 12);
  const std::size_t pixels = rows * cols;
  if (img.size() != 16 + count * pixels) throw ParseError("image payload size mismatch", 16);

  const std::string lab = read_file(labels_path);
  if (get_u32_be(lab, 0) != kIdxLabelsMagic) throw ParseError("bad label magic", 0);
  const std::size_t lcount = get_u32_be(lab, 4);
  if (lcount != count) throw ParseError("label count differs from image count", 4);
  if (lab.size() != 8 + count) throw ParseError("label payload size mismatch", 8);

  std::vector<double> values(count * pixels);
  for (std::size_t i = 0; i < count * pixels; ++i) {
    values[i] = static_cast<double>(static_cast<unsigned char>(img[16 + i])) / 255.0;
  }
  std::vector<int> labels(count);
  int max_label = 0;
  for (std::size_t i = 0; i < count; ++i) {
    labels[i] = static_cast<unsigned char>(lab[8 + i]);
    max_label = std::max(max_label, labels[i]);
  }

  Dataset ds;
  ds.x = Tensor::from({count, pixels}, std::move(values));
  ds.y = std::move(labels);
  ds.classes = static_cast<std::size_t>(max_label) + 1;
  return ds;
}

void save_idx_dataset(const Dataset& ds, std::size_t rows, std::size_t cols,
                      const std::string& images_path, const std::string& labels_path) {
  const std::size_t n = ds.size();
  if (ds.features() != rows * cols) throw ShapeError("feature count must equal rows*cols");

  std::string img;
  put_u32_be(img, kIdxImagesMagic);
  put_u32_be(img, static_cast<std::uint32_t>(n));
  put_u32_be(img, static_cast<std::uint32_t>(rows));
  put_u32_be(img, static_cast<std::uint32_t>(cols));
  for (std::size_t i = 0; i < n * rows * cols; ++i) {
    const double v = std::round(ds.x[i] * 255.0);
    img.push_back(static_cast<char>(static_cast<unsigned char>(
        std::min(255.0, std::max(0.0, v)))));
  }
  std::ofstream fi(images_path, std::ios::binary);
  if (!fi) throw IoError("cannot open for writing: " + images_path);
  fi.write(img.data(), static_cast<std::streamsize>(img.size()));

  std::string lab;
  put_u32_be(lab, kIdxLabelsMagic);
  put_u32_be(lab, static_cast<std::uint32_t>(n));
  for (std::size_t i = 0; i < n; ++i) lab.push_back(static_cast<char>(ds.y[i]));
  std::ofstream fl(labels_path, std::ios::binary);
  if (!fl) throw IoError("cannot open for writing: " + labels_path);
  fl.write(lab.data(), static_cast<std::streamsize>(lab.size()));
}

Dataset make_synthetic(std::size_t samples, std::size_t dim, std::uint64_t seed,
                       double input_scale) {
  if (dim < 2) throw ValueError("synthetic dataset needs at least 2 dimensions");
  Rng rng(seed);

  // Two orthonormal cluster directions via Gram-Schmidt on random Gaussians.
  std::vector<double> u(dim), v(dim);
  for (auto& e : u) e = rng.normal();
  for (auto& e : v) e = rng.normal();
  double nu = 0.0;
  for (double e : u) nu += e * e;
  nu = std::sqrt(nu);
  for (auto& e : u) e /= nu;
  double dot = 0.0;
  for (std::size_t i = 0; i < dim; ++i) dot += u[i] * v[i];
  for (std::size_t i = 0; i < dim; ++i) v[i] -= dot * u[i];
  double nv = 0.0;
  for (double e : v) nv += e * e;
  nv = std::sqrt(nv);
  for (auto& e : v) e /= nv;

  const double radius = 3.0;
  std::vector<double> values(samples * dim);
  std::vector<int> labels(samples);
  for (std::size_t i = 0; i < samples; ++i) {
    const int label = static_cast<int>(i % 2);
    const double side = (i / 2) % 2 == 0 ? 1.0 : -1.0;
    const std::vector<double>& axis = label == 0 ? u : v;
    for (std::size_t j = 0; j < dim; ++j) {
      values[i * dim + j] = input_scale * (side * radius * axis[j] + rng.normal());
    }
    labels[i] = label;
  }

  Dataset ds;
  ds.x = Tensor::from({samples, dim}, std::move(values));
  ds.y = std::move(labels);
  ds.classes = 2;
  return ds;
}

std::pair<Dataset, Dataset> split_dataset(const Dataset& ds, double train_fraction,
                                          std::uint64_t seed) {
  if (train_fraction < 0.0 || train_fraction > 1.0) {
    throw ValueError("train fraction must lie in [0, 1]");
  }
  const std::size_t n = ds.size(), d = ds.features();
  std::vector<std::size_t> order(n);
  for (std::size_t i = 0; i < n; ++i) order[i] = i;
  Rng rng(seed);
  for (std::size_t i = n; i > 1; --i) {
    std::swap(order[i - 1], order[rng.below(i)]);
  }

  const auto train_count =
      static_cast<std::size_t>(std::llround(train_fraction * static_cast<double>(n)));

  auto take = [&](std::size_t begin, std::size_t end) {
    Dataset out;
    std::vector<double> values((end - begin) * d);
    out.y.resize(end - begin);
    for (std::size_t i = begin; i < end; ++i) {
      const std::size_t src = order[i];
      for (std::size_t j = 0; j < d; ++j) values[(i - begin) * d + j] = ds.x[src * d + j];
      out.y[i - begin] = ds.y[src];
    }
    out.x = Tensor::from({end - begin, d}, std::move(values), ds.x.mode());
    out.classes = ds.classes;
    return out;
  };
  return {take(0, train_count), take(train_count, n)};
}

}  // namespace normlab
