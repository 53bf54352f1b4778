#include "normlab/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <numeric>

#include "normlab/half.hpp"

namespace normlab {

namespace {

std::size_t shape_size(const std::vector<std::size_t>& shape) {
  std::size_t n = 1;
  for (std::size_t d : shape) n *= d;
  return n;
}

void check_mode(const PrecisionMode& mode) {
  if (mode.element != Element::Half && mode.accumulator == Accumulator::Wide) {
    throw ValueError("wide accumulator is only defined for Half elements");
  }
}

void check_same_mode(const Tensor& a, const Tensor& b) {
  if (!(a.mode() == b.mode())) {
    throw ValueError("precision mode mismatch between operands");
  }
}

std::string shape_str(const std::vector<std::size_t>& s) {
  std::string out = "[";
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (i) out += ",";
    out += std::to_string(s[i]);
  }
  return out + "]";
}

}  // namespace

std::string to_string(const PrecisionMode& mode) {
  switch (mode.element) {
    case Element::F64:
      return "f64";
    case Element::F32:
      return "f32";
    case Element::Half:
      return mode.accumulator == Accumulator::Wide ? "half_wide" : "half";
  }
  return "?";
}

PrecisionMode precision_from_string(const std::string& name) {
  if (name == "f64") return PrecisionMode::f64();
  if (name == "f32") return PrecisionMode::f32();
  if (name == "half") return PrecisionMode::half();
  if (name == "half_wide") return PrecisionMode::half_wide();
  throw ValueError("unknown precision mode: " + name);
}

double quantize(double v, Element element) {
  switch (element) {
    case Element::F64:
      return v;
    case Element::F32:
      return round_float(v);
    case Element::Half:
      return round_half(v);
  }
  return v;
}

Tensor::Tensor(std::vector<std::size_t> shape, PrecisionMode mode)
    : shape_(std::move(shape)), data_(shape_size(shape_), 0.0), mode_(mode) {
  check_mode(mode_);
}

Tensor Tensor::from(std::vector<std::size_t> shape, std::vector<double> values,
                    PrecisionMode mode) {
  check_mode(mode);
  if (shape_size(shape) != values.size()) {
    throw ShapeError("value count " + std::to_string(values.size()) +
                     " does not match shape " + shape_str(shape));
  }
  Tensor t;
  t.shape_ = std::move(shape);
  t.mode_ = mode;
  t.data_ = std::move(values);
  for (double& v : t.data_) {
    if (std::isnan(v)) throw ValueError("NaN is not permitted as tensor input");
    v = quantize(v, mode.element);
  }
  return t;
}

Tensor Tensor::full(std::vector<std::size_t> shape, double value, PrecisionMode mode) {
  const std::size_t count = shape_size(shape);
  return from(std::move(shape), std::vector<double>(count, value), mode);
}

Tensor Tensor::zeros(std::vector<std::size_t> shape, PrecisionMode mode) {
  return Tensor(std::move(shape), mode);
}

Tensor Tensor::identity(std::size_t n, PrecisionMode mode) {
  Tensor t({n, n}, mode);
  for (std::size_t i = 0; i < n; ++i) t.set(i * n + i, 1.0);
  return t;
}

double Tensor::at(std::initializer_list<std::size_t> idx) const {
  if (idx.size() != shape_.size()) throw ShapeError("index rank mismatch");
  std::size_t flat = 0;
  std::size_t i = 0;
  for (std::size_t v : idx) {
    if (v >= shape_[i]) throw ShapeError("index out of range");
    flat = flat * shape_[i] + v;
    ++i;
  }
  return data_[flat];
}

void Tensor::set(std::size_t flat, double v) { data_[flat] = quantize(v, mode_.element); }

void Tensor::set(std::initializer_list<std::size_t> idx, double v) {
  if (idx.size() != shape_.size()) throw ShapeError("index rank mismatch");
  std::size_t flat = 0;
  std::size_t i = 0;
  for (std::size_t d : idx) {
    if (d >= shape_[i]) throw ShapeError("index out of range");
    flat = flat * shape_[i] + d;
    ++i;
  }
  set(flat, v);
}

// --- elementwise --------------------------------------------------------------

// Direct store for op kernels; the value is already on the mode grid (or is an
// intentional NaN/inf operation result).
struct TensorOps {
  static void store(Tensor& t, std::size_t i, double v) { t.data_[i] = v; }
};

namespace {

void out_store(Tensor& t, std::size_t i, double v) { TensorOps::store(t, i, v); }

template <typename F>
Tensor unary_op(const Tensor& t, F f) {
  Tensor out(t.shape(), t.mode());
  const Element e = t.mode().element;
  for (std::size_t i = 0; i < t.size(); ++i) {
    out_store(out, i, quantize(f(t[i]), e));
  }
  return out;
}

std::vector<std::size_t> broadcast_shape(const Tensor& a, const Tensor& b) {
  if (a.rank() != b.rank()) {
    throw ShapeError("broadcast requires equal ranks: " + shape_str(a.shape()) +
                     " vs " + shape_str(b.shape()));
  }
  std::vector<std::size_t> out(a.rank());
  for (std::size_t i = 0; i < a.rank(); ++i) {
    const std::size_t da = a.shape()[i], db = b.shape()[i];
    if (da == db) {
      out[i] = da;
    } else if (da == 1 || db == 1) {
      out[i] = std::max(da, db);
    } else {
      throw ShapeError("shape mismatch: " + shape_str(a.shape()) + " vs " +
                       shape_str(b.shape()));
    }
  }
  return out;
}

std::vector<std::size_t> strides_for(const std::vector<std::size_t>& shape) {
  std::vector<std::size_t> s(shape.size(), 1);
  for (std::size_t i = shape.size(); i-- > 1;) s[i - 1] = s[i] * shape[i];
  return s;
}

template <typename F>
Tensor binary_op(const Tensor& a, const Tensor& b, F f) {
  check_same_mode(a, b);
  const auto out_shape = broadcast_shape(a, b);
  Tensor out(out_shape, a.mode());
  const Element e = a.mode().element;

  const auto out_strides = strides_for(out_shape);
  auto eff_strides = [&](const Tensor& t) {
    auto s = strides_for(t.shape());
    for (std::size_t i = 0; i < s.size(); ++i) {
      if (t.shape()[i] == 1 && out_shape[i] != 1) s[i] = 0;
    }
    return s;
  };
  const auto sa = eff_strides(a);
  const auto sb = eff_strides(b);

  const std::size_t n = out.size();
  const std::size_t rank = out_shape.size();
  for (std::size_t flat = 0; flat < n; ++flat) {
    std::size_t rem = flat, ia = 0, ib = 0;
    for (std::size_t d = 0; d < rank; ++d) {
      const std::size_t idx = rem / out_strides[d];
      rem %= out_strides[d];
      ia += idx * sa[d];
      ib += idx * sb[d];
    }
    out_store(out, flat, quantize(f(a[ia], b[ib]), e));
  }
  return out;
}

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) {
  return binary_op(a, b, [](double x, double y) { return x + y; });
}
Tensor sub(const Tensor& a, const Tensor& b) {
  return binary_op(a, b, [](double x, double y) { return x - y; });
}
Tensor mul(const Tensor& a, const Tensor& b) {
  return binary_op(a, b, [](double x, double y) { return x * y; });
}
Tensor div(const Tensor& a, const Tensor& b) {
  return binary_op(a, b, [](double x, double y) { return x / y; });
}

Tensor abs(const Tensor& t) {
  return unary_op(t, [](double x) { return std::fabs(x); });
}

Tensor sign(const Tensor& t) {
  return unary_op(t, [](double x) { return x > 0.0 ? 1.0 : (x < 0.0 ? -1.0 : 0.0); });
}

Tensor sqrt(const Tensor& t) {
  return unary_op(t, [](double x) { return std::sqrt(x); });
}

Tensor scale(const Tensor& t, double s) {
  const double sq = quantize(s, t.mode().element);
  return unary_op(t, [sq](double x) { return x * sq; });
}

Tensor add_scalar(const Tensor& t, double s) {
  const double sq = quantize(s, t.mode().element);
  return unary_op(t, [sq](double x) { return x + sq; });
}

Tensor neg(const Tensor& t) {
  return unary_op(t, [](double x) { return -x; });
}

// --- matmul ---------------------------------------------------------------------

Tensor matmul(const Tensor& a, const Tensor& b) {
  check_same_mode(a, b);
  if (a.rank() != 2 || b.rank() != 2) throw ShapeError("matmul expects rank-2 tensors");
  const std::size_t m = a.shape()[0], k = a.shape()[1];
  const std::size_t k2 = b.shape()[0], n = b.shape()[1];
  if (k != k2) {
    throw ShapeError("matmul inner dimensions disagree: " + shape_str(a.shape()) +
                     " * " + shape_str(b.shape()));
  }
  Tensor out({m, n}, a.mode());
  const Element e = a.mode().element;
  const bool wide = a.mode().accumulator == Accumulator::Wide;

  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      if (e == Element::F64) {
        double acc = 0.0;
        for (std::size_t p = 0; p < k; ++p) acc += a[i * k + p] * b[p * n + j];
        out_store(out, i * n + j, acc);
      } else if (e == Element::F32) {
        float acc = 0.0f;
        for (std::size_t p = 0; p < k; ++p) {
          acc += static_cast<float>(a[i * k + p] * b[p * n + j]);
        }
        out_store(out, i * n + j, static_cast<double>(acc));
      } else if (!wide) {  // Half + Same: round every product and every addition
        double acc = 0.0;
        for (std::size_t p = 0; p < k; ++p) {
          const double prod = round_half(a[i * k + p] * b[p * n + j]);
          acc = round_half(acc + prod);
        }
        out_store(out, i * n + j, acc);
      } else {  // Half + Wide: binary16 products, 32-bit accumulation
        float acc = 0.0f;
        for (std::size_t p = 0; p < k; ++p) {
          const double prod = round_half(a[i * k + p] * b[p * n + j]);
          acc += static_cast<float>(prod);
        }
        out_store(out, i * n + j, round_half(static_cast<double>(acc)));
      }
    }
  }
  return out;
}

Tensor transpose2d(const Tensor& t) {
  if (t.rank() != 2) throw ShapeError("transpose2d expects a rank-2 tensor");
  const std::size_t m = t.shape()[0], n = t.shape()[1];
  Tensor out({n, m}, t.mode());
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t j = 0; j < n; ++j) out_store(out, j * m + i, t[i * n + j]);
  }
  return out;
}

// --- reductions --------------------------------------------------------------------

namespace {

struct AxisView {
  std::size_t outer, len, inner;
};

AxisView axis_view(const Tensor& t, std::size_t axis) {
  if (axis >= t.rank()) throw ShapeError("axis out of range");
  AxisView v{1, t.shape()[axis], 1};
  if (v.len == 0) throw ValueError("cannot reduce along an empty axis");
  for (std::size_t i = 0; i < axis; ++i) v.outer *= t.shape()[i];
  for (std::size_t i = axis + 1; i < t.rank(); ++i) v.inner *= t.shape()[i];
  return v;
}

std::vector<std::size_t> reduced_shape(const Tensor& t, std::size_t axis) {
  auto s = t.shape();
  s[axis] = 1;
  return s;
}

// Sequential accumulation of f(t[...]) along the axis, honoring the
// accumulator policy of the mode. `post` divides (for mean) before the final
// rounding in Wide mode.
template <typename Fetch>
Tensor accumulate_axis(const Tensor& t, std::size_t axis, Fetch fetch, double divisor) {
  const AxisView v = axis_view(t, axis);
  Tensor out(reduced_shape(t, axis), t.mode());
  const Element e = t.mode().element;
  const bool wide = t.mode().accumulator == Accumulator::Wide;

  for (std::size_t o = 0; o < v.outer; ++o) {
    for (std::size_t in = 0; in < v.inner; ++in) {
      const std::size_t base = o * v.len * v.inner + in;
      double result;
      if (e == Element::F64) {
        double acc = 0.0;
        for (std::size_t i = 0; i < v.len; ++i) acc += fetch(t[base + i * v.inner]);
        result = divisor == 1.0 ? acc : acc / divisor;
      } else if (e == Element::F32) {
        float acc = 0.0f;
        for (std::size_t i = 0; i < v.len; ++i) {
          acc += static_cast<float>(fetch(t[base + i * v.inner]));
        }
        if (divisor != 1.0) acc /= static_cast<float>(divisor);
        result = static_cast<double>(acc);
      } else if (!wide) {
        double acc = 0.0;
        for (std::size_t i = 0; i < v.len; ++i) {
          acc = round_half(acc + round_half(fetch(t[base + i * v.inner])));
        }
        result = divisor == 1.0 ? acc : round_half(acc / divisor);
      } else {
        float acc = 0.0f;
        for (std::size_t i = 0; i < v.len; ++i) {
          acc += static_cast<float>(round_half(fetch(t[base + i * v.inner])));
        }
        if (divisor != 1.0) acc /= static_cast<float>(divisor);
        result = round_half(static_cast<double>(acc));
      }
      out_store(out, o * v.inner + in, result);
    }
  }
  return out;
}

template <typename Better>
Tensor select_axis(const Tensor& t, std::size_t axis, Better better, bool absolute) {
  const AxisView v = axis_view(t, axis);
  Tensor out(reduced_shape(t, axis), t.mode());
  for (std::size_t o = 0; o < v.outer; ++o) {
    for (std::size_t in = 0; in < v.inner; ++in) {
      const std::size_t base = o * v.len * v.inner + in;
      double best = absolute ? std::fabs(t[base]) : t[base];
      for (std::size_t i = 1; i < v.len; ++i) {
        const double cand = absolute ? std::fabs(t[base + i * v.inner]) : t[base + i * v.inner];
        if (better(cand, best)) best = cand;
      }
      out_store(out, o * v.inner + in, best);
    }
  }
  return out;
}

}  // namespace

Tensor reduce_sum(const Tensor& t, std::size_t axis) {
  return accumulate_axis(t, axis, [](double x) { return x; }, 1.0);
}

Tensor reduce_mean(const Tensor& t, std::size_t axis) {
  const double n = static_cast<double>(t.shape().at(axis));
  return accumulate_axis(t, axis, [](double x) { return x; }, n);
}

Tensor reduce_max_abs(const Tensor& t, std::size_t axis) {
  return select_axis(t, axis, [](double a, double b) { return a > b; }, true);
}

Tensor reduce_min(const Tensor& t, std::size_t axis) {
  return select_axis(t, axis, [](double a, double b) { return a < b; }, false);
}

Tensor reduce_max(const Tensor& t, std::size_t axis) {
  return select_axis(t, axis, [](double a, double b) { return a > b; }, false);
}

std::vector<std::vector<std::size_t>> topk_select(const Tensor& t, std::size_t axis,
                                                  std::size_t k) {
  const AxisView v = axis_view(t, axis);
  if (k < 1 || k > v.len) {
    throw ValueError("k out of range: k=" + std::to_string(k) +
                     ", axis size=" + std::to_string(v.len));
  }
  std::vector<std::vector<std::size_t>> selected;
  selected.reserve(v.outer * v.inner);
  std::vector<std::size_t> order(v.len);
  for (std::size_t o = 0; o < v.outer; ++o) {
    for (std::size_t in = 0; in < v.inner; ++in) {
      const std::size_t base = o * v.len * v.inner + in;
      std::iota(order.begin(), order.end(), std::size_t{0});
      // stable sort by |value| descending: equal magnitudes keep ascending
      // index order, so the lower index wins the tie.
      std::stable_sort(order.begin(), order.end(), [&](std::size_t x, std::size_t y) {
        return std::fabs(t[base + x * v.inner]) > std::fabs(t[base + y * v.inner]);
      });
      std::vector<std::size_t> chosen(order.begin(), order.begin() + k);
      std::sort(chosen.begin(), chosen.end());
      selected.push_back(std::move(chosen));
    }
  }
  return selected;
}

Tensor topk_abs(const Tensor& t, std::size_t axis, std::size_t k) {
  const AxisView v = axis_view(t, axis);
  const auto selected = topk_select(t, axis, k);
  Tensor out(reduced_shape(t, axis), t.mode());
  const Element e = t.mode().element;
  const bool wide = t.mode().accumulator == Accumulator::Wide;
  const double kd = static_cast<double>(k);

  std::size_t slice = 0;
  for (std::size_t o = 0; o < v.outer; ++o) {
    for (std::size_t in = 0; in < v.inner; ++in, ++slice) {
      const std::size_t base = o * v.len * v.inner + in;
      const auto& chosen = selected[slice];
      // Summation runs in ascending index order; with k = len this makes the
      // result identical to reduce_mean(abs(t)).
      double result;
      if (e == Element::F64) {
        double acc = 0.0;
        for (std::size_t i : chosen) acc += std::fabs(t[base + i * v.inner]);
        result = acc / kd;
      } else if (e == Element::F32) {
        float acc = 0.0f;
        for (std::size_t i : chosen) acc += static_cast<float>(std::fabs(t[base + i * v.inner]));
        result = static_cast<double>(acc / static_cast<float>(kd));
      } else if (!wide) {
        double acc = 0.0;
        for (std::size_t i : chosen) acc = round_half(acc + std::fabs(t[base + i * v.inner]));
        result = round_half(acc / kd);
      } else {
        float acc = 0.0f;
        for (std::size_t i : chosen) acc += static_cast<float>(std::fabs(t[base + i * v.inner]));
        result = round_half(static_cast<double>(acc / static_cast<float>(kd)));
      }
      out_store(out, o * v.inner + in, result);
    }
  }
  return out;
}

// --- shape / mode --------------------------------------------------------------------

Tensor reshape(const Tensor& t, std::vector<std::size_t> new_shape) {
  if (shape_size(new_shape) != t.size()) {
    throw ShapeError("reshape size mismatch: " + shape_str(t.shape()) + " -> " +
                     shape_str(new_shape));
  }
  Tensor out(std::move(new_shape), t.mode());
  for (std::size_t i = 0; i < t.size(); ++i) out_store(out, i, t[i]);
  return out;
}

Tensor cast(const Tensor& t, PrecisionMode mode) {
  check_mode(mode);
  Tensor out(t.shape(), mode);
  for (std::size_t i = 0; i < t.size(); ++i) {
    out_store(out, i, quantize(t[i], mode.element));
  }
  return out;
}

double l2_norm(const Tensor& t) {
  double acc = 0.0;
  for (std::size_t i = 0; i < t.size(); ++i) acc += t[i] * t[i];
  return std::sqrt(acc);
}

// --- serialization ---------------------------------------------------------------------

namespace {

void put_u32_le(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

void put_f64_le(std::string& out, double v) {
  std::uint64_t bits;
  std::memcpy(&bits, &v, sizeof bits);
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((bits >> (8 * i)) & 0xff));
}

std::uint32_t get_u32_le(const std::string& buf, std::size_t off) {
  std::uint32_t v = 0;
  for (int i = 0; i < 4; ++i) {
    v |= static_cast<std::uint32_t>(static_cast<unsigned char>(buf[off + i])) << (8 * i);
  }
  return v;
}

double get_f64_le(const std::string& buf, std::size_t off) {
  std::uint64_t bits = 0;
  for (int i = 0; i < 8; ++i) {
    bits |= static_cast<std::uint64_t>(static_cast<unsigned char>(buf[off + i])) << (8 * i);
  }
  double v;
  std::memcpy(&v, &bits, sizeof v);
  return v;
}

constexpr char kMagic[4] = {'N', 'L', 'T', '1'};

}  // namespace

void save_tensor(const Tensor& t, const std::string& path) {
  std::string buf;
  buf.append(kMagic, 4);
  buf.push_back(static_cast<char>(t.mode().element));
  buf.push_back(static_cast<char>(t.rank()));
  for (std::size_t d : t.shape()) put_u32_le(buf, static_cast<std::uint32_t>(d));
  for (std::size_t i = 0; i < t.size(); ++i) put_f64_le(buf, t[i]);

  std::ofstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot open for writing: " + path);
  f.write(buf.data(), static_cast<std::streamsize>(buf.size()));
  if (!f) throw IoError("write failed: " + path);
}

Tensor load_tensor(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot open: " + path);
  std::string buf((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());

  if (buf.size() < 6 || std::memcmp(buf.data(), kMagic, 4) != 0) {
    throw ParseError("bad tensor magic", 0);
  }
  const auto elem_code = static_cast<unsigned char>(buf[4]);
  if (elem_code > 2) throw ParseError("unknown element code", 4);
  const auto rank = static_cast<std::size_t>(static_cast<unsigned char>(buf[5]));
  std::size_t off = 6;
  if (buf.size() < off + 4 * rank) throw ParseError("truncated dim list", off);

  std::vector<std::size_t> shape(rank);
  for (std::size_t i = 0; i < rank; ++i, off += 4) shape[i] = get_u32_le(buf, off);

  const std::size_t count = shape_size(shape);
  if (buf.size() != off + 8 * count) throw ParseError("payload size mismatch", off);

  PrecisionMode mode{static_cast<Element>(elem_code), Accumulator::Same};
  Tensor out(shape, mode);
  for (std::size_t i = 0; i < count; ++i, off += 8) {
    const double v = get_f64_le(buf, off);
    if (std::isnan(v)) throw ParseError("NaN payload value", off);
    if (quantize(v, mode.element) != v) {
      throw ParseError("payload value not representable in element mode", off);
    }
    out_store(out, i, v);
  }
  return out;
}

}  // namespace normlab
