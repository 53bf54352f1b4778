#pragma once

#include <cstddef>
#include <cstdint>
#include <initializer_list>
#include <string>
#include <vector>

#include "normlab/error.hpp"

namespace normlab {

enum class Element : std::uint8_t { F64 = 0, F32 = 1, Half = 2 };
enum class Accumulator : std::uint8_t { Same = 0, Wide = 1 };

// Element behavior plus accumulator width. Wide means 32-bit accumulation for
// Half elements in reductions and matmul; F64/F32 always accumulate in their
// own width.
struct PrecisionMode {
  Element element = Element::F64;
  Accumulator accumulator = Accumulator::Same;

  bool operator==(const PrecisionMode&) const = default;

  static PrecisionMode f64() { return {Element::F64, Accumulator::Same}; }
  static PrecisionMode f32() { return {Element::F32, Accumulator::Same}; }
  static PrecisionMode half() { return {Element::Half, Accumulator::Same}; }
  static PrecisionMode half_wide() { return {Element::Half, Accumulator::Wide}; }
};

std::string to_string(const PrecisionMode& mode);
PrecisionMode precision_from_string(const std::string& name);

// Round a value into the element grid of the mode.
double quantize(double v, Element element);

// Dense numeric array. Values are stored widened as doubles; the precision
// mode dictates which grid every stored value lies on (binary16 values in Half
// mode, binary32 in F32). Operations are pure and return new tensors; treat a
// constructed tensor as immutable.
class Tensor {
 public:
  Tensor() = default;

  // Zero-filled tensor.
  Tensor(std::vector<std::size_t> shape, PrecisionMode mode);

  // Quantizes the given values into the mode. NaN inputs are rejected; NaN may
  // only ever appear as an operation result.
  static Tensor from(std::vector<std::size_t> shape, std::vector<double> values,
                     PrecisionMode mode = PrecisionMode::f64());
  static Tensor full(std::vector<std::size_t> shape, double value,
                     PrecisionMode mode = PrecisionMode::f64());
  static Tensor zeros(std::vector<std::size_t> shape,
                      PrecisionMode mode = PrecisionMode::f64());
  static Tensor identity(std::size_t n, PrecisionMode mode = PrecisionMode::f64());

  const std::vector<std::size_t>& shape() const { return shape_; }
  std::size_t rank() const { return shape_.size(); }
  std::size_t size() const { return data_.size(); }
  std::size_t dim(std::size_t i) const { return shape_.at(i); }
  PrecisionMode mode() const { return mode_; }

  double operator[](std::size_t flat) const { return data_[flat]; }
  double at(std::initializer_list<std::size_t> idx) const;

  // Stores quantize(v, mode). The only sanctioned mutation path.
  void set(std::size_t flat, double v);
  void set(std::initializer_list<std::size_t> idx, double v);

  const std::vector<double>& data() const { return data_; }

  bool same_shape(const Tensor& other) const { return shape_ == other.shape_; }

 private:
  friend struct TensorOps;  // op kernels store pre-rounded values directly

  std::vector<std::size_t> shape_;
  std::vector<double> data_;
  PrecisionMode mode_;
};

// --- elementwise -----------------------------------------------------------
// Binary ops broadcast size-1 dimensions against equal-rank shapes; both
// operands must share a precision mode. Half mode rounds after every
// elementary scalar operation.
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor div(const Tensor& a, const Tensor& b);  // IEEE semantics; x/0 gives +-inf
Tensor abs(const Tensor& t);
Tensor sign(const Tensor& t);  // sign(0) = 0
Tensor sqrt(const Tensor& t);
Tensor scale(const Tensor& t, double s);
Tensor add_scalar(const Tensor& t, double s);
Tensor neg(const Tensor& t);

// --- linear algebra ---------------------------------------------------------
// Standard [m x k] * [k x n] product. Half+Same rounds every multiply and
// every running addition to binary16; Half+Wide rounds products to binary16
// but accumulates in 32-bit, rounding once at the end.
Tensor matmul(const Tensor& a, const Tensor& b);
Tensor transpose2d(const Tensor& t);

// --- reductions --------------------------------------------------------------
// Reduce along `axis`; the reduced dimension is kept with size 1. Half-mode
// accumulation is sequential in index order so overflow is deterministic.
Tensor reduce_sum(const Tensor& t, std::size_t axis);
Tensor reduce_mean(const Tensor& t, std::size_t axis);
Tensor reduce_max_abs(const Tensor& t, std::size_t axis);
Tensor reduce_min(const Tensor& t, std::size_t axis);
Tensor reduce_max(const Tensor& t, std::size_t axis);

// Mean of the k largest absolute values along `axis` (ties: lower index
// wins). k = size(axis) equals the mean of |t|; k = 1 equals max_abs.
Tensor topk_abs(const Tensor& t, std::size_t axis, std::size_t k);

// Indices (within the axis) of the k largest absolute values for each slice,
// in ascending index order. Shared by topk_abs and the norm-layer backward so
// both use one tie-break rule.
std::vector<std::vector<std::size_t>> topk_select(const Tensor& t, std::size_t axis,
                                                  std::size_t k);

// --- shape / mode -------------------------------------------------------------
Tensor reshape(const Tensor& t, std::vector<std::size_t> new_shape);
Tensor cast(const Tensor& t, PrecisionMode mode);

// --- serialization ------------------------------------------------------------
// Flat little-endian binary: magic "NLT1", element code u8, rank u8, dims as
// u32 list, then one f64 per element. The accumulator setting is a compute
// policy and is not persisted; loaded tensors default to Same.
void save_tensor(const Tensor& t, const std::string& path);
Tensor load_tensor(const std::string& path);

// Frobenius norm over all entries (always evaluated in F64).
double l2_norm(const Tensor& t);

}  // namespace normlab
