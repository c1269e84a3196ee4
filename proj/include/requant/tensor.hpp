#pragma once

#include <cstdint>
#include <numeric>
#include <string>
#include <variant>
#include <vector>

#include "requant/errors.hpp"

namespace requant {

enum class DType { f32, i8, u8, i32 };

inline const char* dtype_name(DType d) {
  switch (d) {
    case DType::f32: return "f32";
    case DType::i8: return "i8";
    case DType::u8: return "u8";
    case DType::i32: return "i32";
  }
  return "?";
}

inline DType dtype_from_name(const std::string& s) {
  if (s == "f32") return DType::f32;
  if (s == "i8") return DType::i8;
  if (s == "u8") return DType::u8;
  if (s == "i32") return DType::i32;
  throw ParseError("unknown dtype: " + s);
}

// Shaped row-major numeric buffer. Activations are NHWC, conv weights OHWI,
// depthwise weights 1HWC (depth multiplier 1).
class TensorBuffer {
 public:
  TensorBuffer() = default;

  TensorBuffer(std::vector<int64_t> shape, DType dtype)
      : shape_(std::move(shape)), dtype_(dtype) {
    const int64_t n = element_count(shape_);
    if (dtype_ == DType::f32) {
      data_ = std::vector<float>(static_cast<size_t>(n), 0.0f);
    } else {
      data_ = std::vector<int32_t>(static_cast<size_t>(n), 0);
    }
  }

  static TensorBuffer from_floats(std::vector<int64_t> shape, std::vector<float> v) {
    TensorBuffer t;
    t.shape_ = std::move(shape);
    t.dtype_ = DType::f32;
    if (static_cast<int64_t>(v.size()) != element_count(t.shape_))
      throw ShapeMismatch("float data length does not match shape");
    t.data_ = std::move(v);
    return t;
  }

  static TensorBuffer from_ints(std::vector<int64_t> shape, DType dtype, std::vector<int32_t> v) {
    if (dtype == DType::f32) throw ShapeMismatch("from_ints requires integer dtype");
    TensorBuffer t;
    t.shape_ = std::move(shape);
    t.dtype_ = dtype;
    if (static_cast<int64_t>(v.size()) != element_count(t.shape_))
      throw ShapeMismatch("int data length does not match shape");
    t.data_ = std::move(v);
    return t;
  }

  const std::vector<int64_t>& shape() const { return shape_; }
  DType dtype() const { return dtype_; }
  int64_t size() const { return element_count(shape_); }

  bool is_float() const { return dtype_ == DType::f32; }

  std::vector<float>& floats() { return std::get<std::vector<float>>(data_); }
  const std::vector<float>& floats() const { return std::get<std::vector<float>>(data_); }
  std::vector<int32_t>& ints() { return std::get<std::vector<int32_t>>(data_); }
  const std::vector<int32_t>& ints() const { return std::get<std::vector<int32_t>>(data_); }

  static int64_t element_count(const std::vector<int64_t>& shape) {
    int64_t n = 1;
    for (int64_t d : shape) {
      if (d <= 0) throw ShapeMismatch("non-positive dimension in shape");
      n *= d;
    }
    return n;
  }

  // dtype value range; meaningless for f32.
  static std::pair<int32_t, int32_t> dtype_range(DType d) {
    switch (d) {
      case DType::i8: return {-128, 127};
      case DType::u8: return {0, 255};
      case DType::i32: return {INT32_MIN, INT32_MAX};
      default: return {0, 0};
    }
  }

  bool values_in_dtype_range() const {
    if (is_float()) return true;
    auto [lo, hi] = dtype_range(dtype_);
    for (int32_t v : ints())
      if (v < lo || v > hi) return false;
    return true;
  }

  bool operator==(const TensorBuffer& o) const = default;

 private:
  std::vector<int64_t> shape_;
  DType dtype_ = DType::f32;
  std::variant<std::vector<float>, std::vector<int32_t>> data_;
};

}  // namespace requant
