#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <string>

#include "requant/errors.hpp"
#include "requant/tensor.hpp"

namespace requant {

enum class Scheme { Asymmetric, Symmetric, SymmetricPow2Range };

inline const char* scheme_name(Scheme s) {
  switch (s) {
    case Scheme::Asymmetric: return "asymmetric";
    case Scheme::Symmetric: return "symmetric";
    case Scheme::SymmetricPow2Range: return "symmetric-pow2-range";
  }
  return "?";
}

inline Scheme scheme_from_name(const std::string& s) {
  if (s == "asymmetric") return Scheme::Asymmetric;
  if (s == "symmetric") return Scheme::Symmetric;
  if (s == "symmetric-pow2-range") return Scheme::SymmetricPow2Range;
  throw ParseError("unknown scheme: " + s);
}

// Toolkit-wide rounding rule: half away from zero.
inline double round_half_away(double v) { return std::round(v); }

// Exact power-of-two test via exponent extraction (no floating log).
inline bool is_exact_pow2(double v) {
  if (!(v > 0.0) || !std::isfinite(v)) return false;
  int exp = 0;
  return std::frexp(v, &exp) == 0.5;
}

// Per-tensor affine quantization parameters: real = scale * (q - zero_point).
struct QuantParams {
  double scale = 1.0;
  int32_t zero_point = 0;
  int bits = 8;
  bool is_signed = false;
  Scheme scheme = Scheme::Asymmetric;
  double range_min = 0.0;
  double range_max = 0.0;

  int32_t qmin() const {
    if (bits == 32) return INT32_MIN;
    if (!is_signed) return 0;
    // symmetric schemes use the balanced grid [-(2^(b-1)-1), 2^(b-1)-1]
    return scheme == Scheme::Asymmetric ? -(1 << (bits - 1)) : -qmax();
  }
  int32_t qmax() const {
    if (bits == 32) return INT32_MAX;
    return is_signed ? (1 << (bits - 1)) - 1 : (1 << bits) - 1;
  }

  DType storage_dtype() const {
    if (bits == 32) return DType::i32;
    return is_signed ? DType::i8 : DType::u8;
  }

  bool operator==(const QuantParams& o) const = default;
};

inline QuantParams derive_quant_params(double range_min, double range_max, int bits,
                                       bool is_signed, Scheme scheme) {
  if (bits != 8) throw UnsupportedBits("derive_quant_params supports 8-bit only");
  if (!(range_min < range_max)) throw InvalidRange("range_min must be < range_max");
  if (range_min > 0.0 || range_max < 0.0)
    throw InvalidRange("zero must lie within [range_min, range_max]");

  QuantParams qp;
  qp.bits = bits;
  qp.is_signed = is_signed;
  qp.scheme = scheme;

  if (scheme == Scheme::Asymmetric) {
    qp.range_min = range_min;
    qp.range_max = range_max;
    qp.scale = (range_max - range_min) / ((1 << bits) - 1);
    const double z = round_half_away(-range_min / qp.scale);
    qp.zero_point = static_cast<int32_t>(
        std::clamp(z, static_cast<double>(qp.qmin()), static_cast<double>(qp.qmax())));
  } else {
    if (!is_signed) throw InvalidRange("symmetric schemes require a signed grid");
    if (range_min != -range_max) throw InvalidRange("symmetric range must satisfy min = -max");
    if (scheme == Scheme::SymmetricPow2Range && !is_exact_pow2(range_max))
      throw InvalidRange("pow2-range scheme requires a power-of-two range_max");
    qp.range_min = range_min;
    qp.range_max = range_max;
    qp.scale = range_max / 127.0;
    qp.zero_point = 0;
  }
  if (!(qp.scale > 0.0)) throw InvalidRange("derived scale is not positive");
  return qp;
}

inline int32_t quantize_value(double v, const QuantParams& qp) {
  const double q = round_half_away(v / qp.scale) + qp.zero_point;
  return static_cast<int32_t>(
      std::clamp(q, static_cast<double>(qp.qmin()), static_cast<double>(qp.qmax())));
}

inline double dequantize_value(int32_t q, const QuantParams& qp) {
  return qp.scale * (q - qp.zero_point);
}

inline TensorBuffer quantize_tensor(const TensorBuffer& t, const QuantParams& qp) {
  if (!t.is_float()) throw ShapeMismatch("quantize_tensor expects an f32 tensor");
  std::vector<int32_t> out(t.floats().size());
  for (size_t i = 0; i < out.size(); ++i)
    out[i] = quantize_value(t.floats()[i], qp);
  return TensorBuffer::from_ints(t.shape(), qp.storage_dtype(), std::move(out));
}

inline TensorBuffer dequantize_tensor(const TensorBuffer& q, const QuantParams& qp) {
  if (q.is_float()) throw ShapeMismatch("dequantize_tensor expects an integer tensor");
  std::vector<float> out(q.ints().size());
  for (size_t i = 0; i < out.size(); ++i)
    out[i] = static_cast<float>(dequantize_value(q.ints()[i], qp));
  return TensorBuffer::from_floats(q.shape(), std::move(out));
}

// Bias is quantized at scale S_w * S_i with a 32-bit grid and zero_point 0.
inline TensorBuffer quantize_bias(const TensorBuffer& bias_float, double s_w, double s_i) {
  const double scale = s_w * s_i;
  std::vector<int32_t> out(bias_float.floats().size());
  for (size_t i = 0; i < out.size(); ++i) {
    const double q = round_half_away(bias_float.floats()[i] / scale);
    out[i] = static_cast<int32_t>(std::clamp(q, static_cast<double>(INT32_MIN),
                                             static_cast<double>(INT32_MAX)));
  }
  return TensorBuffer::from_ints(bias_float.shape(), DType::i32, std::move(out));
}

}  // namespace requant
