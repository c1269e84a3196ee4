#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <utility>

#include "requant/errors.hpp"
#include "requant/quant.hpp"

namespace requant {

// Decompose m = p * 2^(-q) with p in (0.5, 1]. Ties at exact powers of two
// resolve to p = 1 by the half-open interval.
inline std::pair<double, int> decompose_pow2(double m) {
  if (!(m > 0.0) || !std::isfinite(m)) throw DegenerateScale("decompose_pow2: m must be positive");
  int exp = 0;
  double frac = std::frexp(m, &exp);  // m = frac * 2^exp, frac in [0.5, 1)
  if (frac == 0.5) {
    return {1.0, 1 - exp};
  }
  return {frac, -exp};
}

// Rounding right shift with round-half-away-from-zero, computed on the
// magnitude so negative values mirror positive ones.
inline int64_t rounding_right_shift(int64_t x, int shift) {
  if (shift <= 0) {
    const unsigned left = static_cast<unsigned>(-shift);
    if (x == 0) return 0;
    if (left >= 62 || (x > 0 ? x > (INT64_MAX >> left) : -x > (INT64_MAX >> left)))
      return x > 0 ? INT64_MAX : INT64_MIN;  // saturates at the output clamp anyway
    return x << left;
  }
  if (shift >= 63) return 0;  // |x| < 2^62 always here
  const uint64_t mag = static_cast<uint64_t>(x < 0 ? -x : x);
  const uint64_t bias = uint64_t{1} << (shift - 1);
  const int64_t shifted = static_cast<int64_t>((mag + bias) >> shift);
  return x < 0 ? -shifted : shifted;
}

// Runtime rescale factor M = S_w*S_i/S_o, either an exact power of two
// (bit-shift path) or a normalized 31-bit mantissa with shift.
struct Multiplier {
  double value = 1.0;
  int32_t mantissa = 0;  // in [2^30, 2^31) when !is_pow2
  int shift = 0;         // right-shift count Q; value = 2^-Q when is_pow2
  bool is_pow2 = false;

  static Multiplier from_value(double m) {
    if (!(m > 0.0) || !std::isfinite(m))
      throw DegenerateScale("multiplier must be positive and finite");
    Multiplier out;
    out.value = m;
    auto [p, q] = decompose_pow2(m);
    if (p == 1.0) {
      out.is_pow2 = true;
      out.shift = q;
      out.mantissa = 0;
      return out;
    }
    // value = (m0 / 2^31) * 2^(1 - shift). A mantissa that quantizes to a
    // power of two degenerates to a pure shift, so classify it as pow2 and
    // snap the value; this absorbs sub-2^-31 float rounding left by REF.
    int64_t m0 = static_cast<int64_t>(round_half_away(p * (int64_t{1} << 31)));
    if (m0 == (int64_t{1} << 31)) {  // p rounded up to 1.0
      out.is_pow2 = true;
      out.shift = q;
      out.mantissa = 0;
      out.value = std::ldexp(1.0, -q);
      return out;
    }
    if (m0 == (int64_t{1} << 30)) {  // p rounded down to 0.5
      out.is_pow2 = true;
      out.shift = q + 1;
      out.mantissa = 0;
      out.value = std::ldexp(1.0, -(q + 1));
      return out;
    }
    out.is_pow2 = false;
    out.mantissa = static_cast<int32_t>(m0);
    out.shift = q + 1;
    return out;
  }

  // round(value * acc) in exact integer arithmetic.
  int64_t apply(int32_t acc) const {
    if (is_pow2) return rounding_right_shift(acc, shift);
    const int64_t prod = static_cast<int64_t>(acc) * mantissa;
    return rounding_right_shift(prod, 30 + shift);
  }

  // Same product through the generic mantissa path even when is_pow2; used to
  // check shift/multiplier equivalence.
  int64_t apply_generic(int32_t acc) const {
    int32_t m0 = mantissa;
    int q = shift;
    if (is_pow2) {
      m0 = int32_t{1} << 30;  // mantissa of 0.5: (2^30/2^31)*2^(1-shift) = 2^-shift
      q = shift;
    }
    const int64_t prod = static_cast<int64_t>(acc) * m0;
    return rounding_right_shift(prod, 30 + q);
  }
};

inline Multiplier compute_multiplier(double s_w, double s_i, double s_o) {
  for (double s : {s_w, s_i, s_o})
    if (!(s > 0.0) || !std::isfinite(s))
      throw DegenerateScale("compute_multiplier: scales must be positive and finite");
  return Multiplier::from_value(s_w * s_i / s_o);
}

inline int32_t requantize_accumulator(int32_t acc, const Multiplier& m, int32_t z_o,
                                      int32_t out_min, int32_t out_max) {
  const int64_t scaled = m.apply(acc);
  const int64_t q = static_cast<int64_t>(z_o) + scaled;
  return static_cast<int32_t>(std::clamp<int64_t>(q, out_min, out_max));
}

}  // namespace requant
