#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "requant/errors.hpp"
#include "requant/graph.hpp"
#include "requant/multiplier.hpp"
#include "requant/quant.hpp"
#include "requant/tensor.hpp"

namespace requant {

// Per-layer outputs keyed by layer id; float path carries f32, integer path
// carries the layer's quantized dtype.
using ActivationTrace = std::map<std::string, TensorBuffer>;

namespace detail {

struct ConvGeometry {
  int64_t out_h = 0, out_w = 0;
  int pad_top = 0, pad_left = 0;
};

inline ConvGeometry conv_geometry(int64_t in_h, int64_t in_w, int64_t k_h, int64_t k_w,
                                  const LayerAttrs& a) {
  ConvGeometry g;
  if (a.padding == Padding::Same) {
    g.out_h = (in_h + a.stride_h - 1) / a.stride_h;
    g.out_w = (in_w + a.stride_w - 1) / a.stride_w;
    const int64_t pad_h = std::max<int64_t>((g.out_h - 1) * a.stride_h + k_h - in_h, 0);
    const int64_t pad_w = std::max<int64_t>((g.out_w - 1) * a.stride_w + k_w - in_w, 0);
    g.pad_top = static_cast<int>(pad_h / 2);
    g.pad_left = static_cast<int>(pad_w / 2);
  } else {
    if (in_h < k_h || in_w < k_w) throw ShapeMismatch("kernel larger than input");
    g.out_h = (in_h - k_h) / a.stride_h + 1;
    g.out_w = (in_w - k_w) / a.stride_w + 1;
  }
  return g;
}

inline void expect_rank(const TensorBuffer& t, size_t rank, const std::string& id) {
  if (t.shape().size() != rank)
    throw ShapeMismatch("layer " + id + ": expected rank " + std::to_string(rank));
}

// Largest |q - z| over the representable range of qp.
inline int64_t max_abs_centered(const QuantParams& qp) {
  return std::max<int64_t>(std::abs(int64_t{qp.qmin()} - qp.zero_point),
                           std::abs(int64_t{qp.qmax()} - qp.zero_point));
}

}  // namespace detail

// Rescale multiplier as the integer runtime executes it. Layers whose output
// lives on a pow2-range grid model shift-only hardware: the multiplier is
// snapped to the nearest power of two (the error REF folds away). All other
// layers use the full mantissa/shift representation.
inline Multiplier runtime_multiplier(double value, const QuantParams& out_qp) {
  if (out_qp.scheme == Scheme::SymmetricPow2Range && value > 0.0)
    return Multiplier::from_value(std::exp2(std::round(std::log2(value))));
  return Multiplier::from_value(value);
}

// Worst-case accumulator bound for a weighted layer; throws if a 32-bit
// accumulator could overflow.
inline void preflight_accumulator(const LayerNode& l, const QuantParams& in_qp) {
  if (!kind_has_weights(l.kind) || !l.weight_qp || !l.weights_float) return;
  const auto& ws = l.weights_float->shape();
  int64_t fan_in = 1;
  if (l.kind == LayerKind::Conv2D) fan_in = ws[1] * ws[2] * ws[3];
  else if (l.kind == LayerKind::DepthwiseConv2D) fan_in = ws[1] * ws[2];
  else fan_in = ws[1];  // FullyConnected
  const int64_t max_w = detail::max_abs_centered(*l.weight_qp);
  const int64_t max_i = detail::max_abs_centered(in_qp);
  int64_t max_b = 0;
  if (l.bias_quant)
    for (int32_t b : l.bias_quant->ints()) max_b = std::max<int64_t>(max_b, std::abs(int64_t{b}));
  if (max_w * max_i * fan_in + max_b > INT32_MAX)
    throw AccumulatorOverflow("layer " + l.id + ": worst-case accumulation exceeds int32");
}

class Interpreter {
 public:
  explicit Interpreter(const ModelGraph& graph) : g_(graph) {}

  ActivationTrace run_float(const TensorBuffer& input) const {
    check_input(input);
    ActivationTrace trace;
    for (const auto& l : g_.layers) {
      const TensorBuffer& in0 = resolve(trace, input, l.input_ids.at(0));
      switch (l.kind) {
        case LayerKind::Conv2D: trace.emplace(l.id, conv_float(l, in0, false)); break;
        case LayerKind::DepthwiseConv2D: trace.emplace(l.id, conv_float(l, in0, true)); break;
        case LayerKind::FullyConnected: trace.emplace(l.id, fc_float(l, in0)); break;
        case LayerKind::Add:
          trace.emplace(l.id, add_float(l, in0, resolve(trace, input, l.input_ids.at(1))));
          break;
        case LayerKind::AvgPool2D: trace.emplace(l.id, pool_float(l, in0)); break;
        case LayerKind::Clamp: trace.emplace(l.id, clamp_float(l, in0)); break;
      }
    }
    return trace;
  }

  ActivationTrace run_quant(const TensorBuffer& input) const {
    check_input(input);
    for (const auto& l : g_.layers)
      preflight_accumulator(l, producer_qp(l.input_ids.at(0)));
    TensorBuffer q_in = quantize_tensor(input, g_.input_qp);
    ActivationTrace trace;
    for (const auto& l : g_.layers) {
      const TensorBuffer& in0 = resolve(trace, q_in, l.input_ids.at(0));
      const QuantParams& in0_qp = producer_qp(l.input_ids.at(0));
      switch (l.kind) {
        case LayerKind::Conv2D:
          trace.emplace(l.id, conv_quant(l, in0, in0_qp, false));
          break;
        case LayerKind::DepthwiseConv2D:
          trace.emplace(l.id, conv_quant(l, in0, in0_qp, true));
          break;
        case LayerKind::FullyConnected: trace.emplace(l.id, fc_quant(l, in0, in0_qp)); break;
        case LayerKind::Add: {
          const TensorBuffer& in1 = resolve(trace, q_in, l.input_ids.at(1));
          trace.emplace(l.id, add_quant(l, in0, in0_qp, in1, producer_qp(l.input_ids.at(1))));
          break;
        }
        case LayerKind::AvgPool2D: trace.emplace(l.id, pool_quant(l, in0, in0_qp)); break;
        case LayerKind::Clamp: trace.emplace(l.id, clamp_quant(l, in0, in0_qp)); break;
      }
    }
    return trace;
  }

  // Final graph output of a trace.
  const TensorBuffer& output(const ActivationTrace& trace) const {
    auto it = trace.find(g_.output_id);
    if (it == trace.end()) throw Error("trace missing graph output " + g_.output_id);
    return it->second;
  }

  // Dequantized copy of an integer trace.
  ActivationTrace dequantize_trace(const ActivationTrace& trace) const {
    ActivationTrace out;
    for (const auto& l : g_.layers)
      out.emplace(l.id, dequantize_tensor(trace.at(l.id), l.output_qp));
    return out;
  }

  // Effective quant params of a layer input (producer output, or graph input).
  const QuantParams& producer_qp(const std::string& id) const {
    if (id == g_.input_id) return g_.input_qp;
    const LayerNode* p = g_.find(id);
    if (!p) throw Error("unresolved tensor id " + id);
    return p->output_qp;
  }

 private:
  const ModelGraph& g_;

  void check_input(const TensorBuffer& input) const {
    if (!input.is_float()) throw ShapeMismatch("graph input must be f32");
    if (input.shape() != g_.input_shape) throw ShapeMismatch("graph input shape mismatch");
  }

  static const TensorBuffer& resolve(const ActivationTrace& trace, const TensorBuffer& input,
                                     const std::string& id) {
    if (auto it = trace.find(id); it != trace.end()) return it->second;
    return input;  // graph input
  }

  TensorBuffer conv_float(const LayerNode& l, const TensorBuffer& in, bool depthwise) const {
    detail::expect_rank(in, 4, l.id);
    const auto& is = in.shape();
    const auto& w = *l.weights_float;
    const auto& ws = w.shape();  // OHWI, or 1HWC for depthwise
    const int64_t kh = ws[1], kw = ws[2];
    const int64_t co = depthwise ? ws[3] : ws[0];
    const int64_t ci = depthwise ? ws[3] : ws[3];
    if (!depthwise && is[3] != ci) throw ShapeMismatch("layer " + l.id + ": channel mismatch");
    if (depthwise && is[3] != co) throw ShapeMismatch("layer " + l.id + ": channel mismatch");
    auto geo = detail::conv_geometry(is[1], is[2], kh, kw, l.attrs);
    TensorBuffer out({is[0], geo.out_h, geo.out_w, co}, DType::f32);
    auto& ov = out.floats();
    const auto& iv = in.floats();
    const auto& wv = w.floats();
    const float* bias = l.bias_float ? l.bias_float->floats().data() : nullptr;
    int64_t idx = 0;
    for (int64_t n = 0; n < is[0]; ++n)
      for (int64_t oh = 0; oh < geo.out_h; ++oh)
        for (int64_t ow = 0; ow < geo.out_w; ++ow)
          for (int64_t o = 0; o < co; ++o, ++idx) {
            double acc = bias ? bias[o] : 0.0;
            for (int64_t y = 0; y < kh; ++y) {
              const int64_t ih = oh * l.attrs.stride_h - geo.pad_top + y;
              if (ih < 0 || ih >= is[1]) continue;
              for (int64_t x = 0; x < kw; ++x) {
                const int64_t iw = ow * l.attrs.stride_w - geo.pad_left + x;
                if (iw < 0 || iw >= is[2]) continue;
                if (depthwise) {
                  acc += wv[(y * kw + x) * co + o] * iv[((n * is[1] + ih) * is[2] + iw) * co + o];
                } else {
                  for (int64_t c = 0; c < ci; ++c)
                    acc += wv[((o * kh + y) * kw + x) * ci + c] *
                           iv[((n * is[1] + ih) * is[2] + iw) * ci + c];
                }
              }
            }
            ov[idx] = static_cast<float>(acc);
          }
    return out;
  }

  TensorBuffer fc_float(const LayerNode& l, const TensorBuffer& in) const {
    const auto& is = in.shape();
    const int64_t n_batch = is[0];
    const int64_t flat = in.size() / n_batch;
    const auto& ws = l.weights_float->shape();  // [O, I]
    if (ws[1] != flat) throw ShapeMismatch("layer " + l.id + ": fc input size mismatch");
    const int64_t co = ws[0];
    TensorBuffer out({n_batch, co}, DType::f32);
    const auto& iv = in.floats();
    const auto& wv = l.weights_float->floats();
    const float* bias = l.bias_float ? l.bias_float->floats().data() : nullptr;
    for (int64_t n = 0; n < n_batch; ++n)
      for (int64_t o = 0; o < co; ++o) {
        double acc = bias ? bias[o] : 0.0;
        for (int64_t i = 0; i < flat; ++i) acc += wv[o * flat + i] * iv[n * flat + i];
        out.floats()[n * co + o] = static_cast<float>(acc);
      }
    return out;
  }

  TensorBuffer add_float(const LayerNode& l, const TensorBuffer& a, const TensorBuffer& b) const {
    if (a.shape() != b.shape()) throw ShapeMismatch("layer " + l.id + ": add operand shapes");
    TensorBuffer out(a.shape(), DType::f32);
    for (int64_t i = 0; i < a.size(); ++i) out.floats()[i] = a.floats()[i] + b.floats()[i];
    return out;
  }

  // Valid padding only: keeps the pool area constant so the integer path can
  // fold 1/area into a single multiplier.
  TensorBuffer pool_float(const LayerNode& l, const TensorBuffer& in) const {
    detail::expect_rank(in, 4, l.id);
    if (l.attrs.padding != Padding::Valid)
      throw ShapeMismatch("layer " + l.id + ": avg_pool2d supports valid padding only");
    const auto& is = in.shape();
    auto geo = detail::conv_geometry(is[1], is[2], l.attrs.pool_h, l.attrs.pool_w, l.attrs);
    const double area = static_cast<double>(l.attrs.pool_h) * l.attrs.pool_w;
    TensorBuffer out({is[0], geo.out_h, geo.out_w, is[3]}, DType::f32);
    int64_t idx = 0;
    for (int64_t n = 0; n < is[0]; ++n)
      for (int64_t oh = 0; oh < geo.out_h; ++oh)
        for (int64_t ow = 0; ow < geo.out_w; ++ow)
          for (int64_t c = 0; c < is[3]; ++c, ++idx) {
            double acc = 0.0;
            for (int64_t y = 0; y < l.attrs.pool_h; ++y)
              for (int64_t x = 0; x < l.attrs.pool_w; ++x) {
                const int64_t ih = oh * l.attrs.stride_h + y;
                const int64_t iw = ow * l.attrs.stride_w + x;
                acc += in.floats()[((n * is[1] + ih) * is[2] + iw) * is[3] + c];
              }
            out.floats()[idx] = static_cast<float>(acc / area);
          }
    return out;
  }

  TensorBuffer clamp_float(const LayerNode& l, const TensorBuffer& in) const {
    TensorBuffer out(in.shape(), DType::f32);
    for (int64_t i = 0; i < in.size(); ++i)
      out.floats()[i] = std::clamp(in.floats()[i], static_cast<float>(l.attrs.clamp_min),
                                   static_cast<float>(l.attrs.clamp_max));
    return out;
  }

  TensorBuffer conv_quant(const LayerNode& l, const TensorBuffer& in, const QuantParams& in_qp,
                          bool depthwise) const {
    detail::expect_rank(in, 4, l.id);
    const auto& is = in.shape();
    const auto& w = *l.weights_quant;
    const auto& ws = w.shape();
    const int64_t kh = ws[1], kw = ws[2];
    const int64_t co = depthwise ? ws[3] : ws[0];
    const int64_t ci = ws[3];
    if (is[3] != (depthwise ? co : ci))
      throw ShapeMismatch("layer " + l.id + ": channel mismatch");
    auto geo = detail::conv_geometry(is[1], is[2], kh, kw, l.attrs);
    const Multiplier m = runtime_multiplier(
        compute_multiplier(l.weight_qp->scale, in_qp.scale, l.output_qp.scale).value,
        l.output_qp);
    const int32_t zw = l.weight_qp->zero_point;
    const int32_t zi = in_qp.zero_point;
    const auto& oqp = l.output_qp;
    TensorBuffer out({is[0], geo.out_h, geo.out_w, co}, oqp.storage_dtype());
    auto& ov = out.ints();
    const auto& iv = in.ints();
    const auto& wv = w.ints();
    const int32_t* bias = l.bias_quant ? l.bias_quant->ints().data() : nullptr;
    int64_t idx = 0;
    for (int64_t n = 0; n < is[0]; ++n)
      for (int64_t oh = 0; oh < geo.out_h; ++oh)
        for (int64_t ow = 0; ow < geo.out_w; ++ow)
          for (int64_t o = 0; o < co; ++o, ++idx) {
            int32_t acc = bias ? bias[o] : 0;
            for (int64_t y = 0; y < kh; ++y) {
              const int64_t ih = oh * l.attrs.stride_h - geo.pad_top + y;
              if (ih < 0 || ih >= is[1]) continue;
              for (int64_t x = 0; x < kw; ++x) {
                const int64_t iw = ow * l.attrs.stride_w - geo.pad_left + x;
                if (iw < 0 || iw >= is[2]) continue;
                if (depthwise) {
                  acc += (wv[(y * kw + x) * co + o] - zw) *
                         (iv[((n * is[1] + ih) * is[2] + iw) * co + o] - zi);
                } else {
                  for (int64_t c = 0; c < ci; ++c)
                    acc += (wv[((o * kh + y) * kw + x) * ci + c] - zw) *
                           (iv[((n * is[1] + ih) * is[2] + iw) * ci + c] - zi);
                }
              }
            }
            ov[idx] = requantize_accumulator(acc, m, oqp.zero_point, oqp.qmin(), oqp.qmax());
          }
    return out;
  }

  TensorBuffer fc_quant(const LayerNode& l, const TensorBuffer& in,
                        const QuantParams& in_qp) const {
    const auto& is = in.shape();
    const int64_t n_batch = is[0];
    const int64_t flat = in.size() / n_batch;
    const auto& ws = l.weights_quant->shape();
    if (ws[1] != flat) throw ShapeMismatch("layer " + l.id + ": fc input size mismatch");
    const int64_t co = ws[0];
    const Multiplier m = runtime_multiplier(
        compute_multiplier(l.weight_qp->scale, in_qp.scale, l.output_qp.scale).value,
        l.output_qp);
    const auto& oqp = l.output_qp;
    TensorBuffer out({n_batch, co}, oqp.storage_dtype());
    const auto& iv = in.ints();
    const auto& wv = l.weights_quant->ints();
    const int32_t* bias = l.bias_quant ? l.bias_quant->ints().data() : nullptr;
    for (int64_t n = 0; n < n_batch; ++n)
      for (int64_t o = 0; o < co; ++o) {
        int32_t acc = bias ? bias[o] : 0;
        for (int64_t i = 0; i < flat; ++i)
          acc += (wv[o * flat + i] - l.weight_qp->zero_point) *
                 (iv[n * flat + i] - in_qp.zero_point);
        out.ints()[n * co + o] =
            requantize_accumulator(acc, m, oqp.zero_point, oqp.qmin(), oqp.qmax());
      }
    return out;
  }

  // Both operands are rescaled to the output scale before saturating addition.
  TensorBuffer add_quant(const LayerNode& l, const TensorBuffer& a, const QuantParams& a_qp,
                         const TensorBuffer& b, const QuantParams& b_qp) const {
    if (a.shape() != b.shape()) throw ShapeMismatch("layer " + l.id + ": add operand shapes");
    const auto& oqp = l.output_qp;
    const Multiplier ma = runtime_multiplier(a_qp.scale / oqp.scale, oqp);
    const Multiplier mb = runtime_multiplier(b_qp.scale / oqp.scale, oqp);
    TensorBuffer out(a.shape(), oqp.storage_dtype());
    for (int64_t i = 0; i < a.size(); ++i) {
      const int64_t term_a = ma.apply(a.ints()[i] - a_qp.zero_point);
      const int64_t term_b = mb.apply(b.ints()[i] - b_qp.zero_point);
      out.ints()[i] = static_cast<int32_t>(std::clamp<int64_t>(
          oqp.zero_point + term_a + term_b, oqp.qmin(), oqp.qmax()));
    }
    return out;
  }

  TensorBuffer pool_quant(const LayerNode& l, const TensorBuffer& in,
                          const QuantParams& in_qp) const {
    detail::expect_rank(in, 4, l.id);
    if (l.attrs.padding != Padding::Valid)
      throw ShapeMismatch("layer " + l.id + ": avg_pool2d supports valid padding only");
    const auto& is = in.shape();
    auto geo = detail::conv_geometry(is[1], is[2], l.attrs.pool_h, l.attrs.pool_w, l.attrs);
    const int64_t area = int64_t{l.attrs.pool_h} * l.attrs.pool_w;
    const Multiplier m = runtime_multiplier(
        in_qp.scale / (l.output_qp.scale * static_cast<double>(area)), l.output_qp);
    const auto& oqp = l.output_qp;
    TensorBuffer out({is[0], geo.out_h, geo.out_w, is[3]}, oqp.storage_dtype());
    int64_t idx = 0;
    for (int64_t n = 0; n < is[0]; ++n)
      for (int64_t oh = 0; oh < geo.out_h; ++oh)
        for (int64_t ow = 0; ow < geo.out_w; ++ow)
          for (int64_t c = 0; c < is[3]; ++c, ++idx) {
            int32_t acc = 0;
            for (int64_t y = 0; y < l.attrs.pool_h; ++y)
              for (int64_t x = 0; x < l.attrs.pool_w; ++x) {
                const int64_t ih = oh * l.attrs.stride_h + y;
                const int64_t iw = ow * l.attrs.stride_w + x;
                acc += in.ints()[((n * is[1] + ih) * is[2] + iw) * is[3] + c] - in_qp.zero_point;
              }
            out.ints()[idx] = requantize_accumulator(acc, m, oqp.zero_point, oqp.qmin(), oqp.qmax());
          }
    return out;
  }

  // Clamp bounds come from attrs, quantized under the output params.
  TensorBuffer clamp_quant(const LayerNode& l, const TensorBuffer& in,
                           const QuantParams& in_qp) const {
    const auto& oqp = l.output_qp;
    const int32_t qlo = quantize_value(l.attrs.clamp_min, oqp);
    const int32_t qhi = quantize_value(l.attrs.clamp_max, oqp);
    const bool rescale = in_qp.scale != oqp.scale || in_qp.zero_point != oqp.zero_point;
    const Multiplier m = rescale ? runtime_multiplier(in_qp.scale / oqp.scale, oqp) : Multiplier{};
    TensorBuffer out(in.shape(), oqp.storage_dtype());
    for (int64_t i = 0; i < in.size(); ++i) {
      int32_t q = in.ints()[i];
      if (rescale)
        q = requantize_accumulator(q - in_qp.zero_point, m, oqp.zero_point, oqp.qmin(), oqp.qmax());
      out.ints()[i] = std::clamp(q, qlo, qhi);
    }
    return out;
  }
};

inline ActivationTrace run_float(const ModelGraph& g, const TensorBuffer& input) {
  return Interpreter(g).run_float(input);
}

inline ActivationTrace run_quant(const ModelGraph& g, const TensorBuffer& input) {
  return Interpreter(g).run_quant(input);
}

}  // namespace requant
