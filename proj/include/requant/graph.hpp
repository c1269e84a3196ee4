#pragma once

#include <map>
#include <optional>
#include <string>
#include <vector>

#include "requant/quant.hpp"
#include "requant/tensor.hpp"

namespace requant {

enum class LayerKind { Conv2D, DepthwiseConv2D, FullyConnected, Add, AvgPool2D, Clamp };

inline const char* kind_name(LayerKind k) {
  switch (k) {
    case LayerKind::Conv2D: return "conv2d";
    case LayerKind::DepthwiseConv2D: return "depthwise_conv2d";
    case LayerKind::FullyConnected: return "fully_connected";
    case LayerKind::Add: return "add";
    case LayerKind::AvgPool2D: return "avg_pool2d";
    case LayerKind::Clamp: return "clamp";
  }
  return "?";
}

inline LayerKind kind_from_name(const std::string& s) {
  if (s == "conv2d") return LayerKind::Conv2D;
  if (s == "depthwise_conv2d") return LayerKind::DepthwiseConv2D;
  if (s == "fully_connected") return LayerKind::FullyConnected;
  if (s == "add") return LayerKind::Add;
  if (s == "avg_pool2d") return LayerKind::AvgPool2D;
  if (s == "clamp") return LayerKind::Clamp;
  throw ParseError("unknown layer kind: " + s);
}

enum class Padding { Valid, Same };

struct LayerAttrs {
  int stride_h = 1;
  int stride_w = 1;
  Padding padding = Padding::Valid;
  int pool_h = 1;  // AvgPool2D only
  int pool_w = 1;
  double clamp_min = 0.0;  // Clamp only
  double clamp_max = 0.0;

  bool operator==(const LayerAttrs& o) const = default;
};

inline bool kind_has_weights(LayerKind k) {
  return k == LayerKind::Conv2D || k == LayerKind::DepthwiseConv2D ||
         k == LayerKind::FullyConnected;
}

// One operator. Float ("backward") weights are the source of truth; the
// quantized ("forward") weights must stay consistent with them under weight_qp.
struct LayerNode {
  std::string id;
  LayerKind kind = LayerKind::Conv2D;
  LayerAttrs attrs;
  std::vector<std::string> input_ids;

  std::optional<TensorBuffer> weights_float;
  std::optional<TensorBuffer> weights_quant;
  std::optional<QuantParams> weight_qp;
  std::optional<TensorBuffer> bias_float;
  std::optional<TensorBuffer> bias_quant;

  QuantParams input_qp;
  QuantParams output_qp;

  bool operator==(const LayerNode& o) const = default;
};

// Graph input placeholder id used in input_ids.
inline constexpr const char* kGraphInput = "@input";

struct ModelGraph {
  std::vector<LayerNode> layers;  // topological order
  std::string input_id = kGraphInput;
  std::string output_id;
  std::vector<int64_t> input_shape;  // NHWC
  QuantParams input_qp;              // params of the graph input tensor
  std::map<std::string, std::string> metadata;

  const LayerNode* find(const std::string& id) const {
    for (const auto& l : layers)
      if (l.id == id) return &l;
    return nullptr;
  }
  LayerNode* find(const std::string& id) {
    for (auto& l : layers)
      if (l.id == id) return &l;
    return nullptr;
  }

  bool operator==(const ModelGraph& o) const = default;
};

struct Violation {
  std::string layer_id;
  std::string rule;
  std::string detail;
};

inline bool qp_valid(const QuantParams& qp, std::string* why = nullptr) {
  auto fail = [&](const char* m) {
    if (why) *why = m;
    return false;
  };
  if (!(qp.scale > 0.0)) return fail("scale must be positive");
  if (!(qp.range_min < qp.range_max)) return fail("range_min must be < range_max");
  if (qp.range_min > 0.0 || qp.range_max < 0.0) return fail("zero not representable in range");
  if (qp.zero_point < qp.qmin() || qp.zero_point > qp.qmax())
    return fail("zero_point outside integer range");
  if (qp.scheme != Scheme::Asymmetric) {
    if (!qp.is_signed) return fail("symmetric scheme requires signed grid");
    if (qp.zero_point != 0) return fail("symmetric scheme requires zero_point = 0");
    if (qp.range_min != -qp.range_max) return fail("symmetric scheme requires min = -max");
  }
  if (qp.scheme == Scheme::SymmetricPow2Range && !is_exact_pow2(qp.range_max))
    return fail("pow2-range scheme requires power-of-two range_max");
  return true;
}

// Structural and consistency checks; violations are data, not exceptions.
inline std::vector<Violation> validate(const ModelGraph& g) {
  std::vector<Violation> out;
  auto add = [&](const std::string& id, const char* rule, std::string detail = "") {
    out.push_back({id, rule, std::move(detail)});
  };

  std::string why;
  auto check_qp = [&](const std::string& id, const char* role, const QuantParams& qp) {
    if (qp.scheme != Scheme::Asymmetric && qp.zero_point != 0) {
      add(id, "SymmetricZeroPoint", role);
      return;
    }
    if (!qp_valid(qp, &why)) add(id, "InvalidQuantParams", std::string(role) + ": " + why);
  };
  check_qp("@graph", "input", g.input_qp);

  std::map<std::string, bool> seen;
  seen[g.input_id] = true;
  for (const auto& l : g.layers) {
    if (seen.count(l.id)) add(l.id, "DuplicateLayerId");
    for (const auto& in : l.input_ids)
      if (!seen.count(in)) add(l.id, "UnresolvedInput", in);
    seen[l.id] = true;

    if (l.kind == LayerKind::Add) {
      if (l.input_ids.size() != 2) add(l.id, "AddArity");
    } else if (l.input_ids.size() != 1) {
      add(l.id, "SingleInputArity");
    }

    check_qp(l.id, "input", l.input_qp);
    check_qp(l.id, "output", l.output_qp);

    if (kind_has_weights(l.kind)) {
      if (!l.weights_float || !l.weight_qp) {
        add(l.id, "MissingWeights");
      } else {
        check_qp(l.id, "weight", *l.weight_qp);
        if (l.weights_quant) {
          TensorBuffer expect = quantize_tensor(*l.weights_float, *l.weight_qp);
          if (!(expect == *l.weights_quant)) add(l.id, "ForwardWeightMismatch");
        }
        if (l.bias_float && l.bias_quant) {
          TensorBuffer expect =
              quantize_bias(*l.bias_float, l.weight_qp->scale, l.input_qp.scale);
          if (!(expect == *l.bias_quant)) add(l.id, "BiasQuantMismatch");
        }
      }
    } else {
      if (l.weights_float || l.weights_quant) add(l.id, "UnexpectedWeights");
      if (l.bias_float || l.bias_quant) add(l.id, "UnexpectedBias");
    }

    for (const auto* t : {&l.weights_quant, &l.bias_quant})
      if (*t && !(*t)->values_in_dtype_range()) add(l.id, "ValueOutOfDtypeRange");
  }

  if (!g.find(g.output_id)) add("@graph", "MissingOutput", g.output_id);
  return out;
}

}  // namespace requant
