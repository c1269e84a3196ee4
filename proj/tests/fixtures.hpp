// Seeded random model and calibration fixtures shared by the test suites.
#pragma once

#include <algorithm>
#include <cmath>
#include <random>
#include <string>
#include <vector>

#include "requant/calibration.hpp"
#include "requant/graph.hpp"
#include "requant/interpreter.hpp"
#include "requant/quant.hpp"

namespace fixtures {

using namespace requant;

inline TensorBuffer random_floats(std::mt19937& rng, std::vector<int64_t> shape, double stddev,
                                  double outlier_prob = 0.0, double outlier_mul = 3.0) {
  std::normal_distribution<double> dist(0.0, stddev);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::vector<float> v(static_cast<size_t>(TensorBuffer::element_count(shape)));
  for (auto& x : v) {
    double val = dist(rng);
    if (outlier_prob > 0.0 && u(rng) < outlier_prob) val *= outlier_mul;
    x = static_cast<float>(val);
  }
  return TensorBuffer::from_floats(std::move(shape), std::move(v));
}

struct ConvnetOptions {
  int layers = 3;
  int channels = 4;
  int spatial = 6;
  int kernel = 3;
  double weight_outlier_prob = 0.0;  // fraction of weights inflated ~3 sigma
  bool with_clamp = false;
  bool with_depthwise = false;
  bool with_pool = false;
  bool with_add = false;
  bool with_fc = false;
};

// Asymmetric per-tensor quantized convnet in the style of a QAT export:
// ranges are taken from the actual tensors and a probe batch of activations.
inline ModelGraph random_convnet(uint32_t seed, const ConvnetOptions& opt = {}) {
  std::mt19937 rng(seed);
  ModelGraph g;
  g.input_shape = {1, opt.spatial, opt.spatial, opt.channels};

  // topology + float tensors
  std::string prev = kGraphInput;
  int idx = 0;
  auto add_layer = [&](LayerNode l) {
    l.id = "l" + std::to_string(idx++) + "_" + kind_name(l.kind);
    l.input_ids = {prev};
    prev = l.id;
    g.layers.push_back(std::move(l));
  };

  for (int i = 0; i < opt.layers; ++i) {
    LayerNode conv;
    if (opt.with_depthwise && i == 1) {
      conv.kind = LayerKind::DepthwiseConv2D;
      conv.weights_float =
          random_floats(rng, {1, opt.kernel, opt.kernel, opt.channels}, 0.5,
                        opt.weight_outlier_prob);
    } else {
      conv.kind = LayerKind::Conv2D;
      conv.weights_float =
          random_floats(rng, {opt.channels, opt.kernel, opt.kernel, opt.channels}, 0.5,
                        opt.weight_outlier_prob);
    }
    conv.attrs.padding = Padding::Same;
    conv.bias_float = random_floats(rng, {static_cast<int64_t>(opt.channels)}, 0.2);
    add_layer(std::move(conv));

    if (opt.with_clamp && i == 0) {
      LayerNode clamp;
      clamp.kind = LayerKind::Clamp;
      clamp.attrs.clamp_min = 0.0;
      clamp.attrs.clamp_max = 6.0;
      add_layer(std::move(clamp));
    }
  }

  if (opt.with_add) {
    // residual-style add of the last two conv outputs
    std::string a = g.layers[g.layers.size() - 1].id;
    std::string b = g.layers.size() >= 2 ? g.layers[g.layers.size() - 2].id : a;
    LayerNode add;
    add.kind = LayerKind::Add;
    add.id = "l" + std::to_string(idx++) + "_add";
    add.input_ids = {a, b};
    prev = add.id;
    g.layers.push_back(std::move(add));
  }
  if (opt.with_pool) {
    LayerNode pool;
    pool.kind = LayerKind::AvgPool2D;
    pool.attrs.pool_h = 2;
    pool.attrs.pool_w = 2;
    pool.attrs.stride_h = 2;
    pool.attrs.stride_w = 2;
    add_layer(std::move(pool));
  }
  if (opt.with_fc) {
    LayerNode fc;
    fc.kind = LayerKind::FullyConnected;
    // flattened size depends on the activation shape; fill weights later
    add_layer(std::move(fc));
  }
  g.output_id = prev;

  // probe the float model to get activation ranges
  auto with_zero = [](double lo, double hi) {
    return std::pair<double, double>{std::min(lo, 0.0), std::max(hi, 0.0)};
  };

  // derive input params
  g.input_qp = derive_quant_params(-1.0, 1.0, 8, false, Scheme::Asymmetric);

  // Fill FC weights once the flattened size is known, by dry-running shapes:
  // run a probe input through the float path layer by layer.
  TensorBuffer probe = random_floats(rng, g.input_shape, 0.5);
  {
    // temporary graph without the fc layer for shape probing
    if (opt.with_fc) {
      ModelGraph head = g;
      head.layers.pop_back();
      head.output_id = head.layers.back().id;
      for (auto& l : head.layers) {  // placeholder params; float path ignores them
        l.input_qp = g.input_qp;
        l.output_qp = g.input_qp;
        if (l.weights_float) l.weight_qp = g.input_qp;
      }
      auto trace = run_float(head, probe);
      const auto& last = trace.at(head.output_id);
      const int64_t flat = last.size() / last.shape()[0];
      auto& fc = g.layers.back();
      fc.weights_float = random_floats(rng, {opt.channels, flat}, 0.3);
      fc.bias_float = random_floats(rng, {static_cast<int64_t>(opt.channels)}, 0.2);
    }
  }

  // activation ranges over a small probe batch
  {
    ModelGraph tmp = g;
    for (auto& l : tmp.layers) {
      l.input_qp = g.input_qp;
      l.output_qp = g.input_qp;
      if (l.weights_float) l.weight_qp = g.input_qp;
    }
    std::vector<std::pair<double, double>> ranges(g.layers.size(), {0.0, 0.0});
    for (int b = 0; b < 4; ++b) {
      TensorBuffer in = random_floats(rng, g.input_shape, 0.5);
      auto trace = run_float(tmp, in);
      for (size_t i = 0; i < g.layers.size(); ++i) {
        const auto& t = trace.at(g.layers[i].id);
        for (float v : t.floats()) {
          ranges[i].first = std::min(ranges[i].first, static_cast<double>(v));
          ranges[i].second = std::max(ranges[i].second, static_cast<double>(v));
        }
      }
    }
    for (size_t i = 0; i < g.layers.size(); ++i) {
      auto [lo, hi] = with_zero(ranges[i].first * 1.1 - 1e-3, ranges[i].second * 1.1 + 1e-3);
      g.layers[i].output_qp = derive_quant_params(lo, hi, 8, false, Scheme::Asymmetric);
    }
  }

  // wire input params to producers, derive weight params, quantize
  for (auto& l : g.layers) {
    const std::string& src = l.input_ids[0];
    l.input_qp = src == g.input_id ? g.input_qp : g.find(src)->output_qp;
    if (l.weights_float) {
      double lo = 0.0, hi = 0.0;
      for (float v : l.weights_float->floats()) {
        lo = std::min(lo, static_cast<double>(v));
        hi = std::max(hi, static_cast<double>(v));
      }
      auto [wlo, whi] = with_zero(lo - 1e-3, hi + 1e-3);
      l.weight_qp = derive_quant_params(wlo, whi, 8, false, Scheme::Asymmetric);
      l.weights_quant = quantize_tensor(*l.weights_float, *l.weight_qp);
      if (l.bias_float)
        l.bias_quant = quantize_bias(*l.bias_float, l.weight_qp->scale, l.input_qp.scale);
    }
  }
  return g;
}

inline CalibrationSet random_calibration(uint32_t seed, const std::vector<int64_t>& shape,
                                         int count, int num_classes = 0) {
  std::mt19937 rng(seed);
  CalibrationSet calib;
  for (int k = 0; k < count; ++k) calib.inputs.push_back(random_floats(rng, shape, 0.5));
  if (num_classes > 0) {
    std::uniform_int_distribution<int> d(0, num_classes - 1);
    std::vector<int> labels(static_cast<size_t>(count));
    for (auto& v : labels) v = d(rng);
    calib.labels = labels;
  }
  return calib;
}

}  // namespace fixtures
