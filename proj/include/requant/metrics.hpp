#pragma once

#include <cmath>
#include <limits>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "requant/calibration.hpp"
#include "requant/errors.hpp"
#include "requant/interpreter.hpp"

namespace requant {

struct LayerMetrics {
  double mse = 0.0;
  double sqnr_db = 0.0;  // +inf sentinel when the error power is zero
  double cosine = 1.0;
};

struct EvalReport {
  std::map<std::string, LayerMetrics> per_layer;
  double output_mse = 0.0;
  std::optional<double> top1;
  std::string model_a;
  std::string model_b;
  int64_t input_count = 0;
};

enum class TraceMode { Float, Quant };

namespace detail {

struct MetricAccum {
  KahanSum err2, sig2, dot, na2, nb2;
  int64_t n = 0;
};

inline void accumulate_metrics(const TensorBuffer& a, const TensorBuffer& b, MetricAccum& acc) {
  if (a.shape() != b.shape()) throw TopologyMismatch("trace shapes differ");
  for (int64_t i = 0; i < a.size(); ++i) {
    const double x = a.floats()[i];
    const double y = b.floats()[i];
    acc.err2.add((x - y) * (x - y));
    acc.sig2.add(x * x);
    acc.dot.add(x * y);
    acc.na2.add(x * x);
    acc.nb2.add(y * y);
  }
  acc.n += a.size();
}

inline LayerMetrics finish_metrics(const MetricAccum& acc) {
  LayerMetrics m;
  m.mse = acc.err2.sum / static_cast<double>(acc.n);
  if (acc.err2.sum == 0.0)
    m.sqnr_db = std::numeric_limits<double>::infinity();
  else
    m.sqnr_db = 10.0 * std::log10(acc.sig2.sum / acc.err2.sum);
  const double denom = std::sqrt(acc.na2.sum) * std::sqrt(acc.nb2.sum);
  m.cosine = denom == 0.0 ? 1.0 : acc.dot.sum / denom;
  return m;
}

inline ActivationTrace run_dequant(const Interpreter& interp, const TensorBuffer& input,
                                   TraceMode mode) {
  if (mode == TraceMode::Float) return interp.run_float(input);
  return interp.dequantize_trace(interp.run_quant(input));
}

}  // namespace detail

// Per-layer and end-to-end error metrics between two graphs sharing a
// topology, over dequantized per-layer traces across the calibration inputs.
inline EvalReport compare(const ModelGraph& a, const ModelGraph& b, const CalibrationSet& calib,
                          TraceMode mode_a = TraceMode::Quant,
                          TraceMode mode_b = TraceMode::Quant) {
  calib.check();
  if (a.layers.size() != b.layers.size()) throw TopologyMismatch("layer counts differ");
  for (size_t i = 0; i < a.layers.size(); ++i)
    if (a.layers[i].id != b.layers[i].id || a.layers[i].kind != b.layers[i].kind)
      throw TopologyMismatch("layer " + a.layers[i].id + " vs " + b.layers[i].id);
  if (a.input_shape != b.input_shape) throw TopologyMismatch("input shapes differ");

  Interpreter ia(a), ib(b);
  std::map<std::string, detail::MetricAccum> accum;
  for (const auto& input : calib.inputs) {
    ActivationTrace ta = detail::run_dequant(ia, input, mode_a);
    ActivationTrace tb = detail::run_dequant(ib, input, mode_b);
    for (const auto& l : a.layers)
      detail::accumulate_metrics(ta.at(l.id), tb.at(l.id), accum[l.id]);
  }

  EvalReport report;
  report.input_count = static_cast<int64_t>(calib.inputs.size());
  for (const auto& l : a.layers) report.per_layer[l.id] = detail::finish_metrics(accum[l.id]);
  report.output_mse = report.per_layer.at(a.output_id).mse;
  return report;
}

// Fraction of inputs whose argmax of the final dequantized output equals the
// label; ties break to the lowest class index.
inline double top1_accuracy(const ModelGraph& g, const CalibrationSet& calib,
                            TraceMode mode = TraceMode::Quant) {
  calib.check();
  if (!calib.labels) throw MissingLabels("top1_accuracy requires labels");
  Interpreter interp(g);
  int64_t hits = 0;
  for (size_t k = 0; k < calib.inputs.size(); ++k) {
    ActivationTrace t = detail::run_dequant(interp, calib.inputs[k], mode);
    const auto& out = t.at(g.output_id).floats();
    size_t best = 0;
    for (size_t i = 1; i < out.size(); ++i)
      if (out[i] > out[best]) best = i;
    if (static_cast<int>(best) == (*calib.labels)[k]) ++hits;
  }
  return static_cast<double>(hits) / static_cast<double>(calib.inputs.size());
}

inline nlohmann::json eval_report_to_json(const EvalReport& r) {
  using nlohmann::json;
  json layers = json::object();
  for (const auto& [id, m] : r.per_layer) {
    json jm{{"mse", m.mse}, {"cosine", m.cosine}};
    if (std::isinf(m.sqnr_db))
      jm["sqnr_db"] = "inf";
    else
      jm["sqnr_db"] = m.sqnr_db;
    layers[id] = std::move(jm);
  }
  json out{{"per_layer", std::move(layers)},
           {"output_mse", r.output_mse},
           {"model_a", r.model_a},
           {"model_b", r.model_b},
           {"input_count", r.input_count}};
  if (r.top1) out["top1"] = *r.top1;
  return out;
}

}  // namespace requant
