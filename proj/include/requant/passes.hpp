#pragma once

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "requant/calibration.hpp"
#include "requant/errors.hpp"
#include "requant/graph.hpp"
#include "requant/interpreter.hpp"
#include "requant/multiplier.hpp"
#include "requant/quant.hpp"

namespace requant {

enum class TargetScheme { Symmetric, SymmetricPow2 };
enum class PassKind { BC, WCL, WCR, REF };

inline const char* pass_name(PassKind p) {
  switch (p) {
    case PassKind::BC: return "bc";
    case PassKind::WCL: return "wcl";
    case PassKind::WCR: return "wcr";
    case PassKind::REF: return "ref";
  }
  return "?";
}

inline PassKind pass_from_name(const std::string& s) {
  if (s == "bc") return PassKind::BC;
  if (s == "wcl") return PassKind::WCL;
  if (s == "wcr") return PassKind::WCR;
  if (s == "ref") return PassKind::REF;
  throw ParseError("unknown pass: " + s);
}

struct ClipSpec {
  bool auto_mode = false;
  double value = 6.0;  // default threshold; accuracy tends to drop for tighter clips
};

struct PassConfig {
  TargetScheme target_scheme = TargetScheme::Symmetric;
  std::vector<PassKind> passes;
  ClipSpec clip;

  bool has(PassKind p) const {
    return std::find(passes.begin(), passes.end(), p) != passes.end();
  }

  void check() const {
    if (has(PassKind::REF) && target_scheme != TargetScheme::SymmetricPow2)
      throw SchemePrecondition("round error folding requires the symmetric-pow2 scheme");
  }
};

struct PassRecord {
  std::string pass;
  std::string layer;
  std::string field;
  double old_value = 0.0;
  double new_value = 0.0;
};

struct PassReport {
  std::vector<PassRecord> records;
  std::vector<Violation> violations;  // validator output after the pipeline

  void add(const std::string& pass, const std::string& layer, const std::string& field,
           double old_v, double new_v) {
    records.push_back({pass, layer, field, old_v, new_v});
  }
};

namespace detail {

inline std::string fmt_g17(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

// Symmetrized bound m' = max(|min|, |max|).
inline double symmetric_bound(const QuantParams& qp) {
  return std::max(std::abs(qp.range_min), std::abs(qp.range_max));
}

// m' snapped to 2^round(log2(m')). All-zero tensors fall back to 2^-7.
inline double pow2_bound(double m) {
  if (m <= 0.0) return std::ldexp(1.0, -7);
  return std::exp2(std::round(std::log2(m)));
}

inline QuantParams to_symmetric(const QuantParams& qp) {
  const double m = symmetric_bound(qp);
  return derive_quant_params(-m, m, 8, true, Scheme::Symmetric);
}

inline QuantParams to_pow2(const QuantParams& qp) {
  const double m = pow2_bound(symmetric_bound(qp));
  return derive_quant_params(-m, m, 8, true, Scheme::SymmetricPow2Range);
}

// Recompute forward weights and bias from the float tensors under the current
// params (the weight-correction primitive).
inline void rederive_integers(LayerNode& l) {
  if (!kind_has_weights(l.kind) || !l.weights_float || !l.weight_qp) return;
  l.weights_quant = quantize_tensor(*l.weights_float, *l.weight_qp);
  if (l.bias_float)
    l.bias_quant = quantize_bias(*l.bias_float, l.weight_qp->scale, l.input_qp.scale);
}

template <typename Transform>
inline ModelGraph transform_all_params(const ModelGraph& g, Transform&& tf, bool rederive) {
  ModelGraph out = g;
  out.input_qp = tf(out.input_qp);
  for (auto& l : out.layers) {
    l.input_qp = tf(l.input_qp);
    l.output_qp = tf(l.output_qp);
    if (l.weight_qp) l.weight_qp = tf(*l.weight_qp);
    if (rederive) rederive_integers(l);
  }
  return out;
}

// Per-channel means of the dequantized integer output of one layer.
inline std::vector<double> quant_channel_means(const ModelGraph& g, const CalibrationSet& calib,
                                               const std::string& layer_id) {
  Interpreter interp(g);
  const LayerNode* l = g.find(layer_id);
  std::vector<KahanSum> sums;
  int64_t positions = 0;
  for (const auto& input : calib.inputs) {
    ActivationTrace t = interp.run_quant(input);
    accumulate_channel_sums(dequantize_tensor(t.at(layer_id), l->output_qp), sums, positions);
  }
  std::vector<double> m(sums.size());
  for (size_t c = 0; c < sums.size(); ++c) m[c] = sums[c].sum / static_cast<double>(positions);
  return m;
}

inline std::vector<double> float_channel_means(const ModelGraph& g, const CalibrationSet& calib,
                                               const std::string& layer_id) {
  Interpreter interp(g);
  std::vector<KahanSum> sums;
  int64_t positions = 0;
  for (const auto& input : calib.inputs)
    accumulate_channel_sums(interp.run_float(input).at(layer_id), sums, positions);
  std::vector<double> m(sums.size());
  for (size_t c = 0; c < sums.size(); ++c) m[c] = sums[c].sum / static_cast<double>(positions);
  return m;
}

}  // namespace detail

// Range symmetrization: every param becomes signed symmetric over
// [-m', m'] with m' = max(|min|, |max|); integer tensors are re-derived.
inline ModelGraph symmetrize_ranges(const ModelGraph& g, PassReport* report = nullptr) {
  ModelGraph out = detail::transform_all_params(
      g, [](const QuantParams& qp) { return detail::to_symmetric(qp); }, true);
  if (report)
    for (size_t i = 0; i < g.layers.size(); ++i)
      report->add("symmetrize", g.layers[i].id, "output_scale", g.layers[i].output_qp.scale,
                  out.layers[i].output_qp.scale);
  return out;
}

// Like symmetrize_ranges with the bound snapped to the nearest power of two.
inline ModelGraph pow2_ranges(const ModelGraph& g, PassReport* report = nullptr) {
  ModelGraph out = detail::transform_all_params(
      g, [](const QuantParams& qp) { return detail::to_pow2(qp); }, true);
  if (report)
    for (size_t i = 0; i < g.layers.size(); ++i)
      report->add("pow2_ranges", g.layers[i].id, "output_scale", g.layers[i].output_qp.scale,
                  out.layers[i].output_qp.scale);
  return out;
}

// Uncompensated baseline: zero points dropped and ranges adjusted, but the
// integer tensors are kept as-is.
inline ModelGraph naive_requant(const ModelGraph& g, TargetScheme target) {
  auto tf = [target](const QuantParams& qp) {
    return target == TargetScheme::SymmetricPow2 ? detail::to_pow2(qp)
                                                 : detail::to_symmetric(qp);
  };
  return detail::transform_all_params(g, tf, false);
}

// Clip float weights to [-c, c] and tighten the weight ranges; forward
// weights are left stale on purpose (recomputing them is WCR's job).
inline ModelGraph weight_clip(const ModelGraph& g, const ClipSpec& clip,
                              PassReport* report = nullptr) {
  if (!clip.auto_mode && !(clip.value > 0.0))
    throw InvalidRange("clip threshold must be positive");
  ModelGraph out = g;
  for (auto& l : out.layers) {
    if (!kind_has_weights(l.kind) || !l.weights_float || !l.weight_qp) continue;
    auto& w = l.weights_float->floats();
    double max_abs = 0.0;
    for (float v : w) max_abs = std::max(max_abs, std::abs(static_cast<double>(v)));
    if (max_abs == 0.0) continue;

    double c = clip.value;
    if (clip.auto_mode) {
      // Grid search over (0.5*max|w|, max|w|] minimizing quantization MSE.
      double best_err = std::numeric_limits<double>::infinity();
      for (int k = 1; k <= 20; ++k) {
        const double cand = max_abs * (0.5 + 0.5 * k / 20.0);
        QuantParams qp = l.weight_qp->scheme == Scheme::SymmetricPow2Range
                             ? derive_quant_params(-detail::pow2_bound(cand),
                                                   detail::pow2_bound(cand), 8, true,
                                                   Scheme::SymmetricPow2Range)
                             : derive_quant_params(-cand, cand, 8, true, Scheme::Symmetric);
        double err = 0.0;
        for (float v : w) {
          const double t = std::clamp(static_cast<double>(v), -cand, cand);
          const double d = dequantize_value(quantize_value(t, qp), qp);
          err += (v - d) * (v - d);
        }
        if (err < best_err) {
          best_err = err;
          c = cand;
        }
      }
    }

    int64_t clipped = 0;
    double wmin = 0.0, wmax = 0.0;
    for (auto& v : w) {
      const float t = std::clamp(v, static_cast<float>(-c), static_cast<float>(c));
      if (t != v) ++clipped;
      v = t;
      wmin = std::min(wmin, static_cast<double>(t));
      wmax = std::max(wmax, static_cast<double>(t));
    }
    if (wmin == wmax) continue;

    const QuantParams old = *l.weight_qp;
    switch (old.scheme) {
      case Scheme::Asymmetric:
        l.weight_qp = derive_quant_params(wmin, wmax, 8, old.is_signed, Scheme::Asymmetric);
        break;
      case Scheme::Symmetric: {
        const double m = std::max(std::abs(wmin), std::abs(wmax));
        l.weight_qp = derive_quant_params(-m, m, 8, true, Scheme::Symmetric);
        break;
      }
      case Scheme::SymmetricPow2Range: {
        const double m = detail::pow2_bound(std::max(std::abs(wmin), std::abs(wmax)));
        l.weight_qp = derive_quant_params(-m, m, 8, true, Scheme::SymmetricPow2Range);
        break;
      }
    }
    if (report) {
      report->add("wcl", l.id, "clip_threshold", 0.0, c);
      report->add("wcl", l.id, "clip_count", 0.0, static_cast<double>(clipped));
      report->add("wcl", l.id, "weight_scale", old.scale, l.weight_qp->scale);
    }
  }
  return out;
}

// Recompute forward weights and bias from the backward (float) tensors under
// the current params.
inline ModelGraph weight_correction(const ModelGraph& g, PassReport* report = nullptr) {
  ModelGraph out = g;
  for (auto& l : out.layers) {
    if (!kind_has_weights(l.kind)) continue;
    const bool had = l.weights_quant.has_value();
    TensorBuffer before = had ? *l.weights_quant : TensorBuffer{};
    detail::rederive_integers(l);
    if (report && l.weights_quant) {
      int64_t changed = 0;
      if (had)
        for (int64_t i = 0; i < l.weights_quant->size(); ++i)
          changed += l.weights_quant->ints()[i] != before.ints()[i];
      report->add("wcr", l.id, "weights_changed", 0.0, static_cast<double>(changed));
    }
  }
  return out;
}

// Round error folding: fold the non-pow2 residual P of each layer multiplier
// M = P * 2^-Q into the weight scale (S_w <- S_w / P), then re-quantize the
// forward weights and bias so the runtime multiplier becomes exactly 2^-Q.
inline ModelGraph round_error_folding(const ModelGraph& g, PassReport* report = nullptr) {
  for (const auto& l : g.layers) {
    for (const QuantParams* qp : {&l.input_qp, &l.output_qp}) {
      if (qp->scheme == Scheme::Asymmetric || qp->zero_point != 0)
        throw SchemePrecondition("round error folding requires a symmetric graph");
    }
    if (l.weight_qp && (l.weight_qp->scheme == Scheme::Asymmetric || l.weight_qp->zero_point != 0))
      throw SchemePrecondition("round error folding requires symmetric weights");
  }
  ModelGraph out = g;
  for (auto& l : out.layers) {
    if (!kind_has_weights(l.kind) || !l.weight_qp) continue;
    const Multiplier m =
        compute_multiplier(l.weight_qp->scale, l.input_qp.scale, l.output_qp.scale);
    if (m.is_pow2) {
      if (report) report->add("ref", l.id, "P", 1.0, 1.0);
      continue;
    }
    auto [p, q] = decompose_pow2(m.value);
    const double old_scale = l.weight_qp->scale;
    const double new_scale = old_scale / p;
    QuantParams qp = *l.weight_qp;
    qp.scale = new_scale;
    qp.range_max = new_scale * 127.0;
    qp.range_min = -qp.range_max;
    qp.scheme = Scheme::Symmetric;  // folded range is no longer a power of two
    l.weight_qp = qp;
    detail::rederive_integers(l);
    if (report) {
      report->add("ref", l.id, "P", 1.0, p);
      report->add("ref", l.id, "Q", 0.0, static_cast<double>(q));
      report->add("ref", l.id, "weight_scale", old_scale, new_scale);
      report->add("ref", l.id, "multiplier",
                  m.value,
                  compute_multiplier(new_scale, l.input_qp.scale, l.output_qp.scale).value);
    }
  }
  return out;
}

// Measure the per-channel mean output error of each biased layer over the
// calibration set and fold it into the bias. Float expectations come from the
// reference graph's float weights; layers are corrected in topological order
// so earlier corrections feed later statistics.
inline ModelGraph bias_correction(const ModelGraph& g, const CalibrationSet& calib,
                                  const ModelGraph* float_ref = nullptr,
                                  PassReport* report = nullptr) {
  calib.check();
  const ModelGraph& ref = float_ref ? *float_ref : g;
  ModelGraph out = g;
  for (auto& l : out.layers) {
    if (!kind_has_weights(l.kind) || !l.bias_float || !l.weight_qp) continue;
    const std::vector<double> mean_f = detail::float_channel_means(ref, calib, l.id);
    const std::vector<double> mean_q = detail::quant_channel_means(out, calib, l.id);
    auto& bias = l.bias_float->floats();
    if (mean_f.size() != bias.size())
      throw ShapeMismatch("layer " + l.id + ": bias length vs output channels");
    double max_eps = 0.0;
    for (size_t c = 0; c < bias.size(); ++c) {
      const double eps = mean_f[c] - mean_q[c];
      bias[c] = static_cast<float>(bias[c] + eps);
      max_eps = std::max(max_eps, std::abs(eps));
    }
    l.bias_quant = quantize_bias(*l.bias_float, l.weight_qp->scale, l.input_qp.scale);
    if (report) report->add("bc", l.id, "max_abs_eps", 0.0, max_eps);
  }
  return out;
}

// Scheme transform followed by the configured passes in canonical order
// WCL -> WCR -> REF -> BC. The input graph serves as the float reference for
// bias correction.
inline std::pair<ModelGraph, PassReport> run_pipeline(const ModelGraph& g, const PassConfig& cfg,
                                                      const CalibrationSet* calib = nullptr) {
  cfg.check();
  if (cfg.has(PassKind::BC) && (!calib || calib->inputs.empty()))
    throw EmptyCalibration("bias correction requires a calibration set");

  PassReport report;
  ModelGraph cur = cfg.target_scheme == TargetScheme::SymmetricPow2 ? pow2_ranges(g, &report)
                                                                    : symmetrize_ranges(g, &report);
  if (cfg.has(PassKind::WCL)) cur = weight_clip(cur, cfg.clip, &report);
  if (cfg.has(PassKind::WCR)) cur = weight_correction(cur, &report);
  if (cfg.has(PassKind::REF)) cur = round_error_folding(cur, &report);
  if (cfg.has(PassKind::BC)) cur = bias_correction(cur, *calib, &g, &report);

  report.violations = validate(cur);
  return {std::move(cur), std::move(report)};
}

// One record per line: pass layer field old new.
inline void write_pass_report_text(const PassReport& r, const std::filesystem::path& path) {
  std::ofstream f(path);
  if (!f) throw Error("cannot open for write: " + path.string());
  for (const auto& rec : r.records)
    f << rec.pass << " " << rec.layer << " " << rec.field << " "
      << detail::fmt_g17(rec.old_value) << " " << detail::fmt_g17(rec.new_value) << "\n";
  for (const auto& v : r.violations)
    f << "violation " << v.layer_id << " " << v.rule << " " << v.detail << "\n";
}

inline void write_pass_report_json(const PassReport& r, const std::filesystem::path& path) {
  using nlohmann::json;
  json records = json::array();
  for (const auto& rec : r.records)
    records.push_back({{"pass", rec.pass},
                       {"layer", rec.layer},
                       {"field", rec.field},
                       {"old", rec.old_value},
                       {"new", rec.new_value}});
  json violations = json::array();
  for (const auto& v : r.violations)
    violations.push_back({{"layer", v.layer_id}, {"rule", v.rule}, {"detail", v.detail}});
  std::ofstream f(path);
  if (!f) throw Error("cannot open for write: " + path.string());
  f << json{{"records", std::move(records)}, {"violations", std::move(violations)}}.dump(2)
    << "\n";
}

}  // namespace requant
