#pragma once

#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "requant/errors.hpp"
#include "requant/interpreter.hpp"
#include "requant/io.hpp"

namespace requant {

struct CalibrationSet {
  std::vector<TensorBuffer> inputs;  // identical shapes, f32
  std::optional<std::vector<int>> labels;

  void check() const {
    if (inputs.empty()) throw EmptyCalibration("calibration set is empty");
    for (const auto& t : inputs)
      if (t.shape() != inputs.front().shape())
        throw ShapeInconsistency("calibration inputs have mixed shapes");
    if (labels && labels->size() != inputs.size())
      throw ShapeInconsistency("labels do not align 1:1 with inputs");
  }
};

// Per-channel output means over a calibration set, for the float path and the
// dequantized integer path.
struct LayerStats {
  std::map<std::string, std::vector<double>> mean_float;
  std::map<std::string, std::vector<double>> mean_quant_dequant;
  int64_t count = 0;
};

// Calibration directory: calib_manifest.json + input_<k>.bin raw blobs.
inline void save_calibration(const CalibrationSet& calib, const std::filesystem::path& dir) {
  calib.check();
  namespace fs = std::filesystem;
  using nlohmann::json;
  fs::create_directories(dir);
  json manifest{{"shape", calib.inputs.front().shape()},
                {"dtype", "f32"},
                {"count", calib.inputs.size()}};
  if (calib.labels) manifest["labels"] = *calib.labels;
  for (size_t k = 0; k < calib.inputs.size(); ++k)
    io_detail::write_blob(dir / ("input_" + std::to_string(k) + ".bin"), calib.inputs[k]);
  std::ofstream f(dir / "calib_manifest.json");
  if (!f) throw Error("cannot open for write: " + (dir / "calib_manifest.json").string());
  f << manifest.dump(2) << "\n";
}

inline CalibrationSet load_calibration(const std::filesystem::path& dir) {
  using nlohmann::json;
  std::ifstream f(dir / "calib_manifest.json");
  if (!f) throw ParseError("missing calib_manifest: " + dir.string());
  json manifest;
  try {
    manifest = json::parse(f);
  } catch (const json::parse_error& e) {
    throw ParseError("calib_manifest.json: " + std::string(e.what()));
  }
  CalibrationSet calib;
  try {
    const auto shape = manifest.at("shape").get<std::vector<int64_t>>();
    const DType dtype = dtype_from_name(manifest.at("dtype").get<std::string>());
    const size_t count = manifest.at("count").get<size_t>();
    if (dtype != DType::f32) throw ParseError("calibration inputs must be f32");
    for (size_t k = 0; k < count; ++k)
      calib.inputs.push_back(
          io_detail::read_blob(dir / ("input_" + std::to_string(k) + ".bin"), shape, dtype));
    if (manifest.contains("labels")) calib.labels = manifest.at("labels").get<std::vector<int>>();
  } catch (const json::exception& e) {
    throw ParseError("calib_manifest.json: " + std::string(e.what()));
  }
  calib.check();
  return calib;
}

namespace detail {

// Compensated (Kahan) accumulator; keeps the reduction permutation-invariant
// to tight tolerance.
struct KahanSum {
  double sum = 0.0;
  double c = 0.0;
  void add(double v) {
    const double y = v - c;
    const double t = sum + y;
    c = (t - sum) - y;
    sum = t;
  }
};

// Reduce a trace buffer to per-channel sums over batch and spatial dims.
inline void accumulate_channel_sums(const TensorBuffer& t, std::vector<KahanSum>& sums,
                                    int64_t& positions) {
  const int64_t channels = t.shape().back();
  if (sums.empty()) sums.resize(static_cast<size_t>(channels));
  if (static_cast<int64_t>(sums.size()) != channels)
    throw ShapeInconsistency("channel count changed across inputs");
  const auto& v = t.floats();
  for (int64_t i = 0; i < t.size(); ++i) sums[static_cast<size_t>(i % channels)].add(v[i]);
  positions += t.size() / channels;
}

}  // namespace detail

inline LayerStats collect_stats(const ModelGraph& g, const CalibrationSet& calib) {
  calib.check();
  Interpreter interp(g);
  std::map<std::string, std::vector<detail::KahanSum>> sum_f, sum_q;
  std::map<std::string, int64_t> pos_f, pos_q;
  for (const auto& input : calib.inputs) {
    ActivationTrace tf = interp.run_float(input);
    ActivationTrace tq = interp.dequantize_trace(interp.run_quant(input));
    for (const auto& l : g.layers) {
      detail::accumulate_channel_sums(tf.at(l.id), sum_f[l.id], pos_f[l.id]);
      detail::accumulate_channel_sums(tq.at(l.id), sum_q[l.id], pos_q[l.id]);
    }
  }
  LayerStats stats;
  stats.count = static_cast<int64_t>(calib.inputs.size());
  for (const auto& l : g.layers) {
    auto mean_of = [](const std::vector<detail::KahanSum>& sums, int64_t positions) {
      std::vector<double> m(sums.size());
      for (size_t c = 0; c < sums.size(); ++c) m[c] = sums[c].sum / static_cast<double>(positions);
      return m;
    };
    stats.mean_float[l.id] = mean_of(sum_f[l.id], pos_f[l.id]);
    stats.mean_quant_dequant[l.id] = mean_of(sum_q[l.id], pos_q[l.id]);
  }
  return stats;
}

}  // namespace requant
