#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "requant/errors.hpp"
#include "requant/graph.hpp"

namespace requant {

static_assert(std::endian::native == std::endian::little,
              "raw blob format is little-endian");

namespace io_detail {

using nlohmann::json;

inline size_t dtype_bytes(DType d) {
  switch (d) {
    case DType::f32: return 4;
    case DType::i8: return 1;
    case DType::u8: return 1;
    case DType::i32: return 4;
  }
  return 0;
}

inline void write_blob(const std::filesystem::path& path, const TensorBuffer& t) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw Error("cannot open for write: " + path.string());
  if (t.is_float()) {
    f.write(reinterpret_cast<const char*>(t.floats().data()),
            static_cast<std::streamsize>(t.floats().size() * 4));
  } else {
    for (int32_t v : t.ints()) {
      switch (t.dtype()) {
        case DType::i8: {
          int8_t b = static_cast<int8_t>(v);
          f.write(reinterpret_cast<const char*>(&b), 1);
          break;
        }
        case DType::u8: {
          uint8_t b = static_cast<uint8_t>(v);
          f.write(reinterpret_cast<const char*>(&b), 1);
          break;
        }
        default: f.write(reinterpret_cast<const char*>(&v), 4); break;
      }
    }
  }
  if (!f) throw Error("write failed: " + path.string());
}

inline TensorBuffer read_blob(const std::filesystem::path& path,
                              const std::vector<int64_t>& shape, DType dtype) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw ParseError("missing tensor blob: " + path.string());
  const int64_t n = TensorBuffer::element_count(shape);
  std::vector<char> raw(static_cast<size_t>(n) * dtype_bytes(dtype));
  f.read(raw.data(), static_cast<std::streamsize>(raw.size()));
  if (f.gcount() != static_cast<std::streamsize>(raw.size()))
    throw ParseError("truncated tensor blob: " + path.string());
  if (dtype == DType::f32) {
    std::vector<float> v(static_cast<size_t>(n));
    std::memcpy(v.data(), raw.data(), raw.size());
    return TensorBuffer::from_floats(shape, std::move(v));
  }
  std::vector<int32_t> v(static_cast<size_t>(n));
  for (int64_t i = 0; i < n; ++i) {
    switch (dtype) {
      case DType::i8: v[i] = static_cast<int8_t>(raw[i]); break;
      case DType::u8: v[i] = static_cast<uint8_t>(raw[i]); break;
      default: std::memcpy(&v[i], raw.data() + i * 4, 4); break;
    }
  }
  return TensorBuffer::from_ints(shape, dtype, std::move(v));
}

inline json qp_to_json(const QuantParams& qp) {
  return json{{"scale", qp.scale},         {"zero_point", qp.zero_point},
              {"bits", qp.bits},           {"signed", qp.is_signed},
              {"scheme", scheme_name(qp.scheme)}, {"range_min", qp.range_min},
              {"range_max", qp.range_max}};
}

inline QuantParams qp_from_json(const json& j) {
  QuantParams qp;
  qp.scale = j.at("scale").get<double>();
  qp.zero_point = j.at("zero_point").get<int32_t>();
  qp.bits = j.at("bits").get<int>();
  qp.is_signed = j.at("signed").get<bool>();
  qp.scheme = scheme_from_name(j.at("scheme").get<std::string>());
  qp.range_min = j.at("range_min").get<double>();
  qp.range_max = j.at("range_max").get<double>();
  return qp;
}

inline json attrs_to_json(const LayerAttrs& a) {
  return json{{"stride", {a.stride_h, a.stride_w}},
              {"padding", a.padding == Padding::Same ? "same" : "valid"},
              {"pool", {a.pool_h, a.pool_w}},
              {"clamp", {a.clamp_min, a.clamp_max}}};
}

inline LayerAttrs attrs_from_json(const json& j) {
  LayerAttrs a;
  a.stride_h = j.at("stride").at(0).get<int>();
  a.stride_w = j.at("stride").at(1).get<int>();
  const std::string pad = j.at("padding").get<std::string>();
  if (pad != "same" && pad != "valid") throw ParseError("unknown padding: " + pad);
  a.padding = pad == "same" ? Padding::Same : Padding::Valid;
  a.pool_h = j.at("pool").at(0).get<int>();
  a.pool_w = j.at("pool").at(1).get<int>();
  a.clamp_min = j.at("clamp").at(0).get<double>();
  a.clamp_max = j.at("clamp").at(1).get<double>();
  return a;
}

}  // namespace io_detail

// Model container: <dir>/manifest.json plus one raw little-endian blob per
// tensor named <layer_id>.<role>.bin with roles wf, wq, bf, bq.
inline void save_model(const ModelGraph& g, const std::filesystem::path& dir) {
  namespace fs = std::filesystem;
  using nlohmann::json;
  fs::create_directories(dir);

  json layers = json::array();
  for (const auto& l : g.layers) {
    json jl{{"id", l.id},
            {"kind", kind_name(l.kind)},
            {"attrs", io_detail::attrs_to_json(l.attrs)},
            {"inputs", l.input_ids},
            {"input_qp", io_detail::qp_to_json(l.input_qp)},
            {"output_qp", io_detail::qp_to_json(l.output_qp)}};
    if (l.weight_qp) jl["weight_qp"] = io_detail::qp_to_json(*l.weight_qp);
    json tensors = json::object();
    auto emit = [&](const char* role, const std::optional<TensorBuffer>& t) {
      if (!t) return;
      const std::string file = l.id + "." + role + ".bin";
      io_detail::write_blob(dir / file, *t);
      tensors[role] = json{{"shape", t->shape()}, {"dtype", dtype_name(t->dtype())}, {"file", file}};
    };
    emit("wf", l.weights_float);
    emit("wq", l.weights_quant);
    emit("bf", l.bias_float);
    emit("bq", l.bias_quant);
    jl["tensors"] = std::move(tensors);
    layers.push_back(std::move(jl));
  }

  json manifest{{"ir_version", 1},
                {"input",
                 {{"id", g.input_id},
                  {"shape", g.input_shape},
                  {"qp", io_detail::qp_to_json(g.input_qp)}}},
                {"output_id", g.output_id},
                {"metadata", g.metadata},
                {"layers", std::move(layers)}};

  std::ofstream f(dir / "manifest.json");
  if (!f) throw Error("cannot open for write: " + (dir / "manifest.json").string());
  f << manifest.dump(2) << "\n";
}

inline ModelGraph load_model(const std::filesystem::path& dir) {
  namespace fs = std::filesystem;
  using nlohmann::json;
  std::ifstream f(dir / "manifest.json");
  if (!f) throw ParseError("missing manifest: " + (dir / "manifest.json").string());
  json manifest;
  try {
    manifest = json::parse(f);
  } catch (const json::parse_error& e) {
    throw ParseError("manifest.json: " + std::string(e.what()));
  }

  try {
    const int version = manifest.at("ir_version").get<int>();
    if (version != 1)
      throw VersionMismatch("unsupported ir_version " + std::to_string(version));

    ModelGraph g;
    const auto& jin = manifest.at("input");
    g.input_id = jin.at("id").get<std::string>();
    g.input_shape = jin.at("shape").get<std::vector<int64_t>>();
    g.input_qp = io_detail::qp_from_json(jin.at("qp"));
    g.output_id = manifest.at("output_id").get<std::string>();
    if (manifest.contains("metadata"))
      g.metadata = manifest.at("metadata").get<std::map<std::string, std::string>>();

    for (const auto& jl : manifest.at("layers")) {
      LayerNode l;
      l.id = jl.at("id").get<std::string>();
      l.kind = kind_from_name(jl.at("kind").get<std::string>());
      l.attrs = io_detail::attrs_from_json(jl.at("attrs"));
      l.input_ids = jl.at("inputs").get<std::vector<std::string>>();
      l.input_qp = io_detail::qp_from_json(jl.at("input_qp"));
      l.output_qp = io_detail::qp_from_json(jl.at("output_qp"));
      if (jl.contains("weight_qp")) l.weight_qp = io_detail::qp_from_json(jl.at("weight_qp"));
      const auto& tensors = jl.at("tensors");
      auto fetch = [&](const char* role) -> std::optional<TensorBuffer> {
        if (!tensors.contains(role)) return std::nullopt;
        const auto& jt = tensors.at(role);
        return io_detail::read_blob(dir / jt.at("file").get<std::string>(),
                                    jt.at("shape").get<std::vector<int64_t>>(),
                                    dtype_from_name(jt.at("dtype").get<std::string>()));
      };
      l.weights_float = fetch("wf");
      l.weights_quant = fetch("wq");
      l.bias_float = fetch("bf");
      l.bias_quant = fetch("bq");
      g.layers.push_back(std::move(l));
    }
    return g;
  } catch (const json::exception& e) {
    throw ParseError("manifest.json: " + std::string(e.what()));
  }
}

}  // namespace requant
