// Command-line front end: load -> transform -> evaluate -> report.
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "requant/requant.hpp"

namespace fs = std::filesystem;
using namespace requant;

namespace {

int verbosity() {
  const char* v = std::getenv("REQUANT_LOG");
  if (!v) return 0;
  const std::string s = v;
  if (s == "debug") return 2;
  if (s == "info") return 1;
  return 0;
}

void log_info(const std::string& msg) {
  if (verbosity() >= 1) std::cerr << "[requant] " << msg << "\n";
}

TargetScheme parse_scheme(const std::string& s) {
  if (s == "symmetric") return TargetScheme::Symmetric;
  if (s == "symmetric-pow2") return TargetScheme::SymmetricPow2;
  throw CLI::ValidationError("--scheme", "expected symmetric or symmetric-pow2");
}

std::vector<PassKind> parse_passes(const std::string& csv) {
  std::vector<PassKind> out;
  size_t start = 0;
  while (start <= csv.size()) {
    const size_t comma = csv.find(',', start);
    const std::string tok = csv.substr(start, comma == std::string::npos ? csv.size() - start
                                                                         : comma - start);
    if (!tok.empty()) out.push_back(pass_from_name(tok));
    if (comma == std::string::npos) break;
    start = comma + 1;
  }
  return out;
}

std::string fmt(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.6g", v);
  return buf;
}

int cmd_inspect(const std::string& model_path) {
  ModelGraph g = load_model(model_path);
  std::printf("%-24s %-18s %-22s %-12s %-12s %-12s %-12s %s\n", "layer", "kind", "scheme(out)",
              "s_in", "s_w", "s_out", "M", "pow2");
  for (const auto& l : g.layers) {
    std::string m_str = "-", pow2_str = "-";
    if (kind_has_weights(l.kind) && l.weight_qp) {
      const Multiplier m =
          compute_multiplier(l.weight_qp->scale, l.input_qp.scale, l.output_qp.scale);
      m_str = fmt(m.value);
      pow2_str = m.is_pow2 ? "yes" : "no";
    }
    const std::string s_in = fmt(l.input_qp.scale);
    const std::string s_w = l.weight_qp ? fmt(l.weight_qp->scale) : "-";
    const std::string s_out = fmt(l.output_qp.scale);
    std::printf("%-24s %-18s %-22s %-12s %-12s %-12s %-12s %s\n", l.id.c_str(),
                kind_name(l.kind), scheme_name(l.output_qp.scheme), s_in.c_str(), s_w.c_str(),
                s_out.c_str(), m_str.c_str(), pow2_str.c_str());
  }
  const auto violations = validate(g);
  if (!violations.empty()) {
    std::printf("violations:\n");
    for (const auto& v : violations)
      std::printf("  %s %s %s\n", v.layer_id.c_str(), v.rule.c_str(), v.detail.c_str());
  }
  return 0;
}

int cmd_transform(const std::string& model_path, const std::string& scheme,
                  const std::string& passes, const std::string& clip,
                  const std::string& calib_path, const std::string& out_path,
                  const std::string& report_path, const std::string& report_json_path) {
  ModelGraph g = load_model(model_path);
  PassConfig cfg;
  cfg.target_scheme = parse_scheme(scheme);
  cfg.passes = parse_passes(passes);
  if (clip == "auto") {
    cfg.clip.auto_mode = true;
  } else if (!clip.empty()) {
    cfg.clip.value = std::stod(clip);
  }
  std::optional<CalibrationSet> calib;
  if (!calib_path.empty()) calib = load_calibration(calib_path);

  log_info("running pipeline");
  auto [out, report] = run_pipeline(g, cfg, calib ? &*calib : nullptr);
  save_model(out, out_path);
  if (!report_path.empty()) write_pass_report_text(report, report_path);
  if (!report_json_path.empty()) write_pass_report_json(report, report_json_path);
  log_info("wrote " + out_path);
  return 0;
}

int cmd_eval(const std::string& model_path, const std::string& calib_path,
             const std::string& out_path) {
  ModelGraph g = load_model(model_path);
  CalibrationSet calib = load_calibration(calib_path);
  EvalReport report = compare(g, g, calib, TraceMode::Float, TraceMode::Quant);
  report.model_a = model_path + " (float reference)";
  report.model_b = model_path + " (integer path)";
  if (calib.labels) report.top1 = top1_accuracy(g, calib);
  const std::string text = eval_report_to_json(report).dump(2);
  if (out_path.empty()) {
    std::printf("%s\n", text.c_str());
  } else {
    std::ofstream(out_path) << text << "\n";
  }
  return 0;
}

int cmd_diff(const std::string& path_a, const std::string& path_b,
             const std::string& calib_path, const std::string& out_path) {
  ModelGraph a = load_model(path_a);
  ModelGraph b = load_model(path_b);
  CalibrationSet calib = load_calibration(calib_path);
  EvalReport report = compare(a, b, calib);
  report.model_a = path_a;
  report.model_b = path_b;
  const std::string text = eval_report_to_json(report).dump(2);
  if (out_path.empty()) {
    std::printf("%s\n", text.c_str());
  } else {
    std::ofstream(out_path) << text << "\n";
  }
  return 0;
}

struct AblateCell {
  bool available = false;
  double output_mse = 0.0;
  std::optional<double> top1;
};

int cmd_ablate(const std::string& model_path, const std::string& calib_path,
               const std::string& out_dir, const std::string& clip, int seed) {
  ModelGraph g = load_model(model_path);
  CalibrationSet calib = load_calibration(calib_path);
  fs::create_directories(out_dir);

  ClipSpec clip_spec;
  if (clip == "auto") {
    clip_spec.auto_mode = true;
  } else if (!clip.empty()) {
    clip_spec.value = std::stod(clip);
  }

  const std::vector<std::pair<std::string, std::vector<PassKind>>> ladder = {
      {"original", {}},
      {"naive", {}},
      {"bc", {PassKind::BC}},
      {"bc+wcl", {PassKind::BC, PassKind::WCL}},
      {"bc+wcl+wcr", {PassKind::BC, PassKind::WCL, PassKind::WCR}},
      {"bc+wcl+wcr+ref", {PassKind::BC, PassKind::WCL, PassKind::WCR, PassKind::REF}},
  };
  const std::vector<std::pair<std::string, TargetScheme>> schemes = {
      {"symmetric", TargetScheme::Symmetric},
      {"symmetric-pow2", TargetScheme::SymmetricPow2},
  };

  std::map<std::string, std::map<std::string, AblateCell>> table;
  for (const auto& [scheme_name_str, scheme] : schemes) {
    for (const auto& [row, passes] : ladder) {
      AblateCell cell;
      std::optional<ModelGraph> transformed;
      if (row == "original") {
        transformed = g;
      } else if (row == "naive") {
        transformed = naive_requant(g, scheme);
      } else if (row == "bc+wcl+wcr+ref" && scheme != TargetScheme::SymmetricPow2) {
        // REF only applies to the pow2 scheme; mirror the "---" cell
      } else {
        PassConfig cfg;
        cfg.target_scheme = scheme;
        cfg.passes = passes;
        cfg.clip = clip_spec;
        auto [out, report] = run_pipeline(g, cfg, &calib);
        transformed = std::move(out);
        write_pass_report_text(report, fs::path(out_dir) / (scheme_name_str + "." + row + ".passes.txt"));
      }
      if (transformed) {
        log_info("ablate " + scheme_name_str + " / " + row);
        cell.available = true;
        cell.output_mse =
            compare(g, *transformed, calib, TraceMode::Float, TraceMode::Quant).output_mse;
        if (calib.labels) cell.top1 = top1_accuracy(*transformed, calib);
        if (row != "original")
          save_model(*transformed, fs::path(out_dir) / scheme_name_str / row);
      }
      table[row][scheme_name_str] = cell;
    }
  }

  // fixed-width text table, one row per pass combination
  std::string text;
  char line[256];
  std::snprintf(line, sizeof line, "%-18s %-26s %-26s\n", "requantization", "symmetric",
                "symmetric-pow2");
  text += line;
  for (const auto& [row, passes] : ladder) {
    std::string cells[2];
    for (size_t s = 0; s < schemes.size(); ++s) {
      const AblateCell& c = table[row][schemes[s].first];
      if (!c.available) {
        cells[s] = "---";
      } else {
        cells[s] = "mse=" + fmt(c.output_mse);
        if (c.top1) cells[s] += " top1=" + fmt(*c.top1);
      }
    }
    std::snprintf(line, sizeof line, "%-18s %-26s %-26s\n", row.c_str(), cells[0].c_str(),
                  cells[1].c_str());
    text += line;
  }
  std::printf("%s", text.c_str());
  std::ofstream(fs::path(out_dir) / "ablation.txt") << text;

  nlohmann::json jrows = nlohmann::json::object();
  for (const auto& [row, by_scheme] : table) {
    nlohmann::json jr = nlohmann::json::object();
    for (const auto& [sname, cell] : by_scheme) {
      if (!cell.available) {
        jr[sname] = nullptr;
        continue;
      }
      nlohmann::json jc{{"output_mse", cell.output_mse}};
      if (cell.top1) jc["top1"] = *cell.top1;
      jr[sname] = std::move(jc);
    }
    jrows[row] = std::move(jr);
  }
  std::ofstream(fs::path(out_dir) / "ablation.json")
      << nlohmann::json{{"seed", seed}, {"rows", std::move(jrows)}}.dump(2) << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"per-tensor model re-quantization toolkit"};
  app.require_subcommand(1);

  std::string model, model_b, scheme = "symmetric", passes, clip, calib, out, report,
                             report_json;
  int seed = 1;

  auto* sc_inspect = app.add_subcommand("inspect", "print per-layer params and multipliers");
  sc_inspect->add_option("model", model, "model directory")->required();

  auto* sc_transform = app.add_subcommand("transform", "re-quantize a model");
  sc_transform->add_option("model", model, "model directory")->required();
  sc_transform->add_option("--scheme", scheme, "symmetric | symmetric-pow2");
  sc_transform->add_option("--passes", passes, "comma-separated subset of bc,wcl,wcr,ref");
  sc_transform->add_option("--clip", clip, "clip threshold (real or 'auto')");
  sc_transform->add_option("--calib", calib, "calibration directory (required for bc)");
  sc_transform->add_option("--out", out, "output model directory")->required();
  sc_transform->add_option("--report", report, "pass report (text)");
  sc_transform->add_option("--report-json", report_json, "pass report (json)");

  auto* sc_eval = app.add_subcommand("eval", "integer path vs float reference metrics");
  sc_eval->add_option("model", model, "model directory")->required();
  sc_eval->add_option("--calib", calib, "calibration directory")->required();
  sc_eval->add_option("--out", out, "write the JSON report here instead of stdout");

  auto* sc_diff = app.add_subcommand("diff", "compare two models on a calibration set");
  sc_diff->add_option("model_a", model, "first model directory")->required();
  sc_diff->add_option("model_b", model_b, "second model directory")->required();
  sc_diff->add_option("--calib", calib, "calibration directory")->required();
  sc_diff->add_option("--out", out, "write the JSON report here instead of stdout");

  auto* sc_ablate = app.add_subcommand("ablate", "run the full re-quantization ladder");
  sc_ablate->add_option("model", model, "model directory")->required();
  sc_ablate->add_option("--calib", calib, "calibration directory")->required();
  sc_ablate->add_option("--out", out, "output directory")->required();
  sc_ablate->add_option("--clip", clip, "clip threshold (real or 'auto')");
  sc_ablate->add_option("--seed", seed, "seed recorded in reports");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : 2;
  }

  try {
    if (sc_inspect->parsed()) return cmd_inspect(model);
    if (sc_transform->parsed())
      return cmd_transform(model, scheme, passes, clip, calib, out, report, report_json);
    if (sc_eval->parsed()) return cmd_eval(model, calib, out);
    if (sc_diff->parsed()) return cmd_diff(model, model_b, calib, out);
    if (sc_ablate->parsed()) return cmd_ablate(model, calib, out, clip, seed);
  } catch (const ParseError& e) {
    std::cerr << "ParseError: " << e.what() << "\n";
    return 2;
  } catch (const VersionMismatch& e) {
    std::cerr << "VersionMismatch: " << e.what() << "\n";
    return 2;
  } catch (const SchemePrecondition& e) {
    std::cerr << "SchemePrecondition: " << e.what() << "\n";
    return 2;
  } catch (const EmptyCalibration& e) {
    std::cerr << "EmptyCalibration: " << e.what() << "\n";
    return 2;
  } catch (const MissingLabels& e) {
    std::cerr << "MissingLabels: " << e.what() << "\n";
    return 2;
  } catch (const ShapeInconsistency& e) {
    std::cerr << "ShapeInconsistency: " << e.what() << "\n";
    return 2;
  } catch (const InvalidRange& e) {
    std::cerr << "InvalidRange: " << e.what() << "\n";
    return 2;
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "internal error: " << e.what() << "\n";
    return 1;
  }
  return 2;
}
