#include "qsf/spectrum.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <filesystem>
#include <sstream>

#include "qsf/errors.hpp"
#include "qsf/io.hpp"

namespace qsf {
namespace {

std::string format_double(double v) {
  char buf[32];
  const auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

double parse_double(std::string_view s, const char* what) {
  double v = 0.0;
  const auto res = std::from_chars(s.data(), s.data() + s.size(), v);
  if (res.ec != std::errc() || res.ptr != s.data() + s.size()) {
    throw FormatError(std::string("csv: bad ") + what + " '" + std::string(s) + "'");
  }
  return v;
}

long parse_long(std::string_view s, const char* what) {
  long v = 0;
  const auto res = std::from_chars(s.data(), s.data() + s.size(), v);
  if (res.ec != std::errc() || res.ptr != s.data() + s.size()) {
    throw FormatError(std::string("csv: bad ") + what + " '" + std::string(s) + "'");
  }
  return v;
}

std::vector<std::string_view> split_fields(std::string_view line) {
  std::vector<std::string_view> out;
  std::size_t start = 0;
  while (true) {
    const std::size_t comma = line.find(',', start);
    out.push_back(line.substr(start, comma - start));
    if (comma == std::string_view::npos) break;
    start = comma + 1;
  }
  return out;
}

// Data lines after the expected header; blank lines are skipped.
std::vector<std::string_view> data_lines(std::string_view text, std::string_view header) {
  std::vector<std::string_view> lines;
  std::size_t start = 0;
  bool first = true;
  while (start < text.size()) {
    std::size_t end = text.find('\n', start);
    if (end == std::string_view::npos) end = text.size();
    std::string_view line = text.substr(start, end - start);
    if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
    start = end + 1;
    if (first) {
      if (line != header) {
        throw FormatError("csv: expected header '" + std::string(header) + "', got '" +
                          std::string(line) + "'");
      }
      first = false;
      continue;
    }
    if (!line.empty()) lines.push_back(line);
  }
  if (first) throw FormatError("csv: empty file");
  return lines;
}

void count(LayerSpectrum& layer, ModeClass c) {
  switch (c) {
    case ModeClass::Decay: ++layer.decay; break;
    case ModeClass::Neutral: ++layer.neutral; break;
    case ModeClass::Growth: ++layer.growth; break;
  }
}

void finish(SpectrumReport& report) {
  report.decay = report.neutral = report.growth = 0;
  report.max_unit_deviation = 0.0;
  for (auto& layer : report.layers) {
    std::stable_sort(layer.modes.begin(), layer.modes.end(), [](const Mode& a, const Mode& b) {
      const double pa = std::arg(a.lambda);
      const double pb = std::arg(b.lambda);
      if (pa != pb) return pa < pb;
      return a.modulus < b.modulus;
    });
    report.decay += layer.decay;
    report.neutral += layer.neutral;
    report.growth += layer.growth;
    for (const Mode& m : layer.modes) {
      report.max_unit_deviation = std::max(report.max_unit_deviation, std::abs(m.modulus - 1.0));
    }
  }
}

}  // namespace

std::string to_string(ModeClass c) {
  switch (c) {
    case ModeClass::Decay: return "decay";
    case ModeClass::Neutral: return "neutral";
    case ModeClass::Growth: return "growth";
  }
  return "neutral";
}

ModeClass parse_mode_class(std::string_view text) {
  if (text == "decay") return ModeClass::Decay;
  if (text == "neutral") return ModeClass::Neutral;
  if (text == "growth") return ModeClass::Growth;
  throw FormatError("unknown mode class '" + std::string(text) + "'");
}

ModeClass classify_mode(Complex lambda, double tol) {
  if (!(tol > 0.0)) throw RangeError("classify_mode: tolerance must be positive");
  const double r = std::abs(lambda);
  if (r < 1.0 - tol) return ModeClass::Decay;
  if (r > 1.0 + tol) return ModeClass::Growth;
  return ModeClass::Neutral;
}

std::vector<ModeClass> classify_modes(const std::vector<Complex>& lambdas, double tol) {
  if (!(tol > 0.0)) throw RangeError("classify_modes: tolerance must be positive");
  std::vector<ModeClass> out;
  out.reserve(lambdas.size());
  for (const Complex& l : lambdas) out.push_back(classify_mode(l, tol));
  return out;
}

SpectrumReport spectrum_of(const std::vector<RealMatrix>& operators, double tol) {
  if (!(tol > 0.0)) throw RangeError("spectrum: tolerance must be positive");
  SpectrumReport report;
  report.tol = tol;
  for (std::size_t l = 0; l < operators.size(); ++l) {
    LayerSpectrum layer;
    layer.layer = static_cast<int>(l);
    for (const Complex& lambda : eigenvalues(operators[l])) {
      const ModeClass c = classify_mode(lambda, tol);
      layer.modes.push_back({lambda, std::abs(lambda), c});
      count(layer, c);
    }
    report.layers.push_back(std::move(layer));
  }
  finish(report);
  return report;
}

SpectrumReport layer_spectrum(const Checkpoint& ckpt, double tol) {
  const Model model(ckpt.config);
  return spectrum_of(model.koopman_operators(ckpt.params), tol);
}

std::string spectrum_csv(const SpectrumReport& report) {
  std::string out = "layer,re,im,modulus,class\n";
  for (const auto& layer : report.layers) {
    for (const Mode& m : layer.modes) {
      out += std::to_string(layer.layer) + ',' + format_double(m.lambda.real()) + ',' +
             format_double(m.lambda.imag()) + ',' + format_double(m.modulus) + ',' +
             to_string(m.cls) + '\n';
    }
  }
  return out;
}

void export_spectrum_csv(const SpectrumReport& report, const std::string& path) {
  write_file_atomic(path, spectrum_csv(report));
}

SpectrumReport parse_spectrum_csv(std::string_view text, double tol) {
  SpectrumReport report;
  report.tol = tol;
  for (std::string_view line : data_lines(text, "layer,re,im,modulus,class")) {
    const auto f = split_fields(line);
    if (f.size() != 5) throw FormatError("spectrum csv: expected 5 fields in '" + std::string(line) + "'");
    const int layer = static_cast<int>(parse_long(f[0], "layer"));
    if (layer < 0) throw FormatError("spectrum csv: negative layer");
    if (report.layers.empty() || report.layers.back().layer != layer) {
      if (!report.layers.empty() && layer < report.layers.back().layer) {
        throw FormatError("spectrum csv: rows are not ordered by layer");
      }
      report.layers.push_back(LayerSpectrum{layer, {}, 0, 0, 0});
    }
    Mode m;
    m.lambda = Complex(parse_double(f[1], "re"), parse_double(f[2], "im"));
    m.modulus = parse_double(f[3], "modulus");
    m.cls = parse_mode_class(f[4]);
    count(report.layers.back(), m.cls);
    report.layers.back().modes.push_back(m);
  }
  finish(report);
  return report;
}

void ZetaTrace::append(long step, std::vector<double> zeta) {
  if (!records_.empty() && records_.front().zeta.size() != zeta.size()) {
    throw DimensionError("zeta trace: " + std::to_string(zeta.size()) + " layers, expected " +
                         std::to_string(records_.front().zeta.size()));
  }
  ZetaRecord r;
  r.step = step;
  const auto n = static_cast<double>(zeta.size());
  if (!zeta.empty()) {
    double sum = 0.0;
    for (double z : zeta) sum += z;
    r.mean = sum / n;
    double sq = 0.0;
    for (double z : zeta) sq += (z - r.mean) * (z - r.mean);
    r.std = std::sqrt(sq / n);
  }
  r.zeta = std::move(zeta);
  records_.push_back(std::move(r));
}

std::string zeta_csv(const ZetaTrace& trace) {
  std::string out = "step,layer,zeta\n";
  for (const auto& r : trace.records()) {
    for (std::size_t l = 0; l < r.zeta.size(); ++l) {
      out += std::to_string(r.step) + ',' + std::to_string(l) + ',' + format_double(r.zeta[l]) +
             '\n';
    }
  }
  return out;
}

std::string zeta_summary_csv(const ZetaTrace& trace) {
  std::string out = "step,mean,std\n";
  for (const auto& r : trace.records()) {
    out += std::to_string(r.step) + ',' + format_double(r.mean) + ',' + format_double(r.std) +
           '\n';
  }
  return out;
}

void export_zeta_csv(const ZetaTrace& trace, const std::string& path,
                     const std::string& summary_path) {
  write_file_atomic(path, zeta_csv(trace));
  write_file_atomic(summary_path, zeta_summary_csv(trace));
}

std::string zeta_summary_path(const std::string& path) {
  std::filesystem::path p(path);
  const std::string stem = p.stem().string();
  const std::string ext = p.has_extension() ? p.extension().string() : std::string(".csv");
  return (p.parent_path() / (stem + "_summary" + ext)).string();
}

ZetaTrace parse_zeta_csv(std::string_view text) {
  ZetaTrace trace;
  long current = 0;
  std::vector<double> values;
  bool open = false;
  for (std::string_view line : data_lines(text, "step,layer,zeta")) {
    const auto f = split_fields(line);
    if (f.size() != 3) throw FormatError("zeta csv: expected 3 fields in '" + std::string(line) + "'");
    const long step = parse_long(f[0], "step");
    const long layer = parse_long(f[1], "layer");
    if (!open || step != current) {
      if (open) trace.append(current, std::move(values));
      values.clear();
      current = step;
      open = true;
    }
    if (layer != static_cast<long>(values.size())) {
      throw FormatError("zeta csv: layers out of order at step " + std::to_string(step));
    }
    values.push_back(parse_double(f[2], "zeta"));
  }
  if (open) trace.append(current, std::move(values));
  return trace;
}

Json to_json(const ZetaTrace& trace) {
  Json arr = Json::array();
  for (const auto& r : trace.records()) {
    Json j;
    j["step"] = r.step;
    j["zeta"] = r.zeta;
    arr.push_back(std::move(j));
  }
  return arr;
}

ZetaTrace zeta_trace_from_json(const Json& j) {
  ZetaTrace trace;
  if (!j.is_array()) throw FormatError("zeta trace: expected an array");
  try {
    for (const Json& r : j) trace.append(r.at("step").get<long>(), r.at("zeta").get<std::vector<double>>());
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("zeta trace: ") + e.what());
  }
  return trace;
}

}  // namespace qsf
