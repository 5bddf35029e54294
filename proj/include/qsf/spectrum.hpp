#pragma once

// Eigenvalue spectra of the per-layer Koopman operators and the layer-mixing
// coefficient trace.
//
// spectrum CSV:      layer,re,im,modulus,class
// zeta CSV:          step,layer,zeta
// zeta summary CSV:  step,mean,std

#include <string>
#include <string_view>
#include <vector>

#include "qsf/checkpoint.hpp"
#include "qsf/linalg.hpp"

namespace qsf {

inline constexpr double kDefaultNeutralTol = 0.02;

enum class ModeClass { Decay, Neutral, Growth };

std::string to_string(ModeClass c);
ModeClass parse_mode_class(std::string_view text);

// |lambda| < 1 - tol: decay; > 1 + tol: growth; otherwise neutral.
// Throws RangeError unless tol > 0.
ModeClass classify_mode(Complex lambda, double tol);
std::vector<ModeClass> classify_modes(const std::vector<Complex>& lambdas, double tol);

struct Mode {
  Complex lambda;
  double modulus = 0.0;
  ModeClass cls = ModeClass::Neutral;
};

struct LayerSpectrum {
  int layer = 0;
  // Sorted by angle in (-pi, pi], then by modulus.
  std::vector<Mode> modes;
  int decay = 0;
  int neutral = 0;
  int growth = 0;
};

struct SpectrumReport {
  double tol = kDefaultNeutralTol;
  std::vector<LayerSpectrum> layers;
  // Pooled over every layer.
  int decay = 0;
  int neutral = 0;
  int growth = 0;
  // max | |lambda| - 1 | over every eigenvalue.
  double max_unit_deviation = 0.0;
};

SpectrumReport spectrum_of(const std::vector<RealMatrix>& operators, double tol);
// Throws FormatError when the checkpoint holds no Koopman operators.
SpectrumReport layer_spectrum(const Checkpoint& ckpt, double tol = kDefaultNeutralTol);

std::string spectrum_csv(const SpectrumReport& report);
void export_spectrum_csv(const SpectrumReport& report, const std::string& path);
// Rebuilds a report from CSV text, reclassifying nothing: classes are taken
// from the file. Throws FormatError.
SpectrumReport parse_spectrum_csv(std::string_view text, double tol);

struct ZetaRecord {
  long step = 0;
  std::vector<double> zeta;
  double mean = 0.0;
  // Population standard deviation across layers.
  double std = 0.0;
};

class ZetaTrace {
 public:
  // Throws DimensionError when the layer count differs from earlier records.
  void append(long step, std::vector<double> zeta);
  const std::vector<ZetaRecord>& records() const { return records_; }
  bool empty() const { return records_.empty(); }

 private:
  std::vector<ZetaRecord> records_;
};

std::string zeta_csv(const ZetaTrace& trace);
std::string zeta_summary_csv(const ZetaTrace& trace);
// Writes the per-layer file to path and the summary to summary_path.
void export_zeta_csv(const ZetaTrace& trace, const std::string& path,
                     const std::string& summary_path);
// "runs/x/zeta.csv" -> "runs/x/zeta_summary.csv".
std::string zeta_summary_path(const std::string& path);
ZetaTrace parse_zeta_csv(std::string_view text);

Json to_json(const ZetaTrace& trace);
ZetaTrace zeta_trace_from_json(const Json& j);

}  // namespace qsf
