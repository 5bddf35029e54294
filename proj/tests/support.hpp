#pragma once

#include <filesystem>
#include <random>
#include <string>

#include "qsf/autodiff.hpp"
#include "qsf/linalg.hpp"
#include "qsf/model.hpp"

namespace qsf::test {

inline RealMatrix random_matrix(std::mt19937_64& rng, int rows, int cols, double scale = 1.0) {
  std::normal_distribution<double> n(0.0, scale);
  RealMatrix m(rows, cols);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = n(rng);
  return m;
}

inline ComplexMatrix random_complex(std::mt19937_64& rng, int rows, int cols, double scale = 1.0) {
  ComplexMatrix m(rows, cols);
  m.real() = random_matrix(rng, rows, cols, scale / std::sqrt(2.0));
  m.imag() = random_matrix(rng, rows, cols, scale / std::sqrt(2.0));
  return m;
}

inline StageConfig micro_config(Stage stage) {
  StageConfig cfg = StageConfig::desk(stage);
  cfg.d = 8;
  cfg.layers = 2;
  cfg.d_ff = 16;
  cfg.seq_len = 16;
  cfg.dropout = 0.0;
  return cfg;
}

// Adds N(0, scale^2) noise to every parameter so no path sits at its
// neutral initial value.
inline void perturb(ad::ParamStore& store, std::mt19937_64& rng, double scale) {
  for (ad::Parameter& p : store.params()) {
    p.value += random_matrix(rng, static_cast<int>(p.value.rows()), static_cast<int>(p.value.cols()), scale);
  }
}

struct CausalityResult {
  int trials = 0;
  int violations = 0;
};

// Mutates every token at positions >= t and requires logits at positions < t
// to stay bit-identical.
inline CausalityResult causality_trials(const StageConfig& cfg, int trials, std::uint64_t seed) {
  const Model model(cfg);
  ad::ParamStore store;
  model.init_parameters(store, seed);
  std::mt19937_64 rng(seed);
  perturb(store, rng, 0.3);
  CausalityResult r;
  for (int k = 0; k < trials; ++k) {
    const int n = 2 + static_cast<int>(rng() % (cfg.seq_len - 1));
    std::vector<int> tokens(static_cast<std::size_t>(n));
    for (auto& t : tokens) t = static_cast<int>(rng() % cfg.vocab);
    const int cut = 1 + static_cast<int>(rng() % (n - 1));
    std::vector<int> mutated = tokens;
    for (int i = cut; i < n; ++i) mutated[static_cast<std::size_t>(i)] = static_cast<int>(rng() % cfg.vocab);
    const RealMatrix a = model.infer_logits(store, tokens);
    const RealMatrix b = model.infer_logits(store, mutated);
    ++r.trials;
    if (a.topRows(cut) != b.topRows(cut)) ++r.violations;
  }
  return r;
}

// Fresh directory under the system temp dir, removed on destruction.
class TempDir {
 public:
  explicit TempDir(const std::string& tag) {
    std::random_device rd;
    path_ = std::filesystem::temp_directory_path() /
            ("qsf_" + tag + "_" + std::to_string(rd()) + std::to_string(rd()));
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;

  std::string file(const std::string& name) const { return (path_ / name).string(); }
  const std::filesystem::path& path() const { return path_; }

 private:
  std::filesystem::path path_;
};

}  // namespace qsf::test
