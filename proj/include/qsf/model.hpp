#pragma once

// The four progressive stage architectures, built on the autodiff tape.
//
//   Stage I    x' = x + DFT_causal(LN(x)) + MLP(x)
//   Stage II   h = LN(x);  x' = x + K h + MLP(h)
//   Stage III  x' = x + K N(x) + zeta * LinearAttention(x)
//   Stage IV   as Stage III with K = exp(W - W^T)
//
// Hidden states are real; row t of a sequence matrix is position t.

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "qsf/autodiff.hpp"
#include "qsf/linalg.hpp"

namespace qsf {

enum class Stage : int { I = 1, II = 2, III = 3, IV = 4 };
enum class NormMode { LayerNorm, LinearScale };
enum class FfnMode { GeluMlp, Linear, None };

std::string to_string(Stage stage);
std::string to_string(NormMode mode);
std::string to_string(FfnMode mode);
// Accepts "layernorm" / "linear-scale".
NormMode parse_norm_mode(std::string_view text);
// Accepts "gelu-mlp" / "linear" / "none".
FfnMode parse_ffn_mode(std::string_view text);
// Accepts 1..4.
Stage stage_from_int(int stage);

struct StageConfig {
  Stage stage = Stage::II;
  int d = 64;
  int layers = 4;
  int d_ff = 256;
  int vocab = 256;
  int seq_len = 128;
  NormMode norm_mode = NormMode::LayerNorm;
  FfnMode ffn_mode = FfnMode::GeluMlp;
  double dropout = 0.1;
  int heads = 1;
  double init_std = 0.02;
  double zeta_init = 1.0;

  // Desk-scale defaults. Stages I-II carry a GELU MLP and dropout; Stages
  // III-IV have no feed-forward path and no dropout.
  static StageConfig desk(Stage stage);

  // Throws ConfigError naming the offending field.
  void validate() const;

  bool operator==(const StageConfig&) const = default;
};

struct ParamSpec {
  std::string name;
  int rows = 0;
  int cols = 0;
  bool decay = true;
};

// Per-layer parameter name, e.g. layer_param(2, "koopman") -> "layers.2.koopman".
std::string layer_param(int layer, std::string_view leaf);

struct ForwardOptions {
  bool training = false;
  std::uint64_t dropout_seed = 0;
  // When set, receives the residual stream entering each layer followed by
  // the stream after the last layer (layers + 1 entries).
  std::vector<ad::Var>* trace = nullptr;
};

// Layer building blocks. Each reads its parameters from the tape's store
// under the layer's name prefix.
ad::Var apply_norm(ad::Tape& tape, ad::Var x, NormMode mode, const std::string& prefix);
ad::Var mlp(ad::Tape& tape, ad::Var h, const StageConfig& cfg, int layer,
            const ForwardOptions& opts);
ad::Var fnetar_layer(ad::Tape& tape, ad::Var x, const StageConfig& cfg, int layer,
                     const ForwardOptions& opts);
ad::Var koopman_layer(ad::Tape& tape, ad::Var x, const StageConfig& cfg, int layer,
                      const ForwardOptions& opts);
// LinearAttention(x) = sum_{s<=t} phi(q_t).phi(k_s) v_s with phi(x) = x + c.
ad::Var linear_attention(ad::Tape& tape, ad::Var x, int layer);
// Stage III and IV layer; the Koopman operator is K or exp(W - W^T).
ad::Var hybrid_layer(ad::Tape& tape, ad::Var x, const StageConfig& cfg, int layer,
                     const ForwardOptions& opts);

// exp(W - W^T): orthogonal, every eigenvalue on the unit circle.
RealMatrix hamiltonian_unitary(const RealMatrix& w);

class Model {
 public:
  explicit Model(StageConfig cfg);

  const StageConfig& config() const { return cfg_; }

  std::vector<ParamSpec> parameter_specs() const;
  std::size_t parameter_count() const;

  // Adds every parameter to an empty store with its initial value.
  void init_parameters(ad::ParamStore& store, std::uint64_t seed) const;
  // Throws FormatError when the store lacks a tensor or a shape differs.
  void check_parameters(const ad::ParamStore& store) const;

  // tokens.size() x vocab logits. Throws RangeError for ids outside the
  // vocabulary or sequences longer than seq_len.
  ad::Var logits(ad::Tape& tape, std::span<const int> tokens,
                 const ForwardOptions& opts = {}) const;
  ad::Var loss(ad::Tape& tape, std::span<const int> tokens, std::span<const int> targets,
               const ForwardOptions& opts = {}) const;

  RealMatrix infer_logits(const ad::ParamStore& store, std::span<const int> tokens) const;

  // Koopman operator per layer: K (Stages II-III) or exp(W - W^T) (Stage IV).
  std::vector<RealMatrix> koopman_operators(const ad::ParamStore& store) const;
  // Mixing coefficient per layer (Stages III-IV).
  std::vector<double> zeta_values(const ad::ParamStore& store) const;

  /// Logits at the last position when its input embedding is replaced by psi
  /// and every attention weight row of that position is held at the value
  /// computed from the unmodified sequence. Values, keys and all earlier
  /// positions come from the unmodified pass. With linear-scale norms and a
  /// linear or absent feed-forward path this map is affine in psi.
  /// Stages III-IV only.
  RealVector frozen_step_logits(const ad::ParamStore& store, std::span<const int> tokens,
                                const RealVector& psi) const;

 private:
  void check_tokens(std::span<const int> tokens) const;

  StageConfig cfg_;
};

}  // namespace qsf
