#include "qsf/model.hpp"

#include <cmath>
#include <random>
#include <sstream>

#include "qsf/errors.hpp"

namespace qsf {

std::string to_string(Stage stage) {
  switch (stage) {
    case Stage::I: return "I";
    case Stage::II: return "II";
    case Stage::III: return "III";
    case Stage::IV: return "IV";
  }
  return "?";
}

std::string to_string(NormMode mode) {
  return mode == NormMode::LayerNorm ? "layernorm" : "linear-scale";
}

std::string to_string(FfnMode mode) {
  switch (mode) {
    case FfnMode::GeluMlp: return "gelu-mlp";
    case FfnMode::Linear: return "linear";
    case FfnMode::None: return "none";
  }
  return "?";
}

NormMode parse_norm_mode(std::string_view text) {
  if (text == "layernorm") return NormMode::LayerNorm;
  if (text == "linear-scale") return NormMode::LinearScale;
  throw ConfigError("norm_mode: expected 'layernorm' or 'linear-scale', got '" +
                    std::string(text) + "'");
}

FfnMode parse_ffn_mode(std::string_view text) {
  if (text == "gelu-mlp") return FfnMode::GeluMlp;
  if (text == "linear") return FfnMode::Linear;
  if (text == "none") return FfnMode::None;
  throw ConfigError("ffn_mode: expected 'gelu-mlp', 'linear' or 'none', got '" +
                    std::string(text) + "'");
}

Stage stage_from_int(int stage) {
  if (stage < 1 || stage > 4) {
    throw ConfigError("stage: expected 1..4, got " + std::to_string(stage));
  }
  return static_cast<Stage>(stage);
}

StageConfig StageConfig::desk(Stage stage) {
  StageConfig cfg;
  cfg.stage = stage;
  if (stage == Stage::III || stage == Stage::IV) {
    cfg.ffn_mode = FfnMode::None;
    cfg.dropout = 0.0;
  }
  return cfg;
}

void StageConfig::validate() const {
  auto positive = [](int v, const char* field) {
    if (v <= 0) throw ConfigError(std::string(field) + ": must be positive");
  };
  positive(d, "d");
  positive(layers, "layers");
  positive(d_ff, "d_ff");
  positive(vocab, "vocab");
  positive(seq_len, "seq_len");
  if (!(dropout >= 0.0 && dropout < 1.0)) throw ConfigError("dropout: must lie in [0, 1)");
  if (heads != 1) {
    throw ConfigError("heads: only single-head linear attention is implemented (got " +
                      std::to_string(heads) + ")");
  }
  if (!(init_std > 0.0) || !std::isfinite(init_std)) {
    throw ConfigError("init_std: must be positive");
  }
  if (!std::isfinite(zeta_init)) throw ConfigError("zeta_init: must be finite");
}

std::string layer_param(int layer, std::string_view leaf) {
  std::string name = "layers.";
  name += std::to_string(layer);
  name += '.';
  name += leaf;
  return name;
}

// ---------------------------------------------------------------------------
// Layers

ad::Var apply_norm(ad::Tape& tape, ad::Var x, NormMode mode, const std::string& prefix) {
  ad::Var gain = tape.param(prefix + ".gain");
  ad::Var bias = tape.param(prefix + ".bias");
  if (mode == NormMode::LayerNorm) return tape.layernorm(x, gain, bias);
  return tape.linear_scale(x, gain, bias);
}

ad::Var mlp(ad::Tape& tape, ad::Var h, const StageConfig& cfg, int layer,
            const ForwardOptions& opts) {
  ad::Var hidden = tape.add_bias(tape.matmul_nt(h, tape.param(layer_param(layer, "mlp.w1"))),
                                 tape.param(layer_param(layer, "mlp.b1")));
  if (cfg.ffn_mode == FfnMode::GeluMlp) hidden = tape.gelu(hidden);
  ad::Var out = tape.add_bias(tape.matmul_nt(hidden, tape.param(layer_param(layer, "mlp.w2"))),
                              tape.param(layer_param(layer, "mlp.b2")));
  if (opts.training && cfg.dropout > 0.0) {
    out = tape.dropout(out, cfg.dropout,
                       opts.dropout_seed * 1000003ULL + static_cast<std::uint64_t>(layer));
  }
  return out;
}

ad::Var fnetar_layer(ad::Tape& tape, ad::Var x, const StageConfig& cfg, int layer,
                     const ForwardOptions& opts) {
  ad::Var normed = apply_norm(tape, x, cfg.norm_mode, layer_param(layer, "fnet_norm"));
  ad::Var mixed = tape.causal_dft_real(normed);
  ad::Var out = tape.add(x, mixed);
  if (cfg.ffn_mode != FfnMode::None) out = tape.add(out, mlp(tape, x, cfg, layer, opts));
  return out;
}

ad::Var koopman_layer(ad::Tape& tape, ad::Var x, const StageConfig& cfg, int layer,
                      const ForwardOptions& opts) {
  ad::Var h = apply_norm(tape, x, cfg.norm_mode, layer_param(layer, "norm"));
  ad::Var k = tape.matmul_nt(h, tape.param(layer_param(layer, "koopman")));
  ad::Var out = tape.add(x, k);
  if (cfg.ffn_mode != FfnMode::None) out = tape.add(out, mlp(tape, h, cfg, layer, opts));
  return out;
}

ad::Var linear_attention(ad::Tape& tape, ad::Var x, int layer) {
  ad::Var q = tape.matmul_nt(x, tape.param(layer_param(layer, "attn.wq")));
  ad::Var k = tape.matmul_nt(x, tape.param(layer_param(layer, "attn.wk")));
  ad::Var v = tape.matmul_nt(x, tape.param(layer_param(layer, "attn.wv")));
  return tape.prefix_linear_attention(q, k, v, tape.param(layer_param(layer, "attn.c")));
}

ad::Var hybrid_layer(ad::Tape& tape, ad::Var x, const StageConfig& cfg, int layer,
                     const ForwardOptions& opts) {
  ad::Var h = apply_norm(tape, x, cfg.norm_mode, layer_param(layer, "norm"));
  ad::Var op = cfg.stage == Stage::IV
                   ? tape.skew_mat_exp(tape.param(layer_param(layer, "hamiltonian_w")))
                   : tape.param(layer_param(layer, "koopman"));
  ad::Var out = tape.add(x, tape.matmul_nt(h, op));
  ad::Var attn = tape.scale(linear_attention(tape, x, layer),
                            tape.param(layer_param(layer, "zeta")));
  out = tape.add(out, attn);
  if (cfg.ffn_mode != FfnMode::None) out = tape.add(out, mlp(tape, h, cfg, layer, opts));
  return out;
}

RealMatrix hamiltonian_unitary(const RealMatrix& w) {
  if (w.rows() != w.cols()) throw DimensionError("hamiltonian_unitary: W must be square");
  return mat_exp(RealMatrix(w - w.transpose()));
}

// ---------------------------------------------------------------------------
// Model

Model::Model(StageConfig cfg) : cfg_(cfg) { cfg_.validate(); }

std::vector<ParamSpec> Model::parameter_specs() const {
  const int d = cfg_.d;
  std::vector<ParamSpec> specs;
  specs.push_back({"tok_emb", cfg_.vocab, d, true});
  specs.push_back({"pos_emb", cfg_.seq_len, d, true});
  for (int l = 0; l < cfg_.layers; ++l) {
    if (cfg_.stage == Stage::I) {
      specs.push_back({layer_param(l, "fnet_norm.gain"), 1, d, false});
      specs.push_back({layer_param(l, "fnet_norm.bias"), 1, d, false});
    } else {
      specs.push_back({layer_param(l, "norm.gain"), 1, d, false});
      specs.push_back({layer_param(l, "norm.bias"), 1, d, false});
      if (cfg_.stage == Stage::IV) {
        specs.push_back({layer_param(l, "hamiltonian_w"), d, d, true});
      } else {
        specs.push_back({layer_param(l, "koopman"), d, d, true});
      }
    }
    if (cfg_.stage == Stage::III || cfg_.stage == Stage::IV) {
      specs.push_back({layer_param(l, "attn.wq"), d, d, true});
      specs.push_back({layer_param(l, "attn.wk"), d, d, true});
      specs.push_back({layer_param(l, "attn.wv"), d, d, true});
      specs.push_back({layer_param(l, "attn.c"), 1, d, false});
      specs.push_back({layer_param(l, "zeta"), 1, 1, false});
    }
    if (cfg_.ffn_mode != FfnMode::None) {
      specs.push_back({layer_param(l, "mlp.w1"), cfg_.d_ff, d, true});
      specs.push_back({layer_param(l, "mlp.b1"), 1, cfg_.d_ff, false});
      specs.push_back({layer_param(l, "mlp.w2"), d, cfg_.d_ff, true});
      specs.push_back({layer_param(l, "mlp.b2"), 1, d, false});
    }
  }
  specs.push_back({"final_norm.gain", 1, d, false});
  specs.push_back({"final_norm.bias", 1, d, false});
  specs.push_back({"out_proj", cfg_.vocab, d, true});
  return specs;
}

std::size_t Model::parameter_count() const {
  std::size_t n = 0;
  for (const auto& s : parameter_specs()) n += static_cast<std::size_t>(s.rows) * s.cols;
  return n;
}

namespace {

bool ends_with(std::string_view s, std::string_view suffix) {
  return s.size() >= suffix.size() && s.substr(s.size() - suffix.size()) == suffix;
}

}  // namespace

void Model::init_parameters(ad::ParamStore& store, std::uint64_t seed) const {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, cfg_.init_std);
  for (const auto& spec : parameter_specs()) {
    RealMatrix value(spec.rows, spec.cols);
    if (ends_with(spec.name, ".gain")) {
      value.setOnes();
    } else if (ends_with(spec.name, ".bias") || ends_with(spec.name, ".b1") ||
               ends_with(spec.name, ".b2") || ends_with(spec.name, "attn.c")) {
      value.setZero();
    } else if (ends_with(spec.name, "zeta")) {
      value.setConstant(cfg_.zeta_init);
    } else {
      for (Eigen::Index i = 0; i < value.size(); ++i) value.data()[i] = normal(rng);
    }
    store.add(spec.name, std::move(value), spec.decay);
  }
}

void Model::check_parameters(const ad::ParamStore& store) const {
  std::ostringstream problems;
  for (const auto& spec : parameter_specs()) {
    if (!store.contains(spec.name)) {
      problems << " missing '" << spec.name << "';";
      continue;
    }
    const auto& value = store.at(spec.name).value;
    if (value.rows() != spec.rows || value.cols() != spec.cols) {
      problems << " '" << spec.name << "' is " << value.rows() << "x" << value.cols()
               << ", expected " << spec.rows << "x" << spec.cols << ";";
    }
  }
  const std::string text = problems.str();
  if (!text.empty()) throw FormatError("parameters do not match the config:" + text);
}

void Model::check_tokens(std::span<const int> tokens) const {
  if (tokens.empty()) throw RangeError("model: empty token sequence");
  if (static_cast<int>(tokens.size()) > cfg_.seq_len) {
    throw RangeError("model: sequence of " + std::to_string(tokens.size()) +
                     " tokens exceeds seq_len " + std::to_string(cfg_.seq_len));
  }
  for (int id : tokens) {
    if (id < 0 || id >= cfg_.vocab) {
      throw RangeError("model: token id " + std::to_string(id) + " outside vocabulary of " +
                       std::to_string(cfg_.vocab));
    }
  }
}

ad::Var Model::logits(ad::Tape& tape, std::span<const int> tokens,
                      const ForwardOptions& opts) const {
  check_tokens(tokens);
  std::vector<int> positions(tokens.size());
  for (std::size_t i = 0; i < positions.size(); ++i) positions[i] = static_cast<int>(i);
  ad::Var x = tape.add(tape.embedding(tokens, tape.param("tok_emb")),
                       tape.embedding(positions, tape.param("pos_emb")));
  for (int l = 0; l < cfg_.layers; ++l) {
    if (opts.trace) opts.trace->push_back(x);
    switch (cfg_.stage) {
      case Stage::I: x = fnetar_layer(tape, x, cfg_, l, opts); break;
      case Stage::II: x = koopman_layer(tape, x, cfg_, l, opts); break;
      case Stage::III:
      case Stage::IV: x = hybrid_layer(tape, x, cfg_, l, opts); break;
    }
  }
  if (opts.trace) opts.trace->push_back(x);
  ad::Var normed = apply_norm(tape, x, cfg_.norm_mode, "final_norm");
  return tape.matmul_nt(normed, tape.param("out_proj"));
}

ad::Var Model::loss(ad::Tape& tape, std::span<const int> tokens, std::span<const int> targets,
                    const ForwardOptions& opts) const {
  return tape.cross_entropy(logits(tape, tokens, opts), targets);
}

RealMatrix Model::infer_logits(const ad::ParamStore& store, std::span<const int> tokens) const {
  ad::Tape tape(&store);
  return tape.value(logits(tape, tokens));
}

std::vector<RealMatrix> Model::koopman_operators(const ad::ParamStore& store) const {
  if (cfg_.stage == Stage::I) {
    throw FormatError("Stage I checkpoints carry no Koopman operators");
  }
  std::vector<RealMatrix> ops;
  for (int l = 0; l < cfg_.layers; ++l) {
    if (cfg_.stage == Stage::IV) {
      ops.push_back(hamiltonian_unitary(store.at(layer_param(l, "hamiltonian_w")).value));
    } else {
      ops.push_back(store.at(layer_param(l, "koopman")).value);
    }
  }
  return ops;
}

std::vector<double> Model::zeta_values(const ad::ParamStore& store) const {
  std::vector<double> z;
  if (cfg_.stage != Stage::III && cfg_.stage != Stage::IV) return z;
  for (int l = 0; l < cfg_.layers; ++l) z.push_back(store.at(layer_param(l, "zeta")).value(0, 0));
  return z;
}

RealVector Model::frozen_step_logits(const ad::ParamStore& store, std::span<const int> tokens,
                                     const RealVector& psi) const {
  if (cfg_.stage != Stage::III && cfg_.stage != Stage::IV) {
    throw ConfigError("frozen_step_logits: defined for Stages III-IV only");
  }
  if (psi.size() != cfg_.d) throw DimensionError("frozen_step_logits: psi must have d entries");
  ad::Tape tape(&store);
  std::vector<ad::Var> trace;
  ForwardOptions opts;
  opts.trace = &trace;
  logits(tape, tokens, opts);

  const auto t = static_cast<Eigen::Index>(tokens.size()) - 1;
  auto row_norm = [&](const RealVector& x, const std::string& prefix) -> RealVector {
    const RealVector g = store.at(prefix + ".gain").value.row(0).transpose();
    const RealVector b = store.at(prefix + ".bias").value.row(0).transpose();
    if (cfg_.norm_mode == NormMode::LinearScale) return x.cwiseProduct(g) + b;
    const double mean = x.mean();
    const RealVector centered = x.array() - mean;
    const double inv_std = 1.0 / std::sqrt(centered.squaredNorm() / x.size() + ad::kLayerNormEps);
    return (centered * inv_std).cwiseProduct(g) + b;
  };

  RealVector state = psi;
  for (int l = 0; l < cfg_.layers; ++l) {
    const RealMatrix& ref = tape.value(trace[static_cast<std::size_t>(l)]);
    const RealMatrix op = cfg_.stage == Stage::IV
                              ? hamiltonian_unitary(store.at(layer_param(l, "hamiltonian_w")).value)
                              : store.at(layer_param(l, "koopman")).value;
    const RealMatrix& wq = store.at(layer_param(l, "attn.wq")).value;
    const RealMatrix& wk = store.at(layer_param(l, "attn.wk")).value;
    const RealMatrix& wv = store.at(layer_param(l, "attn.wv")).value;
    const RealVector c = store.at(layer_param(l, "attn.c")).value.row(0).transpose();
    const double zeta = store.at(layer_param(l, "zeta")).value(0, 0);

    const RealVector q_ref = wq * ref.row(t).transpose() + c;
    RealVector attn = RealVector::Zero(cfg_.d);
    for (Eigen::Index s = 0; s < t; ++s) {
      const RealVector x_s = ref.row(s).transpose();
      const double w_ts = q_ref.dot(wk * x_s + c);
      attn += w_ts * (wv * x_s);
    }
    const double w_tt = q_ref.dot(wk * ref.row(t).transpose() + c);
    attn += w_tt * (wv * state);

    const RealVector h = row_norm(state, layer_param(l, "norm"));
    RealVector next = state + op * h + zeta * attn;
    if (cfg_.ffn_mode != FfnMode::None) {
      const RealMatrix& w1 = store.at(layer_param(l, "mlp.w1")).value;
      const RealMatrix& w2 = store.at(layer_param(l, "mlp.w2")).value;
      RealVector hidden = w1 * h + store.at(layer_param(l, "mlp.b1")).value.row(0).transpose();
      if (cfg_.ffn_mode == FfnMode::GeluMlp) {
        hidden = hidden.unaryExpr(
            [](double v) { return 0.5 * v * (1.0 + std::erf(v / std::sqrt(2.0))); });
      }
      next += w2 * hidden + store.at(layer_param(l, "mlp.b2")).value.row(0).transpose();
    }
    state = next;
  }
  return store.at("out_proj").value * row_norm(state, "final_norm");
}

}  // namespace qsf
