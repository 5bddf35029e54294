#pragma once

// Reverse-mode differentiation over a fixed set of matrix-valued operations.
//
// Every value on a Tape is a dense double matrix. Sequences are stored with
// one row per position and one column per channel. Parameters live in a
// ParamStore and enter a tape as leaves; Tape::backward returns gradients for
// the non-frozen parameters only.

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "qsf/linalg.hpp"

namespace qsf::ad {

using Matrix = Eigen::MatrixXd;

// Epsilon added to the variance in layernorm.
inline constexpr double kLayerNormEps = 1e-5;

struct Parameter {
  std::string name;
  Matrix value;
  bool frozen = false;
  // Whether AdamW applies decoupled weight decay to this tensor.
  bool decay = true;
};

class ParamStore {
 public:
  // Throws ConfigError if the name is taken.
  Parameter& add(std::string name, Matrix init, bool decay = true);

  bool contains(std::string_view name) const;
  std::size_t index_of(std::string_view name) const;
  Parameter& at(std::string_view name);
  const Parameter& at(std::string_view name) const;
  Parameter& at(std::size_t index) { return params_[index]; }
  const Parameter& at(std::size_t index) const { return params_[index]; }

  void set_frozen(std::string_view name, bool frozen);

  std::size_t size() const { return params_.size(); }
  std::span<Parameter> params() { return params_; }
  std::span<const Parameter> params() const { return params_; }

  // Total number of scalar entries.
  std::size_t scalar_count() const;

 private:
  std::vector<Parameter> params_;
  std::unordered_map<std::string, std::size_t> index_;
};

// Per-parameter gradients, aligned with a ParamStore. Frozen parameters and
// parameters not reached by the loss have no entry.
class Gradients {
 public:
  Gradients() = default;
  explicit Gradients(std::size_t n) : grads_(n) {}

  std::size_t size() const { return grads_.size(); }
  bool has(std::size_t i) const { return grads_[i].has_value(); }
  const Matrix& at(std::size_t i) const { return *grads_[i]; }
  Matrix& at(std::size_t i) { return *grads_[i]; }
  std::optional<Matrix>& slot(std::size_t i) { return grads_[i]; }

  // Adds other into this, entry by entry. Sizes must match.
  void accumulate(const Gradients& other);
  void scale(double s);
  double global_norm() const;
  bool all_finite() const;

 private:
  std::vector<std::optional<Matrix>> grads_;
};

enum class OpKind : std::uint8_t {
  Constant,
  Param,
  Matmul,
  MatmulNT,
  Add,
  AddBias,
  Scale,
  Gelu,
  LayerNorm,
  LinearScale,
  Embedding,
  CausalDftReal,
  PrefixLinearAttention,
  CrossEntropy,
  SkewMatExp,
  Sum,
  Contract,
  Dropout,
};

std::string_view op_name(OpKind kind);

// Handle to a value on a tape.
struct Var {
  int id = -1;
};

class Tape {
 public:
  explicit Tape(const ParamStore* params = nullptr) : params_(params) {}

  Var constant(Matrix value);
  // Leaf bound to a ParamStore entry. Throws ConfigError for unknown names.
  Var param(std::string_view name);

  // a (m x k) * b (k x n)
  Var matmul(Var a, Var b);
  // a (m x k) * b^T with b (n x k): applies a weight stored as out x in to rows.
  Var matmul_nt(Var a, Var b);
  Var add(Var a, Var b);
  // x (m x n) plus the 1 x n row vector b on every row.
  Var add_bias(Var x, Var b);
  // x times a 1 x 1 parameter.
  Var scale(Var x, Var s);
  Var gelu(Var x);
  // Row-wise standardization followed by gain/bias (both 1 x n).
  Var layernorm(Var x, Var gain, Var bias);
  // Row-wise x * gain + bias, no statistics.
  Var linear_scale(Var x, Var gain, Var bias);
  // Gathers rows of table (V x n) for each id.
  Var embedding(std::span<const int> ids, Var table);
  // Row i = real part of the last bin of the DFT over rows 0..i.
  Var causal_dft_real(Var x);
  // out_t = sum_{s<=t} ((q_t + c) . (k_s + c)) v_s, by prefix sums.
  Var prefix_linear_attention(Var q, Var k, Var v, Var c);
  // Mean over rows of -log softmax(logits_row)[target]. Returns 1 x 1.
  Var cross_entropy(Var logits, std::span<const int> targets);
  // exp(W - W^T) for square W.
  Var skew_mat_exp(Var w);
  Var sum(Var x);
  // sum_ij x_ij * weights_ij, weights constant. Returns 1 x 1.
  Var contract(Var x, const Matrix& weights);
  // Inverted dropout with the given keep mask drawn from seed.
  Var dropout(Var x, double rate, std::uint64_t seed);

  const Matrix& value(Var v) const;
  // Gradient of the last backward pass with respect to v; zeros when v was
  // not reached from the loss.
  Matrix grad(Var v) const;
  OpKind kind(Var v) const;
  std::size_t size() const { return nodes_.size(); }

  // Runs the reverse sweep from a 1 x 1 loss. Returns gradients aligned with
  // the bound ParamStore (empty when none is bound). Throws DimensionError if
  // the loss is not scalar.
  Gradients backward(Var loss);

 private:
  struct Node {
    OpKind kind;
    std::vector<int> inputs;
    Matrix value;
    Matrix grad;
    // Saved activations needed by the backward rule.
    std::vector<Matrix> saved;
    std::vector<int> ids;
    int param_index = -1;
  };

  Var push(OpKind kind, std::vector<int> inputs, Matrix value);
  Node& node(Var v);
  const Node& node(Var v) const;
  void backward_node(Node& n);
  void accumulate(int id, const Matrix& g);

  const ParamStore* params_;
  std::vector<Node> nodes_;
};

/// Gradient of <upstream, exp(W - W^T)> with respect to W, using the adjoint
/// Frechet derivative from the block exponential exp([[A^T, E], [0, A^T]]).
Matrix grad_skew_mat_exp(const Matrix& w, const Matrix& upstream);

// Op kinds that grad_check knows how to exercise.
std::span<const OpKind> checkable_ops();

/// Builds a random instance of the op from seed, and reports the largest
/// norm-wise relative discrepancy, over all inputs, between the reverse pass
/// and central differences with step h.
double grad_check(OpKind kind, std::uint64_t seed, double h = 1e-5);

// Norm-wise relative error ||a - b|| / max(||a||, ||b||), 0 when both vanish.
double relative_error(const Matrix& a, const Matrix& b);

}  // namespace qsf::ad
