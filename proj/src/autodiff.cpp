#include "qsf/autodiff.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <functional>
#include <numbers>
#include <random>
#include <sstream>

#include "qsf/errors.hpp"

namespace qsf::ad {
namespace {

std::string shape_str(const Matrix& m) {
  std::ostringstream os;
  os << m.rows() << "x" << m.cols();
  return os.str();
}

[[noreturn]] void shape_error(std::string_view op, const Matrix& a, const Matrix& b) {
  std::ostringstream os;
  os << op << ": incompatible shapes " << shape_str(a) << " and " << shape_str(b);
  throw DimensionError(os.str());
}

double gelu_scalar(double x) { return 0.5 * x * (1.0 + std::erf(x / std::numbers::sqrt2)); }

double gelu_deriv(double x) {
  const double cdf = 0.5 * (1.0 + std::erf(x / std::numbers::sqrt2));
  const double pdf = std::exp(-0.5 * x * x) / std::sqrt(2.0 * std::numbers::pi);
  return cdf + x * pdf;
}

}  // namespace

// ---------------------------------------------------------------------------
// ParamStore / Gradients

Parameter& ParamStore::add(std::string name, Matrix init, bool decay) {
  if (index_.contains(name)) throw ConfigError("duplicate parameter name: " + name);
  index_.emplace(name, params_.size());
  params_.push_back(Parameter{std::move(name), std::move(init), false, decay});
  return params_.back();
}

bool ParamStore::contains(std::string_view name) const {
  return index_.contains(std::string(name));
}

std::size_t ParamStore::index_of(std::string_view name) const {
  auto it = index_.find(std::string(name));
  if (it == index_.end()) throw ConfigError("unknown parameter: " + std::string(name));
  return it->second;
}

Parameter& ParamStore::at(std::string_view name) { return params_[index_of(name)]; }
const Parameter& ParamStore::at(std::string_view name) const { return params_[index_of(name)]; }

void ParamStore::set_frozen(std::string_view name, bool frozen) { at(name).frozen = frozen; }

std::size_t ParamStore::scalar_count() const {
  std::size_t n = 0;
  for (const auto& p : params_) n += static_cast<std::size_t>(p.value.size());
  return n;
}

void Gradients::accumulate(const Gradients& other) {
  if (other.size() != size()) throw DimensionError("Gradients::accumulate: size mismatch");
  for (std::size_t i = 0; i < grads_.size(); ++i) {
    if (!other.has(i)) continue;
    if (grads_[i]) {
      *grads_[i] += other.at(i);
    } else {
      grads_[i] = other.at(i);
    }
  }
}

void Gradients::scale(double s) {
  for (auto& g : grads_) {
    if (g) *g *= s;
  }
}

double Gradients::global_norm() const {
  double sq = 0.0;
  for (const auto& g : grads_) {
    if (g) sq += g->squaredNorm();
  }
  return std::sqrt(sq);
}

bool Gradients::all_finite() const {
  return std::all_of(grads_.begin(), grads_.end(),
                     [](const auto& g) { return !g || g->allFinite(); });
}

std::string_view op_name(OpKind kind) {
  switch (kind) {
    case OpKind::Constant: return "constant";
    case OpKind::Param: return "param";
    case OpKind::Matmul: return "matmul";
    case OpKind::MatmulNT: return "matmul_nt";
    case OpKind::Add: return "add";
    case OpKind::AddBias: return "add_bias";
    case OpKind::Scale: return "scale";
    case OpKind::Gelu: return "gelu";
    case OpKind::LayerNorm: return "layernorm";
    case OpKind::LinearScale: return "linear_scale";
    case OpKind::Embedding: return "embedding";
    case OpKind::CausalDftReal: return "causal_dft_real";
    case OpKind::PrefixLinearAttention: return "prefix_linear_attention";
    case OpKind::CrossEntropy: return "cross_entropy";
    case OpKind::SkewMatExp: return "skew_mat_exp";
    case OpKind::Sum: return "sum";
    case OpKind::Contract: return "contract";
    case OpKind::Dropout: return "dropout";
  }
  return "unknown";
}

// ---------------------------------------------------------------------------
// Tape: forward

Var Tape::push(OpKind kind, std::vector<int> inputs, Matrix value) {
  Node n;
  n.kind = kind;
  n.inputs = std::move(inputs);
  n.value = std::move(value);
  nodes_.push_back(std::move(n));
  return Var{static_cast<int>(nodes_.size()) - 1};
}

Tape::Node& Tape::node(Var v) {
  if (v.id < 0 || v.id >= static_cast<int>(nodes_.size())) {
    throw DimensionError("Tape: invalid variable handle");
  }
  return nodes_[static_cast<std::size_t>(v.id)];
}

const Tape::Node& Tape::node(Var v) const {
  if (v.id < 0 || v.id >= static_cast<int>(nodes_.size())) {
    throw DimensionError("Tape: invalid variable handle");
  }
  return nodes_[static_cast<std::size_t>(v.id)];
}

const Matrix& Tape::value(Var v) const { return node(v).value; }

Matrix Tape::grad(Var v) const {
  const Node& n = node(v);
  if (n.grad.size() == 0) return Matrix::Zero(n.value.rows(), n.value.cols());
  return n.grad;
}

OpKind Tape::kind(Var v) const { return node(v).kind; }

Var Tape::constant(Matrix value) { return push(OpKind::Constant, {}, std::move(value)); }

Var Tape::param(std::string_view name) {
  if (params_ == nullptr) throw ConfigError("Tape::param: no ParamStore bound");
  const std::size_t index = params_->index_of(name);
  Var v = push(OpKind::Param, {}, params_->at(index).value);
  nodes_.back().param_index = static_cast<int>(index);
  return v;
}

Var Tape::matmul(Var a, Var b) {
  const Matrix& av = value(a);
  const Matrix& bv = value(b);
  if (av.cols() != bv.rows()) shape_error("matmul", av, bv);
  Matrix out = av * bv;
  return push(OpKind::Matmul, {a.id, b.id}, std::move(out));
}

Var Tape::matmul_nt(Var a, Var b) {
  const Matrix& av = value(a);
  const Matrix& bv = value(b);
  if (av.cols() != bv.cols()) shape_error("matmul_nt", av, bv);
  Matrix out = av * bv.transpose();
  return push(OpKind::MatmulNT, {a.id, b.id}, std::move(out));
}

Var Tape::add(Var a, Var b) {
  const Matrix& av = value(a);
  const Matrix& bv = value(b);
  if (av.rows() != bv.rows() || av.cols() != bv.cols()) shape_error("add", av, bv);
  Matrix out = av + bv;
  return push(OpKind::Add, {a.id, b.id}, std::move(out));
}

Var Tape::add_bias(Var x, Var b) {
  const Matrix& xv = value(x);
  const Matrix& bv = value(b);
  if (bv.rows() != 1 || bv.cols() != xv.cols()) shape_error("add_bias", xv, bv);
  Matrix out = xv.rowwise() + bv.row(0);
  return push(OpKind::AddBias, {x.id, b.id}, std::move(out));
}

Var Tape::scale(Var x, Var s) {
  const Matrix& xv = value(x);
  const Matrix& sv = value(s);
  if (sv.size() != 1) shape_error("scale", xv, sv);
  Matrix out = xv * sv(0, 0);
  return push(OpKind::Scale, {x.id, s.id}, std::move(out));
}

Var Tape::gelu(Var x) {
  Matrix out = value(x).unaryExpr([](double v) { return gelu_scalar(v); });
  return push(OpKind::Gelu, {x.id}, std::move(out));
}

Var Tape::layernorm(Var x, Var gain, Var bias) {
  const Matrix& xv = value(x);
  const Matrix& g = value(gain);
  const Matrix& b = value(bias);
  if (g.rows() != 1 || g.cols() != xv.cols()) shape_error("layernorm gain", xv, g);
  if (b.rows() != 1 || b.cols() != xv.cols()) shape_error("layernorm bias", xv, b);
  const auto n = static_cast<double>(xv.cols());
  Eigen::VectorXd mean = xv.rowwise().sum() / n;
  Matrix centered = xv.colwise() - mean;
  Eigen::VectorXd var = centered.rowwise().squaredNorm() / n;
  Eigen::VectorXd inv_std = (var.array() + kLayerNormEps).rsqrt().matrix();
  Matrix xhat = centered.array().colwise() * inv_std.array();
  Matrix out = (xhat.array().rowwise() * g.row(0).array()).rowwise() + b.row(0).array();
  Var v = push(OpKind::LayerNorm, {x.id, gain.id, bias.id}, std::move(out));
  Node& n_out = nodes_.back();
  n_out.saved.push_back(std::move(xhat));
  n_out.saved.push_back(std::move(inv_std));
  return v;
}

Var Tape::linear_scale(Var x, Var gain, Var bias) {
  const Matrix& xv = value(x);
  const Matrix& g = value(gain);
  const Matrix& b = value(bias);
  if (g.rows() != 1 || g.cols() != xv.cols()) shape_error("linear_scale gain", xv, g);
  if (b.rows() != 1 || b.cols() != xv.cols()) shape_error("linear_scale bias", xv, b);
  Matrix out = (xv.array().rowwise() * g.row(0).array()).rowwise() + b.row(0).array();
  return push(OpKind::LinearScale, {x.id, gain.id, bias.id}, std::move(out));
}

Var Tape::embedding(std::span<const int> ids, Var table) {
  const Matrix& t = value(table);
  Matrix out(static_cast<Eigen::Index>(ids.size()), t.cols());
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (ids[i] < 0 || ids[i] >= t.rows()) {
      std::ostringstream os;
      os << "embedding: id " << ids[i] << " outside [0, " << t.rows() << ")";
      throw RangeError(os.str());
    }
    out.row(static_cast<Eigen::Index>(i)) = t.row(ids[i]);
  }
  Var v = push(OpKind::Embedding, {table.id}, std::move(out));
  nodes_.back().ids.assign(ids.begin(), ids.end());
  return v;
}

Var Tape::causal_dft_real(Var x) {
  const Matrix& xv = value(x);
  Matrix out = causal_dft_matrix(static_cast<int>(xv.rows())) * xv;
  return push(OpKind::CausalDftReal, {x.id}, std::move(out));
}

Var Tape::prefix_linear_attention(Var q, Var k, Var v, Var c) {
  const Matrix& qv = value(q);
  const Matrix& kv = value(k);
  const Matrix& vv = value(v);
  const Matrix& cv = value(c);
  if (qv.rows() != kv.rows() || qv.cols() != kv.cols()) shape_error("linear attention q/k", qv, kv);
  if (vv.rows() != qv.rows()) shape_error("linear attention q/v", qv, vv);
  if (cv.rows() != 1 || cv.cols() != qv.cols()) shape_error("linear attention c", qv, cv);
  const Matrix qf = qv.rowwise() + cv.row(0);
  const Matrix kf = kv.rowwise() + cv.row(0);
  Matrix state = Matrix::Zero(qv.cols(), vv.cols());
  Matrix out(qv.rows(), vv.cols());
  for (Eigen::Index t = 0; t < qv.rows(); ++t) {
    state.noalias() += kf.row(t).transpose() * vv.row(t);
    out.row(t).noalias() = qf.row(t) * state;
  }
  return push(OpKind::PrefixLinearAttention, {q.id, k.id, v.id, c.id}, std::move(out));
}

Var Tape::cross_entropy(Var logits, std::span<const int> targets) {
  const Matrix& lv = value(logits);
  if (static_cast<Eigen::Index>(targets.size()) != lv.rows()) {
    throw DimensionError("cross_entropy: one target per logits row required");
  }
  Matrix probs(lv.rows(), lv.cols());
  double total = 0.0;
  for (Eigen::Index i = 0; i < lv.rows(); ++i) {
    const int target = targets[static_cast<std::size_t>(i)];
    if (target < 0 || target >= lv.cols()) {
      std::ostringstream os;
      os << "cross_entropy: target " << target << " outside [0, " << lv.cols() << ")";
      throw RangeError(os.str());
    }
    const double mx = lv.row(i).maxCoeff();
    probs.row(i) = (lv.row(i).array() - mx).exp();
    const double z = probs.row(i).sum();
    probs.row(i) /= z;
    total += (std::log(z) + mx) - lv(i, target);
  }
  Matrix out(1, 1);
  out(0, 0) = lv.rows() > 0 ? total / static_cast<double>(lv.rows()) : 0.0;
  Var v = push(OpKind::CrossEntropy, {logits.id}, std::move(out));
  Node& n = nodes_.back();
  n.saved.push_back(std::move(probs));
  n.ids.assign(targets.begin(), targets.end());
  return v;
}

Var Tape::skew_mat_exp(Var w) {
  const Matrix& wv = value(w);
  if (wv.rows() != wv.cols()) shape_error("skew_mat_exp", wv, wv);
  Matrix out = mat_exp(RealMatrix(wv - wv.transpose()));
  return push(OpKind::SkewMatExp, {w.id}, std::move(out));
}

Var Tape::sum(Var x) {
  Matrix out(1, 1);
  out(0, 0) = value(x).sum();
  return push(OpKind::Sum, {x.id}, std::move(out));
}

Var Tape::contract(Var x, const Matrix& weights) {
  const Matrix& xv = value(x);
  if (xv.rows() != weights.rows() || xv.cols() != weights.cols()) {
    shape_error("contract", xv, weights);
  }
  Matrix out(1, 1);
  out(0, 0) = xv.cwiseProduct(weights).sum();
  Var v = push(OpKind::Contract, {x.id}, std::move(out));
  nodes_.back().saved.push_back(weights);
  return v;
}

Var Tape::dropout(Var x, double rate, std::uint64_t seed) {
  if (!(rate >= 0.0 && rate < 1.0)) throw RangeError("dropout: rate must lie in [0, 1)");
  const Matrix& xv = value(x);
  Matrix mask(xv.rows(), xv.cols());
  std::mt19937_64 rng(seed);
  const double keep_scale = 1.0 / (1.0 - rate);
  for (Eigen::Index j = 0; j < mask.cols(); ++j) {
    for (Eigen::Index i = 0; i < mask.rows(); ++i) {
      // 53-bit uniform in [0, 1), independent of the standard library's
      // distribution implementation.
      const double u = static_cast<double>(rng() >> 11) * 0x1.0p-53;
      mask(i, j) = u < rate ? 0.0 : keep_scale;
    }
  }
  Matrix out = xv.cwiseProduct(mask);
  Var v = push(OpKind::Dropout, {x.id}, std::move(out));
  nodes_.back().saved.push_back(std::move(mask));
  return v;
}

// ---------------------------------------------------------------------------
// Tape: backward

void Tape::accumulate(int id, const Matrix& g) {
  Node& n = nodes_[static_cast<std::size_t>(id)];
  if (n.grad.size() == 0) {
    n.grad = g;
  } else {
    n.grad += g;
  }
}

Gradients Tape::backward(Var loss) {
  const Node& l = node(loss);
  if (l.value.rows() != 1 || l.value.cols() != 1) {
    throw DimensionError("backward: loss must be 1x1, got " + shape_str(l.value));
  }
  for (auto& n : nodes_) n.grad.resize(0, 0);
  nodes_[static_cast<std::size_t>(loss.id)].grad = Matrix::Ones(1, 1);

  Gradients grads(params_ ? params_->size() : 0);
  for (int id = loss.id; id >= 0; --id) {
    Node& n = nodes_[static_cast<std::size_t>(id)];
    if (n.grad.size() == 0) continue;
    if (n.kind == OpKind::Param) {
      const auto index = static_cast<std::size_t>(n.param_index);
      if (params_->at(index).frozen) continue;
      auto& slot = grads.slot(index);
      if (slot) {
        *slot += n.grad;
      } else {
        slot = n.grad;
      }
      continue;
    }
    backward_node(n);
  }
  return grads;
}

void Tape::backward_node(Node& n) {
  const Matrix& dy = n.grad;
  auto in = [&](std::size_t k) -> const Matrix& {
    return nodes_[static_cast<std::size_t>(n.inputs[k])].value;
  };
  switch (n.kind) {
    case OpKind::Constant:
    case OpKind::Param:
      return;
    case OpKind::Matmul:
      accumulate(n.inputs[0], dy * in(1).transpose());
      accumulate(n.inputs[1], in(0).transpose() * dy);
      return;
    case OpKind::MatmulNT:
      accumulate(n.inputs[0], dy * in(1));
      accumulate(n.inputs[1], dy.transpose() * in(0));
      return;
    case OpKind::Add:
      accumulate(n.inputs[0], dy);
      accumulate(n.inputs[1], dy);
      return;
    case OpKind::AddBias:
      accumulate(n.inputs[0], dy);
      accumulate(n.inputs[1], dy.colwise().sum());
      return;
    case OpKind::Scale: {
      const double s = in(1)(0, 0);
      accumulate(n.inputs[0], dy * s);
      Matrix ds(1, 1);
      ds(0, 0) = in(0).cwiseProduct(dy).sum();
      accumulate(n.inputs[1], ds);
      return;
    }
    case OpKind::Gelu:
      accumulate(n.inputs[0],
                 dy.cwiseProduct(in(0).unaryExpr([](double v) { return gelu_deriv(v); })));
      return;
    case OpKind::LayerNorm: {
      const Matrix& xhat = n.saved[0];
      const Matrix& inv_std = n.saved[1];
      const Matrix& g = in(1);
      const auto width = static_cast<double>(xhat.cols());
      Matrix dxhat = dy.array().rowwise() * g.row(0).array();
      Eigen::VectorXd mean_d = dxhat.rowwise().sum() / width;
      Eigen::VectorXd mean_dx = dxhat.cwiseProduct(xhat).rowwise().sum() / width;
      Matrix dx = (dxhat.colwise() - mean_d) - (xhat.array().colwise() * mean_dx.array()).matrix();
      dx = dx.array().colwise() * inv_std.col(0).array();
      accumulate(n.inputs[0], dx);
      accumulate(n.inputs[1], dy.cwiseProduct(xhat).colwise().sum());
      accumulate(n.inputs[2], dy.colwise().sum());
      return;
    }
    case OpKind::LinearScale: {
      const Matrix& g = in(1);
      accumulate(n.inputs[0], (dy.array().rowwise() * g.row(0).array()).matrix());
      accumulate(n.inputs[1], dy.cwiseProduct(in(0)).colwise().sum());
      accumulate(n.inputs[2], dy.colwise().sum());
      return;
    }
    case OpKind::Embedding: {
      Matrix dt = Matrix::Zero(in(0).rows(), in(0).cols());
      for (std::size_t i = 0; i < n.ids.size(); ++i) {
        dt.row(n.ids[i]) += dy.row(static_cast<Eigen::Index>(i));
      }
      accumulate(n.inputs[0], dt);
      return;
    }
    case OpKind::CausalDftReal:
      accumulate(n.inputs[0],
                 causal_dft_matrix(static_cast<int>(dy.rows())).transpose() * dy);
      return;
    case OpKind::PrefixLinearAttention: {
      const Matrix& c = in(3);
      const Matrix qf = in(0).rowwise() + c.row(0);
      const Matrix kf = in(1).rowwise() + c.row(0);
      const Matrix& v = in(2);
      const Eigen::Index len = qf.rows();
      Matrix dq(len, qf.cols());
      Matrix dk(len, kf.cols());
      Matrix dv(len, v.cols());
      // Forward prefix state S_t = sum_{s<=t} kf_s^T v_s gives dq_t = dy_t S_t^T.
      Matrix state = Matrix::Zero(qf.cols(), v.cols());
      for (Eigen::Index t = 0; t < len; ++t) {
        state.noalias() += kf.row(t).transpose() * v.row(t);
        dq.row(t).noalias() = dy.row(t) * state.transpose();
      }
      // Reverse suffix state R_s = sum_{t>=s} qf_t^T dy_t.
      Matrix rev = Matrix::Zero(qf.cols(), v.cols());
      for (Eigen::Index s = len - 1; s >= 0; --s) {
        rev.noalias() += qf.row(s).transpose() * dy.row(s);
        dk.row(s).noalias() = v.row(s) * rev.transpose();
        dv.row(s).noalias() = kf.row(s) * rev;
      }
      Matrix dc = dq.colwise().sum() + dk.colwise().sum();
      accumulate(n.inputs[0], dq);
      accumulate(n.inputs[1], dk);
      accumulate(n.inputs[2], dv);
      accumulate(n.inputs[3], dc);
      return;
    }
    case OpKind::CrossEntropy: {
      Matrix dl = n.saved[0];
      for (std::size_t i = 0; i < n.ids.size(); ++i) {
        dl(static_cast<Eigen::Index>(i), n.ids[i]) -= 1.0;
      }
      const double rows = std::max<double>(1.0, static_cast<double>(dl.rows()));
      dl *= dy(0, 0) / rows;
      accumulate(n.inputs[0], dl);
      return;
    }
    case OpKind::SkewMatExp:
      accumulate(n.inputs[0], grad_skew_mat_exp(in(0), dy));
      return;
    case OpKind::Sum:
      accumulate(n.inputs[0], Matrix::Constant(in(0).rows(), in(0).cols(), dy(0, 0)));
      return;
    case OpKind::Contract:
      accumulate(n.inputs[0], n.saved[0] * dy(0, 0));
      return;
    case OpKind::Dropout:
      accumulate(n.inputs[0], dy.cwiseProduct(n.saved[0]));
      return;
  }
  throw ConfigError("backward: unknown op kind");
}

Matrix grad_skew_mat_exp(const Matrix& w, const Matrix& upstream) {
  if (w.rows() != w.cols() || upstream.rows() != w.rows() || upstream.cols() != w.cols()) {
    shape_error("grad_skew_mat_exp", w, upstream);
  }
  const Eigen::Index n = w.rows();
  const double scale = upstream.cwiseAbs().colwise().sum().maxCoeff();
  if (n == 0 || scale == 0.0) return Matrix::Zero(n, n);
  const Matrix a_t = (w - w.transpose()).transpose();
  // L(A^T, E) is the top-right block of exp([[A^T, E], [0, A^T]]); it is
  // linear in E, so E is normalized to keep the block norm small.
  Matrix block = Matrix::Zero(2 * n, 2 * n);
  block.topLeftCorner(n, n) = a_t;
  block.bottomRightCorner(n, n) = a_t;
  block.topRightCorner(n, n) = upstream / scale;
  const Matrix e = mat_exp(block);
  const Matrix da = e.topRightCorner(n, n) * scale;
  return da - da.transpose();
}

// ---------------------------------------------------------------------------
// Finite-difference checker

double relative_error(const Matrix& a, const Matrix& b) {
  const double denom = std::max(a.norm(), b.norm());
  if (denom == 0.0) return 0.0;
  return (a - b).norm() / denom;
}

std::span<const OpKind> checkable_ops() {
  static constexpr std::array kOps = {
      OpKind::Matmul,      OpKind::MatmulNT,      OpKind::Add,
      OpKind::AddBias,     OpKind::Scale,         OpKind::Gelu,
      OpKind::LayerNorm,   OpKind::LinearScale,   OpKind::Embedding,
      OpKind::CausalDftReal, OpKind::PrefixLinearAttention, OpKind::CrossEntropy,
      OpKind::SkewMatExp,  OpKind::Sum,           OpKind::Contract,
      OpKind::Dropout,
  };
  return kOps;
}

namespace {

struct CheckCase {
  ParamStore params;
  std::vector<std::string> inputs;
  std::function<Var(Tape&)> build;
};

Matrix random_matrix(std::mt19937_64& rng, Eigen::Index rows, Eigen::Index cols,
                     double stddev = 1.0) {
  std::normal_distribution<double> dist(0.0, stddev);
  Matrix m(rows, cols);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = dist(rng);
  return m;
}

std::vector<int> random_ids(std::mt19937_64& rng, std::size_t n, int upper) {
  std::uniform_int_distribution<int> dist(0, upper - 1);
  std::vector<int> ids(n);
  for (auto& id : ids) id = dist(rng);
  return ids;
}

CheckCase make_case(OpKind kind, std::mt19937_64& rng) {
  CheckCase c;
  auto add = [&](const std::string& name, Matrix m) {
    c.params.add(name, std::move(m));
    c.inputs.push_back(name);
  };
  switch (kind) {
    case OpKind::Matmul:
      add("a", random_matrix(rng, 4, 3));
      add("b", random_matrix(rng, 3, 5));
      c.build = [](Tape& t) { return t.matmul(t.param("a"), t.param("b")); };
      break;
    case OpKind::MatmulNT:
      add("a", random_matrix(rng, 4, 3));
      add("b", random_matrix(rng, 5, 3));
      c.build = [](Tape& t) { return t.matmul_nt(t.param("a"), t.param("b")); };
      break;
    case OpKind::Add:
      add("a", random_matrix(rng, 3, 4));
      add("b", random_matrix(rng, 3, 4));
      c.build = [](Tape& t) { return t.add(t.param("a"), t.param("b")); };
      break;
    case OpKind::AddBias:
      add("x", random_matrix(rng, 5, 4));
      add("b", random_matrix(rng, 1, 4));
      c.build = [](Tape& t) { return t.add_bias(t.param("x"), t.param("b")); };
      break;
    case OpKind::Scale:
      add("x", random_matrix(rng, 3, 4));
      add("s", random_matrix(rng, 1, 1));
      c.build = [](Tape& t) { return t.scale(t.param("x"), t.param("s")); };
      break;
    case OpKind::Gelu:
      add("x", random_matrix(rng, 4, 5, 1.5));
      c.build = [](Tape& t) { return t.gelu(t.param("x")); };
      break;
    case OpKind::LayerNorm:
      add("x", random_matrix(rng, 4, 6));
      add("g", random_matrix(rng, 1, 6));
      add("b", random_matrix(rng, 1, 6));
      c.build = [](Tape& t) { return t.layernorm(t.param("x"), t.param("g"), t.param("b")); };
      break;
    case OpKind::LinearScale:
      add("x", random_matrix(rng, 4, 6));
      add("g", random_matrix(rng, 1, 6));
      add("b", random_matrix(rng, 1, 6));
      c.build = [](Tape& t) {
        return t.linear_scale(t.param("x"), t.param("g"), t.param("b"));
      };
      break;
    case OpKind::Embedding: {
      add("table", random_matrix(rng, 7, 4));
      auto ids = random_ids(rng, 6, 7);
      c.build = [ids](Tape& t) { return t.embedding(ids, t.param("table")); };
      break;
    }
    case OpKind::CausalDftReal:
      add("x", random_matrix(rng, 9, 3));
      c.build = [](Tape& t) { return t.causal_dft_real(t.param("x")); };
      break;
    case OpKind::PrefixLinearAttention:
      add("q", random_matrix(rng, 7, 4));
      add("k", random_matrix(rng, 7, 4));
      add("v", random_matrix(rng, 7, 4));
      add("c", random_matrix(rng, 1, 4, 0.5));
      c.build = [](Tape& t) {
        return t.prefix_linear_attention(t.param("q"), t.param("k"), t.param("v"),
                                         t.param("c"));
      };
      break;
    case OpKind::CrossEntropy: {
      add("logits", random_matrix(rng, 5, 7, 2.0));
      auto targets = random_ids(rng, 5, 7);
      c.build = [targets](Tape& t) { return t.cross_entropy(t.param("logits"), targets); };
      break;
    }
    case OpKind::SkewMatExp:
      add("w", random_matrix(rng, 5, 5, 0.5));
      c.build = [](Tape& t) { return t.skew_mat_exp(t.param("w")); };
      break;
    case OpKind::Sum:
      add("x", random_matrix(rng, 3, 3));
      c.build = [](Tape& t) { return t.sum(t.param("x")); };
      break;
    case OpKind::Contract: {
      add("x", random_matrix(rng, 3, 4));
      Matrix w = random_matrix(rng, 3, 4);
      c.build = [w](Tape& t) { return t.contract(t.param("x"), w); };
      break;
    }
    case OpKind::Dropout: {
      add("x", random_matrix(rng, 6, 5));
      const std::uint64_t mask_seed = rng();
      c.build = [mask_seed](Tape& t) { return t.dropout(t.param("x"), 0.3, mask_seed); };
      break;
    }
    case OpKind::Constant:
    case OpKind::Param:
      throw ConfigError("grad_check: op kind '" + std::string(op_name(kind)) +
                        "' has no backward rule to check");
  }
  return c;
}

}  // namespace

double grad_check(OpKind kind, std::uint64_t seed, double h) {
  std::mt19937_64 rng(seed);
  CheckCase c = make_case(kind, rng);

  // Random linear functional of the op output turns it into a scalar loss.
  Matrix probe;
  {
    Tape t(&c.params);
    const Matrix& out = t.value(c.build(t));
    probe = random_matrix(rng, out.rows(), out.cols());
  }
  auto loss_value = [&]() {
    Tape t(&c.params);
    return t.value(t.contract(c.build(t), probe))(0, 0);
  };

  Tape tape(&c.params);
  const Gradients grads = tape.backward(tape.contract(c.build(tape), probe));

  double worst = 0.0;
  for (const auto& name : c.inputs) {
    const std::size_t index = c.params.index_of(name);
    Matrix& value = c.params.at(index).value;
    Matrix numeric(value.rows(), value.cols());
    for (Eigen::Index i = 0; i < value.size(); ++i) {
      const double saved = value.data()[i];
      value.data()[i] = saved + h;
      const double up = loss_value();
      value.data()[i] = saved - h;
      const double down = loss_value();
      value.data()[i] = saved;
      numeric.data()[i] = (up - down) / (2.0 * h);
    }
    const Matrix analytic =
        grads.has(index) ? grads.at(index) : Matrix::Zero(value.rows(), value.cols());
    worst = std::max(worst, relative_error(analytic, numeric));
  }
  return worst;
}

}  // namespace qsf::ad
