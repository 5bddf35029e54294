#include "qsf/propagator.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include <Eigen/Eigenvalues>

#include "qsf/errors.hpp"

namespace qsf::propagator {
namespace {

const Complex kI{0.0, 1.0};

void require_square(const ComplexMatrix& g, const char* what) {
  if (g.rows() != g.cols()) {
    throw DimensionError(std::string(what) + ": generator must be square");
  }
}

void require_dim(Eigen::Index expected, Eigen::Index got, const char* what) {
  if (expected != got) {
    std::ostringstream os;
    os << what << ": expected dimension " << expected << ", got " << got;
    throw DimensionError(os.str());
  }
}

std::vector<double> hermitian_eigenvalues(const ComplexMatrix& a) {
  Eigen::SelfAdjointEigenSolver<ComplexMatrix> solver(a, Eigen::EigenvaluesOnly);
  if (solver.info() != Eigen::Success) {
    throw NumericError("decompose_generator: Hermitian eigensolver did not converge");
  }
  std::vector<double> ev(solver.eigenvalues().data(),
                         solver.eigenvalues().data() + solver.eigenvalues().size());
  std::sort(ev.begin(), ev.end());
  return ev;
}

// Inverse of a Hermitian (or complex-symmetric) matrix with a conditioning
// guard based on singular values.
ComplexMatrix guarded_inverse(const ComplexMatrix& a, const char* what) {
  Eigen::JacobiSVD<ComplexMatrix> svd(a);
  const auto& s = svd.singularValues();
  const double smax = s.size() > 0 ? s(0) : 0.0;
  const double smin = s.size() > 0 ? s(s.size() - 1) : 0.0;
  if (!(smax > 0.0) || !(smin / smax > kMinReciprocalCondition) || !a.allFinite()) {
    std::ostringstream os;
    os << what << " is numerically singular: largest singular value " << smax
       << ", smallest " << smin << ", reciprocal condition "
       << (smax > 0.0 ? smin / smax : 0.0) << " (threshold " << kMinReciprocalCondition << ")";
    throw ConditioningError(os.str());
  }
  return a.partialPivLu().inverse();
}

}  // namespace

GeneratorDecomposition decompose_generator(const ComplexMatrix& g) {
  require_square(g, "decompose_generator");
  GeneratorDecomposition out;
  const ComplexMatrix adj = g.adjoint();
  out.dissipator = (g + adj) * 0.5;
  out.hamiltonian = kI * (g - adj) * 0.5;
  out.omega = hermitian_eigenvalues(out.hamiltonian);
  out.gamma = hermitian_eigenvalues(out.dissipator);
  return out;
}

ComplexVector affine_evolve(const ComplexMatrix& g, const ComplexVector& beta,
                            const ComplexVector& psi0, double t) {
  require_square(g, "affine_evolve");
  require_dim(g.rows(), beta.size(), "affine_evolve beta");
  require_dim(g.rows(), psi0.size(), "affine_evolve psi0");
  if (!(t >= 0.0)) throw RangeError("affine_evolve: T must be non-negative");
  if (t == 0.0) return psi0;
  return mat_exp(g, t) * psi0 + phi1_apply(g, t, beta);
}

double attention_energy(const ComplexVector& psi0, const ComplexVector& psi1,
                        const RealMatrix& w_q, const RealMatrix& w_k, const RealMatrix& u_feat) {
  require_dim(w_q.cols(), psi0.size(), "attention_energy W_Q");
  require_dim(w_k.cols(), psi1.size(), "attention_energy W_K");
  require_dim(w_q.rows(), w_k.rows(), "attention_energy W_Q/W_K rows");
  require_dim(u_feat.cols(), w_q.rows(), "attention_energy U_feat");
  const ComplexVector diff =
      w_q.cast<Complex>() * psi0 - w_k.cast<Complex>() * psi1;
  return (u_feat.cast<Complex>() * diff).squaredNorm();
}

GuidedPropagator guided_propagate(const ComplexMatrix& g, const ComplexVector& beta,
                                  const ComplexVector& psi0, double t, const RealMatrix& w_q,
                                  const RealMatrix& w_k, const RealMatrix& u_feat, double sigma,
                                  double sigma_noise) {
  require_square(g, "guided_propagate");
  const Eigen::Index d = g.rows();
  require_dim(d, beta.size(), "guided_propagate beta");
  require_dim(d, psi0.size(), "guided_propagate psi0");
  require_dim(d, w_q.cols(), "guided_propagate W_Q");
  require_dim(d, w_k.cols(), "guided_propagate W_K");
  require_dim(w_q.rows(), w_k.rows(), "guided_propagate W_Q/W_K rows");
  require_dim(w_k.rows(), u_feat.cols(), "guided_propagate U_feat");
  if (!(sigma > 0.0)) throw RangeError("guided_propagate: sigma must be positive");
  if (!(t > 0.0)) throw RangeError("guided_propagate: T must be positive");
  if (!(sigma_noise >= 0.0)) throw RangeError("guided_propagate: sigma_noise must be >= 0");

  GuidedPropagator out;
  out.sigma_guidance = sigma;
  out.sigma_noise = sigma_noise;
  out.mu_k = affine_evolve(g, beta, psi0, t);
  out.sigma_t = lyapunov_covariance(g, sigma_noise, t);

  const ComplexMatrix sigma_inv = guarded_inverse(out.sigma_t, "Sigma_T");
  const double guidance = std::isinf(sigma) ? 0.0 : 1.0 / (sigma * sigma);
  const RealMatrix feat = u_feat.transpose() * u_feat;
  const ComplexMatrix coupling = (w_k.transpose() * feat * w_k).cast<Complex>();
  const ComplexMatrix cross = (w_k.transpose() * feat * w_q).cast<Complex>();

  const ComplexMatrix precision = sigma_inv + guidance * coupling;
  ComplexMatrix lambda = guarded_inverse(precision, "Lambda^{-1}");
  lambda = ((lambda + lambda.transpose()) * 0.5).eval();
  out.nu = lambda * (sigma_inv * out.mu_k + guidance * (cross * psi0));
  out.lambda = std::move(lambda);
  return out;
}

TokenStepParams make_token_step(const ComplexMatrix& g, const ComplexVector& beta, double t) {
  require_square(g, "make_token_step");
  require_dim(g.rows(), beta.size(), "make_token_step beta");
  TokenStepParams step;
  step.g = g;
  step.beta = beta;
  step.t = t;
  step.u = mat_exp(g, t);
  step.b = phi1_apply(g, t, beta);
  return step;
}

ComplexVector chain_propagators(const std::vector<TokenStepParams>& steps,
                                const ComplexVector& psi0) {
  if (steps.empty()) throw RangeError("chain_propagators: at least one step required");
  ComplexVector psi = psi0;
  for (const auto& s : steps) {
    require_dim(psi.size(), s.u.cols(), "chain_propagators");
    psi = s.u * psi + s.b;
  }
  return psi;
}

ComplexVector chain_propagators_closed_form(const std::vector<TokenStepParams>& steps,
                                            const ComplexVector& psi0) {
  if (steps.empty()) throw RangeError("chain_propagators: at least one step required");
  const auto n = steps.size();
  const Eigen::Index d = psi0.size();
  ComplexMatrix total = ComplexMatrix::Identity(d, d);
  for (const auto& s : steps) {
    require_dim(d, s.u.cols(), "chain_propagators_closed_form");
    total = s.u * total;
  }
  ComplexVector psi = total * psi0;
  for (std::size_t k = 0; k < n; ++k) {
    ComplexMatrix tail = ComplexMatrix::Identity(d, d);
    for (std::size_t j = k + 1; j < n; ++j) tail = steps[j].u * tail;
    psi += tail * steps[k].b;
  }
  return psi;
}

double evaluate_action(const ComplexMatrix& path, double dt, const ComplexMatrix& g,
                       const ComplexVector& beta) {
  const Eigen::Index n = path.cols();
  if (n < 3) throw RangeError("evaluate_action: at least 3 path samples required");
  if (!(dt > 0.0)) throw RangeError("evaluate_action: dt must be positive");
  require_square(g, "evaluate_action");
  require_dim(g.rows(), path.rows(), "evaluate_action path");
  require_dim(g.rows(), beta.size(), "evaluate_action beta");

  double total = 0.0;
  for (Eigen::Index k = 0; k < n; ++k) {
    ComplexVector deriv;
    if (k == 0) {
      deriv = (-3.0 * path.col(0) + 4.0 * path.col(1) - path.col(2)) / (2.0 * dt);
    } else if (k == n - 1) {
      deriv = (3.0 * path.col(n - 1) - 4.0 * path.col(n - 2) + path.col(n - 3)) / (2.0 * dt);
    } else {
      deriv = (path.col(k + 1) - path.col(k - 1)) / (2.0 * dt);
    }
    const double residual = (deriv - g * path.col(k) - beta).squaredNorm();
    const double weight = (k == 0 || k == n - 1) ? 0.5 : 1.0;
    total += weight * 0.5 * residual;
  }
  return total * dt;
}

}  // namespace qsf::propagator
