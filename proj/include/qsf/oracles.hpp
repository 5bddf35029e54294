#pragma once

// Reference computations that share no code path with the closed forms they
// check: Taylor-series exponential, RK4 time stepping, grid quadrature of the
// guided endpoint density and direct-summation attention/DFT. They are slow
// by design and only meant for verification.

#include <cstdint>
#include <string>
#include <vector>

#include "qsf/linalg.hpp"
#include "qsf/model.hpp"

namespace qsf::oracle {

// Truncated Taylor series with halving/squaring, ||A t / 2^s||_1 <= 1/4.
ComplexMatrix taylor_exp(const ComplexMatrix& a, double t);

// Classical RK4 on dpsi/dt = G psi + beta.
ComplexVector rk4_affine(const ComplexMatrix& g, const ComplexVector& beta,
                         const ComplexVector& psi0, double t, int steps);

// Classical RK4 on dS/dt = G S + S G^T + sigma^2 I from S(0) = 0.
ComplexMatrix rk4_lyapunov(const ComplexMatrix& g, double sigma_noise, double t, int steps);

// psi(T) for G = P diag(lambda) P^{-1}, using scalar formulas per eigenvalue
// (T when lambda = 0).
ComplexVector diagonal_affine(const ComplexMatrix& p, const ComplexVector& lambda,
                              const ComplexVector& beta, const ComplexVector& psi0, double t);

struct Moments {
  RealVector mean;
  RealMatrix cov;
};

/// Mean and covariance of the density proportional to
///   N(psi; mu, Sigma) exp(-||U (W_Q psi0 - W_K psi)||^2 / (2 sigma^2))
/// with mu and Sigma from RK4, by tensor-grid trapezoidal quadrature. The
/// first pass spans the prior and the least-squares minimizer of the energy;
/// later passes span +-8 standard deviations of the previous estimate along
/// its principal axes until the moments settle (at least `passes` passes).
/// Real dynamics, d <= 3.
Moments quadrature_posterior(const RealMatrix& g, const RealVector& beta, const RealVector& psi0,
                             double t, const RealMatrix& w_q, const RealMatrix& w_k,
                             const RealMatrix& u_feat, double sigma, double sigma_noise,
                             int points_per_axis = 81, int passes = 4);

// Real part of bin i-1 of the length-i DFT over rows 0..i-1, by complex
// exponentials.
RealVector naive_dft_last_bin(const RealMatrix& x, int i);

// out_t = sum_{s<=t} ((q_t + c) . (k_s + c)) v_s by a double loop.
RealMatrix naive_linear_attention(const RealMatrix& q, const RealMatrix& k, const RealMatrix& v,
                                  const RealVector& c);

struct CheckLine {
  std::string name;
  int cases = 0;
  double worst = 0.0;
  double tolerance = 0.0;
  bool pass() const { return worst < tolerance; }
};

// Instance k of a check uses dimension min_dim + k mod (max_dim - min_dim + 1).
struct CheckSpec {
  int trials = 20;
  int min_dim = 1;
  int max_dim = 3;
  std::uint64_t seed = 1;
};

// Closed-form affine solution against RK4, relative max-norm error.
CheckLine check_affine_rk4(const CheckSpec& spec);
// Singular generators against per-eigenvalue scalar formulas.
CheckLine check_affine_singular(const CheckSpec& spec);
// Block-exponential covariance against RK4, relative Frobenius error.
CheckLine check_lyapunov_rk4(const CheckSpec& spec);
// Scalar case sigma^2 (e^{2gT} - 1) / (2g), relative error.
CheckLine check_lyapunov_scalar(const CheckSpec& spec);
// Guided mean (relative) and covariance (relative Frobenius) against
// quadrature. A negative sigma_noise draws it per instance. Dimensions above
// 3 are rejected with RangeError. Propagates ConditioningError.
std::vector<CheckLine> check_guided_quadrature(const CheckSpec& spec, double sigma_noise = -1.0);
// Scalar guided propagator against hand-derived scalar formulas.
CheckLine check_guided_scalar(const CheckSpec& spec, double sigma_noise = -1.0);
// Closed-form multi-token product against the recursion, chains of 1..32.
CheckLine check_chain_identity(const CheckSpec& spec);

struct ActionCheck {
  double classical = 0.0;
  double min_perturbed = 0.0;
  int perturbations = 0;
  int below = 0;
  bool pass() const { return below == perturbations; }
};
// Action of the classical path against pinned-endpoint sine perturbations.
ActionCheck check_action_extremality(int dim, int perturbations, std::uint64_t seed);

struct ModelGradCheck {
  double worst = 0.0;
  std::string worst_tensor;
  std::size_t entries = 0;
};
/// Reverse-mode gradients of the full model loss on random tokens against
/// central differences over every parameter entry. Parameters are drawn with
/// standard deviation init_std so the nonlinear paths are exercised.
ModelGradCheck model_grad_check(const StageConfig& cfg, std::uint64_t seed, double h = 1e-5);

}  // namespace qsf::oracle
