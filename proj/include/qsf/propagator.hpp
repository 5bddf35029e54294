#pragma once

// Closed-form machinery for affine generator dynamics dpsi/dt = G psi + beta:
// generator decomposition, the affine solution, stochastic covariance, the
// attention energy, the attention-guided Gaussian propagator, multi-token
// chaining and the discretized action functional.

#include <limits>
#include <vector>

#include "qsf/linalg.hpp"

namespace qsf::propagator {

struct GeneratorDecomposition {
  ComplexMatrix hamiltonian;  // H = i (G - G^dagger) / 2
  ComplexMatrix dissipator;   // Gamma = (G + G^dagger) / 2
  std::vector<double> omega;  // eigenvalues of H, ascending
  std::vector<double> gamma;  // eigenvalues of Gamma, ascending
};

/// Unique split G = -i H + Gamma into Hermitian parts.
GeneratorDecomposition decompose_generator(const ComplexMatrix& g);

/// psi(T) = e^{GT} psi0 + G^{-1}(e^{GT} - I) beta, singular-G safe.
/// T = 0 returns psi0 exactly.
ComplexVector affine_evolve(const ComplexMatrix& g, const ComplexVector& beta,
                            const ComplexVector& psi0, double t);

/// ||U_feat (W_Q psi0 - W_K psi1)||^2. The affine feature offset cancels in
/// the difference and does not enter.
double attention_energy(const ComplexVector& psi0, const ComplexVector& psi1,
                        const RealMatrix& w_q, const RealMatrix& w_k, const RealMatrix& u_feat);

struct GuidedPropagator {
  ComplexVector mu_k;     // unguided mean
  ComplexMatrix sigma_t;  // unguided covariance
  ComplexMatrix lambda;   // guided covariance
  ComplexVector nu;       // guided mean
  double sigma_guidance = std::numeric_limits<double>::infinity();
  double sigma_noise = 0.0;
};

/// Endpoint law N(nu, Lambda) of the attention-guided propagator:
///   Lambda^{-1} = Sigma_T^{-1} + W_K^T U^T U W_K / sigma^2
///   nu = Lambda [Sigma_T^{-1} mu_K + W_K^T U^T U W_Q psi0 / sigma^2]
/// sigma = +infinity switches guidance off. Throws ConditioningError when
/// Sigma_T or Lambda^{-1} is numerically singular (e.g. sigma_noise = 0), and
/// RangeError for sigma <= 0 or T <= 0.
GuidedPropagator guided_propagate(const ComplexMatrix& g, const ComplexVector& beta,
                                  const ComplexVector& psi0, double t, const RealMatrix& w_q,
                                  const RealMatrix& w_k, const RealMatrix& u_feat, double sigma,
                                  double sigma_noise);

// Reciprocal condition number below which guided_propagate refuses to invert.
inline constexpr double kMinReciprocalCondition = 1e-13;

struct TokenStepParams {
  ComplexMatrix g;
  ComplexVector beta;
  double t = 1.0;
  ComplexMatrix u;  // e^{G T}
  ComplexVector b;  // G^{-1}(e^{GT} - I) beta
};

TokenStepParams make_token_step(const ComplexMatrix& g, const ComplexVector& beta, double t);

/// psi_N by the recursion psi_k = U_k psi_{k-1} + b_k.
ComplexVector chain_propagators(const std::vector<TokenStepParams>& steps,
                                const ComplexVector& psi0);

/// psi_N = U_N ... U_1 psi0 + sum_k (prod_{j>k} U_j) b_k, evaluated as
/// explicit products.
ComplexVector chain_propagators_closed_form(const std::vector<TokenStepParams>& steps,
                                            const ComplexVector& psi0);

/// Discretized S = int 1/2 ||dpsi/dt - G psi - beta||^2 dt over a path sampled
/// on a uniform grid with spacing dt (columns are time samples). Centered
/// differences inside, second-order one-sided at the ends, trapezoidal
/// quadrature. Throws RangeError for fewer than 3 samples.
double evaluate_action(const ComplexMatrix& path, double dt, const ComplexMatrix& g,
                       const ComplexVector& beta);

}  // namespace qsf::propagator
