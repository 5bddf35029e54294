#pragma once

// Dense real/complex kernels shared by the model, the propagator lab and the
// spectral analysis: matrix exponential, phi_1 action, eigenvalues, the
// Lyapunov covariance integral and the causal prefix DFT.

#include <complex>
#include <vector>

#include <Eigen/Dense>

namespace qsf {

using Complex = std::complex<double>;
using RealMatrix = Eigen::MatrixXd;
using RealVector = Eigen::VectorXd;
using ComplexMatrix = Eigen::MatrixXcd;
using ComplexVector = Eigen::VectorXcd;

// Largest 1-norm of A*t accepted by mat_exp. Beyond it the relative accuracy
// target of 1e-12 is not guaranteed and mat_exp throws RangeError.
inline constexpr double kMatExpMaxNorm = 50.0;

/// e^{A t} by scaling and squaring with a degree-13 Pade approximant
/// (lower degrees are used when ||A t||_1 is small enough).
/// Throws DimensionError for non-square A and RangeError when ||A t||_1
/// exceeds kMatExpMaxNorm or the input is not finite.
RealMatrix mat_exp(const RealMatrix& a, double t = 1.0);
ComplexMatrix mat_exp(const ComplexMatrix& a, double t = 1.0);

/// T * phi_1(G T) * beta with phi_1(z) = (e^z - 1) / z, which equals
/// G^{-1}(e^{GT} - I) beta whenever G is invertible and is the continuous
/// limit otherwise. Evaluated through an augmented exponential, so singular G
/// needs no special casing.
ComplexVector phi1_apply(const ComplexMatrix& g, double t, const ComplexVector& beta);
RealVector phi1_apply(const RealMatrix& g, double t, const RealVector& beta);

/// All eigenvalues with multiplicity, in no particular order.
/// The real overload goes through the real Schur form, so complex eigenvalues
/// come out in exact conjugate pairs.
std::vector<Complex> eigenvalues(const ComplexMatrix& a);
std::vector<Complex> eigenvalues(const RealMatrix& a);

/// Sigma(T) solving dSigma/dt = G Sigma + Sigma G^T + sigma_noise^2 I,
/// Sigma(0) = 0. Plain transpose is used for complex G as well.
/// Computed from the block exponential of [[G, s^2 I], [0, -G^T]] T.
ComplexMatrix lyapunov_covariance(const ComplexMatrix& g, double sigma_noise, double t);
RealMatrix lyapunov_covariance(const RealMatrix& g, double sigma_noise, double t);

/// Lower-triangular n x n matrix C with C(i, j) = cos(2 pi i j / (i + 1)) for
/// j <= i: row i holds the real part of the last bin of the (i+1)-point DFT
/// over the causal prefix. Cached per n; the returned reference stays valid
/// for the life of the process.
const RealMatrix& causal_dft_matrix(int n);

/// Per channel, the real part of bin (i - 1) of the length-i DFT over rows
/// 0..i-1 of x (rows are positions, columns are channels). i is 1-based.
RealVector prefix_dft_last_bin(const RealMatrix& x, int i);

// Frobenius norm of A^T A - I.
double orthogonality_defect(const RealMatrix& u);

}  // namespace qsf
