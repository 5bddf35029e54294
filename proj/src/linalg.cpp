#include "qsf/linalg.hpp"

#include <array>
#include <cmath>
#include <map>
#include <memory>
#include <mutex>
#include <numbers>
#include <sstream>

#include <Eigen/Eigenvalues>

#include "qsf/errors.hpp"

namespace qsf {
namespace {

template <typename Mat>
void require_square(const Mat& a, const char* what) {
  if (a.rows() != a.cols()) {
    std::ostringstream os;
    os << what << ": expected a square matrix, got " << a.rows() << "x" << a.cols();
    throw DimensionError(os.str());
  }
}

// Pade coefficients b_0..b_m for m = 3, 5, 7, 9, 13 (Higham 2005).
constexpr std::array<double, 4> kPade3 = {120.0, 60.0, 12.0, 1.0};
constexpr std::array<double, 6> kPade5 = {30240.0, 15120.0, 3360.0, 420.0, 30.0, 1.0};
constexpr std::array<double, 8> kPade7 = {17297280.0, 8648640.0, 1995840.0, 277200.0,
                                          25200.0,    1512.0,    56.0,      1.0};
constexpr std::array<double, 10> kPade9 = {17643225600.0, 8821612800.0, 2075673600.0,
                                           302702400.0,   30270240.0,   2162160.0,
                                           110880.0,      3960.0,       90.0,
                                           1.0};
constexpr std::array<double, 14> kPade13 = {
    64764752532480000.0, 32382376266240000.0, 7771770303897600.0, 1187353796428800.0,
    129060195264000.0,   10559470521600.0,    670442572800.0,     33522128640.0,
    1323241920.0,        40840800.0,          960960.0,           16380.0,
    182.0,               1.0};

// Largest 1-norm for which each Pade degree is accurate to unit roundoff.
constexpr double kTheta3 = 1.495585217958292e-2;
constexpr double kTheta5 = 2.539398330063230e-1;
constexpr double kTheta7 = 9.504178996162932e-1;
constexpr double kTheta9 = 2.097847961257068e0;
constexpr double kTheta13 = 5.371920351148152e0;

template <typename Mat>
double one_norm(const Mat& a) {
  return a.cwiseAbs().colwise().sum().maxCoeff();
}

template <typename Mat, std::size_t N>
Mat pade_low(const Mat& a, const std::array<double, N>& b) {
  const Eigen::Index n = a.rows();
  const Mat ident = Mat::Identity(n, n);
  const Mat a2 = a * a;
  Mat power = ident;  // A^{2k}
  Mat u_inner = Mat::Zero(n, n);
  Mat v = Mat::Zero(n, n);
  for (std::size_t k = 0; 2 * k < N; ++k) {
    v += b[2 * k] * power;
    if (2 * k + 1 < N) u_inner += b[2 * k + 1] * power;
    if (2 * k + 2 < N) power = power * a2;
  }
  const Mat u = a * u_inner;
  return (v - u).partialPivLu().solve(v + u);
}

template <typename Mat>
Mat pade13(const Mat& a) {
  const auto& b = kPade13;
  const Eigen::Index n = a.rows();
  const Mat ident = Mat::Identity(n, n);
  const Mat a2 = a * a;
  const Mat a4 = a2 * a2;
  const Mat a6 = a4 * a2;
  const Mat u_inner = a6 * (b[13] * a6 + b[11] * a4 + b[9] * a2) + b[7] * a6 + b[5] * a4 +
                      b[3] * a2 + b[1] * ident;
  const Mat u = a * u_inner;
  const Mat v = a6 * (b[12] * a6 + b[10] * a4 + b[8] * a2) + b[6] * a6 + b[4] * a4 +
                b[2] * a2 + b[0] * ident;
  return (v - u).partialPivLu().solve(v + u);
}

template <typename Mat>
Mat mat_exp_impl(const Mat& a_in, double t) {
  require_square(a_in, "mat_exp");
  if (!std::isfinite(t) || !a_in.allFinite()) {
    throw RangeError("mat_exp: non-finite input");
  }
  const Eigen::Index n = a_in.rows();
  if (n == 0) return Mat(0, 0);
  Mat a = a_in * t;
  const double norm = one_norm(a);
  if (norm > kMatExpMaxNorm) {
    std::ostringstream os;
    os << "mat_exp: ||A t||_1 = " << norm << " exceeds the supported bound " << kMatExpMaxNorm;
    throw RangeError(os.str());
  }
  Mat result;
  if (norm <= kTheta3) {
    result = pade_low(a, kPade3);
  } else if (norm <= kTheta5) {
    result = pade_low(a, kPade5);
  } else if (norm <= kTheta7) {
    result = pade_low(a, kPade7);
  } else if (norm <= kTheta9) {
    result = pade_low(a, kPade9);
  } else {
    int squarings = 0;
    if (norm > kTheta13) {
      squarings = static_cast<int>(std::ceil(std::log2(norm / kTheta13)));
      a /= std::ldexp(1.0, squarings);
    }
    result = pade13(a);
    for (int k = 0; k < squarings; ++k) result = result * result;
  }
  if (!result.allFinite()) throw RangeError("mat_exp: result overflowed");
  return result;
}

template <typename Mat, typename Vec>
Vec phi1_impl(const Mat& g, double t, const Vec& beta) {
  require_square(g, "phi1_apply");
  if (g.rows() != beta.size()) {
    std::ostringstream os;
    os << "phi1_apply: generator is " << g.rows() << "x" << g.cols() << " but beta has "
       << beta.size() << " entries";
    throw DimensionError(os.str());
  }
  const Eigen::Index n = g.rows();
  const double scale = beta.template lpNorm<1>();
  if (scale == 0.0 || t == 0.0) return Vec::Zero(n);
  // exp([[A, b], [0, 0]]) = [[e^A, phi_1(A) b], [0, 1]] with A = G T, b = T beta.
  // beta is normalized first; the result is linear in it.
  Mat block = Mat::Zero(n + 1, n + 1);
  block.topLeftCorner(n, n) = g * t;
  block.topRightCorner(n, 1) = beta * (t / scale);
  const Mat e = mat_exp_impl(block, 1.0);
  return e.topRightCorner(n, 1) * scale;
}

template <typename Mat>
Mat lyapunov_impl(const Mat& g, double sigma_noise, double t) {
  require_square(g, "lyapunov_covariance");
  if (!(sigma_noise >= 0.0) || !(t >= 0.0)) {
    throw RangeError("lyapunov_covariance: sigma_noise and T must be non-negative");
  }
  const Eigen::Index n = g.rows();
  if (t == 0.0 || sigma_noise == 0.0) return Mat::Zero(n, n);
  const double q = sigma_noise * sigma_noise;
  Mat block = Mat::Zero(2 * n, 2 * n);
  block.topLeftCorner(n, n) = g;
  block.topRightCorner(n, n) = q * Mat::Identity(n, n);
  block.bottomRightCorner(n, n) = -g.transpose();
  const Mat e = mat_exp_impl(block, t);
  // Top-right block is int_0^T e^{G(T-s)} Q e^{-G^T s} ds; right-multiplying
  // by (e^{GT})^T gives int_0^T e^{Gu} Q e^{G^T u} du.
  const Mat sigma = e.topRightCorner(n, n) * e.topLeftCorner(n, n).transpose();
  return (sigma + sigma.transpose()) * 0.5;
}

}  // namespace

RealMatrix mat_exp(const RealMatrix& a, double t) { return mat_exp_impl(a, t); }
ComplexMatrix mat_exp(const ComplexMatrix& a, double t) { return mat_exp_impl(a, t); }

ComplexVector phi1_apply(const ComplexMatrix& g, double t, const ComplexVector& beta) {
  return phi1_impl(g, t, beta);
}
RealVector phi1_apply(const RealMatrix& g, double t, const RealVector& beta) {
  return phi1_impl(g, t, beta);
}

std::vector<Complex> eigenvalues(const ComplexMatrix& a) {
  require_square(a, "eigenvalues");
  if (!a.allFinite()) throw NumericError("eigenvalues: non-finite input");
  Eigen::ComplexEigenSolver<ComplexMatrix> solver(a, /*computeEigenvectors=*/false);
  if (solver.info() != Eigen::Success) {
    std::ostringstream os;
    os << "eigenvalues: complex QR iteration did not converge for a " << a.rows() << "x"
       << a.cols() << " matrix (||A||_F = " << a.norm() << ")";
    throw NumericError(os.str());
  }
  const auto& ev = solver.eigenvalues();
  return {ev.data(), ev.data() + ev.size()};
}

std::vector<Complex> eigenvalues(const RealMatrix& a) {
  require_square(a, "eigenvalues");
  if (!a.allFinite()) throw NumericError("eigenvalues: non-finite input");
  Eigen::EigenSolver<RealMatrix> solver(a, /*computeEigenvectors=*/false);
  if (solver.info() != Eigen::Success) {
    std::ostringstream os;
    os << "eigenvalues: real Schur iteration did not converge for a " << a.rows() << "x"
       << a.cols() << " matrix (||A||_F = " << a.norm() << ")";
    throw NumericError(os.str());
  }
  const auto& ev = solver.eigenvalues();
  return {ev.data(), ev.data() + ev.size()};
}

ComplexMatrix lyapunov_covariance(const ComplexMatrix& g, double sigma_noise, double t) {
  return lyapunov_impl(g, sigma_noise, t);
}
RealMatrix lyapunov_covariance(const RealMatrix& g, double sigma_noise, double t) {
  return lyapunov_impl(g, sigma_noise, t);
}

const RealMatrix& causal_dft_matrix(int n) {
  if (n < 0) throw DimensionError("causal_dft_matrix: negative size");
  static std::mutex mutex;
  static std::map<int, std::unique_ptr<RealMatrix>> cache;
  std::lock_guard lock(mutex);
  auto& slot = cache[n];
  if (!slot) {
    auto c = std::make_unique<RealMatrix>(RealMatrix::Zero(n, n));
    for (int i = 0; i < n; ++i) {
      const long long len = i + 1;
      for (int j = 0; j <= i; ++j) {
        // Reduce the phase index modulo the transform length before scaling.
        const long long k = (static_cast<long long>(i) * j) % len;
        (*c)(i, j) = std::cos(2.0 * std::numbers::pi * static_cast<double>(k) /
                              static_cast<double>(len));
      }
    }
    slot = std::move(c);
  }
  return *slot;
}

RealVector prefix_dft_last_bin(const RealMatrix& x, int i) {
  if (i < 1 || i > x.rows()) {
    std::ostringstream os;
    os << "prefix_dft_last_bin: position " << i << " outside 1.." << x.rows();
    throw RangeError(os.str());
  }
  const RealMatrix& c = causal_dft_matrix(i);
  return (c.row(i - 1) * x.topRows(i)).transpose();
}

double orthogonality_defect(const RealMatrix& u) {
  return (u.transpose() * u - RealMatrix::Identity(u.cols(), u.cols())).norm();
}

}  // namespace qsf
