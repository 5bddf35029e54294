#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <numbers>

#include "qsf/errors.hpp"
#include "qsf/linalg.hpp"
#include "qsf/oracles.hpp"
#include "support.hpp"

using namespace qsf;
using qsf::test::random_complex;
using qsf::test::random_matrix;

namespace {

// 200 Taylor terms with Kahan-compensated accumulation, no scaling.
RealMatrix compensated_taylor_exp(const RealMatrix& a) {
  const auto n = a.rows();
  RealMatrix sum = RealMatrix::Identity(n, n);
  RealMatrix comp = RealMatrix::Zero(n, n);
  RealMatrix term = RealMatrix::Identity(n, n);
  for (int k = 1; k <= 200; ++k) {
    term = term * a / static_cast<double>(k);
    const RealMatrix y = term - comp;
    const RealMatrix t = sum + y;
    comp = (t - sum) - y;
    sum = t;
  }
  return sum;
}

double rel(const ComplexMatrix& a, const ComplexMatrix& b) {
  return (a - b).norm() / std::max(a.norm(), b.norm());
}

}  // namespace

TEST_CASE("mat_exp of zero and nilpotent matrices") {
  for (int d : {1, 3, 7}) CHECK((mat_exp(RealMatrix(RealMatrix::Zero(d, d))) - RealMatrix::Identity(d, d)).norm() == 0.0);
  RealMatrix n(2, 2);
  n << 0, 1, 0, 0;
  RealMatrix expected(2, 2);
  expected << 1, 1, 0, 1;
  CHECK((mat_exp(n) - expected).norm() < 1e-15);
}

TEST_CASE("mat_exp matches a compensated Taylor series") {
  std::mt19937_64 rng(11);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  for (int trial = 0; trial < 20; ++trial) {
    RealMatrix a(4, 4);
    for (Eigen::Index i = 0; i < a.size(); ++i) a.data()[i] = u(rng);
    const RealMatrix ref = compensated_taylor_exp(a);
    CHECK((mat_exp(a) - ref).norm() / ref.norm() < 1e-12);
  }
}

TEST_CASE("mat_exp matches the scaled Taylor oracle up to the norm bound") {
  std::mt19937_64 rng(12);
  for (double scale : {0.01, 0.3, 2.0, 8.0, 20.0}) {
    for (int trial = 0; trial < 5; ++trial) {
      const ComplexMatrix a = random_complex(rng, 5, 5, scale / 5.0);
      const ComplexMatrix ref = oracle::taylor_exp(a, 1.0);
      CHECK(rel(mat_exp(a), ref) < 1e-11);
    }
  }
}

TEST_CASE("mat_exp semigroup, skew-symmetric orthogonality and spectral mapping") {
  std::mt19937_64 rng(13);
  for (int trial = 0; trial < 10; ++trial) {
    const RealMatrix a = random_matrix(rng, 5, 5, 0.8);
    const double s = 0.37, t = 0.81;
    CHECK((mat_exp(a, s + t) - mat_exp(a, s) * mat_exp(a, t)).norm() < 1e-9);

    const RealMatrix skew = a - a.transpose();
    CHECK(orthogonality_defect(mat_exp(skew)) < 1e-10);

    auto lam_g = eigenvalues(a);
    auto lam_k = eigenvalues(mat_exp(a));
    std::vector<double> expected, got;
    for (auto l : lam_g) expected.push_back(std::exp(l.real()));
    for (auto l : lam_k) got.push_back(std::abs(l));
    std::sort(expected.begin(), expected.end());
    std::sort(got.begin(), got.end());
    for (std::size_t i = 0; i < got.size(); ++i) CHECK(got[i] == doctest::Approx(expected[i]).epsilon(1e-8));
  }
}

TEST_CASE("mat_exp errors") {
  CHECK_THROWS_AS(mat_exp(RealMatrix(RealMatrix::Zero(2, 3))), DimensionError);
  CHECK_THROWS_AS(mat_exp(RealMatrix(RealMatrix::Identity(2, 2) * 60.0)), RangeError);
  CHECK_THROWS_AS(mat_exp(RealMatrix(RealMatrix::Identity(2, 2)), 51.0), RangeError);
  RealMatrix bad = RealMatrix::Zero(2, 2);
  bad(0, 0) = std::nan("");
  CHECK_THROWS_AS(mat_exp(bad), RangeError);
  CHECK_NOTHROW(mat_exp(RealMatrix(RealMatrix::Identity(2, 2) * 49.0)));
}

TEST_CASE("phi1_apply") {
  {
    const ComplexVector beta = ComplexVector::Ones(2);
    const ComplexVector r = phi1_apply(ComplexMatrix::Zero(2, 2), 2.0, beta);
    CHECK(std::abs(r(0) - 2.0) < 1e-15);
    CHECK(std::abs(r(1) - 2.0) < 1e-15);
  }
  {
    const RealVector r = phi1_apply(RealMatrix(RealMatrix::Identity(1, 1)), 1.0, RealVector(RealVector::Ones(1)));
    CHECK(r(0) == doctest::Approx(std::numbers::e - 1.0).epsilon(1e-14));
  }
  std::mt19937_64 rng(14);
  for (int trial = 0; trial < 10; ++trial) {
    const ComplexMatrix g = random_complex(rng, 3, 3) + 2.0 * ComplexMatrix::Identity(3, 3);
    const ComplexVector beta = random_complex(rng, 3, 1);
    const double t = 0.7;
    const ComplexMatrix e = mat_exp(g, t);
    const ComplexVector direct =
        g.partialPivLu().solve((e - ComplexMatrix::Identity(3, 3)) * beta);
    CHECK((phi1_apply(g, t, beta) - direct).norm() / direct.norm() < 1e-10);
  }
}

TEST_CASE("phi1_apply is continuous at singular G") {
  std::mt19937_64 rng(15);
  ComplexMatrix g = ComplexMatrix::Zero(3, 3);
  g(0, 1) = 1.0;
  const ComplexVector beta = random_complex(rng, 3, 1);
  const ComplexVector base = phi1_apply(g, 1.3, beta);
  const ComplexMatrix bump = random_complex(rng, 3, 3, 1e-8);
  CHECK((phi1_apply(g + bump, 1.3, beta) - base).norm() < 1e-7);
}

TEST_CASE("eigenvalues of known matrices") {
  auto sorted_real = [](std::vector<Complex> v) {
    std::vector<double> r;
    for (auto x : v) r.push_back(x.real());
    std::sort(r.begin(), r.end());
    return r;
  };
  RealMatrix d = RealVector(Eigen::Vector3d(0.5, 1.0, 2.0)).asDiagonal();
  const auto r = sorted_real(eigenvalues(d));
  CHECK(r[0] == doctest::Approx(0.5));
  CHECK(r[1] == doctest::Approx(1.0));
  CHECK(r[2] == doctest::Approx(2.0));

  RealMatrix rot(2, 2);
  rot << 0, -1, 1, 0;
  const auto l = eigenvalues(rot);
  CHECK(std::abs(l[0].real()) < 1e-15);
  CHECK(std::abs(std::abs(l[0].imag()) - 1.0) < 1e-15);
  CHECK(l[0] == std::conj(l[1]));
}

TEST_CASE("eigenvalues satisfy trace, determinant and residual checks") {
  std::mt19937_64 rng(16);
  for (int trial = 0; trial < 10; ++trial) {
    const ComplexMatrix a = random_complex(rng, 8, 8);
    const auto lam = eigenvalues(a);
    REQUIRE(lam.size() == 8);
    Complex sum = 0.0, prod = 1.0;
    for (auto l : lam) {
      sum += l;
      prod *= l;
      // Smallest singular value of A - lambda I must vanish.
      const ComplexMatrix shifted = a - l * ComplexMatrix::Identity(8, 8);
      const Eigen::JacobiSVD<ComplexMatrix> svd(shifted);
      CHECK(svd.singularValues()(7) <= 1e-8 * a.norm());
    }
    CHECK(std::abs(sum - a.trace()) < 1e-8 * a.norm());
    const Complex det = a.determinant();
    CHECK(std::abs(prod - det) < 1e-8 * std::abs(det));
  }
}

TEST_CASE("real spectra come in exact conjugate pairs") {
  std::mt19937_64 rng(17);
  for (int trial = 0; trial < 10; ++trial) {
    const auto lam = eigenvalues(RealMatrix(random_matrix(rng, 9, 9)));
    for (const auto& l : lam) {
      if (l.imag() == 0.0) continue;
      const bool has_pair = std::any_of(lam.begin(), lam.end(),
                                        [&](const Complex& m) { return std::abs(m - std::conj(l)) < 1e-8; });
      CHECK(has_pair);
    }
  }
}

TEST_CASE("lyapunov_covariance analytic cases") {
  const double t = 1.7, sigma = 0.6;
  const RealMatrix zero_g = lyapunov_covariance(RealMatrix(RealMatrix::Zero(3, 3)), sigma, t);
  CHECK((zero_g - sigma * sigma * t * RealMatrix::Identity(3, 3)).norm() < 1e-14);

  const RealMatrix scalar = lyapunov_covariance(RealMatrix(RealMatrix::Ones(1, 1)), 1.0, 1.0);
  CHECK(scalar(0, 0) == doctest::Approx((std::exp(2.0) - 1.0) / 2.0).epsilon(1e-12));
  CHECK(scalar(0, 0) == doctest::Approx(3.19453).epsilon(1e-5));

  CHECK(lyapunov_covariance(RealMatrix(RealMatrix::Ones(2, 2)), 1.0, 0.0).norm() == 0.0);
  CHECK_THROWS_AS(lyapunov_covariance(RealMatrix(RealMatrix::Ones(2, 2)), -1.0, 1.0), RangeError);
}

TEST_CASE("lyapunov_covariance matches RK4 and the ODE residual") {
  std::mt19937_64 rng(18);
  for (int trial = 0; trial < 5; ++trial) {
    const RealMatrix g = random_matrix(rng, 3, 3, 0.5) - RealMatrix::Identity(3, 3);
    const double sigma = 0.8, t = 1.0;
    const RealMatrix sigma_t = lyapunov_covariance(g, sigma, t);
    const ComplexMatrix ref = oracle::rk4_lyapunov(g.cast<Complex>(), sigma, t, 10000);
    CHECK((sigma_t - ref.real()).norm() < 1e-6);
    CHECK((sigma_t - sigma_t.transpose()).norm() == 0.0);
    CHECK(Eigen::SelfAdjointEigenSolver<RealMatrix>(sigma_t).eigenvalues().minCoeff() > 0.0);

    const double h = 1e-4;
    const RealMatrix deriv =
        (lyapunov_covariance(g, sigma, t + h) - lyapunov_covariance(g, sigma, t - h)) / (2 * h);
    const RealMatrix rhs =
        g * sigma_t + sigma_t * g.transpose() + sigma * sigma * RealMatrix::Identity(3, 3);
    CHECK((rhs - deriv).norm() < 1e-6);
  }
}

TEST_CASE("prefix DFT last bin") {
  RealMatrix x1(1, 1);
  x1 << 3.0;
  CHECK(prefix_dft_last_bin(x1, 1)(0) == doctest::Approx(3.0));
  RealMatrix x2(2, 1);
  x2 << 1.0, 4.0;
  CHECK(prefix_dft_last_bin(x2, 2)(0) == doctest::Approx(-3.0).epsilon(1e-14));

  std::mt19937_64 rng(19);
  const RealMatrix x = random_matrix(rng, 12, 5);
  for (int i = 1; i <= 12; ++i) {
    CHECK((prefix_dft_last_bin(x, i) - oracle::naive_dft_last_bin(x, i)).cwiseAbs().maxCoeff() < 1e-10);
  }
  const RealMatrix c = causal_dft_matrix(12);
  CHECK((c * x - [&] {
          RealMatrix out(12, 5);
          for (int i = 1; i <= 12; ++i) out.row(i - 1) = oracle::naive_dft_last_bin(x, i).transpose();
          return out;
        }()).cwiseAbs().maxCoeff() < 1e-10);
  CHECK(c.triangularView<Eigen::StrictlyUpper>().toDenseMatrix().norm() == 0.0);
  CHECK_THROWS_AS(prefix_dft_last_bin(x, 0), RangeError);
  CHECK_THROWS_AS(prefix_dft_last_bin(x, 13), RangeError);
}
