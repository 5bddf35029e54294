#include <doctest.h>

#include <cmath>
#include <numbers>

#include "qsf/autodiff.hpp"
#include "qsf/errors.hpp"
#include "qsf/oracles.hpp"
#include "support.hpp"

using namespace qsf;
using qsf::ad::Matrix;
using qsf::test::random_matrix;

TEST_CASE("every registered op passes the finite-difference check across 20 seeds") {
  for (ad::OpKind kind : ad::checkable_ops()) {
    double worst = 0.0;
    for (std::uint64_t seed = 1; seed <= 20; ++seed) worst = std::max(worst, ad::grad_check(kind, seed));
    INFO(ad::op_name(kind), " worst ", worst);
    CHECK(worst < 1e-4);
  }
}

TEST_CASE("per-op finite-difference targets") {
  CHECK(ad::grad_check(ad::OpKind::Matmul, 3) < 1e-6);
  CHECK(ad::grad_check(ad::OpKind::Gelu, 3) < 1e-5);
  CHECK(ad::grad_check(ad::OpKind::PrefixLinearAttention, 3) < 1e-4);
}

TEST_CASE("forward values of elementary ops") {
  ad::Tape tape;
  CHECK(tape.value(tape.gelu(tape.constant(Matrix::Zero(1, 1))))(0, 0) == 0.0);

  const ad::Var x = tape.constant(Matrix::Constant(1, 6, 2.5));
  const ad::Var ln = tape.layernorm(x, tape.constant(Matrix::Ones(1, 6)), tape.constant(Matrix::Zero(1, 6)));
  CHECK(tape.value(ln).norm() == 0.0);

  const std::vector<int> targets = {7, 200};
  const ad::Var ce = tape.cross_entropy(tape.constant(Matrix::Zero(2, 256)), targets);
  CHECK(tape.value(ce)(0, 0) == doctest::Approx(std::log(256.0)).epsilon(1e-14));
}

TEST_CASE("backward: linear cases") {
  ad::ParamStore store;
  std::mt19937_64 rng(1);
  store.add("w", random_matrix(rng, 3, 4));
  const Matrix x = random_matrix(rng, 4, 1);
  ad::Tape tape(&store);
  const ad::Var y = tape.matmul(tape.param("w"), tape.constant(x));
  const ad::Gradients g = tape.backward(tape.sum(y));
  CHECK((g.at(0) - Matrix::Ones(3, 1) * x.transpose()).norm() < 1e-15);

  ad::ParamStore s2;
  s2.add("a", Matrix::Constant(1, 1, 0.3));
  ad::Tape t2(&s2);
  const ad::Var a = t2.param("a");
  const ad::Var chain = t2.add(t2.add(t2.add(a, t2.constant(Matrix::Ones(1, 1))), t2.constant(Matrix::Ones(1, 1))),
                               t2.constant(Matrix::Ones(1, 1)));
  CHECK(t2.backward(chain).at(0)(0, 0) == 1.0);
}

TEST_CASE("backward rejects non-scalar losses; frozen parameters get no gradient") {
  ad::ParamStore store;
  store.add("w", Matrix::Ones(2, 2));
  store.add("v", Matrix::Ones(2, 2));
  store.set_frozen("v", true);
  ad::Tape tape(&store);
  const ad::Var y = tape.matmul(tape.param("w"), tape.param("v"));
  CHECK_THROWS_AS(tape.backward(y), DimensionError);
  const ad::Gradients g = tape.backward(tape.sum(y));
  CHECK(g.has(0));
  CHECK_FALSE(g.has(1));
}

TEST_CASE("parameter store") {
  ad::ParamStore store;
  store.add("a", Matrix::Zero(2, 2));
  CHECK_THROWS_AS(store.add("a", Matrix::Zero(1, 1)), ConfigError);
  CHECK_THROWS_AS(store.index_of("missing"), ConfigError);
  ad::Tape tape(&store);
  CHECK_THROWS_AS(tape.param("missing"), ConfigError);
  CHECK(store.scalar_count() == 4);
}

TEST_CASE("shape mismatches raise DimensionError") {
  ad::Tape tape;
  const ad::Var a = tape.constant(Matrix::Ones(2, 3));
  const ad::Var b = tape.constant(Matrix::Ones(2, 3));
  CHECK_THROWS_AS(tape.matmul(a, b), DimensionError);
  CHECK_THROWS_AS(tape.add(a, tape.constant(Matrix::Ones(3, 2))), DimensionError);
  CHECK_THROWS_AS(tape.skew_mat_exp(a), DimensionError);
}

TEST_CASE("skew_mat_exp gradient") {
  // Symmetric W: A = 0, U = I, and ||U - I||^2 has zero gradient.
  std::mt19937_64 rng(2);
  const Matrix s = random_matrix(rng, 4, 4);
  const Matrix w = s + s.transpose();
  const Matrix u = mat_exp(RealMatrix(w - w.transpose()));
  CHECK((u - Matrix::Identity(4, 4)).norm() == 0.0);
  CHECK(ad::grad_skew_mat_exp(w, 2.0 * (u - Matrix::Identity(4, 4))).norm() == 0.0);

  // 2x2 rotation: A = [[0, theta], [-theta, 0]] from W = [[0, theta], [0, 0]].
  const double theta = 0.7;
  Matrix w2 = Matrix::Zero(2, 2);
  w2(0, 1) = theta;
  Matrix upstream = Matrix::Zero(2, 2);
  upstream(0, 0) = 1.0;
  CHECK(ad::grad_skew_mat_exp(w2, upstream)(0, 1) == doctest::Approx(-std::sin(theta)).epsilon(1e-12));

  // Random 5x5 against central differences.
  const Matrix w5 = random_matrix(rng, 5, 5, 0.5);
  const Matrix up = random_matrix(rng, 5, 5);
  const Matrix g = ad::grad_skew_mat_exp(w5, up);
  Matrix fd(5, 5);
  const double h = 1e-6;
  for (int i = 0; i < 5; ++i) {
    for (int j = 0; j < 5; ++j) {
      Matrix wp = w5, wm = w5;
      wp(i, j) += h;
      wm(i, j) -= h;
      fd(i, j) = (up.cwiseProduct(mat_exp(RealMatrix(wp - wp.transpose()))).sum() -
                  up.cwiseProduct(mat_exp(RealMatrix(wm - wm.transpose()))).sum()) /
                 (2 * h);
    }
  }
  CHECK((g - fd).cwiseAbs().maxCoeff() < 1e-5);
  CHECK((g + g.transpose()).norm() < 1e-12);
}

TEST_CASE("causal DFT gradient is the transposed transform") {
  std::mt19937_64 rng(3);
  ad::ParamStore store;
  store.add("x", random_matrix(rng, 9, 4));
  const Matrix upstream = random_matrix(rng, 9, 4);
  ad::Tape tape(&store);
  const ad::Gradients g = tape.backward(tape.contract(tape.causal_dft_real(tape.param("x")), upstream));
  CHECK((g.at(0) - causal_dft_matrix(9).transpose() * upstream).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("prefix-sum linear attention equals the naive double loop") {
  std::mt19937_64 rng(4);
  for (int trial = 0; trial < 50; ++trial) {
    const int n = 1 + static_cast<int>(rng() % 64);
    const int d = 1 + static_cast<int>(rng() % 8);
    const Matrix q = random_matrix(rng, n, d), k = random_matrix(rng, n, d), v = random_matrix(rng, n, d);
    const Matrix c = random_matrix(rng, 1, d);
    ad::Tape tape;
    const ad::Var out = tape.prefix_linear_attention(tape.constant(q), tape.constant(k), tape.constant(v),
                                                     tape.constant(c));
    const Matrix ref = oracle::naive_linear_attention(q, k, v, c.row(0).transpose());
    CHECK((tape.value(out) - ref).cwiseAbs().maxCoeff() < 1e-10);
  }
}

TEST_CASE("dropout is seeded and inverted") {
  std::mt19937_64 rng(5);
  const Matrix x = random_matrix(rng, 20, 10);
  ad::Tape tape;
  const ad::Var a = tape.dropout(tape.constant(x), 0.25, 99);
  const ad::Var b = tape.dropout(tape.constant(x), 0.25, 99);
  CHECK(tape.value(a) == tape.value(b));
  CHECK(tape.value(tape.dropout(tape.constant(x), 0.0, 99)) == x);
  for (Eigen::Index i = 0; i < x.size(); ++i) {
    const double y = tape.value(a).data()[i];
    CHECK((y == 0.0 || std::abs(y - x.data()[i] / 0.75) < 1e-15));
  }
}

TEST_CASE("tape replay is bit-identical") {
  std::mt19937_64 rng(6);
  ad::ParamStore store;
  store.add("w", random_matrix(rng, 6, 6));
  store.add("c", random_matrix(rng, 1, 6));
  const Matrix x = random_matrix(rng, 10, 6);
  auto run = [&] {
    ad::Tape tape(&store);
    const ad::Var h = tape.matmul_nt(tape.constant(x), tape.param("w"));
    const ad::Var y = tape.prefix_linear_attention(h, h, tape.gelu(h), tape.param("c"));
    const ad::Var loss = tape.sum(tape.dropout(y, 0.1, 7));
    return tape.backward(loss);
  };
  const ad::Gradients a = run();
  const ad::Gradients b = run();
  CHECK(a.at(0) == b.at(0));
  CHECK(a.at(1) == b.at(1));
}

TEST_CASE("gradient norm and accumulation") {
  ad::Gradients g(2);
  g.slot(0) = Matrix::Constant(1, 1, 3.0);
  g.slot(1) = Matrix::Constant(1, 1, 4.0);
  CHECK(g.global_norm() == doctest::Approx(5.0));
  ad::Gradients h = g;
  h.accumulate(g);
  CHECK(h.at(1)(0, 0) == 8.0);
  h.scale(0.5);
  CHECK(h.at(0)(0, 0) == 3.0);
  g.at(0)(0, 0) = std::nan("");
  CHECK_FALSE(g.all_finite());
}
