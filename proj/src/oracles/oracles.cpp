#include "qsf/oracles.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <random>

#include "qsf/autodiff.hpp"
#include "qsf/errors.hpp"
#include "qsf/propagator.hpp"

namespace qsf::oracle {
namespace {

constexpr int kRk4Steps = 4000;

int dim_for(const CheckSpec& spec, int k) {
  return spec.min_dim + k % (spec.max_dim - spec.min_dim + 1);
}

double uniform(std::mt19937_64& rng, double lo, double hi) {
  return lo + (hi - lo) * (static_cast<double>(rng() >> 11) * 0x1.0p-53);
}

RealMatrix random_real(std::mt19937_64& rng, int rows, int cols, double scale) {
  std::normal_distribution<double> n(0.0, scale);
  RealMatrix m(rows, cols);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = n(rng);
  return m;
}

ComplexMatrix random_complex(std::mt19937_64& rng, int rows, int cols, double scale) {
  const RealMatrix re = random_real(rng, rows, cols, scale / std::sqrt(2.0));
  const RealMatrix im = random_real(rng, rows, cols, scale / std::sqrt(2.0));
  ComplexMatrix m(rows, cols);
  m.real() = re;
  m.imag() = im;
  return m;
}

double rel_max(const ComplexVector& a, const ComplexVector& b) {
  const double scale = std::max(1.0, b.cwiseAbs().maxCoeff());
  return (a - b).cwiseAbs().maxCoeff() / scale;
}

double rel_frob(const ComplexMatrix& a, const ComplexMatrix& b) {
  const double denom = std::max(a.norm(), b.norm());
  return denom == 0.0 ? 0.0 : (a - b).norm() / denom;
}

}  // namespace

ComplexMatrix taylor_exp(const ComplexMatrix& a, double t) {
  const ComplexMatrix at = a * t;
  const double norm = at.cwiseAbs().colwise().sum().maxCoeff();
  int s = 0;
  while (std::ldexp(norm, -s) > 0.25) ++s;
  const ComplexMatrix x = at * std::ldexp(1.0, -s);
  const auto n = a.rows();
  ComplexMatrix sum = ComplexMatrix::Identity(n, n);
  ComplexMatrix term = ComplexMatrix::Identity(n, n);
  for (int k = 1; k <= 40; ++k) {
    term = term * x / static_cast<double>(k);
    sum += term;
    if (term.norm() < 1e-20 * sum.norm()) break;
  }
  for (int i = 0; i < s; ++i) sum = sum * sum;
  return sum;
}

ComplexVector rk4_affine(const ComplexMatrix& g, const ComplexVector& beta,
                         const ComplexVector& psi0, double t, int steps) {
  const double h = t / steps;
  auto f = [&](const ComplexVector& y) -> ComplexVector { return g * y + beta; };
  ComplexVector y = psi0;
  for (int i = 0; i < steps; ++i) {
    const ComplexVector k1 = f(y);
    const ComplexVector k2 = f(y + 0.5 * h * k1);
    const ComplexVector k3 = f(y + 0.5 * h * k2);
    const ComplexVector k4 = f(y + h * k3);
    y += h / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
  }
  return y;
}

ComplexMatrix rk4_lyapunov(const ComplexMatrix& g, double sigma_noise, double t, int steps) {
  const double h = t / steps;
  const auto n = g.rows();
  const ComplexMatrix q = sigma_noise * sigma_noise * ComplexMatrix::Identity(n, n);
  const ComplexMatrix gt = g.transpose();
  auto f = [&](const ComplexMatrix& s) -> ComplexMatrix { return g * s + s * gt + q; };
  ComplexMatrix s = ComplexMatrix::Zero(n, n);
  for (int i = 0; i < steps; ++i) {
    const ComplexMatrix k1 = f(s);
    const ComplexMatrix k2 = f(s + 0.5 * h * k1);
    const ComplexMatrix k3 = f(s + 0.5 * h * k2);
    const ComplexMatrix k4 = f(s + h * k3);
    s += h / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
  }
  return s;
}

ComplexVector diagonal_affine(const ComplexMatrix& p, const ComplexVector& lambda,
                              const ComplexVector& beta, const ComplexVector& psi0, double t) {
  const Eigen::PartialPivLU<ComplexMatrix> lu(p);
  const ComplexVector a = lu.solve(psi0);
  const ComplexVector b = lu.solve(beta);
  ComplexVector out(lambda.size());
  for (Eigen::Index i = 0; i < lambda.size(); ++i) {
    const Complex l = lambda(i);
    const Complex e = std::exp(l * t);
    const Complex phi = l == Complex(0.0) ? Complex(t) : (e - 1.0) / l;
    out(i) = e * a(i) + phi * b(i);
  }
  return p * out;
}

Moments quadrature_posterior(const RealMatrix& g, const RealVector& beta, const RealVector& psi0,
                             double t, const RealMatrix& w_q, const RealMatrix& w_k,
                             const RealMatrix& u_feat, double sigma, double sigma_noise,
                             int points_per_axis, int passes) {
  const auto d = static_cast<int>(g.rows());
  if (d < 1 || d > 3) throw RangeError("quadrature_posterior: dimension must lie in 1..3");
  const ComplexMatrix gc = g.cast<Complex>();
  const RealVector mu =
      rk4_affine(gc, beta.cast<Complex>(), psi0.cast<Complex>(), t, kRk4Steps).real();
  const RealMatrix prior_cov = rk4_lyapunov(gc, sigma_noise, t, kRk4Steps).real();
  const Eigen::LDLT<RealMatrix> prior(prior_cov);
  const RealVector target = u_feat * w_q * psi0;
  const RealMatrix uk = u_feat * w_k;
  const double inv2s2 = 1.0 / (2.0 * sigma * sigma);

  auto log_density = [&](const RealVector& psi) {
    const RealVector dev = psi - mu;
    const double prior_term = -0.5 * dev.dot(prior.solve(dev));
    const double energy = (target - uk * psi).squaredNorm();
    return prior_term - energy * inv2s2;
  };

  // Grid axes: principal axes of cov scaled by their standard deviations,
  // each at least floor_sd along its own direction.
  auto principal_axes = [](const RealMatrix& cov, const RealMatrix& floor_cov) {
    const Eigen::SelfAdjointEigenSolver<RealMatrix> es(0.5 * (cov + cov.transpose()));
    RealVector sd = es.eigenvalues().cwiseMax(0.0).cwiseSqrt();
    for (Eigen::Index i = 0; i < sd.size(); ++i) {
      const RealVector v = es.eigenvectors().col(i);
      sd(i) = std::max(sd(i), std::sqrt(std::max(0.0, v.dot(floor_cov * v))));
    }
    return RealMatrix(es.eigenvectors() * sd.asDiagonal());
  };

  const int n = points_per_axis;
  const double half_width = 8.0;
  const double step = 2.0 * half_width / (n - 1);
  long total = 1;
  for (int i = 0; i < d; ++i) total *= n;

  // The first grid spans the prior and reaches the least-squares minimizer
  // of the guidance energy, so a posterior far out in the prior's tail is
  // still covered.
  const RealVector ls = uk.completeOrthogonalDecomposition().solve(target);
  RealMatrix axes = principal_axes(prior_cov, RealMatrix::Zero(d, d));
  {
    const RealVector reach = axes.completeOrthogonalDecomposition().solve(ls - mu);
    for (int a = 0; a < d; ++a) axes.col(a) *= (half_width + std::abs(reach(a))) / half_width;
  }
  Moments est{mu, prior_cov};

  std::vector<double> logw(static_cast<std::size_t>(total));
  RealMatrix pts(d, total);
  constexpr int kMaxPasses = 60;
  for (int pass = 0; pass < kMaxPasses; ++pass) {
    const RealVector center = est.mean;
    double max_log = -std::numeric_limits<double>::infinity();
    for (long idx = 0; idx < total; ++idx) {
      RealVector z(d);
      long rem = idx;
      double edge = 1.0;
      for (int a = 0; a < d; ++a) {
        const long k = rem % n;
        rem /= n;
        z(a) = -half_width + step * static_cast<double>(k);
        if (k == 0 || k == n - 1) edge *= 0.5;
      }
      const RealVector psi = center + axes * z;
      pts.col(idx) = psi;
      logw[static_cast<std::size_t>(idx)] = log_density(psi) + std::log(edge);
      max_log = std::max(max_log, logw[static_cast<std::size_t>(idx)]);
    }
    double z_sum = 0.0;
    RealVector m1 = RealVector::Zero(d);
    for (long idx = 0; idx < total; ++idx) {
      const double w = std::exp(logw[static_cast<std::size_t>(idx)] - max_log);
      z_sum += w;
      m1 += w * pts.col(idx);
    }
    m1 /= z_sum;
    RealMatrix m2 = RealMatrix::Zero(d, d);
    for (long idx = 0; idx < total; ++idx) {
      const double w = std::exp(logw[static_cast<std::size_t>(idx)] - max_log);
      const RealVector dev = pts.col(idx) - m1;
      m2 += w * dev * dev.transpose();
    }
    m2 /= z_sum;
    const double scale = std::sqrt(m2.trace());
    const double moved = (m1 - est.mean).norm() / scale + (m2 - est.cov).norm() / m2.norm();
    est.mean = m1;
    est.cov = m2;
    if (pass + 1 >= passes && moved < 1e-10) break;
    // Shrink by at most a factor of ten per pass so an under-resolved
    // estimate cannot collapse the grid.
    axes = principal_axes(est.cov, 0.01 * (axes * axes.transpose()));
  }
  return est;
}

RealVector naive_dft_last_bin(const RealMatrix& x, int i) {
  RealVector out(x.cols());
  const int k = i - 1;
  for (Eigen::Index ch = 0; ch < x.cols(); ++ch) {
    Complex acc(0.0);
    for (int n = 0; n < i; ++n) {
      acc += x(n, ch) * std::polar(1.0, -2.0 * std::numbers::pi * k * n / i);
    }
    out(ch) = acc.real();
  }
  return out;
}

RealMatrix naive_linear_attention(const RealMatrix& q, const RealMatrix& k, const RealMatrix& v,
                                  const RealVector& c) {
  RealMatrix out = RealMatrix::Zero(q.rows(), v.cols());
  for (Eigen::Index t = 0; t < q.rows(); ++t) {
    for (Eigen::Index s = 0; s <= t; ++s) {
      double w = 0.0;
      for (Eigen::Index j = 0; j < q.cols(); ++j) w += (q(t, j) + c(j)) * (k(s, j) + c(j));
      for (Eigen::Index j = 0; j < v.cols(); ++j) out(t, j) += w * v(s, j);
    }
  }
  return out;
}

CheckLine check_affine_rk4(const CheckSpec& spec) {
  std::mt19937_64 rng(spec.seed);
  CheckLine line{"affine evolution vs RK4", spec.trials, 0.0, 1e-6};
  for (int k = 0; k < spec.trials; ++k) {
    const int d = dim_for(spec, k);
    const ComplexMatrix g = random_complex(rng, d, d, 1.0 / std::sqrt(d));
    const ComplexVector beta = random_complex(rng, d, 1, 1.0);
    const ComplexVector psi0 = random_complex(rng, d, 1, 1.0);
    const double t = uniform(rng, 0.2, 2.0);
    const ComplexVector closed = propagator::affine_evolve(g, beta, psi0, t);
    const ComplexVector ref = rk4_affine(g, beta, psi0, t, kRk4Steps);
    line.worst = std::max(line.worst, rel_max(closed, ref));
  }
  return line;
}

CheckLine check_affine_singular(const CheckSpec& spec) {
  std::mt19937_64 rng(spec.seed ^ 0x51u);
  CheckLine line{"affine evolution, singular G", spec.trials, 0.0, 1e-12};
  for (int k = 0; k < spec.trials; ++k) {
    const int d = dim_for(spec, k);
    const Eigen::HouseholderQR<ComplexMatrix> qr(random_complex(rng, d, d, 1.0));
    const ComplexMatrix p = qr.householderQ();
    ComplexVector lambda = random_complex(rng, d, 1, 1.0);
    // At least one zero eigenvalue; G = 0 entirely on every third case.
    const int zeros = k % 3 == 2 ? d : 1 + static_cast<int>(rng() % d);
    for (int i = 0; i < zeros; ++i) lambda(i) = 0.0;
    const ComplexMatrix g = p * lambda.asDiagonal() * p.adjoint();
    const ComplexVector beta = random_complex(rng, d, 1, 1.0);
    const ComplexVector psi0 = random_complex(rng, d, 1, 1.0);
    const double t = uniform(rng, 0.2, 2.0);
    const ComplexVector closed = propagator::affine_evolve(g, beta, psi0, t);
    const ComplexVector ref = diagonal_affine(p, lambda, beta, psi0, t);
    line.worst = std::max(line.worst, rel_max(closed, ref));
  }
  return line;
}

CheckLine check_lyapunov_rk4(const CheckSpec& spec) {
  std::mt19937_64 rng(spec.seed ^ 0x1au);
  CheckLine line{"Lyapunov covariance vs RK4", spec.trials, 0.0, 1e-6};
  for (int k = 0; k < spec.trials; ++k) {
    const int d = dim_for(spec, k);
    const ComplexMatrix g = k % 2 == 0 ? random_real(rng, d, d, 1.0 / std::sqrt(d)).cast<Complex>()
                                       : random_complex(rng, d, d, 1.0 / std::sqrt(d));
    const double sigma = uniform(rng, 0.3, 1.5);
    const double t = uniform(rng, 0.2, 2.0);
    const ComplexMatrix closed = lyapunov_covariance(g, sigma, t);
    const ComplexMatrix ref = rk4_lyapunov(g, sigma, t, kRk4Steps);
    line.worst = std::max(line.worst, rel_frob(closed, ref));
  }
  return line;
}

CheckLine check_lyapunov_scalar(const CheckSpec& spec) {
  std::mt19937_64 rng(spec.seed ^ 0x5cu);
  CheckLine line{"Lyapunov covariance, scalar analytic", spec.trials, 0.0, 1e-10};
  for (int k = 0; k < spec.trials; ++k) {
    const double g = uniform(rng, -2.0, 2.0);
    const double sigma = uniform(rng, 0.3, 1.5);
    const double t = uniform(rng, 0.2, 2.0);
    const double exact = sigma * sigma * std::expm1(2.0 * g * t) / (2.0 * g);
    const RealMatrix closed = lyapunov_covariance(RealMatrix(RealMatrix::Constant(1, 1, g)), sigma, t);
    line.worst = std::max(line.worst, std::abs(closed(0, 0) - exact) / std::abs(exact));
  }
  return line;
}

std::vector<CheckLine> check_guided_quadrature(const CheckSpec& spec, double sigma_noise) {
  if (spec.min_dim < 1 || spec.max_dim > 3) {
    throw RangeError("guided quadrature check supports dimensions 1..3");
  }
  std::mt19937_64 rng(spec.seed ^ 0x9du);
  CheckLine mean{"guided mean vs quadrature", spec.trials, 0.0, 1e-4};
  CheckLine cov{"guided covariance vs quadrature", spec.trials, 0.0, 1e-3};
  for (int k = 0; k < spec.trials; ++k) {
    const int d = dim_for(spec, k);
    const RealMatrix g = random_real(rng, d, d, 1.0 / std::sqrt(d)) - 0.3 * RealMatrix::Identity(d, d);
    const RealVector beta = random_real(rng, d, 1, 1.0);
    const RealVector psi0 = random_real(rng, d, 1, 1.0);
    const RealMatrix w_q = random_real(rng, d, d, 1.0 / std::sqrt(d));
    const RealMatrix w_k = random_real(rng, d, d, 1.0 / std::sqrt(d));
    const RealMatrix u = random_real(rng, d, d, 1.0 / std::sqrt(d));
    const double t = uniform(rng, 0.5, 1.5);
    const double noise = sigma_noise >= 0.0 ? sigma_noise : uniform(rng, 0.5, 1.5);
    const double sigma = uniform(rng, 0.5, 2.0);
    const propagator::GuidedPropagator gp = propagator::guided_propagate(
        g.cast<Complex>(), beta.cast<Complex>(), psi0.cast<Complex>(), t, w_q, w_k, u, sigma,
        noise);
    const Moments ref = quadrature_posterior(g, beta, psi0, t, w_q, w_k, u, sigma, noise);
    const ComplexVector ref_mean = ref.mean.cast<Complex>();
    mean.worst = std::max(mean.worst, (gp.nu - ref_mean).norm() / ref.mean.norm());
    cov.worst = std::max(cov.worst, rel_frob(gp.lambda, ref.cov.cast<Complex>()));
  }
  return {mean, cov};
}

CheckLine check_guided_scalar(const CheckSpec& spec, double sigma_noise) {
  std::mt19937_64 rng(spec.seed ^ 0x77u);
  CheckLine line{"guided propagator, scalar analytic", spec.trials, 0.0, 1e-12};
  for (int k = 0; k < spec.trials; ++k) {
    const double g = uniform(rng, -1.5, 1.0);
    const double beta = uniform(rng, -1.0, 1.0);
    const double psi0 = uniform(rng, -1.0, 1.0);
    const double wq = uniform(rng, -1.5, 1.5);
    const double wk = uniform(rng, 0.2, 1.5);
    const double u = uniform(rng, 0.2, 1.5);
    const double t = uniform(rng, 0.3, 1.5);
    const double noise = sigma_noise >= 0.0 ? sigma_noise : uniform(rng, 0.5, 1.5);
    const double sigma = uniform(rng, 0.5, 2.0);

    const double e = std::exp(g * t);
    const double mu = e * psi0 + std::expm1(g * t) / g * beta;
    const double var = noise * noise * std::expm1(2.0 * g * t) / (2.0 * g);
    const double lambda = 1.0 / (1.0 / var + wk * wk * u * u / (sigma * sigma));
    const double nu = lambda * (mu / var + wk * u * u * wq * psi0 / (sigma * sigma));

    const auto one = [](double v) { return RealMatrix::Constant(1, 1, v); };
    const propagator::GuidedPropagator gp = propagator::guided_propagate(
        ComplexMatrix::Constant(1, 1, g), ComplexVector::Constant(1, beta),
        ComplexVector::Constant(1, psi0), t, one(wq), one(wk), one(u), sigma, noise);
    line.worst = std::max({line.worst, std::abs(gp.nu(0) - nu) / std::abs(nu),
                           std::abs(gp.lambda(0, 0) - lambda) / lambda,
                           std::abs(gp.mu_k(0) - mu) / std::max(1.0, std::abs(mu))});
  }
  return line;
}

CheckLine check_chain_identity(const CheckSpec& spec) {
  std::mt19937_64 rng(spec.seed ^ 0xc4u);
  CheckLine line{"multi-token closed form vs recursion", spec.trials, 0.0, 1e-10};
  for (int k = 0; k < spec.trials; ++k) {
    const int d = dim_for(spec, k);
    const int n = 1 + static_cast<int>(rng() % 32);
    std::vector<propagator::TokenStepParams> steps;
    for (int j = 0; j < n; ++j) {
      const ComplexMatrix g = random_complex(rng, d, d, 0.5 / std::sqrt(d)) -
                              0.1 * ComplexMatrix::Identity(d, d);
      steps.push_back(propagator::make_token_step(g, random_complex(rng, d, 1, 1.0),
                                                  uniform(rng, 0.1, 1.0)));
    }
    const ComplexVector psi0 = random_complex(rng, d, 1, 1.0);
    const ComplexVector rec = propagator::chain_propagators(steps, psi0);
    const ComplexVector closed = propagator::chain_propagators_closed_form(steps, psi0);
    line.worst = std::max(line.worst, (rec - closed).norm() / std::max(1.0, rec.norm()));
  }
  return line;
}

ActionCheck check_action_extremality(int dim, int perturbations, std::uint64_t seed) {
  std::mt19937_64 rng(seed ^ 0xacu);
  const int d = dim;
  const ComplexMatrix g = random_real(rng, d, d, 1.0 / std::sqrt(d)).cast<Complex>();
  const ComplexVector beta = random_real(rng, d, 1, 1.0).cast<Complex>();
  const ComplexVector psi0 = random_real(rng, d, 1, 1.0).cast<Complex>();
  const double t_end = 1.0;
  const int samples = 201;
  const double dt = t_end / (samples - 1);

  ComplexMatrix path(d, samples);
  for (int i = 0; i < samples; ++i) {
    path.col(i) = propagator::affine_evolve(g, beta, psi0, dt * i);
  }
  ActionCheck out;
  out.classical = propagator::evaluate_action(path, dt, g, beta);
  out.min_perturbed = std::numeric_limits<double>::infinity();
  out.perturbations = perturbations;
  for (int p = 0; p < perturbations; ++p) {
    const double amplitude = std::pow(10.0, uniform(rng, -3.0, 0.0));
    ComplexMatrix bumped = path;
    for (int mode = 1; mode <= 3; ++mode) {
      const ComplexVector a = random_complex(rng, d, 1, amplitude);
      for (int i = 1; i < samples - 1; ++i) {
        bumped.col(i) += a * std::sin(mode * std::numbers::pi * i / (samples - 1));
      }
    }
    const double s = propagator::evaluate_action(bumped, dt, g, beta);
    out.min_perturbed = std::min(out.min_perturbed, s);
    if (out.classical < s) ++out.below;
  }
  return out;
}

ModelGradCheck model_grad_check(const StageConfig& cfg, std::uint64_t seed, double h) {
  const Model model(cfg);
  ad::ParamStore store;
  model.init_parameters(store, seed);
  // Gains and zeta away from their neutral init so every path matters.
  std::mt19937_64 rng(seed ^ 0xfeu);
  for (ad::Parameter& p : store.params()) {
    p.value += random_real(rng, static_cast<int>(p.value.rows()), static_cast<int>(p.value.cols()),
                           cfg.init_std);
  }
  std::vector<int> tokens(static_cast<std::size_t>(cfg.seq_len));
  std::vector<int> targets(tokens.size());
  for (auto& t : tokens) t = static_cast<int>(rng() % cfg.vocab);
  for (auto& t : targets) t = static_cast<int>(rng() % cfg.vocab);

  auto loss_value = [&] {
    ad::Tape tape(&store);
    return tape.value(model.loss(tape, tokens, targets))(0, 0);
  };
  ad::Tape tape(&store);
  const ad::Gradients grads = tape.backward(model.loss(tape, tokens, targets));

  ModelGradCheck out;
  for (std::size_t i = 0; i < store.size(); ++i) {
    ad::Matrix& value = store.at(i).value;
    ad::Matrix fd(value.rows(), value.cols());
    for (Eigen::Index k = 0; k < value.size(); ++k) {
      const double orig = value.data()[k];
      value.data()[k] = orig + h;
      const double up = loss_value();
      value.data()[k] = orig - h;
      const double down = loss_value();
      value.data()[k] = orig;
      fd.data()[k] = (up - down) / (2.0 * h);
    }
    out.entries += static_cast<std::size_t>(value.size());
    const ad::Matrix analytic =
        grads.has(i) ? grads.at(i) : ad::Matrix::Zero(value.rows(), value.cols());
    const double err = ad::relative_error(analytic, fd);
    if (err >= out.worst) {
      out.worst = err;
      out.worst_tensor = store.at(i).name;
    }
  }
  return out;
}

}  // namespace qsf::oracle
