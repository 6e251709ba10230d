#include <doctest.h>

#include <cmath>
#include <numbers>
#include <random>

#include "lbavb/hier_model.hpp"
#include "lbavb/sim_study.hpp"
#include "test_util.hpp"

using namespace lbavb;
using lbavb::testing::fd_grad;
using lbavb::testing::max_rel_err;

namespace {

MatrixXd random_spd(Eigen::Index D, Rng& rng, double jitter = 0.5) {
  std::normal_distribution<double> n(0.0, 1.0);
  MatrixXd X(D, D);
  for (Eigen::Index i = 0; i < D; ++i)
    for (Eigen::Index j = 0; j < D; ++j) X(i, j) = n(rng);
  return X * X.transpose() / static_cast<double>(D) + jitter * MatrixXd::Identity(D, D);
}

VectorXd random_vec(Eigen::Index n, Rng& rng, double sd = 1.0) {
  std::normal_distribution<double> d(0.0, sd);
  VectorXd v(n);
  for (auto& x : v) x = d(rng);
  return v;
}

NaturalState random_state(std::size_t D, std::size_t J, Rng& rng) {
  const auto d = static_cast<Eigen::Index>(D);
  NaturalState s;
  s.alpha.resize(d, static_cast<Eigen::Index>(J));
  for (std::size_t j = 0; j < J; ++j) s.alpha.col(static_cast<Eigen::Index>(j)) = random_vec(d, rng);
  s.group.mu = random_vec(d, rng);
  s.group.Sigma = random_spd(d, rng);
  s.group.a = random_vec(d, rng, 0.5).array().exp();
  return s;
}

VectorXd hybrid_theta(const NaturalState& s) {
  const auto D = s.alpha.rows();
  const ThetaLayout L(static_cast<std::size_t>(D), static_cast<std::size_t>(s.alpha.cols()), Variant::hybrid);
  VectorXd t(L.size());
  for (std::size_t j = 0; j < L.J(); ++j) t.segment(L.alpha(j), D) = s.alpha.col(static_cast<Eigen::Index>(j));
  t.segment(L.mu(), D) = s.group.mu;
  t.segment(L.log_a(), D) = s.group.a.array().log();
  return t;
}

// Independent component densities.
double log_mvn(const VectorXd& x, const VectorXd& m, const MatrixXd& S) {
  const auto D = static_cast<double>(x.size());
  const Eigen::LLT<MatrixXd> llt(S);
  const VectorXd z = llt.matrixL().solve(x - m);
  return -0.5 * D * std::log(2 * std::numbers::pi) - std::log(llt.matrixL().determinant()) - 0.5 * z.squaredNorm();
}

double log_iw(const MatrixXd& S, double nu, const MatrixXd& Psi) {
  const auto D = static_cast<double>(S.rows());
  double lmg = 0.25 * D * (D - 1) * std::log(std::numbers::pi);
  for (int i = 0; i < S.rows(); ++i) lmg += std::lgamma(0.5 * (nu - i));
  return 0.5 * nu * std::log(Psi.determinant()) - 0.5 * nu * D * std::log(2.0) - lmg -
         0.5 * (nu + D + 1) * std::log(S.determinant()) - 0.5 * (Psi * S.inverse()).trace();
}

double log_ig(double a, double shape, double scale) {
  return shape * std::log(scale) - std::lgamma(shape) - (shape + 1) * std::log(a) - scale / a;
}

Dataset small_dataset(const ModelSpec& spec, std::size_t J, std::size_t trials, std::uint64_t seed, MatrixXd* alpha_out = nullptr) {
  Rng rng(seed);
  MatrixXd alpha(static_cast<Eigen::Index>(spec.dim()), static_cast<Eigen::Index>(J));
  const GeneratingConfig fx = forstmann_fixture();
  for (std::size_t j = 0; j < J; ++j) {
    VectorXd a = random_vec(static_cast<Eigen::Index>(spec.dim()), rng, 0.15);
    if (spec.dim() == 7) a += fx.mu;
    alpha.col(static_cast<Eigen::Index>(j)) = a;
  }
  if (alpha_out) *alpha_out = alpha;
  return simulate_subjects(spec, alpha, uniform_plan(spec.schema(), trials), rng);
}

}  // namespace

TEST_CASE("transform round trip") {
  Rng rng(1);
  for (int i = 0; i < 100; ++i) {
    const NaturalState s = random_state(3, 2, rng);
    const ThetaLayout L(3, 2, Variant::gvb);
    const NaturalState back = untransform(L, transform_to_tilde(s));
    CHECK((back.alpha - s.alpha).cwiseAbs().maxCoeff() < 1e-12);
    CHECK((back.group.mu - s.group.mu).cwiseAbs().maxCoeff() < 1e-12);
    CHECK((back.group.Sigma - s.group.Sigma).cwiseAbs().maxCoeff() < 1e-12);
    CHECK((back.group.a - s.group.a).cwiseAbs().maxCoeff() < 1e-12);
  }
  const VectorXd v = vech_from_sigma(MatrixXd::Identity(3, 3));
  CHECK(v.cwiseAbs().maxCoeff() == 0.0);
  const MatrixXd S = random_spd(5, rng);
  const VectorXd vs = vech_from_sigma(S);
  const MatrixXd C = chol_from_vech(5, vs.data());
  CHECK((C * C.transpose() - S).cwiseAbs().maxCoeff() < 1e-10);
  MatrixXd bad = MatrixXd::Identity(2, 2);
  bad(1, 1) = -1;
  CHECK_THROWS_AS(vech_from_sigma(bad), std::domain_error);
}

TEST_CASE("layout bookkeeping") {
  const ThetaLayout g(7, 19, Variant::gvb), h(7, 19, Variant::hybrid);
  CHECK(g.size() == 19 * 7 + 7 + 28 + 7);
  CHECK(h.size() == 19 * 7 + 7 + 7);
}

TEST_CASE("Cholesky Jacobian for D=1, C=[3]") {
  // GVB minus hybrid prior is exactly log|d Sigma / d vech(C*)| = log(2 * 3^2).
  const ThetaLayout Lg(1, 0, Variant::gvb), Lh(1, 0, Variant::hybrid);
  VectorXd tg(3), th(2);
  tg << 0.3, std::log(3.0), -0.2;
  th << 0.3, -0.2;
  const double diff = log_prior_tilde(Lg, tg) - log_prior_hybrid(Lh, th, MatrixXd::Constant(1, 1, 9.0));
  CHECK(std::exp(diff) == doctest::Approx(18.0).epsilon(1e-12));
}

TEST_CASE("prior equals the sum of its components") {
  Rng rng(2);
  for (int i = 0; i < 10; ++i) {
    const NaturalState s = random_state(3, 4, rng);
    const ThetaLayout L(3, 4, Variant::gvb);
    const VectorXd theta = transform_to_tilde(s);
    double oracle = 0.0;
    for (int j = 0; j < 4; ++j) oracle += log_mvn(s.alpha.col(j), s.group.mu, s.group.Sigma);
    oracle += log_mvn(s.group.mu, VectorXd::Zero(3), MatrixXd::Identity(3, 3));
    oracle += log_iw(s.group.Sigma, 4.0, 4.0 * s.group.a.cwiseInverse().asDiagonal().toDenseMatrix());
    for (int d = 0; d < 3; ++d) oracle += log_ig(s.group.a[d], 1.0, 0.5) + std::log(s.group.a[d]);
    const MatrixXd C = Eigen::LLT<MatrixXd>(s.group.Sigma).matrixL();
    oracle += 3 * std::log(2.0);
    for (int d = 0; d < 3; ++d) oracle += (3 - d + 1) * std::log(C(d, d));
    CHECK(std::abs(log_prior_tilde(L, theta) - oracle) < 1e-10);

    // Cross-variant consistency.
    const ThetaLayout Lh(3, 4, Variant::hybrid);
    double jac = 3 * std::log(2.0);
    for (int d = 0; d < 3; ++d) jac += (3 - d + 1) * std::log(C(d, d));
    CHECK(std::abs(log_prior_tilde(L, theta) - log_prior_hybrid(Lh, hybrid_theta(s), s.group.Sigma) - jac) < 1e-10);
  }
}

TEST_CASE("prior integrates to one for D=1, J=1") {
  // Importance sampling with a product Student-t(4) proposal over (alpha, mu, log C, log a).
  const ThetaLayout L(1, 1, Variant::gvb);
  Rng rng(3);
  std::student_t_distribution<double> t(4.0);
  const double nu = 4.0;
  const std::array<double, 4> loc{0.0, 0.0, 0.3, -0.3}, scale{2.5, 1.2, 1.0, 1.2};
  auto log_t = [&](double x) {
    return std::lgamma(0.5 * (nu + 1)) - std::lgamma(0.5 * nu) - 0.5 * std::log(nu * std::numbers::pi) -
           0.5 * (nu + 1) * std::log1p(x * x / nu);
  };
  const int n = 400000;
  double sum = 0.0, sum2 = 0.0;
  VectorXd theta(4);
  for (int i = 0; i < n; ++i) {
    double lq = 0.0;
    for (int k = 0; k < 4; ++k) {
      const double z = t(rng);
      theta[k] = loc[k] + scale[k] * z;
      lq += log_t(z) - std::log(scale[k]);
    }
    const double w = std::exp(log_prior_tilde(L, theta) - lq);
    sum += w;
    sum2 += w * w;
  }
  const double mean = sum / n;
  const double se = std::sqrt((sum2 / n - mean * mean) / n);
  CHECK(std::abs(mean - 1.0) < 3.0 * se);
  CHECK(se < 0.02);
}

TEST_CASE("prior gradient matches finite differences") {
  Rng rng(4);
  const ThetaLayout L(3, 2, Variant::gvb);
  for (int i = 0; i < 20; ++i) {
    const VectorXd theta = transform_to_tilde(random_state(3, 2, rng));
    VectorXd g(L.size());
    log_prior_tilde(L, theta, &g);
    const VectorXd fd = fd_grad([&](const VectorXd& x) { return log_prior_tilde(L, x); }, theta, 1e-5);
    CHECK(max_rel_err(g, fd) < 1e-6);
  }
}

TEST_CASE("score at the group mean") {
  Rng rng(5);
  NaturalState s = random_state(3, 2, rng);
  s.alpha.col(0) = s.group.mu;
  const ThetaLayout L(3, 2, Variant::gvb);
  VectorXd g(L.size());
  log_prior_tilde(L, transform_to_tilde(s), &g);
  CHECK(g.segment(L.alpha(0), 3).cwiseAbs().maxCoeff() < 1e-14);

  for (int j = 0; j < 2; ++j) s.alpha.col(j) = s.group.mu;
  const ThetaLayout Lh(3, 2, Variant::hybrid);
  VectorXd gp(Lh.size()), gc(Lh.size());
  log_prior_hybrid(Lh, hybrid_theta(s), s.group.Sigma, &gp);
  log_conditional_hybrid(Lh, hybrid_theta(s), s.group.Sigma, &gc);
  CHECK(gp.head(6).cwiseAbs().maxCoeff() < 1e-14);
  CHECK(gc.head(6).cwiseAbs().maxCoeff() < 1e-14);
}

TEST_CASE("log a gradient vanishes at its stationary point") {
  Rng rng(6);
  NaturalState s = random_state(3, 2, rng);
  const ThetaLayout L(3, 2, Variant::gvb);
  const MatrixXd Sinv = s.group.Sigma.inverse();
  const double nu0 = 4.0;
  for (int d = 0; d < 3; ++d) {
    // Closed form of the root of -nu0/2 - 1 + (1/2 + 2 Sinv_dd) / a = 0.
    const double a_star = (0.5 + 2.0 * Sinv(d, d)) / (0.5 * nu0 + 1.0);
    // Independent 1-D root search on a finite-difference derivative.
    auto dlp = [&](double log_a) {
      NaturalState x = s;
      x.group.a[d] = std::exp(log_a);
      VectorXd th = transform_to_tilde(x);
      const double h = 1e-5;
      th[L.log_a() + d] += h;
      const double up = log_prior_tilde(L, th);
      th[L.log_a() + d] -= 2 * h;
      return (up - log_prior_tilde(L, th)) / (2 * h);
    };
    double lo = -10, hi = 10;
    for (int it = 0; it < 80; ++it) {
      const double mid = 0.5 * (lo + hi);
      (dlp(mid) > 0 ? lo : hi) = mid;
    }
    CHECK(std::abs(std::exp(0.5 * (lo + hi)) / a_star - 1.0) < 1e-6);
    s.group.a[d] = a_star;
  }
  VectorXd g(L.size());
  log_prior_tilde(L, transform_to_tilde(s), &g);
  CHECK(g.segment(L.log_a(), 3).cwiseAbs().maxCoeff() < 1e-8);
}

TEST_CASE("conditional IW parameters") {
  Rng rng(7);
  const NaturalState s = random_state(7, 19, rng);
  // Degrees of freedom D + J + 1; see the decisions ledger for the printed 2D + J + 1.
  CHECK(conditional_iw_params(s.alpha, s.group.mu, s.group.a).nu == 27.0);
  const IwParams e = conditional_iw_params(MatrixXd(3, 0), VectorXd::Zero(3), VectorXd::Constant(3, 0.25));
  CHECK((e.Psi - 16.0 * MatrixXd::Identity(3, 3)).cwiseAbs().maxCoeff() == 0.0);
  CHECK(e.nu == 4.0);
  CHECK_THROWS_AS(conditional_iw_params(s.alpha, s.group.mu, -s.group.a), std::domain_error);
}

TEST_CASE("joint over IW density is constant in Sigma") {
  Rng rng(8);
  for (int ctx = 0; ctx < 10; ++ctx) {
    const NaturalState s = random_state(3, 4, rng);
    const ThetaLayout L(3, 4, Variant::hybrid);
    const VectorXd t1 = hybrid_theta(s);
    const IwParams iw = conditional_iw_params(L, t1);
    std::vector<double> diffs;
    for (int k = 0; k < 20; ++k) {
      const MatrixXd S = random_spd(3, rng, 0.1);
      diffs.push_back(log_prior_hybrid(L, t1, S) - log_iw(S, iw.nu, iw.Psi));
    }
    double m = 0.0, v = 0.0;
    for (double d : diffs) m += d / 20;
    for (double d : diffs) v += (d - m) * (d - m) / 19;
    CHECK(v < 1e-8);
  }
}

TEST_CASE("IW density matches the independent formula") {
  Rng rng(9);
  const MatrixXd S = random_spd(4, rng), P = random_spd(4, rng);
  CHECK(std::abs(log_iw_density(S, {9.0, P}) - log_iw(S, 9.0, P)) < 1e-10);
}

TEST_CASE("IW sampler moments, positivity and determinism") {
  Rng rng(10);
  const MatrixXd Psi = random_spd(3, rng);
  const IwParams iw{12.0, Psi};
  const int n = 100000;
  MatrixXd sum = MatrixXd::Zero(3, 3), sum2 = MatrixXd::Zero(3, 3);
  Rng draw(11);
  for (int i = 0; i < n; ++i) {
    const MatrixXd S = sample_iw(iw, draw);
    CHECK_MESSAGE(Eigen::LLT<MatrixXd>(S).info() == Eigen::Success, "draw not PD");
    sum += S;
    sum2 += S.cwiseProduct(S);
  }
  const MatrixXd mean = sum / n;
  const MatrixXd se = ((sum2 / n - mean.cwiseProduct(mean)) / n).cwiseSqrt();
  const MatrixXd target = Psi / (12.0 - 3.0 - 1.0);
  CHECK(((mean - target).cwiseAbs().array() < 3.0 * se.array()).all());
  Rng a(5), b(5);
  CHECK(sample_iw(iw, a) == sample_iw(iw, b));
}

TEST_CASE("hybrid gradients match finite differences") {
  Rng rng(12);
  const ThetaLayout L(3, 4, Variant::hybrid);
  for (int i = 0; i < 10; ++i) {
    const NaturalState s = random_state(3, 4, rng);
    const VectorXd t1 = hybrid_theta(s);
    VectorXd gp(L.size()), gc(L.size());
    log_prior_hybrid(L, t1, s.group.Sigma, &gp);
    log_conditional_hybrid(L, t1, s.group.Sigma, &gc);
    const VectorXd fp = fd_grad([&](const VectorXd& x) { return log_prior_hybrid(L, x, s.group.Sigma); }, t1, 1e-6);
    const VectorXd fc = fd_grad([&](const VectorXd& x) { return log_conditional_hybrid(L, x, s.group.Sigma); }, t1, 1e-6);
    CHECK(max_rel_err(gp, fp) < 1e-5);
    CHECK(max_rel_err(gc, fc) < 1e-5);
  }
}

TEST_CASE("conditional score has zero mean under the IW") {
  Rng rng(13);
  const NaturalState s = random_state(3, 4, rng);
  const ThetaLayout L(3, 4, Variant::hybrid);
  const VectorXd t1 = hybrid_theta(s);
  const IwParams iw = conditional_iw_params(L, t1);
  const int n = 10000;
  VectorXd sum = VectorXd::Zero(L.size()), sum2 = VectorXd::Zero(L.size()), g(L.size());
  for (int i = 0; i < n; ++i) {
    const MatrixXd S = sample_iw(iw, rng);
    log_conditional_hybrid(L, t1, S, &g);
    sum += g;
    sum2 += g.cwiseProduct(g);
  }
  const VectorXd mean = sum / n;
  const VectorXd se = ((sum2 / n - mean.cwiseProduct(mean)) / n).cwiseSqrt();
  // 3 SE per component; a couple of 3-SE excursions among 18 would be unusual but not impossible.
  int outside = 0;
  for (Eigen::Index k = 0; k < mean.size(); ++k) outside += std::abs(mean[k]) > 3.0 * se[k];
  CHECK(outside == 0);
}

TEST_CASE("LBA likelihood") {
  const GeneratingConfig fx = forstmann_fixture();
  const ModelSpec& spec = fx.spec;

  SUBCASE("empty dataset") {
    Dataset empty;
    empty.schema = spec.schema_ptr();
    empty.subjects.resize(2);
    const LbaLikelihood lik(empty, spec);
    VectorXd g = VectorXd::Ones(14);
    const VectorXd a = VectorXd::Zero(14);
    CHECK(log_likelihood_and_grad(lik, a.data(), g.data()).value == 0.0);
    CHECK(g.cwiseAbs().maxCoeff() == 0.0);
  }

  SUBCASE("gradient matches finite differences") {
    MatrixXd alpha;
    const Dataset data = small_dataset(spec, 3, 50, 21, &alpha);
    const LbaLikelihood lik(data, spec);
    const VectorXd a = Eigen::Map<const VectorXd>(alpha.data(), alpha.size());
    VectorXd g(a.size());
    const LikelihoodEval ev = log_likelihood_and_grad(lik, a.data(), g.data());
    CHECK(ev.floored == 0);
    const VectorXd fd = fd_grad([&](const VectorXd& x) { return log_likelihood_and_grad(lik, x.data(), nullptr).value; }, a, 1e-6);
    CHECK(max_rel_err(g, fd) < 1e-5);
  }

  SUBCASE("duplicated trials double value and gradient") {
    MatrixXd alpha;
    const Dataset data = small_dataset(spec, 2, 30, 22, &alpha);
    Dataset twice = data;
    for (auto& s : twice.subjects) {
      const auto copy = s.trials;
      s.trials.insert(s.trials.end(), copy.begin(), copy.end());
    }
    const LbaLikelihood l1(data, spec), l2(twice, spec);
    const VectorXd a = Eigen::Map<const VectorXd>(alpha.data(), alpha.size());
    VectorXd g1(a.size()), g2(a.size());
    const double v1 = log_likelihood_and_grad(l1, a.data(), g1.data()).value;
    const double v2 = log_likelihood_and_grad(l2, a.data(), g2.data()).value;
    CHECK(std::abs(v2 - 2 * v1) <= 1e-12 * std::abs(v1));
    CHECK((g2 - 2 * g1).cwiseAbs().maxCoeff() <= 1e-10 * g1.cwiseAbs().maxCoeff());
  }

  SUBCASE("permuting subjects permutes gradient blocks") {
    MatrixXd alpha;
    const Dataset data = small_dataset(spec, 3, 30, 23, &alpha);
    Dataset perm = data;
    std::swap(perm.subjects[0], perm.subjects[2]);
    MatrixXd alpha_p = alpha;
    alpha_p.col(0).swap(alpha_p.col(2));
    const LbaLikelihood l1(data, spec), l2(perm, spec);
    VectorXd g1(21), g2(21);
    const double v1 = log_likelihood_and_grad(l1, alpha.data(), g1.data()).value;
    const double v2 = log_likelihood_and_grad(l2, alpha_p.data(), g2.data()).value;
    CHECK(std::abs(v1 - v2) < 1e-9);
    CHECK((g1.segment(0, 7) - g2.segment(14, 7)).cwiseAbs().maxCoeff() < 1e-12);
  }

  SUBCASE("trials before tau are floored and counted") {
    Dataset data = small_dataset(spec, 1, 12, 24);
    data.subjects[0].trials[0].rt = 0.01;
    const LbaLikelihood lik(data, spec);
    VectorXd a = fx.mu;
    VectorXd g(7);
    CHECK(log_likelihood_and_grad(lik, a.data(), g.data()).floored >= 1);
  }
}
