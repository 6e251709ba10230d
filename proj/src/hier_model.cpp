#include "lbavb/hier_model.hpp"

#include <cmath>
#include <numbers>
#include <stdexcept>

#include "lbavb/lba.hpp"

namespace lbavb {

namespace {

constexpr double kLog2Pi = 1.8378770664093454835606594728112;

void require(bool ok, const char* what) {
  if (!ok) throw std::domain_error(what);
}

bool pivots_ok(const Eigen::LLT<MatrixXd>& llt) {
  if (llt.info() != Eigen::Success) return false;
  const auto L = llt.matrixLLT();
  for (Eigen::Index i = 0; i < L.rows(); ++i) {
    const double p = L(i, i) * L(i, i);
    if (!(p > 1e-12) || !std::isfinite(p)) return false;
  }
  return true;
}

// Sum of (alpha_j - mu)(alpha_j - mu)^T and sum of (alpha_j - mu).
struct Scatter {
  MatrixXd S;
  VectorXd sum;
};

Scatter scatter(const ThetaLayout& L, const VectorXd& theta) {
  const auto D = static_cast<Eigen::Index>(L.D());
  Scatter out{MatrixXd::Zero(D, D), VectorXd::Zero(D)};
  const auto mu = theta.segment(L.mu(), D);
  for (std::size_t j = 0; j < L.J(); ++j) {
    const VectorXd r = theta.segment(L.alpha(j), D) - mu;
    out.S.selfadjointView<Eigen::Lower>().rankUpdate(r);
    out.sum += r;
  }
  out.S = out.S.selfadjointView<Eigen::Lower>();
  return out;
}

double log_ig_terms(const VectorXd& log_a, const PriorConstants& pc) {
  double v = 0.0;
  for (Eigen::Index d = 0; d < log_a.size(); ++d) {
    const double a = std::exp(log_a[d]);
    // IG density in a, times the Jacobian a.
    v += pc.ig_shape * std::log(pc.ig_scale) - std::lgamma(pc.ig_shape) -
         (pc.ig_shape + 1.0) * log_a[d] - pc.ig_scale / a + log_a[d];
  }
  return v;
}

// Everything in log p(theta1, Sigma) given Sigma^-1 and log|Sigma|; the
// caller adds any Sigma-parameterization Jacobian.
double log_joint_prior(const ThetaLayout& L, const VectorXd& theta, const MatrixXd& Sinv,
                       double logdet_sigma, const Scatter& sc, VectorXd* grad,
                       const PriorConstants& pc) {
  const auto D = static_cast<Eigen::Index>(L.D());
  const double J = static_cast<double>(L.J());
  const double nu0 = static_cast<double>(D) + 1.0;
  const auto mu = theta.segment(L.mu(), D);
  const VectorXd log_a = theta.segment(L.log_a(), D);
  const VectorXd a = log_a.array().exp();

  double v = -0.5 * J * static_cast<double>(D) * kLog2Pi - 0.5 * J * logdet_sigma -
             0.5 * (sc.S.cwiseProduct(Sinv)).sum();
  v += -0.5 * static_cast<double>(D) * kLog2Pi - 0.5 * mu.squaredNorm();
  const double logdet_psi = static_cast<double>(D) * std::log(pc.iw_scale) - log_a.sum();
  v += 0.5 * nu0 * logdet_psi - 0.5 * nu0 * static_cast<double>(D) * std::numbers::ln2 -
       log_multigamma(0.5 * nu0, L.D()) - 0.5 * (nu0 + static_cast<double>(D) + 1.0) * logdet_sigma -
       0.5 * pc.iw_scale * (Sinv.diagonal().array() / a.array()).sum();
  v += log_ig_terms(log_a, pc);

  if (grad) {
    for (std::size_t j = 0; j < L.J(); ++j) {
      grad->segment(L.alpha(j), D) = -Sinv * (theta.segment(L.alpha(j), D) - mu);
    }
    grad->segment(L.mu(), D) = Sinv * sc.sum - mu;
    for (Eigen::Index d = 0; d < D; ++d) {
      (*grad)[L.log_a() + d] = -0.5 * nu0 - pc.ig_shape + pc.ig_scale / a[d] +
                               0.5 * pc.iw_scale * Sinv(d, d) / a[d];
    }
  }
  return v;
}

}  // namespace

Eigen::LLT<MatrixXd> robust_llt(const MatrixXd& m) {
  require(m.rows() == m.cols(), "Cholesky of a non-square matrix");
  require(m.allFinite(), "Cholesky of a non-finite matrix");
  Eigen::LLT<MatrixXd> llt(m);
  if (pivots_ok(llt)) return llt;
  llt.compute(m + 1e-10 * MatrixXd::Identity(m.rows(), m.cols()));
  if (pivots_ok(llt)) return llt;
  throw std::domain_error("matrix is not positive definite");
}

ThetaLayout::ThetaLayout(std::size_t D, std::size_t J, Variant variant)
    : D_(D), J_(J), variant_(variant) {
  if (D == 0) throw std::invalid_argument("ThetaLayout: D must be positive");
}

VectorXd vech_from_sigma(const MatrixXd& Sigma) {
  const auto D = Sigma.rows();
  const MatrixXd C = robust_llt(Sigma).matrixL();
  VectorXd out(D * (D + 1) / 2);
  Eigen::Index k = 0;
  for (Eigen::Index j = 0; j < D; ++j) {
    for (Eigen::Index i = j; i < D; ++i) out[k++] = i == j ? std::log(C(i, i)) : C(i, j);
  }
  return out;
}

MatrixXd chol_from_vech(std::size_t D, const double* vech) {
  const auto n = static_cast<Eigen::Index>(D);
  MatrixXd C = MatrixXd::Zero(n, n);
  std::size_t k = 0;
  for (Eigen::Index j = 0; j < n; ++j) {
    for (Eigen::Index i = j; i < n; ++i) {
      C(i, j) = i == j ? std::exp(vech[k]) : vech[k];
      ++k;
    }
  }
  return C;
}

VectorXd transform_to_tilde(const NaturalState& s) {
  const auto D = s.alpha.rows();
  const auto J = static_cast<std::size_t>(s.alpha.cols());
  require(s.group.mu.size() == D && s.group.a.size() == D && s.group.Sigma.rows() == D &&
              s.group.Sigma.cols() == D,
          "transform_to_tilde: dimension mismatch");
  require((s.group.a.array() > 0.0).all(), "transform_to_tilde: a must be positive");
  const ThetaLayout L(static_cast<std::size_t>(D), J, Variant::gvb);
  VectorXd theta(L.size());
  for (std::size_t j = 0; j < J; ++j) theta.segment(L.alpha(j), D) = s.alpha.col(j);
  theta.segment(L.mu(), D) = s.group.mu;
  theta.segment(L.vech(), L.vech_size()) = vech_from_sigma(s.group.Sigma);
  theta.segment(L.log_a(), D) = s.group.a.array().log();
  return theta;
}

NaturalState untransform(const ThetaLayout& L, const VectorXd& theta) {
  require(L.variant() == Variant::gvb, "untransform needs the GVB layout");
  require(static_cast<std::size_t>(theta.size()) == L.size(), "untransform: dimension mismatch");
  const auto D = static_cast<Eigen::Index>(L.D());
  NaturalState s;
  s.alpha.resize(D, static_cast<Eigen::Index>(L.J()));
  for (std::size_t j = 0; j < L.J(); ++j) s.alpha.col(j) = theta.segment(L.alpha(j), D);
  s.group.mu = theta.segment(L.mu(), D);
  const MatrixXd C = chol_from_vech(L.D(), theta.data() + L.vech());
  s.group.Sigma = C * C.transpose();
  s.group.a = theta.segment(L.log_a(), D).array().exp();
  return s;
}

double log_multigamma(double x, std::size_t D) {
  double v = 0.25 * static_cast<double>(D) * static_cast<double>(D - 1) * std::log(std::numbers::pi);
  for (std::size_t i = 0; i < D; ++i) v += std::lgamma(x - 0.5 * static_cast<double>(i));
  return v;
}

double log_prior_tilde(const ThetaLayout& L, const VectorXd& theta, VectorXd* grad,
                       const PriorConstants& pc) {
  require(L.variant() == Variant::gvb, "log_prior_tilde needs the GVB layout");
  require(static_cast<std::size_t>(theta.size()) == L.size(), "log_prior_tilde: dimension mismatch");
  if (grad) require(static_cast<std::size_t>(grad->size()) == L.size(), "log_prior_tilde: gradient size");
  const auto D = static_cast<Eigen::Index>(L.D());
  const double J = static_cast<double>(L.J());
  const MatrixXd C = chol_from_vech(L.D(), theta.data() + L.vech());
  const MatrixXd Cinv = C.triangularView<Eigen::Lower>().solve(MatrixXd::Identity(D, D));
  const MatrixXd Sinv = Cinv.transpose() * Cinv;
  double logdet_c = 0.0;
  for (Eigen::Index d = 0; d < D; ++d) logdet_c += std::log(C(d, d));
  const Scatter sc = scatter(L, theta);

  double v = log_joint_prior(L, theta, Sinv, 2.0 * logdet_c, sc, grad, pc);
  v += static_cast<double>(D) * std::numbers::ln2;
  for (Eigen::Index d = 0; d < D; ++d) v += static_cast<double>(D - d + 1) * std::log(C(d, d));

  if (grad) {
    const double nu0 = static_cast<double>(D) + 1.0;
    MatrixXd W = sc.S;
    const VectorXd a = theta.segment(L.log_a(), D).array().exp();
    W.diagonal().array() += pc.iw_scale / a.array();
    const MatrixXd G = Sinv * W * Sinv * C;
    Eigen::Index k = 0;
    for (Eigen::Index j = 0; j < D; ++j) {
      for (Eigen::Index i = j; i < D; ++i) {
        double g = G(i, j);
        if (i == j) {
          g = G(i, i) * C(i, i) - (J + nu0 + static_cast<double>(D) + 1.0) +
              static_cast<double>(D - i + 1);
        }
        (*grad)[L.vech() + k++] = g;
      }
    }
  }
  return v;
}

double log_prior_hybrid(const ThetaLayout& L, const VectorXd& theta1, const MatrixXd& Sigma,
                        VectorXd* grad, const PriorConstants& pc) {
  require(L.variant() == Variant::hybrid, "log_prior_hybrid needs the hybrid layout");
  require(static_cast<std::size_t>(theta1.size()) == L.size(), "log_prior_hybrid: dimension mismatch");
  if (grad) require(static_cast<std::size_t>(grad->size()) == L.size(), "log_prior_hybrid: gradient size");
  const auto D = static_cast<Eigen::Index>(L.D());
  const auto llt = robust_llt(Sigma);
  const MatrixXd Sinv = llt.solve(MatrixXd::Identity(D, D));
  double logdet = 0.0;
  for (Eigen::Index d = 0; d < D; ++d) logdet += 2.0 * std::log(llt.matrixLLT()(d, d));
  return log_joint_prior(L, theta1, Sinv, logdet, scatter(L, theta1), grad, pc);
}

IwParams conditional_iw_params(const MatrixXd& alpha, const VectorXd& mu, const VectorXd& a,
                               const PriorConstants& pc) {
  const auto D = mu.size();
  require(alpha.rows() == D && a.size() == D, "conditional_iw_params: dimension mismatch");
  require((a.array() > 0.0).all() && a.allFinite(), "conditional_iw_params: a must be positive");
  IwParams iw;
  iw.nu = static_cast<double>(D) + 1.0 + static_cast<double>(alpha.cols());
  iw.Psi = MatrixXd::Zero(D, D);
  for (Eigen::Index j = 0; j < alpha.cols(); ++j) {
    const VectorXd r = alpha.col(j) - mu;
    iw.Psi.noalias() += r * r.transpose();
  }
  iw.Psi.diagonal().array() += pc.iw_scale / a.array();
  return iw;
}

IwParams conditional_iw_params(const ThetaLayout& L, const VectorXd& theta1,
                               const PriorConstants& pc) {
  require(L.variant() == Variant::hybrid, "conditional_iw_params needs the hybrid layout");
  const auto D = static_cast<Eigen::Index>(L.D());
  MatrixXd alpha(D, static_cast<Eigen::Index>(L.J()));
  for (std::size_t j = 0; j < L.J(); ++j) alpha.col(j) = theta1.segment(L.alpha(j), D);
  return conditional_iw_params(alpha, theta1.segment(L.mu(), D),
                               theta1.segment(L.log_a(), D).array().exp().matrix(), pc);
}

double log_iw_density(const MatrixXd& Sigma, const IwParams& iw) {
  const auto D = Sigma.rows();
  require(iw.Psi.rows() == D && iw.Psi.cols() == D, "log_iw_density: dimension mismatch");
  require(iw.nu > static_cast<double>(D) - 1.0, "log_iw_density: nu must exceed D - 1");
  const auto ls = robust_llt(Sigma);
  const auto lp = robust_llt(iw.Psi);
  double logdet_s = 0.0, logdet_p = 0.0;
  for (Eigen::Index d = 0; d < D; ++d) {
    logdet_s += 2.0 * std::log(ls.matrixLLT()(d, d));
    logdet_p += 2.0 * std::log(lp.matrixLLT()(d, d));
  }
  const double trace = ls.solve(iw.Psi).trace();
  const double nD = static_cast<double>(D);
  return 0.5 * iw.nu * logdet_p - 0.5 * iw.nu * nD * std::numbers::ln2 -
         log_multigamma(0.5 * iw.nu, static_cast<std::size_t>(D)) -
         0.5 * (iw.nu + nD + 1.0) * logdet_s - 0.5 * trace;
}

double log_conditional_hybrid(const ThetaLayout& L, const VectorXd& theta1, const MatrixXd& Sigma,
                              VectorXd* grad, const PriorConstants& pc) {
  const IwParams iw = conditional_iw_params(L, theta1, pc);
  const double v = log_iw_density(Sigma, iw);
  if (grad) {
    require(static_cast<std::size_t>(grad->size()) == L.size(), "log_conditional_hybrid: gradient size");
    const auto D = static_cast<Eigen::Index>(L.D());
    const MatrixXd I = MatrixXd::Identity(D, D);
    const MatrixXd M = iw.nu * robust_llt(iw.Psi).solve(I) - robust_llt(Sigma).solve(I);
    const auto mu = theta1.segment(L.mu(), D);
    VectorXd sum = VectorXd::Zero(D);
    for (std::size_t j = 0; j < L.J(); ++j) {
      const VectorXd r = theta1.segment(L.alpha(j), D) - mu;
      grad->segment(L.alpha(j), D) = M * r;
      sum += r;
    }
    grad->segment(L.mu(), D) = -M * sum;
    for (Eigen::Index d = 0; d < D; ++d) {
      const double a = std::exp(theta1[L.log_a() + d]);
      (*grad)[L.log_a() + d] = -0.5 * pc.iw_scale * M(d, d) / a;
    }
  }
  return v;
}

MatrixXd sample_iw(const IwParams& iw, Rng& rng) {
  const auto D = iw.Psi.rows();
  require(iw.Psi.cols() == D, "sample_iw: Psi must be square");
  require(iw.nu > static_cast<double>(D) - 1.0, "sample_iw: nu must exceed D - 1");
  const MatrixXd U = robust_llt(iw.Psi).matrixL();
  MatrixXd A = MatrixXd::Zero(D, D);
  std::normal_distribution<double> norm(0.0, 1.0);
  for (Eigen::Index i = 0; i < D; ++i) {
    std::chi_squared_distribution<double> chi2(iw.nu - static_cast<double>(i));
    A(i, i) = std::sqrt(chi2(rng));
    for (Eigen::Index j = 0; j < i; ++j) A(i, j) = norm(rng);
  }
  const MatrixXd X = A.triangularView<Eigen::Lower>().solve(U.transpose());
  MatrixXd Sigma = X.transpose() * X;
  return 0.5 * (Sigma + Sigma.transpose());
}

LikelihoodEval log_likelihood_and_grad(const SubjectLikelihood& lik, const double* alpha,
                                       double* grad) {
  LikelihoodEval out;
  const std::size_t D = lik.dim();
  for (std::size_t j = 0; j < lik.n_subjects(); ++j) {
    std::size_t floored = 0;
    out.value += lik.log_lik(j, alpha + j * D, grad ? grad + j * D : nullptr, floored);
    out.floored += floored;
  }
  return out;
}

LbaLikelihood::LbaLikelihood(Dataset data, ModelSpec spec)
    : data_(std::move(data)), spec_(std::move(spec)) {
  if (!data_.schema || data_.schema.get() != &spec_.schema()) {
    // Families may extend the schema with group factors; trial cells must agree.
    if (!data_.schema || data_.schema->n_cells() != spec_.schema().n_cells() ||
        data_.schema->n_accumulators() != spec_.schema().n_accumulators())
      throw std::invalid_argument("dataset schema does not match the model schema");
  }
  const std::size_t n_cells = spec_.schema().n_cells();
  blocks_.resize(data_.subjects.size());
  for (std::size_t j = 0; j < data_.subjects.size(); ++j) {
    std::vector<int> slot(n_cells, -1);
    for (const auto& t : data_.subjects[j].trials) {
      if (t.cell >= n_cells || t.choice >= spec_.schema().n_accumulators())
        throw std::invalid_argument("trial outside the schema");
      if (slot[t.cell] < 0) {
        slot[t.cell] = static_cast<int>(blocks_[j].size());
        blocks_[j].push_back(CellBlock{t.cell, {}, {}});
      }
      auto& b = blocks_[j][slot[t.cell]];
      b.choice.push_back(t.choice);
      b.rt.push_back(t.rt);
    }
  }
}

double LbaLikelihood::log_lik(std::size_t j, const double* alpha_j, double* grad,
                              std::size_t& floored) const {
  const std::size_t D = spec_.dim();
  const std::size_t n_acc = spec_.schema().n_accumulators();
  std::vector<AccumulatorParams> params(n_acc);
  std::vector<LbaGradient> tg(n_acc), sum(n_acc);
  const std::span<const double> alpha(alpha_j, D);
  if (grad) std::fill(grad, grad + D, 0.0);
  floored = 0;
  double ll = 0.0;
  for (const CellBlock& blk : blocks_[j]) {
    map_effects(spec_, alpha, blk.cell, params);
    bool ok = true;
    for (const auto& p : params) {
      ok = ok && std::isfinite(p.b) && std::isfinite(p.v) && std::isfinite(p.tau) &&
           std::isfinite(p.s) && p.s > 0.0 && p.b > 0.0;
    }
    const std::size_t n = blk.rt.size();
    if (!ok) {
      floored += n;
      ll += kLogDensityFloor * static_cast<double>(n);
      continue;
    }
    if (!grad) {
      for (std::size_t i = 0; i < n; ++i) {
        bool fl = false;
        ll += detail::joint_logdensity(params.data(), n_acc, blk.choice[i], blk.rt[i], fl);
        floored += fl;
      }
      continue;
    }
    std::fill(sum.begin(), sum.end(), LbaGradient{});
    for (std::size_t i = 0; i < n; ++i) {
      bool fl = false;
      ll += detail::joint_logdensity_grad(params.data(), n_acc, blk.choice[i], blk.rt[i], tg.data(), fl);
      floored += fl;
      for (std::size_t k = 0; k < n_acc; ++k) {
        sum[k].d_b += tg[k].d_b;
        sum[k].d_A += tg[k].d_A;
        sum[k].d_v += tg[k].d_v;
        sum[k].d_s += tg[k].d_s;
        sum[k].d_tau += tg[k].d_tau;
      }
    }
    for (std::size_t k = 0; k < n_acc; ++k) {
      const ParamIndex& ix = spec_.index(blk.cell, k);
      const auto& p = params[k];
      grad[ix[0]] += sum[k].d_b * std::exp(alpha[ix[0]]);
      grad[ix[1]] += (sum[k].d_b + sum[k].d_A) * p.A;
      grad[ix[2]] += sum[k].d_v * p.v;
      if (ix[3] >= 0) grad[ix[3]] += sum[k].d_s * p.s;
      grad[ix[4]] += sum[k].d_tau * p.tau;
    }
  }
  return ll;
}

}  // namespace lbavb
