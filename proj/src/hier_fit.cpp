#include "lbavb/hier_fit.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace lbavb {

Method parse_method(std::string_view s) {
  if (s == "gvb") return Method::gvb;
  if (s == "hybrid") return Method::hybrid;
  throw std::invalid_argument("unknown method '" + std::string(s) + "' (expected gvb or hybrid)");
}

std::string_view method_name(Method m) { return m == Method::gvb ? "gvb" : "hybrid"; }

HierGvbTarget::HierGvbTarget(const SubjectLikelihood& lik, PriorConstants pc)
    : lik_(lik), pc_(pc), layout_(lik.dim(), lik.n_subjects(), Variant::gvb) {}

double HierGvbTarget::log_joint(const VectorXd& theta, VectorXd& grad, std::size_t& floored) const {
  grad.resize(theta.size());
  const double prior = log_prior_tilde(layout_, theta, &grad, pc_);
  const auto nA = static_cast<Eigen::Index>(layout_.mu());
  VectorXd g_lik(nA);
  const LikelihoodEval ll = log_likelihood_and_grad(lik_, theta.data(), g_lik.data());
  grad.head(nA) += g_lik;
  floored = ll.floored;
  return ll.value + prior;
}

HierHybridTarget::HierHybridTarget(const SubjectLikelihood& lik, PriorConstants pc)
    : lik_(lik), pc_(pc), layout_(lik.dim(), lik.n_subjects(), Variant::hybrid) {}

IwParams HierHybridTarget::conditional(const VectorXd& theta1) const {
  return conditional_iw_params(layout_, theta1, pc_);
}

void HierHybridTarget::terms(const VectorXd& theta1, const MatrixXd& Sigma, const IwParams& /*iw*/,
                             Terms& out) const {
  out.grad_joint.resize(theta1.size());
  out.grad_conditional.resize(theta1.size());
  const double prior = log_prior_hybrid(layout_, theta1, Sigma, &out.grad_joint, pc_);
  const auto nA = static_cast<Eigen::Index>(layout_.mu());
  VectorXd g_lik(nA);
  const LikelihoodEval ll = log_likelihood_and_grad(lik_, theta1.data(), g_lik.data());
  out.grad_joint.head(nA) += g_lik;
  out.log_joint = ll.value + prior;
  out.floored = ll.floored;
  out.log_conditional = log_conditional_hybrid(layout_, theta1, Sigma, &out.grad_conditional, pc_);
}

VectorXd initial_alpha(const Dataset& data, const ModelSpec& spec, std::size_t subject) {
  VectorXd alpha = VectorXd::Zero(static_cast<Eigen::Index>(spec.dim()));
  const FactorSchema& sc = spec.schema();
  const ClassFormula& v = spec.formula(ParamClass::v);
  const int match = sc.match_factor();
  const auto pos = std::find(v.factors.begin(), v.factors.end(), match);
  for (std::size_t local = 0; local < v.n_cells; ++local) {
    double value = std::log(1.5);
    if (match >= 0 && pos != v.factors.end()) {
      std::size_t rem = local;
      int level = 0;
      for (std::size_t i = v.factors.size(); i-- > 0;) {
        if (v.factors.begin() + static_cast<long>(i) == pos) level = static_cast<int>(rem % v.radix[i]);
        rem /= v.radix[i];
      }
      value = level == 0 ? std::log(2.0) : 0.0;
    }
    alpha[static_cast<Eigen::Index>(v.offset + local)] = value;
  }
  const ClassFormula& tau = spec.formula(ParamClass::tau);
  double min_rt = data.min_rt(subject);
  if (!std::isfinite(min_rt)) min_rt = 0.3;
  for (std::size_t local = 0; local < tau.n_cells; ++local)
    alpha[static_cast<Eigen::Index>(tau.offset + local)] = std::log(0.9 * min_rt);
  return alpha;
}

VariationalParams initial_lambda(const Dataset& data, const ModelSpec& spec, Variant variant,
                                 std::size_t r, std::uint64_t seed) {
  const std::size_t J = data.subjects.size();
  const ThetaLayout L(spec.dim(), J, variant);
  const auto D = static_cast<Eigen::Index>(spec.dim());
  r = std::min(r, L.size());
  VariationalParams lambda(L.size(), r);
  auto mu = lambda.mu();
  VectorXd mean = VectorXd::Zero(D);
  for (std::size_t j = 0; j < J; ++j) {
    const VectorXd a = initial_alpha(data, spec, j);
    mu.segment(static_cast<Eigen::Index>(L.alpha(j)), D) = a;
    mean += a;
  }
  if (J > 0) mean /= static_cast<double>(J);
  mu.segment(static_cast<Eigen::Index>(L.mu()), D) = mean;
  Rng rng(seed);
  std::normal_distribution<double> norm(0.0, 0.01);
  auto B = lambda.B();
  for (Eigen::Index j = 0; j < B.cols(); ++j) {
    for (Eigen::Index i = 0; i < B.rows(); ++i) B(i, j) = norm(rng);
  }
  lambda.apply_mask();
  lambda.d().setConstant(0.01);
  return lambda;
}

FitResult fit_hierarchical(const LbaLikelihood& lik, const FitConfig& cfg,
                           const VariationalParams* warm) {
  const Variant variant = cfg.method == Method::gvb ? Variant::gvb : Variant::hybrid;
  FitResult out;
  out.method = cfg.method;
  out.layout = ThetaLayout(lik.dim(), lik.n_subjects(), variant);
  VariationalParams init;
  if (warm) {
    if (warm->p() != out.layout.size()) throw std::invalid_argument("warm start has the wrong dimension");
    init = *warm;
  } else {
    init = initial_lambda(lik.data(), lik.spec(), variant, cfg.r, derive_seed(cfg.vb.seed, 0xA11CE));
  }
  if (cfg.method == Method::gvb) {
    const HierGvbTarget target(lik, cfg.prior);
    out.vb = run_vb(target, std::move(init), cfg.vb);
  } else {
    const HierHybridTarget target(lik, cfg.prior);
    out.vb = run_vb(target, std::move(init), cfg.vb);
  }
  return out;
}

}  // namespace lbavb
