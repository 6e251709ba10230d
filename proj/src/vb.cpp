#include "lbavb/vb.hpp"

#include <chrono>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <limits>

namespace lbavb {

namespace {
constexpr double kLog2Pi = 1.8378770664093454835606594728112;
}

VariationalParams::VariationalParams(std::size_t p, std::size_t r) : p_(p), r_(r) {
  if (p == 0) throw std::invalid_argument("VariationalParams: p must be positive");
  if (r > p) throw std::invalid_argument("VariationalParams: r must not exceed p");
  flat_ = VectorXd::Zero(static_cast<Eigen::Index>(p * (r + 2)));
}

VectorXd VariationalParams::free_mask() const {
  VectorXd m = VectorXd::Ones(flat_.size());
  for (Eigen::Index j = 0; j < ir(); ++j) {
    for (Eigen::Index i = 0; i < j; ++i) m[ip() + j * ip() + i] = 0.0;
  }
  return m;
}

void VariationalParams::apply_mask() {
  auto b = B();
  for (Eigen::Index j = 0; j < ir(); ++j) {
    for (Eigen::Index i = 0; i < j; ++i) b(i, j) = 0.0;
  }
}

MatrixXd VariationalParams::covariance() const {
  MatrixXd S = B() * B().transpose();
  S.diagonal().array() += d().array().square();
  return S;
}

VectorXd VariationalParams::marginal_sd() const {
  return (B().rowwise().squaredNorm().array() + d().array().square()).sqrt();
}

void reparam(const VariationalParams& lambda, const VectorXd& eps1, const VectorXd& eps2,
             VectorXd& theta) {
  theta = lambda.mu() + lambda.d().cwiseProduct(eps2);
  if (lambda.r() > 0) theta.noalias() += lambda.B() * eps1;
}

ReparamDraw draw_reparam(const VariationalParams& lambda, Rng& rng) {
  std::normal_distribution<double> norm(0.0, 1.0);
  ReparamDraw out;
  out.eps1.resize(static_cast<Eigen::Index>(lambda.r()));
  out.eps2.resize(static_cast<Eigen::Index>(lambda.p()));
  for (Eigen::Index i = 0; i < out.eps1.size(); ++i) out.eps1[i] = norm(rng);
  for (Eigen::Index i = 0; i < out.eps2.size(); ++i) out.eps2[i] = norm(rng);
  reparam(lambda, out.eps1, out.eps2, out.theta);
  return out;
}

double log_q(const VariationalParams& lambda, const Woodbury& wb, const VectorXd& theta,
             VectorXd* grad) {
  const VectorXd z = theta - lambda.mu();
  const VectorXd sz = wb.apply_inverse(z);
  if (grad) *grad = -sz;
  return -0.5 * static_cast<double>(lambda.p()) * kLog2Pi - 0.5 * wb.log_det() - 0.5 * z.dot(sz);
}

double log_q(const VariationalParams& lambda, const VectorXd& theta, VectorXd* grad) {
  const Woodbury wb(lambda.B(), lambda.d());
  return log_q(lambda, wb, theta, grad);
}

namespace {

// Accumulates one sample's contribution g (= d/dtheta of the integrand) into
// the flat gradient: mu += g, B += g eps1^T, d += g .* eps2.
void accumulate(const VariationalParams& lambda, const VectorXd& g, const VectorXd& eps1,
                const VectorXd& eps2, VectorXd& grad) {
  const auto p = static_cast<Eigen::Index>(lambda.p());
  const auto r = static_cast<Eigen::Index>(lambda.r());
  grad.head(p) += g;
  Eigen::Map<MatrixXd> gB(grad.data() + p, p, r);
  gB.noalias() += g * eps1.transpose();
  grad.segment(p * (1 + r), p) += g.cwiseProduct(eps2);
}

void finish(const VariationalParams& lambda, int N, LbGradEstimate& est) {
  est.lb /= N;
  est.grad /= N;
  est.grad.array() *= lambda.free_mask().array();
  est.finite = est.finite && std::isfinite(est.lb) && est.grad.allFinite();
}

}  // namespace

LbGradEstimate estimate_lb_and_grad_gvb(const GvbTarget& target, const VariationalParams& lambda,
                                        int N, Rng& rng) {
  if (N < 1) throw std::invalid_argument("estimate_lb_and_grad_gvb: N must be >= 1");
  if (target.dim() != lambda.p()) throw std::invalid_argument("target and lambda disagree on p");
  const Woodbury wb(lambda.B(), lambda.d());
  LbGradEstimate est;
  est.grad = VectorXd::Zero(static_cast<Eigen::Index>(lambda.size()));
  VectorXd gh(static_cast<Eigen::Index>(lambda.p())), gq;
  for (int s = 0; s < N; ++s) {
    const ReparamDraw dr = draw_reparam(lambda, rng);
    std::size_t floored = 0;
    const double lh = target.log_joint(dr.theta, gh, floored);
    est.floored += floored;
    const double lq = log_q(lambda, wb, dr.theta, &gq);
    if (!std::isfinite(lh)) est.finite = false;
    est.lb += lh - lq;
    accumulate(lambda, gh - gq, dr.eps1, dr.eps2, est.grad);
  }
  finish(lambda, N, est);
  return est;
}

LbGradEstimate estimate_lb_and_grad_hybrid(const HybridTarget& target,
                                           const VariationalParams& lambda, int N, Rng& rng,
                                           bool control_variate) {
  if (N < 1) throw std::invalid_argument("estimate_lb_and_grad_hybrid: N must be >= 1");
  if (target.dim() != lambda.p()) throw std::invalid_argument("target and lambda disagree on p");
  const Woodbury wb(lambda.B(), lambda.d());
  LbGradEstimate est;
  est.grad = VectorXd::Zero(static_cast<Eigen::Index>(lambda.size()));
  VectorXd gq;
  HybridTarget::Terms t;
  for (int s = 0; s < N; ++s) {
    const ReparamDraw dr = draw_reparam(lambda, rng);
    const IwParams iw = target.conditional(dr.theta);
    const MatrixXd Sigma = sample_iw(iw, rng);
    target.terms(dr.theta, Sigma, iw, t);
    est.floored += t.floored;
    const double lq = log_q(lambda, wb, dr.theta, &gq);
    if (!std::isfinite(t.log_joint) || !std::isfinite(t.log_conditional)) est.finite = false;
    est.lb += t.log_joint - lq - t.log_conditional;
    VectorXd g = t.grad_joint - gq;
    if (control_variate) g -= t.grad_conditional;
    accumulate(lambda, g, dr.eps1, dr.eps2, est.grad);
  }
  finish(lambda, N, est);
  return est;
}

AdadeltaState::AdadeltaState(std::size_t n, double xi_, double decay_)
    : e_delta2(VectorXd::Zero(static_cast<Eigen::Index>(n))),
      e_g2(VectorXd::Zero(static_cast<Eigen::Index>(n))),
      xi(xi_),
      decay(decay_) {}

VectorXd adadelta_update(AdadeltaState& st, VectorXd& lambda, const VectorXd& grad) {
  if (grad.size() != lambda.size() || st.e_g2.size() != lambda.size())
    throw std::invalid_argument("adadelta_update: dimension mismatch");
  st.e_g2 = st.decay * st.e_g2.array() + (1.0 - st.decay) * grad.array().square();
  const VectorXd rho = ((st.e_delta2.array() + st.xi) / (st.e_g2.array() + st.xi)).sqrt();
  const VectorXd delta = rho.cwiseProduct(grad);
  st.e_delta2 = st.decay * st.e_delta2.array() + (1.0 - st.decay) * delta.array().square();
  lambda += delta;
  return delta;
}

StoppingRule::StoppingRule(int window, int patience) : m_(window), k_(patience) {
  if (window < 1 || patience < 1) throw std::invalid_argument("StoppingRule: m and k must be >= 1");
}

bool StoppingRule::push(double lb) {
  trace_.push_back(lb);
  window_sum_ += lb;
  const auto t = trace_.size();
  if (t > static_cast<std::size_t>(m_)) window_sum_ -= trace_[t - 1 - m_];
  improved_last_ = false;
  if (t < static_cast<std::size_t>(m_)) return false;
  // Recompute exactly every window to keep the running sum from drifting.
  if (t % static_cast<std::size_t>(m_) == 0) {
    window_sum_ = 0.0;
    for (std::size_t i = t - m_; i < t; ++i) window_sum_ += trace_[i];
  }
  const double ma = window_sum_ / m_;
  ma_.push_back(ma);
  if (ma_.size() == 1 || ma > best_) {
    best_ = ma;
    best_iter_ = static_cast<int>(t);
    stall_ = 0;
    improved_last_ = true;
    return false;
  }
  return ++stall_ >= k_;
}

std::vector<double> StoppingRule::moving_average_trace() const {
  std::vector<double> out(trace_.size(), std::numeric_limits<double>::quiet_NaN());
  for (std::size_t i = 0; i < ma_.size(); ++i) out[i + m_ - 1] = ma_[i];
  return out;
}

int stopping_check(const std::vector<double>& lbs, int window, int patience) {
  StoppingRule rule(window, patience);
  for (double x : lbs) {
    if (rule.push(x)) return rule.iterations();
  }
  return 0;
}

VbResult run_vb(const LbGradFn& estimator, VariationalParams init, const VbConfig& cfg) {
  const auto t0 = std::chrono::steady_clock::now();
  VbResult res;
  res.lambda = init;
  res.last = init;
  if (cfg.max_iters <= 0) return res;
  VariationalParams lambda = std::move(init);
  lambda.apply_mask();
  AdadeltaState st(lambda.size(), cfg.xi, cfg.decay);
  StoppingRule rule(cfg.window, cfg.patience);
  Rng rng(cfg.seed);
  int bad_streak = 0;
  res.lambda = lambda;
  for (int it = 1; it <= cfg.max_iters; ++it) {
    const LbGradEstimate est = estimator(lambda, rng);
    res.floored_trials += est.floored;
    if (!est.finite) {
      res.lb_trace.push_back(std::numeric_limits<double>::quiet_NaN());
      if (++bad_streak >= cfg.divergence_patience)
        throw VbDivergence("lower bound non-finite for " + std::to_string(bad_streak) +
                               " consecutive iterations",
                           res.lb_trace);
      continue;
    }
    bad_streak = 0;
    res.lb_trace.push_back(est.lb);
    const bool stop = rule.push(est.lb);
    if (rule.improved_last()) res.lambda = lambda;
    adadelta_update(st, lambda.flat(), est.grad);
    if (!lambda.flat().allFinite())
      throw VbDivergence("variational parameters became non-finite", res.lb_trace);
    if (stop) {
      res.converged = true;
      break;
    }
  }
  if (!rule.has_average()) res.lambda = lambda;
  res.last = lambda;
  res.iterations = static_cast<int>(res.lb_trace.size());
  res.best_ma = rule.has_average() ? rule.best_average() : std::numeric_limits<double>::quiet_NaN();
  res.best_iteration = rule.best_iteration();
  // Moving average aligned with lb_trace (NaN where undefined or skipped).
  const auto ma = rule.moving_average_trace();
  res.ma_trace.assign(res.lb_trace.size(), std::numeric_limits<double>::quiet_NaN());
  std::size_t k = 0;
  for (std::size_t i = 0; i < res.lb_trace.size(); ++i) {
    if (std::isfinite(res.lb_trace[i])) res.ma_trace[i] = ma[k++];
  }
  res.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return res;
}

VbResult run_vb(const GvbTarget& target, VariationalParams init, const VbConfig& cfg) {
  return run_vb(
      [&](const VariationalParams& l, Rng& rng) { return estimate_lb_and_grad_gvb(target, l, cfg.N, rng); },
      std::move(init), cfg);
}

VbResult run_vb(const HybridTarget& target, VariationalParams init, const VbConfig& cfg) {
  return run_vb(
      [&](const VariationalParams& l, Rng& rng) {
        return estimate_lb_and_grad_hybrid(target, l, cfg.N, rng, cfg.control_variate);
      },
      std::move(init), cfg);
}

void write_trace_csv(const std::string& path, const VbResult& result) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path);
  out << "iteration,lb_estimate,moving_average\n" << std::setprecision(12);
  for (std::size_t i = 0; i < result.lb_trace.size(); ++i) {
    out << i + 1 << "," << result.lb_trace[i] << ",";
    if (std::isfinite(result.ma_trace[i])) out << result.ma_trace[i];
    out << "\n";
  }
}

}  // namespace lbavb
