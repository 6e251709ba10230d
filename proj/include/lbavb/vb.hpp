#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "lbavb/hier_model.hpp"
#include "lbavb/random.hpp"

namespace lbavb {

// q = N(mu, B B^T + D^2), stored flat as [mu, vec(B) column-major, d].
class VariationalParams {
 public:
  VariationalParams() = default;
  VariationalParams(std::size_t p, std::size_t r);

  std::size_t p() const { return p_; }
  std::size_t r() const { return r_; }
  std::size_t size() const { return static_cast<std::size_t>(flat_.size()); }

  Eigen::Map<VectorXd> mu() { return {flat_.data(), ip()}; }
  Eigen::Map<const VectorXd> mu() const { return {flat_.data(), ip()}; }
  Eigen::Map<MatrixXd> B() { return {flat_.data() + ip(), ip(), ir()}; }
  Eigen::Map<const MatrixXd> B() const { return {flat_.data() + ip(), ip(), ir()}; }
  Eigen::Map<VectorXd> d() { return {flat_.data() + ip() * (1 + ir()), ip()}; }
  Eigen::Map<const VectorXd> d() const { return {flat_.data() + ip() * (1 + ir()), ip()}; }

  VectorXd& flat() { return flat_; }
  const VectorXd& flat() const { return flat_; }

  // 1 for free coordinates, 0 for the fixed upper triangle of B's leading r x r block.
  VectorXd free_mask() const;
  // Zeroes the fixed part of B.
  void apply_mask();

  MatrixXd covariance() const;
  VectorXd marginal_sd() const;

 private:
  Eigen::Index ip() const { return static_cast<Eigen::Index>(p_); }
  Eigen::Index ir() const { return static_cast<Eigen::Index>(r_); }
  std::size_t p_ = 0, r_ = 0;
  VectorXd flat_;
};

// (B B^T + D^2)^-1 applied in O(p r + r^3) with log-det via the determinant lemma.
class Woodbury {
 public:
  Woodbury(const MatrixXd& B, const VectorXd& d);

  VectorXd apply_inverse(const VectorXd& x) const;
  MatrixXd dense_inverse() const;
  double log_det() const { return log_det_; }

 private:
  VectorXd dinv2_;
  MatrixXd B_;
  MatrixXd DB_;  // D^-2 B
  Eigen::LLT<MatrixXd> K_;  // I + B^T D^-2 B
  double log_det_ = 0.0;
};

struct ReparamDraw {
  VectorXd theta;
  VectorXd eps1;  // r
  VectorXd eps2;  // p
};

ReparamDraw draw_reparam(const VariationalParams& lambda, Rng& rng);
void reparam(const VariationalParams& lambda, const VectorXd& eps1, const VectorXd& eps2,
             VectorXd& theta);

// log q(theta); grad (may be null) receives d log q / d theta.
double log_q(const VariationalParams& lambda, const Woodbury& wb, const VectorXd& theta,
             VectorXd* grad = nullptr);
double log_q(const VariationalParams& lambda, const VectorXd& theta, VectorXd* grad = nullptr);

// Target of plain Gaussian VB: h(theta) = p(y, theta).
class GvbTarget {
 public:
  virtual ~GvbTarget() = default;
  virtual std::size_t dim() const = 0;
  // Returns log h(theta) and writes its gradient; floored counts floored trials.
  virtual double log_joint(const VectorXd& theta, VectorXd& grad, std::size_t& floored) const = 0;
};

// Target of hybrid VB: theta1 Gaussian, Sigma drawn from its exact conditional.
class HybridTarget {
 public:
  virtual ~HybridTarget() = default;
  virtual std::size_t dim() const = 0;
  virtual IwParams conditional(const VectorXd& theta1) const = 0;

  struct Terms {
    double log_joint = 0.0;        // log p(y, theta1, Sigma)
    double log_conditional = 0.0;  // log p(Sigma | theta1, y)
    VectorXd grad_joint;           // d log p(y, theta1, Sigma) / d theta1
    VectorXd grad_conditional;     // d log p(Sigma | theta1, y) / d theta1
    std::size_t floored = 0;
  };
  virtual void terms(const VectorXd& theta1, const MatrixXd& Sigma, const IwParams& iw,
                     Terms& out) const = 0;
};

struct LbGradEstimate {
  double lb = 0.0;
  VectorXd grad;  // flat layout of VariationalParams, masked
  std::size_t floored = 0;
  bool finite = true;
};

LbGradEstimate estimate_lb_and_grad_gvb(const GvbTarget& target, const VariationalParams& lambda,
                                        int N, Rng& rng);
// control_variate = false drops d log p(Sigma | theta1, y) / d theta1 from the gradient.
LbGradEstimate estimate_lb_and_grad_hybrid(const HybridTarget& target,
                                           const VariationalParams& lambda, int N, Rng& rng,
                                           bool control_variate = true);

struct AdadeltaState {
  VectorXd e_delta2;
  VectorXd e_g2;
  double xi = 1e-7;
  double decay = 0.95;

  explicit AdadeltaState(std::size_t n = 0, double xi = 1e-7, double decay = 0.95);
};

// Ascent step lambda += rho * g; returns the step.
VectorXd adadelta_update(AdadeltaState& state, VectorXd& lambda, const VectorXd& grad);

// Tracks the m-window moving average of the lower bound and stops once its
// running maximum has not strictly improved for k consecutive iterations.
class StoppingRule {
 public:
  explicit StoppingRule(int window = 200, int patience = 200);

  // Feeds the next lower-bound estimate; returns true when the run should stop.
  bool push(double lb);
  int iterations() const { return static_cast<int>(trace_.size()); }
  bool has_average() const { return !ma_.empty(); }
  double last_average() const { return ma_.back(); }
  double best_average() const { return best_; }
  // 1-based iteration where the best moving average was attained (0 if none).
  int best_iteration() const { return best_iter_; }
  bool improved_last() const { return improved_last_; }
  const std::vector<double>& trace() const { return trace_; }
  // Moving average per iteration; NaN before the first full window.
  std::vector<double> moving_average_trace() const;

 private:
  int m_, k_;
  std::vector<double> trace_;
  std::vector<double> ma_;
  double window_sum_ = 0.0;
  double best_ = 0.0;
  int best_iter_ = 0;
  int stall_ = 0;
  bool improved_last_ = false;
};

// Stop index of a rule fed a sequence; 0 if it never stops.
int stopping_check(const std::vector<double>& lbs, int window, int patience);

struct VbConfig {
  int N = 10;
  int max_iters = 5000;
  int window = 200;
  int patience = 200;
  double xi = 1e-7;
  double decay = 0.95;
  int divergence_patience = 50;
  bool control_variate = true;
  std::uint64_t seed = 1;
};

struct VbResult {
  VariationalParams lambda;  // at the best moving average
  VariationalParams last;
  std::vector<double> lb_trace;
  std::vector<double> ma_trace;
  int iterations = 0;
  bool converged = false;  // stopped by the rule rather than max_iters
  double best_ma = 0.0;
  int best_iteration = 0;
  std::size_t floored_trials = 0;  // summed over all samples
  double seconds = 0.0;
};

class VbDivergence : public std::runtime_error {
 public:
  VbDivergence(const std::string& what, std::vector<double> trace)
      : std::runtime_error(what), trace_(std::move(trace)) {}
  const std::vector<double>& trace() const { return trace_; }

 private:
  std::vector<double> trace_;
};

using LbGradFn = std::function<LbGradEstimate(const VariationalParams&, Rng&)>;

VbResult run_vb(const LbGradFn& estimator, VariationalParams init, const VbConfig& cfg);
VbResult run_vb(const GvbTarget& target, VariationalParams init, const VbConfig& cfg);
VbResult run_vb(const HybridTarget& target, VariationalParams init, const VbConfig& cfg);

// iteration,lb_estimate,moving_average
void write_trace_csv(const std::string& path, const VbResult& result);

}  // namespace lbavb
