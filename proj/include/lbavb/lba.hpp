#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "lbavb/random.hpp"

namespace lbavb {

struct AccumulatorParams {
  double b = 1.0;
  double A = 0.5;
  double v = 1.0;
  double s = 1.0;
  double tau = 0.0;
};

struct TrialOutcome {
  std::size_t choice = 0;
  double rt = 0.0;
};

struct LbaGradient {
  double d_b = 0.0;
  double d_A = 0.0;
  double d_v = 0.0;
  double d_s = 0.0;
  double d_tau = 0.0;
};

// Log-density returned for trials with rt <= tau or an underflowing density.
inline constexpr double kLogDensityFloor = -700.0;

// Below this A the start-point distribution is treated as a point mass at 0.
inline constexpr double kDegenerateA = 1e-10;

// Throws std::domain_error unless b >= A >= 0, s > 0, tau >= 0, all finite.
void validate(const AccumulatorParams& p);

// t is decision time (rt - tau). Defective: F(inf) = Phi(v/s).
double lba_cdf(const AccumulatorParams& p, double t);
double lba_pdf(const AccumulatorParams& p, double t);
// 1 - F evaluated without cancellation.
double lba_survival(const AccumulatorParams& p, double t);

// Partials of F and f w.r.t. (b, A, v, s, tau) at raw time rt (t = rt - tau).
struct FinishingDerivs {
  double F = 0.0, f = 0.0, S = 1.0;
  LbaGradient dF, df;
};
FinishingDerivs lba_finishing_derivs(const AccumulatorParams& p, double rt);

struct JointLogDensity {
  double value = kLogDensityFloor;
  bool floored = true;
};

// log f_c(rt - tau_c) + sum_{k != c} log S_k(rt - tau_k).
JointLogDensity lba_joint_logdensity(std::span<const AccumulatorParams> params,
                                     const TrialOutcome& outcome);

// Same value plus gradient per accumulator; grads is resized to params.size()
// and zeroed when the density is floored.
JointLogDensity lba_param_grads(std::span<const AccumulatorParams> params,
                                const TrialOutcome& outcome,
                                std::vector<LbaGradient>& grads);

namespace detail {
// Unchecked kernels for the likelihood hot loop; params must be valid.
double joint_logdensity(const AccumulatorParams* params, std::size_t n,
                        std::size_t choice, double rt, bool& floored) noexcept;
double joint_logdensity_grad(const AccumulatorParams* params, std::size_t n,
                             std::size_t choice, double rt, LbaGradient* grads,
                             bool& floored) noexcept;
}  // namespace detail

inline constexpr long kMaxSimulationAttempts = 1000000;

TrialOutcome simulate_trial(std::span<const AccumulatorParams> params, Rng& rng);

}  // namespace lbavb
