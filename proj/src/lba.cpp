#include "lbavb/lba.hpp"

#include <cmath>
#include <limits>
#include <stdexcept>
#include <string>

#include "lbavb/normal.hpp"

namespace lbavb {

namespace {

// Phi(hi) - Phi(lo) for hi >= lo, taking the upper tail when both are large.
inline double phi_diff(double hi, double lo) {
  if (lo > 0.0) return norm_cdf(-lo) - norm_cdf(-hi);
  return norm_cdf(hi) - norm_cdf(lo);
}

// t = rt - tau. Fills F, S, f and their partials; zero mass when t <= 0.
inline void finishing(const AccumulatorParams& p, double t, FinishingDerivs& out) {
  out = FinishingDerivs{};
  if (!(t > 0.0)) return;
  const double b = p.b, A = p.A, v = p.v, s = p.s;
  const double sig = t * s;
  if (A < kDegenerateA) {
    const double w = (b - t * v) / sig;
    const double Pw = norm_cdf(w);
    const double dw = norm_pdf(w);
    const double f = b * dw / (t * sig);
    out.S = Pw;
    out.F = norm_cdf(-w);
    out.f = f;
    out.dF = {-dw / sig, dw / (2.0 * sig), dw / s, dw * w / s, -f};
    const double dfdt = f * (w * b / (t * sig) - 2.0 / t);
    out.df = {dw / (t * sig) * (1.0 - w * b / sig),
              dw * (w * (v + s * w) - s) / (2.0 * sig * sig),
              b * w * dw / (t * sig * s),
              b * dw * (w * w - 1.0) / (t * sig * s),
              -dfdt};
    return;
  }
  const double x2 = b - t * v;
  const double z = (x2 - A) / sig;
  const double w = x2 / sig;
  const double Pz = norm_cdf(z);
  const double dz = norm_pdf(z);
  const double dw = norm_pdf(w);
  const double dP = phi_diff(w, z);
  const double tail = (x2 * dP + sig * (dw - dz)) / A;
  const double S = Pz + tail;
  const double f = (v * dP + s * (dz - dw)) / A;
  out.S = S;
  out.F = norm_cdf(-z) - tail;
  out.f = f;
  out.dF = {-dP / A, (S - Pz) / A, t * dP / A, t * (dz - dw) / A, -f};
  const double Kz = -dz * (v + s * z);
  const double Kw = -dw * (v + s * w);
  const double dfdt = (Kw * b - Kz * (b - A)) / (A * t * sig);
  out.df = {(Kz - Kw) / (A * sig),
            -f / A - Kz / (A * sig),
            dP / A + (Kw - Kz) / (A * s),
            (dz - dw) / A + (Kw * w - Kz * z) / (A * s),
            -dfdt};
}

inline bool valid(const AccumulatorParams& p) {
  return std::isfinite(p.b) && std::isfinite(p.A) && std::isfinite(p.v) &&
         std::isfinite(p.s) && std::isfinite(p.tau) && p.A >= 0.0 && p.b >= p.A &&
         p.b > 0.0 && p.s > 0.0 && p.tau >= 0.0;
}

}  // namespace

void validate(const AccumulatorParams& p) {
  if (!valid(p)) {
    throw std::domain_error("invalid LBA parameters: b=" + std::to_string(p.b) +
                            " A=" + std::to_string(p.A) + " v=" + std::to_string(p.v) +
                            " s=" + std::to_string(p.s) + " tau=" + std::to_string(p.tau));
  }
}

double lba_cdf(const AccumulatorParams& p, double t) {
  validate(p);
  if (!std::isfinite(t)) throw std::domain_error("non-finite decision time");
  FinishingDerivs k;
  finishing(p, t, k);
  return k.F;
}

double lba_pdf(const AccumulatorParams& p, double t) {
  validate(p);
  if (!std::isfinite(t)) throw std::domain_error("non-finite decision time");
  FinishingDerivs k;
  finishing(p, t, k);
  return k.f;
}

double lba_survival(const AccumulatorParams& p, double t) {
  validate(p);
  if (!std::isfinite(t)) throw std::domain_error("non-finite decision time");
  FinishingDerivs k;
  finishing(p, t, k);
  return k.S;
}

FinishingDerivs lba_finishing_derivs(const AccumulatorParams& p, double rt) {
  validate(p);
  FinishingDerivs k;
  finishing(p, rt - p.tau, k);
  return k;
}

namespace detail {

double joint_logdensity(const AccumulatorParams* params, std::size_t n, std::size_t choice,
                        double rt, bool& floored) noexcept {
  FinishingDerivs k;
  double logd = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    finishing(params[i], rt - params[i].tau, k);
    const double m = (i == choice) ? k.f : k.S;
    if (!(m > 0.0) || !std::isfinite(m)) {
      floored = true;
      return kLogDensityFloor;
    }
    logd += std::log(m);
  }
  if (!(logd >= kLogDensityFloor)) {
    floored = true;
    return kLogDensityFloor;
  }
  floored = false;
  return logd;
}

double joint_logdensity_grad(const AccumulatorParams* params, std::size_t n, std::size_t choice,
                             double rt, LbaGradient* grads, bool& floored) noexcept {
  FinishingDerivs k;
  double logd = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    finishing(params[i], rt - params[i].tau, k);
    LbaGradient& g = grads[i];
    if (i == choice) {
      if (!(k.f > 0.0) || !std::isfinite(k.f)) {
        logd = -std::numeric_limits<double>::infinity();
        break;
      }
      logd += std::log(k.f);
      const double inv = 1.0 / k.f;
      g = {k.df.d_b * inv, k.df.d_A * inv, k.df.d_v * inv, k.df.d_s * inv, k.df.d_tau * inv};
    } else {
      if (!(k.S > 0.0) || !std::isfinite(k.S)) {
        logd = -std::numeric_limits<double>::infinity();
        break;
      }
      logd += std::log(k.S);
      const double inv = -1.0 / k.S;
      g = {k.dF.d_b * inv, k.dF.d_A * inv, k.dF.d_v * inv, k.dF.d_s * inv, k.dF.d_tau * inv};
    }
  }
  if (!(logd >= kLogDensityFloor)) {
    for (std::size_t i = 0; i < n; ++i) grads[i] = LbaGradient{};
    floored = true;
    return kLogDensityFloor;
  }
  floored = false;
  return logd;
}

}  // namespace detail

namespace {
void check_joint_inputs(std::span<const AccumulatorParams> params, const TrialOutcome& o) {
  if (params.empty()) throw std::domain_error("empty accumulator list");
  if (o.choice >= params.size()) throw std::domain_error("choice out of range");
  if (!std::isfinite(o.rt)) throw std::domain_error("non-finite response time");
  for (const auto& p : params) validate(p);
}
}  // namespace

JointLogDensity lba_joint_logdensity(std::span<const AccumulatorParams> params,
                                     const TrialOutcome& outcome) {
  check_joint_inputs(params, outcome);
  JointLogDensity r;
  r.value = detail::joint_logdensity(params.data(), params.size(), outcome.choice, outcome.rt,
                                     r.floored);
  return r;
}

JointLogDensity lba_param_grads(std::span<const AccumulatorParams> params,
                                const TrialOutcome& outcome, std::vector<LbaGradient>& grads) {
  check_joint_inputs(params, outcome);
  grads.assign(params.size(), LbaGradient{});
  JointLogDensity r;
  r.value = detail::joint_logdensity_grad(params.data(), params.size(), outcome.choice,
                                          outcome.rt, grads.data(), r.floored);
  return r;
}

TrialOutcome simulate_trial(std::span<const AccumulatorParams> params, Rng& rng) {
  if (params.empty()) throw std::domain_error("empty accumulator list");
  for (const auto& p : params) validate(p);
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  std::normal_distribution<double> norm(0.0, 1.0);
  for (long attempt = 0; attempt < kMaxSimulationAttempts; ++attempt) {
    TrialOutcome best{0, std::numeric_limits<double>::infinity()};
    for (std::size_t i = 0; i < params.size(); ++i) {
      const auto& p = params[i];
      const double start = p.A * unif(rng);
      const double drift = p.v + p.s * norm(rng);
      if (drift <= 0.0) continue;
      const double rt = (p.b - start) / drift + p.tau;
      if (rt < best.rt) best = {i, rt};
    }
    if (std::isfinite(best.rt)) return best;
  }
  throw std::runtime_error("LBA simulation: no positive drift within the rejection cap");
}

}  // namespace lbavb
