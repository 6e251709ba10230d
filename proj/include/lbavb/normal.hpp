#pragma once

#include <cmath>

namespace lbavb {

inline constexpr double kInvSqrt2Pi = 0.3989422804014326779399461;
inline constexpr double kLogSqrt2Pi = 0.9189385332046727417803297;

inline double norm_pdf(double x) { return kInvSqrt2Pi * std::exp(-0.5 * x * x); }

// erfc keeps full relative precision in both tails, so 1 - norm_cdf(x)
// is never formed by subtraction anywhere in the library.
inline double norm_cdf(double x) { return 0.5 * std::erfc(-x * 0.70710678118654752440); }

}  // namespace lbavb
