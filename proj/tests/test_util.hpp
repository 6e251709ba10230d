#pragma once

#include <algorithm>
#include <cmath>
#include <functional>

#include <Eigen/Dense>

namespace lbavb::testing {

// |a - b| relative to max(|a|, |b|, 1); FD tolerances are stated in this measure.
inline double rel_err(double a, double b) {
  return std::abs(a - b) / std::max({1.0, std::abs(a), std::abs(b)});
}

inline double max_rel_err(const Eigen::VectorXd& a, const Eigen::VectorXd& b) {
  double m = 0.0;
  for (Eigen::Index i = 0; i < a.size(); ++i) m = std::max(m, rel_err(a[i], b[i]));
  return m;
}

inline Eigen::VectorXd fd_grad(const std::function<double(const Eigen::VectorXd&)>& f,
                               const Eigen::VectorXd& x, double h) {
  Eigen::VectorXd g(x.size());
  Eigen::VectorXd y = x;
  for (Eigen::Index i = 0; i < x.size(); ++i) {
    y[i] = x[i] + h;
    const double up = f(y);
    y[i] = x[i] - h;
    const double dn = f(y);
    y[i] = x[i];
    g[i] = (up - dn) / (2.0 * h);
  }
  return g;
}

}  // namespace lbavb::testing
