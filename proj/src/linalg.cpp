#include <cmath>
#include <stdexcept>

#include "lbavb/vb.hpp"

namespace lbavb {

Woodbury::Woodbury(const MatrixXd& B, const VectorXd& d) : B_(B) {
  if (B.rows() != d.size()) throw std::invalid_argument("Woodbury: B and d disagree on p");
  for (Eigen::Index i = 0; i < d.size(); ++i) {
    if (!(d[i] != 0.0) || !std::isfinite(d[i]))
      throw std::domain_error("Woodbury: every d_i must be finite and nonzero");
  }
  dinv2_ = d.array().square().inverse();
  DB_ = dinv2_.asDiagonal() * B;
  const auto r = B.cols();
  MatrixXd K = MatrixXd::Identity(r, r);
  K.noalias() += B.transpose() * DB_;
  K_.compute(K);
  if (K_.info() != Eigen::Success) throw std::domain_error("Woodbury: capacitance not PD");
  log_det_ = 2.0 * d.array().abs().log().sum();
  for (Eigen::Index i = 0; i < r; ++i) log_det_ += 2.0 * std::log(K_.matrixLLT()(i, i));
}

VectorXd Woodbury::apply_inverse(const VectorXd& x) const {
  VectorXd out = dinv2_.cwiseProduct(x);
  if (B_.cols() > 0) out.noalias() -= DB_ * K_.solve(DB_.transpose() * x);
  return out;
}

MatrixXd Woodbury::dense_inverse() const {
  MatrixXd out = dinv2_.asDiagonal();
  if (B_.cols() > 0) out.noalias() -= DB_ * K_.solve(DB_.transpose());
  return out;
}

}  // namespace lbavb
