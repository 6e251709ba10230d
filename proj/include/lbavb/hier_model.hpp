#pragma once

#include <cstddef>
#include <memory>
#include <vector>

#include <Eigen/Dense>

#include "lbavb/dataset.hpp"
#include "lbavb/model_spec.hpp"
#include "lbavb/random.hpp"

namespace lbavb {

using Eigen::MatrixXd;
using Eigen::VectorXd;

// Throws std::domain_error when the matrix is not PD after one 1e-10*I jitter.
// Pivots (squared diagonal of L) must exceed 1e-12.
Eigen::LLT<MatrixXd> robust_llt(const MatrixXd& m);

// Prior: alpha_j ~ N(mu, Sigma), mu ~ N(0, I),
// Sigma ~ IW(D + 1, iw_scale * diag(1/a)), a_d ~ IG(shape ig_shape, scale ig_scale).
struct PriorConstants {
  double iw_scale = 4.0;
  double ig_shape = 1.0;
  double ig_scale = 0.5;
};

struct GroupLevel {
  VectorXd mu;
  MatrixXd Sigma;
  VectorXd a;
};

struct NaturalState {
  MatrixXd alpha;  // D x J, column j = alpha_j
  GroupLevel group;
};

enum class Variant { gvb, hybrid };

// GVB:    [alpha_1 .. alpha_J, mu, vech(C*), log a]
// hybrid: [alpha_1 .. alpha_J, mu, log a], Sigma carried separately.
// vech(C*) is the column-major lower triangle of chol(Sigma), diagonal logged.
class ThetaLayout {
 public:
  ThetaLayout(std::size_t D, std::size_t J, Variant variant);

  std::size_t D() const { return D_; }
  std::size_t J() const { return J_; }
  Variant variant() const { return variant_; }
  std::size_t alpha(std::size_t j) const { return j * D_; }
  std::size_t mu() const { return J_ * D_; }
  std::size_t vech() const { return mu() + D_; }
  std::size_t vech_size() const { return D_ * (D_ + 1) / 2; }
  std::size_t log_a() const { return variant_ == Variant::gvb ? vech() + vech_size() : mu() + D_; }
  std::size_t size() const { return log_a() + D_; }

 private:
  std::size_t D_, J_;
  Variant variant_;
};

VectorXd vech_from_sigma(const MatrixXd& Sigma);
// Lower-triangular C with C C^T = Sigma.
MatrixXd chol_from_vech(std::size_t D, const double* vech);

VectorXd transform_to_tilde(const NaturalState& state);
NaturalState untransform(const ThetaLayout& layout, const VectorXd& theta);

// log p(theta~) including |d Sigma / d vech(C*)| and |d a / d log a|.
// grad may be null; otherwise it must have layout.size() entries.
double log_prior_tilde(const ThetaLayout& layout, const VectorXd& theta, VectorXd* grad = nullptr,
                       const PriorConstants& pc = {});

// log p(theta1, Sigma) with |d a / d log a|; gradient w.r.t. theta1 only.
double log_prior_hybrid(const ThetaLayout& layout, const VectorXd& theta1, const MatrixXd& Sigma,
                        VectorXd* grad = nullptr, const PriorConstants& pc = {});

struct IwParams {
  double nu = 0.0;
  MatrixXd Psi;
};

// Full conditional of Sigma given alpha (D x J), mu, a.
IwParams conditional_iw_params(const MatrixXd& alpha, const VectorXd& mu, const VectorXd& a,
                               const PriorConstants& pc = {});
IwParams conditional_iw_params(const ThetaLayout& layout, const VectorXd& theta1,
                               const PriorConstants& pc = {});

double log_iw_density(const MatrixXd& Sigma, const IwParams& iw);
double log_multigamma(double x, std::size_t D);

// log IW(Sigma | conditional(theta1)) and its gradient w.r.t. theta1.
double log_conditional_hybrid(const ThetaLayout& layout, const VectorXd& theta1,
                              const MatrixXd& Sigma, VectorXd* grad = nullptr,
                              const PriorConstants& pc = {});

// Bartlett draw of W ~ Wishart(nu, Psi^-1), returned as W^-1.
MatrixXd sample_iw(const IwParams& iw, Rng& rng);

// Per-subject log-likelihood of random effects.
class SubjectLikelihood {
 public:
  virtual ~SubjectLikelihood() = default;
  virtual std::size_t n_subjects() const = 0;
  virtual std::size_t dim() const = 0;
  // grad (length dim) is overwritten when non-null; floored counts floored trials.
  virtual double log_lik(std::size_t j, const double* alpha_j, double* grad,
                         std::size_t& floored) const = 0;
};

struct LikelihoodEval {
  double value = 0.0;
  std::size_t floored = 0;
};

// alpha is the stacked [alpha_1 .. alpha_J]; grad (same length) may be null.
LikelihoodEval log_likelihood_and_grad(const SubjectLikelihood& lik, const double* alpha,
                                       double* grad);

class LbaLikelihood : public SubjectLikelihood {
 public:
  LbaLikelihood(Dataset data, ModelSpec spec);

  std::size_t n_subjects() const override { return data_.subjects.size(); }
  std::size_t dim() const override { return spec_.dim(); }
  double log_lik(std::size_t j, const double* alpha_j, double* grad,
                 std::size_t& floored) const override;

  const Dataset& data() const { return data_; }
  const ModelSpec& spec() const { return spec_; }

 private:
  struct CellBlock {
    std::uint32_t cell;
    std::vector<std::uint32_t> choice;
    std::vector<double> rt;
  };
  Dataset data_;
  ModelSpec spec_;
  std::vector<std::vector<CellBlock>> blocks_;
};

}  // namespace lbavb
