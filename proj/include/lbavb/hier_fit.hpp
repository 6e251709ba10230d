#pragma once

#include <cstdint>
#include <string>
#include <string_view>

#include "lbavb/hier_model.hpp"
#include "lbavb/vb.hpp"

namespace lbavb {

enum class Method { gvb, hybrid };
Method parse_method(std::string_view s);
std::string_view method_name(Method m);

class HierGvbTarget : public GvbTarget {
 public:
  HierGvbTarget(const SubjectLikelihood& lik, PriorConstants pc = {});
  std::size_t dim() const override { return layout_.size(); }
  double log_joint(const VectorXd& theta, VectorXd& grad, std::size_t& floored) const override;
  const ThetaLayout& layout() const { return layout_; }

 private:
  const SubjectLikelihood& lik_;
  PriorConstants pc_;
  ThetaLayout layout_;
};

class HierHybridTarget : public HybridTarget {
 public:
  HierHybridTarget(const SubjectLikelihood& lik, PriorConstants pc = {});
  std::size_t dim() const override { return layout_.size(); }
  IwParams conditional(const VectorXd& theta1) const override;
  void terms(const VectorXd& theta1, const MatrixXd& Sigma, const IwParams& iw,
             Terms& out) const override;
  const ThetaLayout& layout() const { return layout_; }

 private:
  const SubjectLikelihood& lik_;
  PriorConstants pc_;
  ThetaLayout layout_;
};

// Per-subject starting values: c = A = log 1, v = log 2 (correct) / log 1
// (error) / log 1.5 (no match factor in v), free s = log 1, tau = log(0.9 min rt).
VectorXd initial_alpha(const Dataset& data, const ModelSpec& spec, std::size_t subject);

// mu = starting theta (group mean = average subject block, Sigma = I, log a = 0),
// B ~ N(0, 0.01^2) with fixed upper triangle, d = 0.01.
VariationalParams initial_lambda(const Dataset& data, const ModelSpec& spec, Variant variant,
                                 std::size_t r, std::uint64_t seed);

struct FitConfig {
  Method method = Method::gvb;
  std::size_t r = 20;
  VbConfig vb;
  PriorConstants prior;
};

struct FitResult {
  Method method = Method::gvb;
  ThetaLayout layout{1, 0, Variant::gvb};
  VbResult vb;
};

// Cold start unless warm is given (its p must match).
FitResult fit_hierarchical(const LbaLikelihood& lik, const FitConfig& cfg,
                           const VariationalParams* warm = nullptr);

}  // namespace lbavb
