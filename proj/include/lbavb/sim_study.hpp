#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include "lbavb/cvvb.hpp"
#include "lbavb/dataset.hpp"
#include "lbavb/hier_model.hpp"
#include "lbavb/model_spec.hpp"
#include "lbavb/vb.hpp"

namespace lbavb {

struct GeneratingConfig {
  ModelSpec spec;
  VectorXd mu;
  MatrixXd Sigma;
  std::size_t J = 19;
  std::vector<std::size_t> plan;  // trials per trial cell, same for every subject
  std::uint64_t seed = 1;
};

struct GeneratedData {
  Dataset data;
  MatrixXd alpha;  // D x J generating random effects
};

// 175 trials per (E, S) cell for the first two E levels, 150 for the third.
std::vector<std::size_t> forstmann_plan(const FactorSchema& schema);
// Evenly spreads `trials` over all cells (remainder to the first cells).
std::vector<std::size_t> uniform_plan(const FactorSchema& schema, std::size_t trials);

// 3-1-1 generating fixture on forstmann_schema(); values in sim_study.cpp.
GeneratingConfig forstmann_fixture(std::size_t J = 19);

// Simulates plan[cell] trials per cell for each column of alpha.
Dataset simulate_subjects(const ModelSpec& spec, const MatrixXd& alpha,
                          const std::vector<std::size_t>& plan, Rng& rng,
                          const std::vector<std::string>& ids = {});

GeneratedData generate_dataset(const GeneratingConfig& cfg);

// Response-conditional summaries of one parameter set (quadrature).
struct CellPrediction {
  std::vector<double> p_choice;  // probability of each response given one occurs
  double median_rt = 0.0;        // over all responses; the mean is infinite under LBA
  double mass = 0.0;             // 1 - P(no positive drift)
};
CellPrediction analytic_cell(std::span<const AccumulatorParams> params);

struct PredictiveRow {
  std::string condition;
  std::string outcome;  // correct / error, or the response label without a match factor
  std::size_t n = 0;
  double proportion = 0.0;  // share of the condition's trials
  double mean_rt = 0.0;
  std::array<double, 5> quantiles{};  // 0.1 0.3 0.5 0.7 0.9
  double bandwidth = 0.0;
};

struct DensityPoint {
  std::string condition;
  std::string outcome;
  double rt = 0.0;
  double density = 0.0;  // kernel estimate scaled by proportion (defective)
};

struct PredictiveSummary {
  std::vector<PredictiveRow> rows;
  std::vector<DensityPoint> density;
};

// Groups trials by (level of trial factor `condition_factor`, outcome).
PredictiveSummary summarize_datasets(const std::vector<Dataset>& sims, int condition_factor = 0,
                                     std::size_t grid_points = 128);

struct PredictiveResult {
  std::vector<Dataset> datasets;
  PredictiveSummary summary;
};

// S draws of alpha from q (first J*D coordinates of theta), one simulated
// response per observed trial of `shape`.
PredictiveResult posterior_predictive(const VariationalParams& lambda, const ModelSpec& spec,
                                      const Dataset& shape, std::size_t S, Rng& rng,
                                      int condition_factor = 0);
// Same from explicit D x J alpha draws.
PredictiveResult posterior_predictive(const std::vector<MatrixXd>& alpha_draws,
                                      const ModelSpec& spec, const Dataset& shape, Rng& rng,
                                      int condition_factor = 0);

struct SensitivityCurve {
  std::vector<int> f;  // f[r-1] = replications with the generating model in the top r
  int replications = 0;
  int completed = 0;
  std::vector<int> generating_rank;  // per replication, 0 when failed
  std::vector<std::string> warnings;
};

struct SensitivityConfig {
  int generating_index = 0;  // family index of the generating model
  GeneratingConfig gen;      // spec is replaced by the family member's
  std::size_t replications = 20;
  CvConfig cv;
  std::uint64_t seed = 1;
  std::size_t threads = 1;
};

SensitivityCurve sensitivity_study(const ModelFamily& family, const SensitivityConfig& cfg);

}  // namespace lbavb
