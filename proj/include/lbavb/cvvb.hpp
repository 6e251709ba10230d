#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "lbavb/dataset.hpp"
#include "lbavb/hier_fit.hpp"
#include "lbavb/model_spec.hpp"

namespace lbavb {

struct FoldAssignment {
  std::size_t K = 0;
  // fold_of[j][i]: fold of trial i of subject j.
  std::vector<std::vector<std::uint32_t>> fold_of;

  std::vector<std::size_t> indices(std::size_t subject, std::size_t fold) const;
};

// Within each subject, trials are shuffled per cell and dealt round-robin
// from a random offset, so fold sizes differ by at most one and every cell
// with >= K trials reaches every fold.
FoldAssignment make_folds(const Dataset& data, std::size_t K, std::uint64_t seed);

struct FoldSplit {
  Dataset train;
  Dataset test;
};
FoldSplit split_fold(const Dataset& data, const FoldAssignment& folds, std::size_t k);

struct PredictiveScore {
  double value = 0.0;  // log((1/S) sum_s exp(log_p[s]))
  double mc_se = 0.0;  // delta-method standard error of value
};
PredictiveScore predictive_score(std::span<const double> log_p);

struct FoldResult {
  bool ok = false;
  std::string error;
  double score = 0.0;
  double mc_se = 0.0;
  int iterations = 0;
  bool converged = false;
  double best_ma = 0.0;
  double seconds = 0.0;
};

struct ELPDReport {
  int model_index = 0;
  std::string label;
  std::string spec_string;
  std::size_t S = 0;
  std::vector<FoldResult> folds;
  bool ok = false;
  double elpd = 0.0;   // mean of fold scores
  double mc_se = 0.0;  // sqrt(sum se_k^2) / K
  // Fold-1 lambda, kept for warm starts and export.
  std::optional<VariationalParams> first_fold_lambda;
};

struct CvConfig {
  std::size_t K = 5;
  std::size_t S = 100;
  FitConfig fit;
  bool warm_start = true;
  std::uint64_t seed = 1;  // folds and predictive draws
};

// S draws theta ~ q, summing held-out log-likelihood over subjects.
std::vector<double> heldout_log_likelihood_draws(const LbaLikelihood& test,
                                                 const VariationalParams& lambda, std::size_t S,
                                                 Rng& rng);

ELPDReport elpd_kcvvb(const Dataset& data, const ModelSpec& spec, const FoldAssignment& folds,
                      const CvConfig& cfg);

struct RankEntry {
  int model_index = 0;
  std::string label;
  double elpd = 0.0;
  bool ok = false;
  int rank = 0;
};

struct ModelRanking {
  std::vector<RankEntry> entries;  // rank order
  int rank_of(int model_index) const;
};

// Descending ELPD, ties by model index; failed reports last.
ModelRanking rank_models(const std::vector<ELPDReport>& reports);

// Pearson correlation of two rank vectors aligned by model.
double spearman_rank_corr(std::span<const double> rank_a, std::span<const double> rank_b);

struct ScreeningReport {
  std::vector<ELPDReport> reports;  // family order
  ModelRanking ranking;
  std::vector<int> best;   // top-M model indices
  std::vector<int> worst;  // bottom-M among completed models
  std::vector<std::string> warnings;
};

struct ScreenHooks {
  // Returns a finished report to reuse instead of refitting.
  std::function<std::optional<ELPDReport>(const FamilyMember&)> lookup;
  std::function<void(const FamilyMember&, const ELPDReport&)> on_done;
};

// Folds are shared by all models. threads = 0 uses hardware concurrency.
ScreeningReport screen_models(const ModelFamily& family, const Dataset& data, const CvConfig& cfg,
                              std::size_t shortlist, std::size_t threads = 1,
                              const ScreenHooks& hooks = {});

}  // namespace lbavb
