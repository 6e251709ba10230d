#include "lbavb/cvvb.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <stdexcept>

#include "lbavb/parallel.hpp"

namespace lbavb {

std::vector<std::size_t> FoldAssignment::indices(std::size_t subject, std::size_t fold) const {
  std::vector<std::size_t> out;
  const auto& f = fold_of.at(subject);
  for (std::size_t i = 0; i < f.size(); ++i) {
    if (f[i] == fold) out.push_back(i);
  }
  return out;
}

FoldAssignment make_folds(const Dataset& data, std::size_t K, std::uint64_t seed) {
  if (K < 2) throw std::domain_error("make_folds: K must be at least 2");
  FoldAssignment fa;
  fa.K = K;
  fa.fold_of.resize(data.subjects.size());
  const std::size_t n_cells = data.schema->n_cells();
  for (std::size_t j = 0; j < data.subjects.size(); ++j) {
    const auto& trials = data.subjects[j].trials;
    if (trials.size() < K)
      throw std::domain_error("make_folds: subject " + data.subjects[j].id + " has fewer than K trials");
    Rng rng(derive_seed(seed, j));
    std::vector<std::vector<std::size_t>> by_cell(n_cells);
    for (std::size_t i = 0; i < trials.size(); ++i) by_cell[trials[i].cell].push_back(i);
    std::vector<std::size_t> order;
    order.reserve(trials.size());
    for (auto& g : by_cell) {
      std::shuffle(g.begin(), g.end(), rng);
      order.insert(order.end(), g.begin(), g.end());
    }
    const std::size_t offset = std::uniform_int_distribution<std::size_t>(0, K - 1)(rng);
    fa.fold_of[j].assign(trials.size(), 0);
    for (std::size_t pos = 0; pos < order.size(); ++pos)
      fa.fold_of[j][order[pos]] = static_cast<std::uint32_t>((offset + pos) % K);
  }
  return fa;
}

FoldSplit split_fold(const Dataset& data, const FoldAssignment& folds, std::size_t k) {
  if (k >= folds.K) throw std::out_of_range("split_fold: fold index out of range");
  if (folds.fold_of.size() != data.subjects.size())
    throw std::invalid_argument("split_fold: folds do not match the dataset");
  std::vector<std::vector<std::size_t>> train(data.subjects.size()), test(data.subjects.size());
  for (std::size_t j = 0; j < data.subjects.size(); ++j) {
    const auto& f = folds.fold_of[j];
    if (f.size() != data.subjects[j].trials.size())
      throw std::invalid_argument("split_fold: folds do not match the dataset");
    for (std::size_t i = 0; i < f.size(); ++i) (f[i] == k ? test : train)[j].push_back(i);
  }
  return {subset(data, train), subset(data, test)};
}

PredictiveScore predictive_score(std::span<const double> log_p) {
  if (log_p.empty()) throw std::invalid_argument("predictive_score: no draws");
  const double mx = *std::max_element(log_p.begin(), log_p.end());
  if (!std::isfinite(mx)) return {mx, std::numeric_limits<double>::infinity()};
  const double S = static_cast<double>(log_p.size());
  double sum = 0.0, sum2 = 0.0;
  for (double l : log_p) {
    const double w = std::exp(l - mx);
    sum += w;
    sum2 += w * w;
  }
  const double mean = sum / S;
  PredictiveScore out;
  out.value = mx + std::log(mean);
  if (log_p.size() > 1) {
    const double var = std::max(0.0, (sum2 - S * mean * mean) / (S - 1.0));
    out.mc_se = std::sqrt(var / S) / mean;
  }
  return out;
}

std::vector<double> heldout_log_likelihood_draws(const LbaLikelihood& test,
                                                 const VariationalParams& lambda, std::size_t S,
                                                 Rng& rng) {
  const std::size_t n_alpha = test.dim() * test.n_subjects();
  if (lambda.p() < n_alpha) throw std::invalid_argument("lambda too small for the held-out data");
  std::vector<double> out(S);
  for (std::size_t s = 0; s < S; ++s) {
    const ReparamDraw dr = draw_reparam(lambda, rng);
    out[s] = log_likelihood_and_grad(test, dr.theta.data(), nullptr).value;
  }
  return out;
}

ELPDReport elpd_kcvvb(const Dataset& data, const ModelSpec& spec, const FoldAssignment& folds,
                      const CvConfig& cfg) {
  if (cfg.S < 1) throw std::invalid_argument("elpd_kcvvb: S must be >= 1");
  ELPDReport rep;
  rep.label = spec.label();
  rep.spec_string = spec.to_string();
  rep.S = cfg.S;
  rep.folds.resize(folds.K);
  std::optional<VariationalParams> warm;
  for (std::size_t k = 0; k < folds.K; ++k) {
    FoldResult& fr = rep.folds[k];
    try {
      FoldSplit split = split_fold(data, folds, k);
      const LbaLikelihood train(std::move(split.train), spec);
      const LbaLikelihood test(std::move(split.test), spec);
      FitConfig fc = cfg.fit;
      fc.vb.seed = derive_seed(cfg.fit.vb.seed, k);
      const bool use_warm = cfg.warm_start && k > 0 && warm.has_value();
      if (cfg.warm_start && k > 0 && !warm)
        throw std::runtime_error("first fold failed; no warm start available");
      const FitResult fit = fit_hierarchical(train, fc, use_warm ? &*warm : nullptr);
      if (k == 0) {
        warm = fit.vb.lambda;
        rep.first_fold_lambda = fit.vb.lambda;
      }
      Rng rng(derive_seed(cfg.seed, 1000 + k));
      const auto draws = heldout_log_likelihood_draws(test, fit.vb.lambda, cfg.S, rng);
      const PredictiveScore ps = predictive_score(draws);
      fr.score = ps.value;
      fr.mc_se = ps.mc_se;
      fr.iterations = fit.vb.iterations;
      fr.converged = fit.vb.converged;
      fr.best_ma = fit.vb.best_ma;
      fr.seconds = fit.vb.seconds;
      fr.ok = std::isfinite(ps.value);
      if (!fr.ok) fr.error = "non-finite predictive score";
    } catch (const std::exception& e) {
      fr.ok = false;
      fr.error = e.what();
    }
  }
  rep.ok = std::all_of(rep.folds.begin(), rep.folds.end(), [](const FoldResult& f) { return f.ok; });
  if (rep.ok) {
    double se2 = 0.0;
    rep.elpd = 0.0;
    for (const auto& f : rep.folds) {
      rep.elpd += f.score;
      se2 += f.mc_se * f.mc_se;
    }
    rep.elpd /= static_cast<double>(folds.K);
    rep.mc_se = std::sqrt(se2) / static_cast<double>(folds.K);
  } else {
    rep.elpd = std::numeric_limits<double>::quiet_NaN();
    rep.mc_se = std::numeric_limits<double>::quiet_NaN();
  }
  return rep;
}

int ModelRanking::rank_of(int model_index) const {
  for (const auto& e : entries) {
    if (e.model_index == model_index) return e.rank;
  }
  return 0;
}

ModelRanking rank_models(const std::vector<ELPDReport>& reports) {
  if (reports.empty()) throw std::invalid_argument("rank_models: no reports");
  ModelRanking r;
  for (const auto& rep : reports)
    r.entries.push_back({rep.model_index, rep.label, rep.elpd, rep.ok && std::isfinite(rep.elpd), 0});
  std::stable_sort(r.entries.begin(), r.entries.end(), [](const RankEntry& a, const RankEntry& b) {
    if (a.ok != b.ok) return a.ok;
    if (a.ok && a.elpd != b.elpd) return a.elpd > b.elpd;
    return a.model_index < b.model_index;
  });
  for (std::size_t i = 0; i < r.entries.size(); ++i) r.entries[i].rank = static_cast<int>(i) + 1;
  return r;
}

double spearman_rank_corr(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size() || a.size() < 2)
    throw std::invalid_argument("spearman_rank_corr: need two equal-length rank vectors");
  const double n = static_cast<double>(a.size());
  const double ma = std::accumulate(a.begin(), a.end(), 0.0) / n;
  const double mb = std::accumulate(b.begin(), b.end(), 0.0) / n;
  double sab = 0.0, saa = 0.0, sbb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    sab += (a[i] - ma) * (b[i] - mb);
    saa += (a[i] - ma) * (a[i] - ma);
    sbb += (b[i] - mb) * (b[i] - mb);
  }
  if (saa == 0.0 || sbb == 0.0) throw std::domain_error("spearman_rank_corr: constant ranks");
  return sab / std::sqrt(saa * sbb);
}

ScreeningReport screen_models(const ModelFamily& family, const Dataset& data, const CvConfig& cfg,
                              std::size_t shortlist, std::size_t threads, const ScreenHooks& hooks) {
  if (family.members.empty()) throw std::invalid_argument("screen_models: empty family");
  const FoldAssignment folds = make_folds(data, cfg.K, cfg.seed);
  ScreeningReport out;
  out.reports.resize(family.members.size());
  parallel_for(family.members.size(), threads == 0 ? default_threads() : threads, [&](std::size_t i) {
    const FamilyMember& m = family.members[i];
    std::optional<ELPDReport> cached = hooks.lookup ? hooks.lookup(m) : std::nullopt;
    ELPDReport rep = cached ? std::move(*cached) : elpd_kcvvb(data, m.spec, folds, cfg);
    rep.model_index = m.index;
    rep.label = m.label;
    rep.spec_string = m.spec.to_string();
    if (!cached && hooks.on_done) hooks.on_done(m, rep);
    out.reports[i] = std::move(rep);
  });
  for (const auto& rep : out.reports) {
    if (!rep.ok) {
      std::string why;
      for (const auto& f : rep.folds) {
        if (!f.ok) {
          why = f.error;
          break;
        }
      }
      out.warnings.push_back("model " + std::to_string(rep.model_index) + " (" + rep.label +
                             ") failed: " + why);
    }
  }
  out.ranking = rank_models(out.reports);
  const std::size_t M = std::min(shortlist, out.ranking.entries.size());
  for (std::size_t i = 0; i < M; ++i) out.best.push_back(out.ranking.entries[i].model_index);
  std::vector<int> completed;
  for (const auto& e : out.ranking.entries) {
    if (e.ok) completed.push_back(e.model_index);
  }
  const std::size_t W = std::min(shortlist, completed.size());
  for (std::size_t i = 0; i < W; ++i) out.worst.push_back(completed[completed.size() - 1 - i]);
  return out;
}

}  // namespace lbavb
