#include "lbavb/sim_study.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <numeric>
#include <stdexcept>

#include <boost/math/quadrature/gauss_kronrod.hpp>

#include "lbavb/normal.hpp"
#include "lbavb/parallel.hpp"

namespace lbavb {

std::vector<std::size_t> forstmann_plan(const FactorSchema& schema) {
  const int e = schema.find("E");
  if (e < 0 || schema.factors()[e].kind != FactorKind::trial || schema.factors()[e].levels.size() != 3)
    throw std::invalid_argument("forstmann plan needs a 3-level trial factor E");
  std::vector<std::size_t> plan(schema.n_cells());
  // Per E level split evenly over the remaining cells: 350, 350, 300 trials.
  static constexpr std::array<std::size_t, 3> per_level{350, 350, 300};
  const std::size_t cells_per_level = schema.n_cells() / 3;
  for (std::uint32_t c = 0; c < schema.n_cells(); ++c) {
    const std::size_t total = per_level[schema.trial_level(c, e)];
    if (total % cells_per_level != 0) throw std::invalid_argument("forstmann plan does not divide evenly");
    plan[c] = total / cells_per_level;
  }
  return plan;
}

std::vector<std::size_t> uniform_plan(const FactorSchema& schema, std::size_t trials) {
  const std::size_t n = schema.n_cells();
  std::vector<std::size_t> plan(n, trials / n);
  for (std::size_t c = 0; c < trials % n; ++c) ++plan[c];
  return plan;
}

GeneratingConfig forstmann_fixture(std::size_t J) {
  GeneratingConfig cfg;
  cfg.spec = parse_spec({"E", "1", "1", "1", "1"}, forstmann_schema(), DriftCrossing::automatic, "3-1-1");
  // Natural scale: c = (0.80, 0.60, 0.30) for accuracy/neutral/speed, A = 0.6,
  // v = (3.0, 1.2) for correct/error, tau = 0.15, s = 1.
  cfg.mu.resize(7);
  cfg.mu << std::log(0.80), std::log(0.60), std::log(0.30), std::log(0.6), std::log(3.0), std::log(1.2),
      std::log(0.15);
  VectorXd sd(7);
  sd << 0.20, 0.20, 0.20, 0.20, 0.15, 0.15, 0.15;
  MatrixXd R = MatrixXd::Identity(7, 7);
  for (int i = 0; i < 3; ++i) {
    for (int j = 0; j < 3; ++j) {
      if (i != j) R(i, j) = 0.6;
    }
  }
  R(4, 5) = R(5, 4) = 0.3;
  cfg.Sigma = sd.asDiagonal() * R * sd.asDiagonal();
  cfg.J = J;
  cfg.plan = forstmann_plan(cfg.spec.schema());
  cfg.seed = 2024;
  return cfg;
}

Dataset simulate_subjects(const ModelSpec& spec, const MatrixXd& alpha,
                          const std::vector<std::size_t>& plan, Rng& rng,
                          const std::vector<std::string>& ids) {
  const FactorSchema& sc = spec.schema();
  if (static_cast<std::size_t>(alpha.rows()) != spec.dim())
    throw std::invalid_argument("simulate_subjects: alpha has the wrong dimension");
  if (plan.size() != sc.n_cells()) throw std::invalid_argument("simulate_subjects: plan size mismatch");
  Dataset data;
  data.schema = spec.schema_ptr();
  std::vector<AccumulatorParams> params(sc.n_accumulators());
  const std::size_t total = std::accumulate(plan.begin(), plan.end(), std::size_t{0});
  for (Eigen::Index j = 0; j < alpha.cols(); ++j) {
    SubjectData s;
    s.id = ids.empty() ? "s" + std::to_string(j + 1) : ids.at(static_cast<std::size_t>(j));
    s.trials.reserve(total);
    const VectorXd a = alpha.col(j);
    for (std::uint32_t cell = 0; cell < sc.n_cells(); ++cell) {
      if (plan[cell] == 0) continue;
      map_effects(spec, std::span<const double>(a.data(), spec.dim()), cell, params);
      for (std::size_t i = 0; i < plan[cell]; ++i) {
        TrialOutcome o;
        try {
          o = simulate_trial(params, rng);
        } catch (const std::exception& e) {
          const auto lv = sc.decode_cell(cell);
          std::string cond;
          for (std::size_t f = 0; f < lv.size(); ++f)
            cond += (f ? "," : "") + sc.factors()[f].name + "=" + sc.factors()[f].levels[lv[f]];
          throw std::runtime_error("subject " + s.id + ", condition " + cond + ": " + e.what());
        }
        s.trials.push_back(Trial{cell, static_cast<std::uint32_t>(o.choice), o.rt});
      }
    }
    data.subjects.push_back(std::move(s));
  }
  return data;
}

GeneratedData generate_dataset(const GeneratingConfig& cfg) {
  const auto D = static_cast<Eigen::Index>(cfg.spec.dim());
  if (cfg.mu.size() != D || cfg.Sigma.rows() != D || cfg.Sigma.cols() != D)
    throw std::invalid_argument("generate_dataset: mu/Sigma do not match the spec");
  if (cfg.J == 0) throw std::invalid_argument("generate_dataset: J must be positive");
  if (std::accumulate(cfg.plan.begin(), cfg.plan.end(), std::size_t{0}) == 0)
    throw std::invalid_argument("generate_dataset: empty trial plan");
  const MatrixXd L = robust_llt(cfg.Sigma).matrixL();
  Rng rng(cfg.seed);
  std::normal_distribution<double> norm(0.0, 1.0);
  GeneratedData out;
  out.alpha.resize(D, static_cast<Eigen::Index>(cfg.J));
  VectorXd z(D);
  for (std::size_t j = 0; j < cfg.J; ++j) {
    for (Eigen::Index d = 0; d < D; ++d) z[d] = norm(rng);
    out.alpha.col(static_cast<Eigen::Index>(j)) = cfg.mu + L * z;
  }
  out.data = simulate_subjects(cfg.spec, out.alpha, cfg.plan, rng);
  return out;
}

CellPrediction analytic_cell(std::span<const AccumulatorParams> params) {
  using GK = boost::math::quadrature::gauss_kronrod<double, 31>;
  const std::size_t n = params.size();
  if (n == 0) throw std::invalid_argument("analytic_cell: no accumulators");
  for (const auto& p : params) validate(p);
  double tau_min = params[0].tau;
  for (const auto& p : params) tau_min = std::min(tau_min, p.tau);
  auto dens = [&](std::size_t c, double rt) {
    return std::exp(lba_joint_logdensity(params, TrialOutcome{c, rt}).value);
  };
  auto any = [&](double rt) {
    double f = 0.0;
    for (std::size_t c = 0; c < n; ++c) f += dens(c, rt);
    return f;
  };
  CellPrediction out;
  out.p_choice.assign(n, 0.0);
  const double inf = std::numeric_limits<double>::infinity();
  for (std::size_t c = 0; c < n; ++c)
    out.p_choice[c] = GK::integrate([&](double rt) { return dens(c, rt); }, tau_min, inf, 20, 1e-12);
  out.mass = std::accumulate(out.p_choice.begin(), out.p_choice.end(), 0.0);
  for (auto& p : out.p_choice) p /= out.mass;
  // Bisection on P(RT <= t) = mass / 2.
  double lo = tau_min, hi = tau_min + 1.0;
  while (GK::integrate(any, tau_min, hi, 15, 1e-12) < 0.5 * out.mass) hi = tau_min + 2.0 * (hi - tau_min);
  for (int it = 0; it < 60 && hi - lo > 1e-10; ++it) {
    const double mid = 0.5 * (lo + hi);
    (GK::integrate(any, tau_min, mid, 15, 1e-12) < 0.5 * out.mass ? lo : hi) = mid;
  }
  out.median_rt = 0.5 * (lo + hi);
  return out;
}

namespace {

double quantile_sorted(const std::vector<double>& x, double q) {
  if (x.empty()) return std::numeric_limits<double>::quiet_NaN();
  const double h = (static_cast<double>(x.size()) - 1.0) * q;
  const auto lo = static_cast<std::size_t>(std::floor(h));
  const auto hi = std::min(lo + 1, x.size() - 1);
  return x[lo] + (h - static_cast<double>(lo)) * (x[hi] - x[lo]);
}

double silverman(const std::vector<double>& sorted) {
  const double n = static_cast<double>(sorted.size());
  if (sorted.size() < 2) return 0.05;
  const double mean = std::accumulate(sorted.begin(), sorted.end(), 0.0) / n;
  double ss = 0.0;
  for (double x : sorted) ss += (x - mean) * (x - mean);
  const double sd = std::sqrt(ss / (n - 1.0));
  const double iqr = quantile_sorted(sorted, 0.75) - quantile_sorted(sorted, 0.25);
  double spread = std::min(sd, iqr / 1.34);
  if (!(spread > 0.0)) spread = sd > 0.0 ? sd : 0.05;
  return 0.9 * spread * std::pow(n, -0.2);
}

}  // namespace

PredictiveSummary summarize_datasets(const std::vector<Dataset>& sims, int condition_factor,
                                     std::size_t grid_points) {
  PredictiveSummary out;
  if (sims.empty()) return out;
  const FactorSchema& sc = *sims.front().schema;
  if (condition_factor < 0 || static_cast<std::size_t>(condition_factor) >= sc.n_trial_factors())
    throw std::invalid_argument("summarize_datasets: condition factor must be a trial factor");
  const auto& cond_levels = sc.factors()[condition_factor].levels;
  const bool has_match = sc.match_factor() >= 0;
  const std::vector<std::string> outcomes =
      has_match ? std::vector<std::string>{std::string(FactorSchema::kCorrect), std::string(FactorSchema::kError)}
                : sc.accumulators();
  std::vector<std::vector<std::vector<double>>> rts(cond_levels.size(),
                                                    std::vector<std::vector<double>>(outcomes.size()));
  std::vector<std::size_t> per_condition(cond_levels.size(), 0);
  std::vector<double> all;
  for (const auto& d : sims) {
    for (const auto& s : d.subjects) {
      for (const auto& t : s.trials) {
        const int cl = sc.trial_level(t.cell, condition_factor);
        const int oc = has_match ? (static_cast<int>(t.choice) == sc.correct_accumulator(t.cell) ? 0 : 1)
                                 : static_cast<int>(t.choice);
        rts[cl][oc].push_back(t.rt);
        ++per_condition[cl];
        all.push_back(t.rt);
      }
    }
  }
  std::sort(all.begin(), all.end());
  const double lo = all.empty() ? 0.0 : all.front();
  const double hi = all.empty() ? 1.0 : quantile_sorted(all, 0.995);
  for (std::size_t c = 0; c < cond_levels.size(); ++c) {
    for (std::size_t o = 0; o < outcomes.size(); ++o) {
      auto& x = rts[c][o];
      std::sort(x.begin(), x.end());
      PredictiveRow row;
      row.condition = cond_levels[c];
      row.outcome = outcomes[o];
      row.n = x.size();
      row.proportion = per_condition[c] ? static_cast<double>(x.size()) / static_cast<double>(per_condition[c]) : 0.0;
      row.mean_rt = x.empty() ? std::numeric_limits<double>::quiet_NaN()
                              : std::accumulate(x.begin(), x.end(), 0.0) / static_cast<double>(x.size());
      static constexpr std::array<double, 5> qs{0.1, 0.3, 0.5, 0.7, 0.9};
      for (std::size_t q = 0; q < qs.size(); ++q) row.quantiles[q] = quantile_sorted(x, qs[q]);
      row.bandwidth = x.empty() ? 0.0 : silverman(x);
      out.rows.push_back(row);
      if (x.empty() || grid_points < 2) continue;
      const double h = row.bandwidth;
      for (std::size_t g = 0; g < grid_points; ++g) {
        const double t = lo + (hi - lo) * static_cast<double>(g) / static_cast<double>(grid_points - 1);
        double dens = 0.0;
        for (double xi : x) dens += norm_pdf((t - xi) / h);
        dens /= static_cast<double>(x.size()) * h;
        out.density.push_back({row.condition, row.outcome, t, dens * row.proportion});
      }
    }
  }
  return out;
}

PredictiveResult posterior_predictive(const std::vector<MatrixXd>& alpha_draws, const ModelSpec& spec,
                                      const Dataset& shape, Rng& rng, int condition_factor) {
  if (alpha_draws.empty()) throw std::invalid_argument("posterior_predictive: S must be >= 1");
  PredictiveResult out;
  const FactorSchema& sc = spec.schema();
  std::vector<std::string> ids;
  std::vector<std::vector<std::size_t>> plans;
  for (std::size_t j = 0; j < shape.subjects.size(); ++j) {
    ids.push_back(shape.subjects[j].id);
    std::vector<std::size_t> plan(sc.n_cells(), 0);
    for (const auto& t : shape.subjects[j].trials) ++plan[t.cell];
    plans.push_back(std::move(plan));
  }
  for (const MatrixXd& alpha : alpha_draws) {
    if (static_cast<std::size_t>(alpha.cols()) != shape.subjects.size())
      throw std::invalid_argument("posterior_predictive: alpha draw has the wrong subject count");
    Dataset sim;
    sim.schema = shape.schema;
    for (std::size_t j = 0; j < shape.subjects.size(); ++j) {
      Dataset one = simulate_subjects(spec, alpha.col(static_cast<Eigen::Index>(j)), plans[j], rng, {ids[j]});
      sim.subjects.push_back(std::move(one.subjects.front()));
    }
    out.datasets.push_back(std::move(sim));
  }
  out.summary = summarize_datasets(out.datasets, condition_factor);
  return out;
}

PredictiveResult posterior_predictive(const VariationalParams& lambda, const ModelSpec& spec,
                                      const Dataset& shape, std::size_t S, Rng& rng,
                                      int condition_factor) {
  if (S < 1) throw std::invalid_argument("posterior_predictive: S must be >= 1");
  const auto D = static_cast<Eigen::Index>(spec.dim());
  const auto J = static_cast<Eigen::Index>(shape.subjects.size());
  if (static_cast<Eigen::Index>(lambda.p()) < D * J)
    throw std::invalid_argument("posterior_predictive: lambda does not cover every subject");
  std::vector<MatrixXd> draws;
  for (std::size_t s = 0; s < S; ++s) {
    const ReparamDraw dr = draw_reparam(lambda, rng);
    draws.push_back(Eigen::Map<const MatrixXd>(dr.theta.data(), D, J));
  }
  return posterior_predictive(draws, spec, shape, rng, condition_factor);
}

SensitivityCurve sensitivity_study(const ModelFamily& family, const SensitivityConfig& cfg) {
  const FamilyMember& gen_member = family.by_index(cfg.generating_index);
  if (cfg.replications == 0) throw std::invalid_argument("sensitivity_study: need at least one replication");
  SensitivityCurve curve;
  curve.replications = static_cast<int>(cfg.replications);
  curve.generating_rank.assign(cfg.replications, 0);
  std::vector<std::string> errors(cfg.replications);
  // Replications run one after another; models within a replication share the thread budget.
  for (std::size_t r = 0; r < cfg.replications; ++r) {
    try {
      GeneratingConfig g = cfg.gen;
      g.spec = gen_member.spec;
      g.seed = derive_seed(cfg.seed, 2 * r);
      const GeneratedData gd = generate_dataset(g);
      CvConfig cv = cfg.cv;
      cv.seed = derive_seed(cfg.seed, 2 * r + 1);
      cv.fit.vb.seed = derive_seed(cv.seed, 7);
      const ScreeningReport rep = screen_models(family, gd.data, cv, 3, cfg.threads);
      for (const auto& w : rep.warnings) curve.warnings.push_back("replication " + std::to_string(r + 1) + ": " + w);
      const auto& e = rep.ranking.entries;
      const auto it = std::find_if(e.begin(), e.end(), [&](const RankEntry& x) { return x.model_index == cfg.generating_index; });
      if (it == e.end() || !it->ok) throw std::runtime_error("generating model failed to fit");
      curve.generating_rank[r] = it->rank;
    } catch (const std::exception& ex) {
      errors[r] = ex.what();
    }
  }
  curve.f.assign(family.members.size(), 0);
  for (std::size_t r = 0; r < cfg.replications; ++r) {
    if (curve.generating_rank[r] == 0) {
      curve.warnings.push_back("replication " + std::to_string(r + 1) + " excluded: " + errors[r]);
      continue;
    }
    ++curve.completed;
    for (std::size_t k = static_cast<std::size_t>(curve.generating_rank[r]); k <= curve.f.size(); ++k) ++curve.f[k - 1];
  }
  return curve;
}

}  // namespace lbavb
