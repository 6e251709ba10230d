#include "cli.hpp"

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <map>
#include <mutex>
#include <sstream>

#include <CLI11.hpp>

#include "lbavb/csv_io.hpp"
#include "lbavb/hier_fit.hpp"
#include "lbavb/parallel.hpp"
#include "lbavb/sim_study.hpp"

namespace lbavb::cli {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

struct CliError : std::runtime_error {
  CliError(int code, const std::string& what) : std::runtime_error(what), code(code) {}
  int code;
};

[[noreturn]] void config_error(const std::string& what) { throw CliError(kConfigError, what); }

// Config key -> flag. Flags win over the config file, which wins over defaults.
struct FlagDef {
  const char* key;
  const char* flag;
  const char* help;
};

constexpr FlagDef kFlags[] = {
    {"data", "--data", "trial CSV (subject, factor columns, response, rt)"},
    {"model_file", "--model-file", "model file declaring the schema, formulas or family axes"},
    {"design", "--design", "built-in schema when no model file: forstmann, rae, wagenmakers"},
    {"spec", "--spec", "model formulas, e.g. \"c~E, A~1, v~1, s~1, tau~1\""},
    {"family", "--family", "forstmann27, rae16, wagenmakers256 or custom (model-file axes)"},
    {"models", "--models", "comma-separated family indices to keep (default all)"},
    {"method", "--method", "gvb or hybrid"},
    {"r", "--factors", "covariance factors r for full fits"},
    {"cv_r", "--cv-factors", "covariance factors r for cross-validation folds"},
    {"N", "--samples", "Monte Carlo draws per gradient estimate"},
    {"max_iters", "--max-iters", "iteration cap"},
    {"window", "--window", "moving-average window m"},
    {"patience", "--patience", "iterations without improvement k"},
    {"K", "--folds", "cross-validation folds"},
    {"S", "--draws", "posterior draws per held-out score"},
    {"warm_start", "--warm-start", "warm-start folds 2..K from fold 1 (true/false)"},
    {"seed", "--seed", "master seed"},
    {"output", "--out", "output directory"},
    {"threads", "--threads", "parallel models (0 = hardware concurrency)"},
    {"J", "--subjects", "simulated subjects"},
    {"plan", "--plan", "trial plan: forstmann or uniform"},
    {"trials", "--trials", "trials per subject for the uniform plan"},
    {"replications", "--replications", "sensitivity replications R"},
    {"generating", "--generating", "family index of the generating model (0 = match --spec)"},
    {"lambda", "--lambda", "lambda.json written by fit"},
    {"predict_draws", "--predict-draws", "simulated datasets for predict"},
    {"condition", "--condition", "trial factor used to group predictive summaries"},
};

json parse_scalar(const json& like, const std::string& key, const std::string& text) {
  try {
    if (like.is_boolean()) {
      if (text == "true" || text == "1") return true;
      if (text == "false" || text == "0") return false;
      config_error(key + ": expected true or false, got '" + text + "'");
    }
    if (like.is_number_integer() || like.is_number_unsigned()) {
      std::size_t used = 0;
      const long long v = std::stoll(text, &used);
      if (used != text.size()) throw std::invalid_argument("trailing characters");
      return v;
    }
    if (like.is_number_float()) {
      std::size_t used = 0;
      const double v = std::stod(text, &used);
      if (used != text.size()) throw std::invalid_argument("trailing characters");
      return v;
    }
    if (like.is_array()) {
      json arr = json::array();
      std::stringstream ss(text);
      std::string item;
      while (std::getline(ss, item, ',')) {
        if (!item.empty()) arr.push_back(std::stoll(item));
      }
      return arr;
    }
  } catch (const CliError&) {
    throw;
  } catch (const std::exception&) {
    config_error(key + ": cannot parse '" + text + "'");
  }
  return text;
}

template <class T>
T get(const json& cfg, const char* key) {
  try {
    return cfg.at(key).get<T>();
  } catch (const json::exception& e) {
    config_error(std::string("config key '") + key + "': " + e.what());
  }
}

std::size_t get_count(const json& cfg, const char* key, long long min_value) {
  const auto v = get<long long>(cfg, key);
  if (v < min_value) config_error(std::string(key) + " must be >= " + std::to_string(min_value));
  return static_cast<std::size_t>(v);
}

void validate_keys(const json& cfg, const json& defaults) {
  if (!cfg.is_object()) config_error("config must be a JSON object");
  for (auto it = cfg.begin(); it != cfg.end(); ++it) {
    if (!defaults.contains(it.key())) config_error("unknown config key '" + it.key() + "'");
  }
}

std::string read_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) config_error("cannot open " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_json(const fs::path& path, const json& j) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << std::setw(2) << j << "\n";
}

std::vector<double> to_vec(const Eigen::Ref<const VectorXd>& v) { return {v.data(), v.data() + v.size()}; }

// Resolved model context shared by the commands.
struct Context {
  json cfg;
  std::shared_ptr<const FactorSchema> schema;
  std::optional<ModelFile> model_file;
};

Context make_context(json cfg) {
  Context ctx;
  ctx.cfg = std::move(cfg);
  const auto mf = get<std::string>(ctx.cfg, "model_file");
  try {
    if (!mf.empty()) {
      ctx.model_file = load_model_file(mf);
      ctx.schema = ctx.model_file->schema;
    } else {
      const auto design = get<std::string>(ctx.cfg, "design");
      if (design == "forstmann") ctx.schema = forstmann_schema();
      else if (design == "rae") ctx.schema = rae_schema();
      else if (design == "wagenmakers") ctx.schema = wagenmakers_schema();
      else config_error("unknown design '" + design + "' (expected forstmann, rae or wagenmakers)");
    }
  } catch (const CliError&) {
    throw;
  } catch (const ParseError& e) {
    config_error(mf + ": " + e.what());
  } catch (const std::exception& e) {
    config_error(e.what());
  }
  return ctx;
}

DriftCrossing crossing_of(const Context& ctx) {
  return ctx.model_file ? ctx.model_file->crossing : DriftCrossing::automatic;
}

// Explicit --spec, else the model file's formulas; nullopt when neither is set.
std::optional<ModelSpec> resolve_spec(const Context& ctx, std::shared_ptr<const FactorSchema> schema = nullptr) {
  if (!schema) schema = ctx.schema;
  const auto text = get<std::string>(ctx.cfg, "spec");
  try {
    if (!text.empty()) return parse_spec(parse_spec_string(text), schema, crossing_of(ctx));
    if (ctx.model_file && ctx.model_file->has_formulas)
      return parse_spec(ctx.model_file->formulas, schema, ctx.model_file->crossing, ctx.model_file->label);
  } catch (const std::exception& e) {
    config_error(std::string("model spec: ") + e.what());
  }
  return std::nullopt;
}

ModelFamily resolve_family(const Context& ctx, bool allow_single) {
  const auto kind = get<std::string>(ctx.cfg, "family");
  ModelFamily fam;
  try {
    if (kind.empty()) {
      if (!allow_single) config_error("a model family is required (--family)");
      auto spec = resolve_spec(ctx);
      if (!spec) config_error("either --family or a model spec is required");
      fam.kind = "single";
      fam.schema = ctx.schema;
      fam.members.push_back({1, spec->label().empty() ? spec->to_string() : spec->label(), *spec});
    } else if (kind == "custom") {
      if (!ctx.model_file || !ctx.model_file->has_axes)
        config_error("family 'custom' needs a model file with '|' alternatives");
      fam = enumerate_product(ctx.model_file->axes, ctx.schema);
    } else {
      fam = enumerate_family(kind, ctx.schema);
    }
  } catch (const CliError&) {
    throw;
  } catch (const std::exception& e) {
    config_error(std::string("family: ") + e.what());
  }
  const auto keep = get<std::vector<int>>(ctx.cfg, "models");
  if (!keep.empty()) {
    std::vector<FamilyMember> sub;
    for (int idx : keep) {
      try {
        sub.push_back(fam.by_index(idx));
      } catch (const std::exception&) {
        config_error("model index " + std::to_string(idx) + " is not in family '" + fam.kind + "'");
      }
    }
    fam.members = std::move(sub);
  }
  return fam;
}

FitConfig fit_config(const json& cfg) {
  FitConfig fc;
  try {
    fc.method = parse_method(get<std::string>(cfg, "method"));
  } catch (const std::invalid_argument& e) {
    config_error(e.what());
  }
  fc.r = get_count(cfg, "r", 0);
  fc.vb.N = static_cast<int>(get_count(cfg, "N", 1));
  fc.vb.max_iters = static_cast<int>(get_count(cfg, "max_iters", 0));
  fc.vb.window = static_cast<int>(get_count(cfg, "window", 1));
  fc.vb.patience = static_cast<int>(get_count(cfg, "patience", 1));
  fc.vb.seed = get<std::uint64_t>(cfg, "seed");
  return fc;
}

CvConfig cv_config(const json& cfg) {
  CvConfig cv;
  cv.fit = fit_config(cfg);
  cv.fit.r = get_count(cfg, "cv_r", 0);
  cv.K = get_count(cfg, "K", 2);
  cv.S = get_count(cfg, "S", 1);
  cv.warm_start = get<bool>(cfg, "warm_start");
  cv.seed = get<std::uint64_t>(cfg, "seed");
  cv.fit.vb.seed = derive_seed(cv.seed, 0xF17);
  return cv;
}

std::size_t thread_count(const json& cfg) {
  const std::size_t t = get_count(cfg, "threads", 0);
  return t == 0 ? default_threads() : t;
}

fs::path output_dir(const json& cfg, const std::string& command) {
  fs::path dir = get<std::string>(cfg, "output");
  if (dir.empty()) {
    const char* root = std::getenv(kOutputRootEnv);
    dir = fs::path(root && *root ? root : "lbavb_out") / command;
  }
  fs::create_directories(dir);
  return dir;
}

Dataset load_data(const json& cfg, std::shared_ptr<const FactorSchema> schema) {
  const auto path = get<std::string>(cfg, "data");
  if (path.empty()) config_error("--data is required");
  return ingest_csv(path, std::move(schema));
}

// ---------------------------------------------------------------- commands

int cmd_fit(const Context& ctx, std::ostream& out) {
  const FitConfig fc = fit_config(ctx.cfg);
  auto spec = resolve_spec(ctx);
  if (!spec) config_error("fit needs a model spec (--spec or model-file formulas)");
  Dataset data = load_data(ctx.cfg, ctx.schema);
  out << count_report(data);
  const fs::path dir = output_dir(ctx.cfg, "fit");
  const LbaLikelihood lik(data, *spec);
  const FitResult fit = fit_hierarchical(lik, fc);

  json lam = lambda_to_json(fit.vb.lambda);
  lam["schema_version"] = kSchemaVersion;
  lam["method"] = std::string(method_name(fc.method));
  lam["spec"] = spec->to_string();
  lam["D"] = spec->dim();
  json ids = json::array();
  for (const auto& s : data.subjects) ids.push_back(s.id);
  lam["subjects"] = ids;
  write_json(dir / "lambda.json", lam);
  write_trace_csv((dir / "trace.csv").string(), fit.vb);

  const VectorXd mean = fit.vb.lambda.mu();
  const VectorXd sd = fit.vb.lambda.marginal_sd();
  const auto D = static_cast<Eigen::Index>(spec->dim());
  json summary;
  summary["schema_version"] = kSchemaVersion;
  summary["method"] = lam["method"];
  summary["spec"] = lam["spec"];
  summary["parameter_names"] = spec->parameter_names();
  summary["group_mean"] = {{"mean", to_vec(mean.segment(static_cast<Eigen::Index>(fit.layout.mu()), D))},
                           {"sd", to_vec(sd.segment(static_cast<Eigen::Index>(fit.layout.mu()), D))}};
  json subj = json::array();
  for (std::size_t j = 0; j < data.subjects.size(); ++j) {
    const auto off = static_cast<Eigen::Index>(fit.layout.alpha(j));
    subj.push_back({{"id", data.subjects[j].id},
                    {"mean", to_vec(mean.segment(off, D))},
                    {"sd", to_vec(sd.segment(off, D))}});
  }
  summary["subjects"] = subj;
  summary["iterations"] = fit.vb.iterations;
  summary["converged"] = fit.vb.converged;
  summary["best_moving_average"] = fit.vb.best_ma;
  summary["best_iteration"] = fit.vb.best_iteration;
  summary["floored_trials"] = fit.vb.floored_trials;
  summary["seconds"] = fit.vb.seconds;
  write_json(dir / "summary.json", summary);
  out << "fit: " << fit.vb.iterations << " iterations, best moving-average lower bound " << fit.vb.best_ma
      << (fit.vb.converged ? "" : " (iteration cap reached)") << "\nwrote " << dir.string() << "\n";
  return kOk;
}

int cmd_cv(const Context& ctx, std::ostream& out, bool resume) {
  const CvConfig cv = cv_config(ctx.cfg);
  const ModelFamily fam = resolve_family(ctx, true);
  Dataset data = load_data(ctx.cfg, fam.schema);
  out << count_report(data);
  const fs::path dir = output_dir(ctx.cfg, "cv");
  std::mutex io_mu;
  ScreenHooks hooks;
  hooks.lookup = [&](const FamilyMember& m) -> std::optional<ELPDReport> {
    if (!resume) return std::nullopt;
    const fs::path p = dir / "models" / model_dir_name(m.index, m.spec.to_string()) / "report.json";
    std::lock_guard<std::mutex> lock(io_mu);
    if (!fs::exists(p)) return std::nullopt;
    try {
      const json j = json::parse(read_file(p.string()));
      ELPDReport rep = report_from_json(j);
      if (!rep.ok || rep.spec_string != m.spec.to_string() || rep.S != cv.S || rep.folds.size() != cv.K ||
          j.value("seed", std::uint64_t{0}) != cv.seed)
        return std::nullopt;
      return rep;
    } catch (const std::exception&) {
      return std::nullopt;
    }
  };
  hooks.on_done = [&](const FamilyMember& m, const ELPDReport& rep) {
    const fs::path md = dir / "models" / model_dir_name(m.index, m.spec.to_string());
    json j = report_to_json(rep);
    j["seed"] = cv.seed;
    std::lock_guard<std::mutex> lock(io_mu);
    fs::create_directories(md);
    write_json(md / "report.json", j);
    out << "model " << m.index << " (" << m.label << "): "
        << (rep.ok ? "elpd " + std::to_string(rep.elpd) : std::string("failed")) << "\n";
  };
  const ScreeningReport sr = screen_models(fam, data, cv, 3, thread_count(ctx.cfg), hooks);

  std::ofstream csv(dir / "ranking.csv");
  csv << "rank,model_index,label,spec,elpd,mc_se,ok\n" << std::setprecision(17);
  json ranking = json::array();
  for (const auto& e : sr.ranking.entries) {
    const auto& rep = *std::find_if(sr.reports.begin(), sr.reports.end(),
                                    [&](const ELPDReport& r) { return r.model_index == e.model_index; });
    csv << e.rank << "," << e.model_index << ",\"" << e.label << "\",\"" << rep.spec_string << "\",";
    if (e.ok) csv << rep.elpd << "," << rep.mc_se;
    else csv << "nan,nan";
    csv << "," << (e.ok ? 1 : 0) << "\n";
    json r = report_to_json(rep);
    r["rank"] = e.rank;
    r["model_dir"] = model_dir_name(e.model_index, rep.spec_string);
    ranking.push_back(r);
  }
  json j;
  j["schema_version"] = kSchemaVersion;
  j["family"] = fam.kind;
  j["K"] = cv.K;
  j["S"] = cv.S;
  j["method"] = std::string(method_name(cv.fit.method));
  j["seed"] = cv.seed;
  j["ranking"] = ranking;
  j["best"] = sr.best;
  j["worst"] = sr.worst;
  j["warnings"] = sr.warnings;
  write_json(dir / "ranking.json", j);
  for (const auto& w : sr.warnings) out << "warning: " << w << "\n";
  out << "best model: " << (sr.best.empty() ? 0 : sr.best.front()) << "\nwrote " << dir.string() << "\n";
  return kOk;
}

GeneratingConfig generator_config(const Context& ctx, std::shared_ptr<const FactorSchema> schema = nullptr) {
  if (!schema) schema = ctx.schema;
  GeneratingConfig g;
  auto spec = resolve_spec(ctx, schema);
  const json& gen = ctx.cfg.at("generator");
  if (spec) {
    g.spec = *spec;
  } else {
    try {
      g.spec = parse_spec({"E", "1", "1", "1", "1"}, schema, DriftCrossing::automatic, "3-1-1");
    } catch (const std::exception& e) {
      config_error(std::string("default generating spec needs a 3-level factor E: ") + e.what());
    }
  }
  const auto D = static_cast<Eigen::Index>(g.spec.dim());
  if (!gen.is_object()) config_error("generator must be an object");
  if (gen.contains("mu") && !gen.at("mu").is_null()) {
    try {
      const auto mu = gen.at("mu").get<std::vector<double>>();
      const auto sig = gen.at("Sigma").get<std::vector<std::vector<double>>>();
      if (static_cast<Eigen::Index>(mu.size()) != D || static_cast<Eigen::Index>(sig.size()) != D)
        config_error("generator mu/Sigma must have dimension " + std::to_string(D));
      g.mu = Eigen::Map<const VectorXd>(mu.data(), D);
      g.Sigma.resize(D, D);
      for (Eigen::Index i = 0; i < D; ++i) {
        if (static_cast<Eigen::Index>(sig[i].size()) != D) config_error("generator Sigma must be square");
        for (Eigen::Index k = 0; k < D; ++k) g.Sigma(i, k) = sig[i][k];
      }
    } catch (const json::exception& e) {
      config_error(std::string("generator: ") + e.what());
    }
  } else {
    const GeneratingConfig fx = forstmann_fixture();
    if (D != fx.mu.size())
      config_error("no generator mu/Sigma given and the spec does not match the 7-parameter fixture");
    g.mu = fx.mu;
    g.Sigma = fx.Sigma;
  }
  g.J = get_count(ctx.cfg, "J", 1);
  const auto plan = get<std::string>(ctx.cfg, "plan");
  try {
    if (plan == "forstmann") g.plan = forstmann_plan(*schema);
    else if (plan == "uniform") g.plan = uniform_plan(*schema, get_count(ctx.cfg, "trials", 1));
    else config_error("unknown plan '" + plan + "' (expected forstmann or uniform)");
  } catch (const CliError&) {
    throw;
  } catch (const std::exception& e) {
    config_error(e.what());
  }
  g.seed = get<std::uint64_t>(ctx.cfg, "seed");
  return g;
}

int cmd_simulate(const Context& ctx, std::ostream& out) {
  const GeneratingConfig g = generator_config(ctx);
  const fs::path dir = output_dir(ctx.cfg, "simulate");
  const GeneratedData gd = generate_dataset(g);
  write_trials_csv((dir / "data.csv").string(), gd.data);
  json truth;
  truth["schema_version"] = kSchemaVersion;
  truth["spec"] = g.spec.to_string();
  truth["parameter_names"] = g.spec.parameter_names();
  truth["mu"] = to_vec(g.mu);
  json sig = json::array();
  for (Eigen::Index i = 0; i < g.Sigma.rows(); ++i) sig.push_back(to_vec(g.Sigma.row(i).transpose()));
  truth["Sigma"] = sig;
  json alpha = json::array();
  for (Eigen::Index j = 0; j < gd.alpha.cols(); ++j) alpha.push_back(to_vec(gd.alpha.col(j)));
  truth["alpha"] = alpha;
  truth["seed"] = g.seed;
  write_json(dir / "truth.json", truth);
  out << "simulated " << gd.data.n_trials() << " trials for " << gd.data.subjects.size() << " subjects\nwrote "
      << dir.string() << "\n";
  return kOk;
}

int cmd_sensitivity(const Context& ctx, std::ostream& out) {
  const ModelFamily fam = resolve_family(ctx, false);
  SensitivityConfig sc;
  sc.gen = generator_config(ctx, fam.schema);
  sc.cv = cv_config(ctx.cfg);
  sc.replications = get_count(ctx.cfg, "replications", 1);
  sc.seed = get<std::uint64_t>(ctx.cfg, "seed");
  sc.threads = thread_count(ctx.cfg);
  const int gen_index = static_cast<int>(get_count(ctx.cfg, "generating", 0));
  if (gen_index > 0) {
    if (std::none_of(fam.members.begin(), fam.members.end(), [&](const FamilyMember& m) { return m.index == gen_index; }))
      config_error("generating model " + std::to_string(gen_index) + " is not in the screened family");
    sc.generating_index = gen_index;
  } else {
    const std::string want = sc.gen.spec.to_string();
    const auto it = std::find_if(fam.members.begin(), fam.members.end(),
                                 [&](const FamilyMember& m) { return m.spec.to_string() == want; });
    if (it == fam.members.end()) config_error("generating spec '" + want + "' is not in the screened family");
    sc.generating_index = it->index;
  }
  if (static_cast<Eigen::Index>(fam.by_index(sc.generating_index).spec.dim()) != sc.gen.mu.size())
    config_error("generator mu has the wrong dimension for model " + std::to_string(sc.generating_index));
  const fs::path dir = output_dir(ctx.cfg, "sensitivity");
  const SensitivityCurve curve = sensitivity_study(fam, sc);
  std::ofstream csv(dir / "curve.csv");
  csv << "r,f\n";
  for (std::size_t k = 0; k < curve.f.size(); ++k) csv << k + 1 << "," << curve.f[k] << "\n";
  json j;
  j["schema_version"] = kSchemaVersion;
  j["family"] = fam.kind;
  j["family_size"] = fam.members.size();
  j["generating_index"] = sc.generating_index;
  j["replications"] = curve.replications;
  j["completed"] = curve.completed;
  j["generating_rank"] = curve.generating_rank;
  j["f"] = curve.f;
  j["warnings"] = curve.warnings;
  write_json(dir / "sensitivity.json", j);
  for (const auto& w : curve.warnings) out << "warning: " << w << "\n";
  out << "generating model in top 1/3: " << (curve.f.empty() ? 0 : curve.f[0]) << "/"
      << (curve.f.size() >= 3 ? curve.f[2] : curve.f.empty() ? 0 : curve.f.back()) << " of "
      << curve.replications << "\nwrote " << dir.string() << "\n";
  return kOk;
}

int cmd_predict(const Context& ctx, std::ostream& out) {
  const auto lam_path = get<std::string>(ctx.cfg, "lambda");
  if (lam_path.empty()) config_error("predict needs --lambda (lambda.json from fit)");
  json lam;
  try {
    lam = json::parse(read_file(lam_path));
  } catch (const json::exception& e) {
    config_error(lam_path + ": " + e.what());
  }
  VariationalParams lambda;
  std::optional<ModelSpec> spec;
  try {
    lambda = lambda_from_json(lam);
    json c = ctx.cfg;
    if (get<std::string>(c, "spec").empty()) c["spec"] = lam.at("spec");
    Context cctx = ctx;
    cctx.cfg = c;
    spec = resolve_spec(cctx);
  } catch (const CliError&) {
    throw;
  } catch (const std::exception& e) {
    config_error(lam_path + ": " + e.what());
  }
  const std::size_t S = get_count(ctx.cfg, "predict_draws", 1);
  Dataset shape = load_data(ctx.cfg, ctx.schema);
  if (lambda.p() < spec->dim() * shape.subjects.size())
    config_error("lambda does not match the data (subject count or spec)");
  int cond = 0;
  const auto cname = get<std::string>(ctx.cfg, "condition");
  if (!cname.empty()) {
    cond = ctx.schema->find(cname);
    if (cond < 0 || static_cast<std::size_t>(cond) >= ctx.schema->n_trial_factors())
      config_error("condition '" + cname + "' is not a trial factor");
  }
  const fs::path dir = output_dir(ctx.cfg, "predict");
  Rng rng(get<std::uint64_t>(ctx.cfg, "seed"));
  const PredictiveResult pr = posterior_predictive(lambda, *spec, shape, S, rng, cond);
  fs::create_directories(dir / "sims");
  for (std::size_t s = 0; s < pr.datasets.size(); ++s) {
    std::ostringstream name;
    name << "sim_" << std::setw(3) << std::setfill('0') << s + 1 << ".csv";
    write_trials_csv((dir / "sims" / name.str()).string(), pr.datasets[s]);
  }
  std::ofstream sum(dir / "summary.csv");
  sum << "condition,outcome,n,proportion,mean_rt,q10,q30,q50,q70,q90,bandwidth\n" << std::setprecision(10);
  for (const auto& r : pr.summary.rows) {
    sum << r.condition << "," << r.outcome << "," << r.n << "," << r.proportion << "," << r.mean_rt;
    for (double q : r.quantiles) sum << "," << q;
    sum << "," << r.bandwidth << "\n";
  }
  std::ofstream dens(dir / "density.csv");
  dens << "condition,outcome,rt,density\n" << std::setprecision(10);
  for (const auto& d : pr.summary.density) dens << d.condition << "," << d.outcome << "," << d.rt << "," << d.density << "\n";
  out << "simulated " << pr.datasets.size() << " predictive datasets\nwrote " << dir.string() << "\n";
  return kOk;
}

}  // namespace

json default_config() {
  return json{
      {"data", ""},
      {"model_file", ""},
      {"design", "forstmann"},
      {"spec", ""},
      {"family", ""},
      {"models", json::array()},
      {"method", "hybrid"},
      {"r", 20},
      {"cv_r", 15},
      {"N", 10},
      {"max_iters", 5000},
      {"window", 200},
      {"patience", 200},
      {"K", 5},
      {"S", 100},
      {"warm_start", true},
      {"seed", 1},
      {"output", ""},
      {"threads", 0},
      {"J", 19},
      {"plan", "forstmann"},
      {"trials", 1000},
      {"replications", 20},
      {"generating", 0},
      {"lambda", ""},
      {"predict_draws", 100},
      {"condition", ""},
      {"generator", {{"mu", nullptr}, {"Sigma", nullptr}}},
  };
}

std::string spec_hash(const std::string& spec_string) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : spec_string) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return std::string(buf, 8);
}

std::string model_dir_name(int index, const std::string& spec_string) {
  std::ostringstream os;
  os << std::setw(3) << std::setfill('0') << index << "_" << spec_hash(spec_string);
  return os.str();
}

std::array<std::string, kNumClasses> parse_spec_string(const std::string& text) {
  std::array<std::string, kNumClasses> f{"1", "1", "1", "1", "1"};
  std::array<bool, kNumClasses> seen{};
  std::stringstream ss(text);
  std::string item;
  auto trim = [](std::string s) {
    const auto b = s.find_first_not_of(" \t");
    const auto e = s.find_last_not_of(" \t");
    return b == std::string::npos ? std::string() : s.substr(b, e - b + 1);
  };
  while (std::getline(ss, item, ',')) {
    item = trim(item);
    if (item.empty()) continue;
    const auto tilde = item.find('~');
    if (tilde == std::string::npos) throw ParseError("expected 'class~formula', got '" + item + "'", 0);
    const std::string cls = trim(item.substr(0, tilde));
    int k = -1;
    for (int i = 0; i < kNumClasses; ++i) {
      if (class_name(static_cast<ParamClass>(i)) == cls) k = i;
    }
    if (k < 0) throw ParseError("unknown parameter class '" + cls + "'", 0);
    if (seen[k]) throw ParseError("class '" + cls + "' given twice", 0);
    seen[k] = true;
    f[k] = trim(item.substr(tilde + 1));
  }
  return f;
}

json lambda_to_json(const VariationalParams& lambda) {
  return json{{"p", lambda.p()}, {"r", lambda.r()}, {"flat", to_vec(lambda.flat())}};
}

VariationalParams lambda_from_json(const json& j) {
  VariationalParams lam(j.at("p").get<std::size_t>(), j.at("r").get<std::size_t>());
  const auto flat = j.at("flat").get<std::vector<double>>();
  if (flat.size() != lam.size()) throw std::invalid_argument("lambda: flat vector has the wrong length");
  lam.flat() = Eigen::Map<const VectorXd>(flat.data(), static_cast<Eigen::Index>(flat.size()));
  return lam;
}

json report_to_json(const ELPDReport& rep) {
  json folds = json::array();
  for (const auto& f : rep.folds) {
    folds.push_back({{"ok", f.ok}, {"error", f.error}, {"score", f.score}, {"mc_se", f.mc_se},
                     {"iterations", f.iterations}, {"converged", f.converged}, {"best_ma", f.best_ma},
                     {"seconds", f.seconds}});
  }
  json j{{"schema_version", kSchemaVersion}, {"model_index", rep.model_index}, {"label", rep.label},
         {"spec", rep.spec_string}, {"S", rep.S}, {"ok", rep.ok}, {"folds", folds}};
  j["elpd"] = rep.ok ? json(rep.elpd) : json(nullptr);
  j["mc_se"] = rep.ok ? json(rep.mc_se) : json(nullptr);
  return j;
}

ELPDReport report_from_json(const json& j) {
  ELPDReport rep;
  rep.model_index = j.at("model_index").get<int>();
  rep.label = j.at("label").get<std::string>();
  rep.spec_string = j.at("spec").get<std::string>();
  rep.S = j.at("S").get<std::size_t>();
  rep.ok = j.at("ok").get<bool>();
  rep.elpd = j.at("elpd").is_null() ? std::nan("") : j.at("elpd").get<double>();
  rep.mc_se = j.at("mc_se").is_null() ? std::nan("") : j.at("mc_se").get<double>();
  for (const auto& f : j.at("folds")) {
    FoldResult fr;
    fr.ok = f.at("ok").get<bool>();
    fr.error = f.at("error").get<std::string>();
    fr.score = f.at("score").get<double>();
    fr.mc_se = f.at("mc_se").get<double>();
    fr.iterations = f.at("iterations").get<int>();
    fr.converged = f.at("converged").get<bool>();
    fr.best_ma = f.at("best_ma").get<double>();
    fr.seconds = f.at("seconds").get<double>();
    rep.folds.push_back(fr);
  }
  return rep;
}

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Hierarchical LBA inference with variational Bayes and K-fold CVVB model screening", "lbavb"};
  app.require_subcommand(0, 1);
  bool print_config_flag = false;
  app.add_flag("--print-config", print_config_flag, "print the effective configuration and exit");

  const json defaults = default_config();
  std::map<std::string, std::string> values;
  std::vector<std::pair<std::string, CLI::Option*>> bound;
  std::string config_path;
  bool resume = false;

  auto add_common = [&](CLI::App* sub) {
    sub->add_option("--config", config_path, "JSON config file; flags override it");
    for (const auto& f : kFlags) bound.emplace_back(f.key, sub->add_option(f.flag, values[f.key], f.help));
  };
  const std::pair<const char*, const char*> commands[] = {
      {"fit", "fit one model to a dataset"},
      {"cv", "rank a model family by K-fold cross-validated ELPD"},
      {"simulate", "simulate a hierarchical dataset"},
      {"sensitivity", "repeat simulate + cv and tally the generating model's rank"},
      {"predict", "posterior predictive datasets and summaries from a fitted lambda"},
      {"print-config", "print the effective configuration"},
  };
  std::map<std::string, CLI::App*> subs;
  for (const auto& [name, help] : commands) {
    CLI::App* sub = app.add_subcommand(name, help);
    add_common(sub);
    subs[name] = sub;
  }
  subs["cv"]->add_flag("--resume", resume, "reuse finished per-model reports in the output directory");
  subs["sensitivity"]->add_flag("--resume", resume, "accepted for symmetry; has no effect");

  std::vector<std::string> rev(args.rbegin(), args.rend());
  try {
    app.parse(rev);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return kOk;
  } catch (const CLI::CallForAllHelp&) {
    out << app.help("", CLI::AppFormatMode::All);
    return kOk;
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << "\n";
    return kConfigError;
  }
  std::string command;
  for (const auto& [name, sub] : subs) {
    if (sub->parsed()) command = name;
  }
  if (print_config_flag) command = "print-config";
  if (command.empty()) {
    out << app.help();
    return kConfigError;
  }

  try {
    json cfg = defaults;
    if (!config_path.empty()) {
      json file;
      try {
        file = json::parse(read_file(config_path));
      } catch (const json::exception& e) {
        config_error(config_path + ": " + e.what());
      }
      validate_keys(file, defaults);
      cfg.merge_patch(file);
      // merge_patch drops null members; keep the generator keys present.
      for (const auto& k : {"mu", "Sigma"}) {
        if (!cfg["generator"].contains(k)) cfg["generator"][k] = nullptr;
      }
    }
    for (const auto& [key, opt] : bound) {
      if (opt->count() > 0) cfg[key] = parse_scalar(defaults.at(key), key, values[key]);
    }
    if (command == "print-config") {
      out << std::setw(2) << cfg << "\n";
      return kOk;
    }
    const Context ctx = make_context(cfg);
    if (command == "fit") return cmd_fit(ctx, out);
    if (command == "cv") return cmd_cv(ctx, out, resume);
    if (command == "simulate") return cmd_simulate(ctx, out);
    if (command == "sensitivity") return cmd_sensitivity(ctx, out);
    if (command == "predict") return cmd_predict(ctx, out);
    return kOther;
  } catch (const CliError& e) {
    err << "error: " << e.what() << "\n";
    return e.code;
  } catch (const DataError& e) {
    err << "data error: " << e.what() << "\n";
    return kDataError;
  } catch (const VbDivergence& e) {
    err << "divergence: " << e.what() << "\n";
    return kDivergence;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kOther;
  }
}

}  // namespace lbavb::cli
