#include <doctest.h>

#include <chrono>
#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "cli.hpp"
#include "lbavb/csv_io.hpp"
#include "lbavb/model_spec.hpp"
#include "lbavb/sim_study.hpp"

using namespace lbavb;
namespace fs = std::filesystem;
using json = nlohmann::json;

namespace {

struct TempDir {
  fs::path path;
  TempDir() {
    static int counter = 0;
    const auto stamp = std::chrono::steady_clock::now().time_since_epoch().count();
    path = fs::temp_directory_path() / ("lbavb_cli_" + std::to_string(stamp) + "_" + std::to_string(counter++));
    fs::create_directories(path);
  }
  ~TempDir() {
    std::error_code ec;
    fs::remove_all(path, ec);
  }
  std::string operator/(const std::string& name) const { return (path / name).string(); }
};

struct RunResult {
  int code;
  std::string out, err;
};

RunResult run(std::vector<std::string> args) {
  std::ostringstream out, err;
  const int code = cli::run(args, out, err);
  return {code, out.str(), err.str()};
}

json read_json(const std::string& path) {
  std::ifstream in(path);
  return json::parse(in);
}

std::vector<std::string> read_lines(const std::string& path) {
  std::ifstream in(path);
  std::vector<std::string> lines;
  for (std::string l; std::getline(in, l);) lines.push_back(l);
  return lines;
}

std::vector<std::string> split(const std::string& s) {
  std::vector<std::string> out;
  std::stringstream ss(s);
  for (std::string x; std::getline(ss, x, ',');) out.push_back(x);
  return out;
}

// Small simulated dataset written with the default 3-1-1 generator.
std::string small_data(const TempDir& dir, std::size_t J = 2, std::size_t trials = 60) {
  const auto out = dir / "sim";
  const RunResult r = run({"simulate", "--subjects", std::to_string(J), "--plan", "uniform", "--trials",
                           std::to_string(trials), "--seed", "3", "--out", out});
  REQUIRE(r.code == 0);
  return out + "/data.csv";
}

const std::vector<std::string> kQuick{"--max-iters", "30", "--window", "5", "--patience", "5", "--factors", "3",
                                      "--cv-factors", "2", "--samples", "4"};

std::vector<std::string> with_quick(std::vector<std::string> a) {
  a.insert(a.end(), kQuick.begin(), kQuick.end());
  return a;
}

}  // namespace

TEST_CASE("CSV ingest") {
  const auto sc = forstmann_schema();
  std::istringstream two("subject,E,S,response,rt\ns1,speed,left,left,0.41\ns1,accuracy,right,left,0.62\n");
  const Dataset d = read_trials_csv(two, sc);
  CHECK(d.subjects.size() == 1);
  CHECK(d.n_trials() == 2);

  std::istringstream bad("subject,E,S,response,rt\ns1,speed,left,left,0.41\ns1,speed,left,left,-0.1\n");
  try {
    read_trials_csv(bad, sc);
    FAIL("expected a data error");
  } catch (const DataError& e) {
    CHECK(e.line() == 3);
    CHECK(std::string(e.what()).find("line 3") != std::string::npos);
  }
  std::istringstream level("subject,E,S,response,rt\ns1,fast,left,left,0.41\n");
  CHECK_THROWS_AS(read_trials_csv(level, sc), DataError);
  std::istringstream header("subject,E,response,rt\n");
  CHECK_THROWS_AS(read_trials_csv(header, sc), DataError);

  GeneratingConfig gen = forstmann_fixture(3);
  gen.plan = uniform_plan(*sc, 12);
  const Dataset orig = generate_dataset(gen).data;
  std::stringstream buf;
  write_trials_csv(buf, orig);
  const Dataset back = read_trials_csv(buf, sc);
  REQUIRE(back.subjects.size() == 3);
  for (std::size_t j = 0; j < 3; ++j) {
    CHECK(back.subjects[j].id == orig.subjects[j].id);
    for (std::size_t i = 0; i < 12; ++i) {
      CHECK(back.subjects[j].trials[i].cell == orig.subjects[j].trials[i].cell);
      CHECK(back.subjects[j].trials[i].choice == orig.subjects[j].trials[i].choice);
      CHECK(back.subjects[j].trials[i].rt == orig.subjects[j].trials[i].rt);
    }
  }
}

TEST_CASE("spec strings and model directories") {
  const auto f = cli::parse_spec_string("c~E, tau~E");
  CHECK(f == std::array<std::string, 5>{"E", "1", "1", "1", "E"});
  CHECK_THROWS(cli::parse_spec_string("q~E"));
  CHECK(cli::spec_hash("abc") == cli::spec_hash("abc"));
  CHECK(cli::spec_hash("abc") != cli::spec_hash("abd"));
  CHECK(cli::spec_hash("abc").size() == 8);
  CHECK(cli::model_dir_name(7, "abc") == "007_" + cli::spec_hash("abc"));
}

TEST_CASE("simulate with the default plan") {
  TempDir t;
  const RunResult r = run({"simulate", "--out", t / "s"});
  REQUIRE(r.code == 0);
  CHECK(read_lines(t / "s/data.csv").size() == 19000 + 1);
  const json truth = read_json(t / "s/truth.json");
  CHECK(truth["schema_version"] == cli::kSchemaVersion);
  CHECK(truth["alpha"].size() == 19);
  CHECK(truth["mu"].size() == 7);
}

TEST_CASE("fit, summary and predict") {
  TempDir t;
  const std::string data = small_data(t);
  const RunResult r = run(with_quick({"fit", "--data", data, "--spec", "c~E", "--out", t / "fit"}));
  REQUIRE_MESSAGE(r.code == 0, r.err);
  const json lam = read_json(t / "fit/lambda.json");
  const json sum = read_json(t / "fit/summary.json");
  CHECK(lam["schema_version"] == cli::kSchemaVersion);
  CHECK(sum["schema_version"] == cli::kSchemaVersion);
  const VariationalParams l = cli::lambda_from_json(lam);
  CHECK(l.r() == 3);
  const VectorXd sd = (l.B().rowwise().squaredNorm().array() + l.d().array().square()).sqrt();
  const auto mean = sum["group_mean"]["mean"].get<std::vector<double>>();
  const auto gsd = sum["group_mean"]["sd"].get<std::vector<double>>();
  REQUIRE(mean.size() == 7);
  // Hybrid layout: [alpha_1, alpha_2, mu, log a].
  for (int d = 0; d < 7; ++d) {
    CHECK(mean[d] == l.mu()[14 + d]);
    CHECK(std::abs(gsd[d] - sd[14 + d]) < 1e-12);
  }
  const auto s2 = sum["subjects"][1]["sd"].get<std::vector<double>>();
  for (int d = 0; d < 7; ++d) CHECK(std::abs(s2[d] - sd[7 + d]) < 1e-12);
  CHECK(read_lines(t / "fit/trace.csv").size() == sum["iterations"].get<std::size_t>() + 1);

  const RunResult p = run({"predict", "--data", data, "--lambda", t / "fit/lambda.json", "--predict-draws", "2",
                           "--out", t / "pred"});
  REQUIRE_MESSAGE(p.code == 0, p.err);
  CHECK(fs::exists(t / "pred/sims/sim_001.csv"));
  CHECK(fs::exists(t / "pred/sims/sim_002.csv"));
  CHECK_FALSE(fs::exists(t / "pred/sims/sim_003.csv"));
  CHECK(read_lines(t / "pred/sims/sim_002.csv").size() == 121);
  const auto rows = read_lines(t / "pred/summary.csv");
  CHECK(rows.size() == 1 + 3 * 2);
  CHECK(fs::exists(t / "pred/density.csv"));
}

TEST_CASE("cv ranking, resume and sensitivity") {
  TempDir t;
  const std::string data = small_data(t);
  const auto fam = enumerate_family("forstmann27", forstmann_schema());
  const int gen_idx = fam.find_label("3-1-1")->index;
  const int other = gen_idx == 1 ? 2 : 1;
  {
    std::ofstream cfg(t / "cfg.json");
    cfg << json{{"family", "forstmann27"}, {"models", {other, gen_idx}}, {"K", 2}, {"S", 10}, {"threads", 1}}.dump();
  }
  const auto cv_args = with_quick({"cv", "--config", t / "cfg.json", "--data", data, "--out", t / "cv"});
  const RunResult r = run(cv_args);
  REQUIRE_MESSAGE(r.code == 0, r.err);
  const auto lines = read_lines(t / "cv/ranking.csv");
  REQUIRE(lines.size() == 3);
  CHECK(lines[0] == "rank,model_index,label,spec,elpd,mc_se,ok");
  const double e1 = std::stod(split(lines[1])[split(lines[1]).size() - 3]);
  const double e2 = std::stod(split(lines[2])[split(lines[2]).size() - 3]);
  CHECK(e1 >= e2);
  const json rk = read_json(t / "cv/ranking.json");
  CHECK(rk["schema_version"] == cli::kSchemaVersion);
  CHECK(rk["ranking"][0]["elpd"].get<double>() == e1);
  CHECK(rk["best"][0] == std::stoi(split(lines[1])[1]));

  // Resuming reuses every per-model report and reproduces the ranking.
  auto resumed = cv_args;
  resumed.push_back("--resume");
  const RunResult again = run(resumed);
  REQUIRE(again.code == 0);
  CHECK(again.out.find("model ") == std::string::npos);
  CHECK(read_lines(t / "cv/ranking.csv") == lines);

  const RunResult s = run(with_quick({"sensitivity", "--config", t / "cfg.json", "--replications", "2", "--subjects",
                                      "2", "--plan", "uniform", "--trials", "60", "--generating",
                                      std::to_string(gen_idx), "--out", t / "sens"}));
  REQUIRE_MESSAGE(s.code == 0, s.err);
  const auto curve = read_lines(t / "sens/curve.csv");
  REQUIRE(curve.size() == 3);
  const int f1 = std::stoi(split(curve[1])[1]), f2 = std::stoi(split(curve[2])[1]);
  CHECK(f1 <= f2);
  CHECK(f2 == 2);
  CHECK(read_json(t / "sens/sensitivity.json")["schema_version"] == cli::kSchemaVersion);
}

TEST_CASE("configuration and exit codes") {
  TempDir t;
  RunResult r = run({"print-config", "--factors", "7"});
  REQUIRE(r.code == 0);
  json cfg = json::parse(r.out);
  CHECK(cfg["r"] == 7);
  CHECK(cfg["cv_r"] == 15);
  CHECK(cfg["method"] == "hybrid");

  CHECK(run({"fit", "--bogus"}).code == cli::kConfigError);
  CHECK(run({"fit", "--max-iters", "ten"}).code == cli::kConfigError);
  CHECK(run({"fit", "--method", "mcmc", "--data", "x.csv"}).code == cli::kConfigError);
  CHECK(run({"--help"}).code == cli::kOk);
  CHECK(run({}).code == cli::kConfigError);
  {
    std::ofstream bad(t / "bad.json");
    bad << R"({"not_a_key": 1})";
  }
  r = run({"fit", "--config", t / "bad.json"});
  CHECK(r.code == cli::kConfigError);
  CHECK(r.err.find("not_a_key") != std::string::npos);

  CHECK(run({"fit", "--spec", "c~E", "--data", t / "missing.csv"}).code == cli::kDataError);
  {
    std::ofstream csv(t / "neg.csv");
    csv << "subject,E,S,response,rt\ns1,speed,left,left,0.4\ns1,speed,left,left,-0.1\n";
  }
  r = run({"fit", "--spec", "c~E", "--data", t / "neg.csv", "--out", t / "o"});
  CHECK(r.code == cli::kDataError);
  CHECK(r.err.find("line 3") != std::string::npos);
  CHECK(run({"fit", "--spec", "c~Q", "--data", t / "neg.csv"}).code == cli::kConfigError);
}

TEST_CASE("output root from the environment") {
  TempDir t;
  ::setenv(cli::kOutputRootEnv, t.path.c_str(), 1);
  const RunResult r = run({"simulate", "--subjects", "1", "--plan", "uniform", "--trials", "6"});
  ::unsetenv(cli::kOutputRootEnv);
  REQUIRE(r.code == 0);
  CHECK(fs::exists(t / "simulate/data.csv"));
}
