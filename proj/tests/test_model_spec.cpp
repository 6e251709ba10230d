#include <doctest.h>

#include <random>
#include <set>
#include <string>

#include "lbavb/model_spec.hpp"

using namespace lbavb;

namespace {

ModelSpec forstmann(const std::string& c, const std::string& v, const std::string& tau) {
  return parse_spec({c, "1", v, "1", tau}, forstmann_schema());
}

std::set<int> factor_set(const ModelSpec& s, ParamClass k) {
  const auto& f = s.formula(k).factors;
  return {f.begin(), f.end()};
}

}  // namespace

TEST_CASE("parameter counts") {
  CHECK(forstmann("E", "1", "1").dim() == 7);
  CHECK(forstmann("E", "E", "E").dim() == 13);
  CHECK(forstmann("1", "1", "1").dim() == 5);
}

TEST_CASE("parse errors name the offending factor") {
  try {
    forstmann("Q", "1", "1");
    FAIL("expected a parse error");
  } catch (const ParseError& e) {
    CHECK(std::string(e.what()).find("\"Q\"") != std::string::npos);
  }
  CHECK_THROWS_AS(forstmann("", "1", "1"), ParseError);
  CHECK_THROWS_AS(forstmann("E*E", "1", "1"), ParseError);
  CHECK_THROWS_AS(forstmann("E*", "1", "1"), ParseError);
}

TEST_CASE("every parameter index is reached by some cell") {
  const auto f27 = enumerate_family("forstmann27", forstmann_schema());
  for (const auto& spec : {forstmann("E", "1", "1"), forstmann("E", "E", "E"), f27.find_label("2-2-1")->spec}) {
    std::set<int> seen;
    const auto& sc = spec.schema();
    for (std::uint32_t cell = 0; cell < sc.n_cells(); ++cell) {
      for (std::size_t a = 0; a < sc.n_accumulators(); ++a) {
        for (int k = 0; k < kNumClasses; ++k) {
          if (spec.index(cell, a)[k] >= 0) seen.insert(spec.index(cell, a)[k]);
        }
      }
    }
    CHECK(seen.size() == spec.dim());
  }
}

TEST_CASE("map_effects at zero") {
  const ModelSpec s = forstmann("E", "1", "1");
  const std::vector<double> alpha(7, 0.0);
  for (std::uint32_t cell = 0; cell < s.schema().n_cells(); ++cell) {
    for (const auto& p : map_effects(s, alpha, cell)) {
      CHECK(p.b == 2.0);
      CHECK(p.A == 1.0);
      CHECK(p.v == 1.0);
      CHECK(p.s == 1.0);
      CHECK(p.tau == 1.0);
    }
  }
}

TEST_CASE("threshold follows the emphasis condition") {
  const ModelSpec s = forstmann("E", "1", "1");
  const auto& sc = s.schema();
  // alpha order: c[acc], c[neu], c[spd], A, v[correct], v[error], tau
  const std::vector<double> alpha{std::log(0.8), std::log(0.6), std::log(0.3), std::log(0.5),
                                  std::log(3.0), std::log(1.0), std::log(0.2)};
  const std::array<int, 2> acc_left{0, 0}, spd_right{2, 1};
  const auto acc = map_effects(s, alpha, sc.encode_cell(acc_left));
  const auto spd = map_effects(s, alpha, sc.encode_cell(spd_right));
  CHECK(acc[0].b == doctest::Approx(1.3));
  CHECK(spd[1].b == doctest::Approx(0.8));
  CHECK(acc[0].A == spd[0].A);
  CHECK(acc[0].tau == spd[1].tau);
  // Correct accumulator gets v[correct]: left on a left-stimulus trial, right on a right one.
  CHECK(acc[0].v == doctest::Approx(3.0));
  CHECK(acc[1].v == doctest::Approx(1.0));
  CHECK(spd[1].v == doctest::Approx(3.0));
  CHECK(spd[0].v == doctest::Approx(1.0));
}

TEST_CASE("b exceeds A for random effects") {
  const ModelSpec s = forstmann("E", "E", "E");
  std::mt19937_64 rng(2);
  std::normal_distribution<double> n(0.0, 2.0);
  for (int i = 0; i < 200; ++i) {
    std::vector<double> alpha(s.dim());
    for (auto& x : alpha) x = n(rng);
    for (std::uint32_t cell = 0; cell < s.schema().n_cells(); ++cell) {
      for (const auto& p : map_effects(s, alpha, cell)) CHECK(p.b > p.A);
    }
  }
  CHECK_THROWS(map_effects(s, std::vector<double>(3, 0.0), 0));
}

TEST_CASE("free s pins its first cell") {
  const auto fam = enumerate_family("rae16", rae_schema());
  const ModelSpec& m1 = fam.by_index(1).spec;
  // s ~ M: the correct cell is pinned to 1, the error cell is free.
  CHECK(m1.dim() == 2 + 1 + 4 + 1 + 1);
  std::vector<double> alpha(m1.dim(), 0.5);
  const auto& sc = m1.schema();
  bool saw_pinned = false;
  for (std::uint32_t cell = 0; cell < sc.n_cells(); ++cell) {
    const auto ps = map_effects(m1, alpha, cell);
    const int correct = sc.correct_accumulator(cell);
    CHECK(ps[correct].s == 1.0);
    CHECK(ps[1 - correct].s == doctest::Approx(std::exp(0.5)));
    saw_pinned = true;
  }
  CHECK(saw_pinned);
}

TEST_CASE("family sizes and anchors") {
  const auto f27 = enumerate_family("forstmann27", forstmann_schema());
  const auto f16 = enumerate_family("rae16", rae_schema());
  const auto f256 = enumerate_family("wagenmakers256", wagenmakers_schema());
  CHECK(f27.members.size() == 27);
  CHECK(f16.members.size() == 16);
  CHECK(f256.members.size() == 256);
  REQUIRE(f27.find_label("3-1-1") != nullptr);
  REQUIRE(f27.find_label("1-1-1") != nullptr);
  CHECK(f27.find_label("3-1-1")->spec.dim() == 7);
  CHECK(f27.find_label("1-1-1")->spec.dim() == 5);
  CHECK_THROWS(enumerate_family("nope", forstmann_schema()));

  for (const auto* fam : {&f27, &f16, &f256}) {
    std::set<std::string> s;
    for (const auto& m : fam->members) s.insert(m.spec.to_string());
    CHECK(s.size() == fam->members.size());
  }
}

TEST_CASE("forstmann27 neighbours differ in one class count") {
  const auto f27 = enumerate_family("forstmann27", forstmann_schema());
  for (std::size_t i = 1; i < f27.members.size(); ++i) {
    const auto& a = f27.members[i - 1].label;
    const auto& b = f27.members[i].label;
    int diff = 0;
    for (std::size_t k : {0, 2, 4}) diff += std::abs(a[k] - b[k]);
    CHECK(diff == 1);
  }
}

TEST_CASE("rae16 rows") {
  const auto f16 = enumerate_family("rae16", rae_schema());
  const auto& sc = *f16.schema;
  const int E = sc.find("E"), R = sc.response_factor(), S = sc.find("S"), M = sc.find("M");
  const auto& m1 = f16.by_index(1).spec;
  CHECK(factor_set(m1, ParamClass::c) == std::set<int>{R});
  CHECK(factor_set(m1, ParamClass::A).empty());
  CHECK(factor_set(m1, ParamClass::v) == std::set<int>{S, M});
  CHECK(factor_set(m1, ParamClass::s) == std::set<int>{M});
  CHECK(factor_set(m1, ParamClass::tau).empty());
  const auto& m16 = f16.by_index(16).spec;
  CHECK(factor_set(m16, ParamClass::c) == std::set<int>{E, R});
  CHECK(factor_set(m16, ParamClass::A) == std::set<int>{E});
  CHECK(factor_set(m16, ParamClass::v) == std::set<int>{E, S, M});
  CHECK(factor_set(m16, ParamClass::tau) == std::set<int>{E});
}

TEST_CASE("wagenmakers256 rows listed in the lexical-decision table") {
  const auto f = enumerate_family("wagenmakers256", wagenmakers_schema());
  const auto& sc = *f.schema;
  const int C = sc.find("C"), E = sc.find("E"), W = sc.find("W");
  struct Row {
    int index;
    std::set<int> c, A, v, tau;
  };
  const Row rows[] = {
      {252, {C}, {C, E}, {C, W, E}, {E}},
      {236, {C}, {C}, {C, W, E}, {E}},
      {240, {C, E}, {C}, {C, W, E}, {E}},
      {239, {C, E}, {C}, {C, W, E}, {}},
      {255, {C, E}, {C, E}, {C, W, E}, {}},
      {248, {C, E}, {E}, {C, W, E}, {E}},
      {232, {C, E}, {}, {C, W, E}, {E}},
      {184, {C, E}, {E}, {C, W}, {E}},
      {191, {C, E}, {C, E}, {C, W}, {}},
  };
  for (const auto& r : rows) {
    const auto& s = f.by_index(r.index).spec;
    CAPTURE(r.index);
    CHECK(factor_set(s, ParamClass::c) == r.c);
    CHECK(factor_set(s, ParamClass::A) == r.A);
    CHECK(factor_set(s, ParamClass::v) == r.v);
    CHECK(factor_set(s, ParamClass::tau) == r.tau);
    CHECK(factor_set(s, ParamClass::s).empty());
  }
  const auto& last = f.by_index(256).spec;
  CHECK(factor_set(last, ParamClass::v) == std::set<int>{C, W, E});
  CHECK(factor_set(last, ParamClass::tau) == std::set<int>{E});
}

TEST_CASE("model file grammar") {
  const char* text = R"(# lexical decision
accumulators = word, nonword
factor E = accuracy, speed
factor W = hf, lf, vlf, nw
match C = W : word, word, word, nonword
group E1 = E : accuracy+speed
drift_crossing = none
label = demo
c ~ C*E
A ~ 1
v ~ C*W
tau ~ E
)";
  const ModelFile mf = parse_model_file(text);
  CHECK(mf.has_formulas);
  CHECK_FALSE(mf.has_axes);
  CHECK(mf.crossing == DriftCrossing::none);
  CHECK(mf.label == "demo");
  const ModelSpec s = parse_spec(mf.formulas, mf.schema, mf.crossing);
  CHECK(s.dim() == 4 + 1 + 8 + 2);

  const ModelFile axes = parse_model_file("accumulators = a, b\nfactor E = x, y, z\nmatch C = E : a, b, a\nc ~ 1 | E\ntau ~ 1 | E\n");
  CHECK(axes.has_axes);
  CHECK(enumerate_product(axes.axes, axes.schema).members.size() == 4);

  try {
    parse_model_file("accumulators = a, b\nfactor E = x, y\nc ~ Q\n");
    FAIL("expected a parse error");
  } catch (const ParseError& e) {
    CHECK(std::string(e.what()).find("Q") != std::string::npos);
    CHECK(e.position() == 3);
  }
  CHECK_THROWS_AS(parse_model_file("factor E = x, y\n"), ParseError);
  CHECK_THROWS_AS(parse_model_file("accumulators = a, b\nbogus\n"), ParseError);
}

TEST_CASE("cell encoding round trip") {
  const auto sc = wagenmakers_schema();
  for (std::uint32_t cell = 0; cell < sc->n_cells(); ++cell) {
    const auto lv = sc->decode_cell(cell);
    CHECK(sc->encode_cell(lv) == cell);
  }
  CHECK(sc->n_cells() == 8);
}
