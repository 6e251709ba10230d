#include <sstream>
#include <stdexcept>

#include <pybind11/eigen.h>
#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include "cli.hpp"
#include "lbavb/csv_io.hpp"
#include "lbavb/cvvb.hpp"
#include "lbavb/hier_fit.hpp"
#include "lbavb/lba.hpp"
#include "lbavb/random.hpp"
#include "lbavb/sim_study.hpp"

namespace py = pybind11;
using namespace lbavb;

namespace {

std::shared_ptr<const FactorSchema> design_schema(const std::string& design) {
  if (design == "forstmann") return forstmann_schema();
  if (design == "rae") return rae_schema();
  if (design == "wagenmakers") return wagenmakers_schema();
  throw py::value_error("unknown design '" + design + "' (forstmann, rae, wagenmakers)");
}

ModelSpec spec_from_string(const std::string& spec, const std::shared_ptr<const FactorSchema>& schema) {
  return parse_spec(cli::parse_spec_string(spec), schema);
}

py::dict fit_to_dict(const FitResult& fit, std::size_t D) {
  const auto& l = fit.vb.lambda;
  const auto mu_off = static_cast<Eigen::Index>(fit.layout.mu());
  const auto d = static_cast<Eigen::Index>(D);
  py::dict out;
  out["method"] = std::string(method_name(fit.method));
  out["mu"] = VectorXd(l.mu());
  out["B"] = MatrixXd(l.B());
  out["d"] = VectorXd(l.d());
  out["group_mean"] = VectorXd(l.mu().segment(mu_off, d));
  out["group_sd"] = VectorXd(l.marginal_sd().segment(mu_off, d));
  out["lb_trace"] = fit.vb.lb_trace;
  out["ma_trace"] = fit.vb.ma_trace;
  out["iterations"] = fit.vb.iterations;
  out["converged"] = fit.vb.converged;
  out["best_moving_average"] = fit.vb.best_ma;
  out["floored_trials"] = fit.vb.floored_trials;
  return out;
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "Hierarchical LBA with variational Bayes and cross-validated model screening";

  py::register_exception<DataError>(m, "DataError", PyExc_ValueError);
  py::register_exception<ParseError>(m, "ParseError", PyExc_ValueError);
  py::register_exception<VbDivergence>(m, "VbDivergence", PyExc_RuntimeError);

  m.def(
      "lba_pdf",
      [](double b, double A, double v, double s, double tau, py::array_t<double> t) {
        const AccumulatorParams p{b, A, v, s, tau};
        return py::vectorize([p](double x) { return lba_pdf(p, x - p.tau); })(std::move(t));
      },
      py::arg("b"), py::arg("A"), py::arg("v"), py::arg("s") = 1.0, py::arg("tau") = 0.0, py::arg("t"),
      "Single-accumulator finishing-time density at response time t (decision time t - tau).");
  m.def(
      "lba_cdf",
      [](double b, double A, double v, double s, double tau, py::array_t<double> t) {
        const AccumulatorParams p{b, A, v, s, tau};
        return py::vectorize([p](double x) { return lba_cdf(p, x - p.tau); })(std::move(t));
      },
      py::arg("b"), py::arg("A"), py::arg("v"), py::arg("s") = 1.0, py::arg("tau") = 0.0, py::arg("t"));

  py::class_<Dataset>(m, "Dataset")
      .def_property_readonly("n_subjects", [](const Dataset& d) { return d.subjects.size(); })
      .def_property_readonly("n_trials", &Dataset::n_trials)
      .def_property_readonly("subject_ids",
                             [](const Dataset& d) {
                               std::vector<std::string> ids;
                               for (const auto& s : d.subjects) ids.push_back(s.id);
                               return ids;
                             })
      .def("to_arrays",
           [](const Dataset& d) {
             std::vector<int> subject;
             std::vector<std::uint32_t> cell, choice;
             std::vector<double> rt;
             for (std::size_t j = 0; j < d.subjects.size(); ++j) {
               for (const auto& t : d.subjects[j].trials) {
                 subject.push_back(static_cast<int>(j));
                 cell.push_back(t.cell);
                 choice.push_back(t.choice);
                 rt.push_back(t.rt);
               }
             }
             py::dict out;
             out["subject"] = py::array(py::cast(subject));
             out["cell"] = py::array(py::cast(cell));
             out["choice"] = py::array(py::cast(choice));
             out["rt"] = py::array(py::cast(rt));
             return out;
           })
      .def("to_csv", [](const Dataset& d, const std::string& path) { write_trials_csv(path, d); });

  m.def(
      "read_csv", [](const std::string& path, const std::string& design) { return ingest_csv(path, design_schema(design)); },
      py::arg("path"), py::arg("design") = "forstmann");

  m.def(
      "spec_info",
      [](const std::string& spec, const std::string& design) {
        const ModelSpec s = spec_from_string(spec, design_schema(design));
        py::dict out;
        out["spec"] = s.to_string();
        out["dim"] = s.dim();
        out["parameter_names"] = s.parameter_names();
        return out;
      },
      py::arg("spec"), py::arg("design") = "forstmann");

  m.def(
      "family",
      [](const std::string& kind, const std::string& design) {
        py::list out;
        for (const auto& mbr : enumerate_family(kind, design_schema(design)).members) {
          py::dict d;
          d["index"] = mbr.index;
          d["label"] = mbr.label;
          d["spec"] = mbr.spec.to_string();
          d["dim"] = mbr.spec.dim();
          out.append(d);
        }
        return out;
      },
      py::arg("kind"), py::arg("design") = "forstmann");

  m.def(
      "simulate_fixture",
      [](std::size_t J, std::size_t trials, std::uint64_t seed) {
        GeneratingConfig g = forstmann_fixture(J);
        if (trials > 0) g.plan = uniform_plan(g.spec.schema(), trials);
        g.seed = seed;
        GeneratedData gd = generate_dataset(g);
        return py::make_tuple(std::move(gd.data), gd.alpha);
      },
      py::arg("J") = 19, py::arg("trials") = 0, py::arg("seed") = 1,
      "Simulate the 3-1-1 fixture; trials = 0 uses the 1000-trial emphasis plan.");

  m.def(
      "fit",
      [](const Dataset& data, const std::string& spec, const std::string& method, std::size_t r, int N, int max_iters,
         int window, int patience, std::uint64_t seed) {
        const ModelSpec s = spec_from_string(spec, data.schema);
        FitConfig fc;
        fc.method = parse_method(method);
        fc.r = r;
        fc.vb.N = N;
        fc.vb.max_iters = max_iters;
        fc.vb.window = window;
        fc.vb.patience = patience;
        fc.vb.seed = seed;
        FitResult fit;
        {
          py::gil_scoped_release release;
          const LbaLikelihood lik(data, s);
          fit = fit_hierarchical(lik, fc);
        }
        return fit_to_dict(fit, s.dim());
      },
      py::arg("data"), py::arg("spec"), py::arg("method") = "hybrid", py::arg("r") = 20, py::arg("N") = 10,
      py::arg("max_iters") = 5000, py::arg("window") = 200, py::arg("patience") = 200, py::arg("seed") = 1);

  m.def(
      "screen",
      [](const Dataset& data, const std::vector<std::string>& specs, std::size_t K, std::size_t S,
         const std::string& method, std::size_t r, int max_iters, int window, int patience, std::uint64_t seed,
         std::size_t threads) {
        ModelFamily fam;
        fam.kind = "custom";
        fam.schema = data.schema;
        for (std::size_t i = 0; i < specs.size(); ++i) {
          ModelSpec s = spec_from_string(specs[i], data.schema);
          fam.members.push_back({static_cast<int>(i) + 1, s.to_string(), s});
        }
        CvConfig cv;
        cv.K = K;
        cv.S = S;
        cv.seed = seed;
        cv.fit.method = parse_method(method);
        cv.fit.r = r;
        cv.fit.vb.max_iters = max_iters;
        cv.fit.vb.window = window;
        cv.fit.vb.patience = patience;
        cv.fit.vb.seed = derive_seed(seed, 0xF17);
        ScreeningReport rep;
        {
          py::gil_scoped_release release;
          rep = screen_models(fam, data, cv, 3, threads);
        }
        py::list out;
        for (const auto& e : rep.ranking.entries) {
          const auto& r2 = rep.reports[static_cast<std::size_t>(e.model_index - 1)];
          py::dict d;
          d["rank"] = e.rank;
          d["model_index"] = e.model_index;
          d["spec"] = r2.spec_string;
          d["elpd"] = r2.elpd;
          d["mc_se"] = r2.mc_se;
          d["ok"] = e.ok;
          out.append(d);
        }
        return out;
      },
      py::arg("data"), py::arg("specs"), py::arg("K") = 5, py::arg("S") = 100, py::arg("method") = "hybrid",
      py::arg("r") = 15, py::arg("max_iters") = 5000, py::arg("window") = 200, py::arg("patience") = 200,
      py::arg("seed") = 1, py::arg("threads") = 1,
      "Rank model specs by K-fold cross-validated ELPD (best first).");

  m.def(
      "run_cli",
      [](const std::vector<std::string>& args) {
        std::ostringstream out, err;
        int code = 0;
        {
          py::gil_scoped_release release;
          code = cli::run(args, out, err);
        }
        return py::make_tuple(code, out.str(), err.str());
      },
      py::arg("args"), "Run the command-line tool in-process; returns (exit code, stdout, stderr).");
}
