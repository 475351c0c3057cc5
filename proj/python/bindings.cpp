#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <sstream>

#include "lmprior/cli/commands.hpp"
#include "lmprior/decoding/search.hpp"
#include "lmprior/errors.hpp"
#include "lmprior/evaluation/metrics.hpp"
#include "lmprior/numerics/distribution.hpp"
#include "lmprior/objectives/losses.hpp"
#include "lmprior/trainer/optim.hpp"

namespace py = pybind11;
using namespace lmprior;

namespace {

// JSON summaries cross the boundary through Python's json module.
py::object to_python(const nlohmann::json& j) { return py::module_::import("json").attr("loads")(j.dump()); }

cli::ExperimentConfig make_config(const py::dict& values) {
  cli::ExperimentConfig c;
  for (const auto& [k, v] : values) {
    std::string text;
    if (py::isinstance<py::bool_>(v))
      text = v.cast<bool>() ? "true" : "false";
    else
      text = py::str(v).cast<std::string>();
    cli::set_config_value(c, k.cast<std::string>(), text);
  }
  return c;
}

py::dict config_dict(const cli::ExperimentConfig& c) {
  py::dict d;
  for (const auto& f : cli::config_fields()) d[py::str(f.key)] = f.get(c);
  return d;
}

using Command = nlohmann::json (*)(const cli::ExperimentConfig&, std::ostream&);

py::object run_command(Command cmd, const py::dict& values) {
  const auto c = make_config(values);
  std::ostringstream log;
  nlohmann::json out;
  {
    py::gil_scoped_release release;
    out = cmd(c, log);
  }
  return to_python(out);
}

struct Loss {
  double total, mt, kl;
  std::size_t tokens;
};

Loss objective_loss(const std::string& objective, const std::vector<std::vector<double>>& tm_logits,
                    const std::vector<std::vector<double>>& lm_logits, const std::vector<int>& gold, double lambda,
                    double tau, double alpha) {
  if (tm_logits.empty() || tm_logits.size() != gold.size()) throw InvalidInput("need one gold id per logit row");
  const std::size_t rows = tm_logits.size(), k = tm_logits[0].size();
  auto flatten = [&](const std::vector<std::vector<double>>& m) {
    std::vector<double> flat;
    for (const auto& r : m) {
      if (r.size() != k) throw InvalidInput("ragged logits");
      flat.insert(flat.end(), r.begin(), r.end());
    }
    return numerics::Tensor<double>({m.size(), k}, flat);
  };
  objectives::ObjectiveConfig cfg;
  cfg.objective = objectives::parse_objective(objective);
  cfg.lambda = lambda;
  cfg.tau = tau;
  cfg.alpha = alpha;
  cfg.validate();
  const auto tm = numerics::Var<double>::constant(flatten(tm_logits));
  std::optional<numerics::Tensor<double>> lm;
  if (!lm_logits.empty()) {
    if (lm_logits.size() != rows) throw InvalidInput("LM and TM logits differ in rows");
    lm = flatten(lm_logits);
  }
  const std::vector<std::uint8_t> mask(rows, 1);
  const auto r = objectives::compute_loss(cfg, tm, lm ? &*lm : nullptr, gold, mask);
  return {r.total.item(), r.mt_term, r.kl_term, r.token_count};
}

}  // namespace

PYBIND11_MODULE(_lmprior, m) {
  m.doc() = "LM-prior translation lab";

  py::register_exception<UsageError>(m, "UsageError", PyExc_ValueError);
  py::register_exception<ConfigError>(m, "ConfigError", PyExc_ValueError);
  py::register_exception<NumericalError>(m, "NumericalError", PyExc_ArithmeticError);
  py::register_exception<InvalidInput>(m, "InvalidInput", PyExc_ValueError);

  m.def(
      "corpus_bleu",
      [](const std::vector<std::string>& hyps, const std::vector<std::string>& refs, std::size_t max_n, bool smooth) {
        const auto b = evaluation::corpus_bleu(hyps, refs, max_n, smooth);
        py::dict d;
        d["score"] = b.score;
        d["precisions"] = b.precisions;
        d["brevity_penalty"] = b.brevity_penalty;
        d["hyp_length"] = b.hyp_length;
        d["ref_length"] = b.ref_length;
        return d;
      },
      py::arg("hypotheses"), py::arg("references"), py::arg("max_n") = 4, py::arg("smooth") = false);

  m.def("lr_schedule", &trainer::lr_schedule, py::arg("step"), py::arg("base") = 2e-4, py::arg("warmup") = 8000);

  m.def(
      "objective_loss",
      [](const std::string& objective, const std::vector<std::vector<double>>& tm,
         const std::vector<std::vector<double>>& lm, const std::vector<int>& gold, double lambda, double tau,
         double alpha) {
        const auto l = objective_loss(objective, tm, lm, gold, lambda, tau, alpha);
        py::dict d;
        d["total"] = l.total;
        d["mt"] = l.mt;
        d["kl"] = l.kl;
        d["tokens"] = l.tokens;
        return d;
      },
      py::arg("objective"), py::arg("tm_logits"), py::arg("lm_logits") = std::vector<std::vector<double>>{},
      py::arg("gold"), py::arg("lam") = 0.5, py::arg("tau") = 2.0, py::arg("alpha") = 0.1);

  m.def(
      "postnorm_combine",
      [](const std::vector<double>& tm, const std::vector<double>& lm) {
        const auto d = objectives::postnorm_combine(numerics::Distribution(tm), numerics::Distribution(lm));
        return std::vector<double>(d.probs().begin(), d.probs().end());
      },
      py::arg("tm"), py::arg("lm"));

  m.def(
      "softmax",
      [](const std::vector<double>& logits, double tau) {
        const auto d = numerics::softmax_with_temperature(logits, tau);
        return std::vector<double>(d.probs().begin(), d.probs().end());
      },
      py::arg("logits"), py::arg("tau") = 1.0);

  m.def(
      "step_score",
      [](const std::string& mode, const std::vector<double>& tm, const std::vector<double>& lm, double beta) {
        decoding::FusionScorer s{decoding::parse_fusion_mode(mode), beta, nullptr};
        const numerics::Distribution lm_d(lm);
        return decoding::step_score(s, numerics::Distribution(tm), &lm_d);
      },
      py::arg("mode"), py::arg("tm"), py::arg("lm"), py::arg("beta") = 0.1);

  m.def("toy_target", [](const std::string& task, const std::string& source) {
    return cli::toy_target(cli::parse_toy_task(task), source);
  });

  m.def("default_config", [] { return config_dict(cli::ExperimentConfig{}); });
  m.def(
      "resolve_config", [](const py::dict& values) { return config_dict(make_config(values)); },
      "Apply overrides to the defaults; unknown keys raise UsageError.");
  m.def("parse_config", [](const std::string& text) { return config_dict(cli::parse_config(text)); });

  m.def("gen_toy", [](const py::dict& c) { return run_command(cli::gen_toy, c); });
  m.def("train_lm", [](const py::dict& c) { return run_command(cli::train_lm, c); });
  m.def("train_tm", [](const py::dict& c) { return run_command(cli::train_tm, c); });
  m.def("translate", [](const py::dict& c) { return run_command(cli::translate, c); });
  m.def("evaluate", [](const py::dict& c) { return run_command(cli::evaluate, c); });
  m.def("analyze_entropy", [](const py::dict& c) { return run_command(cli::analyze_entropy, c); });
  m.def("sweep", [](const py::dict& c) { return run_command(cli::sweep, c); });

  m.def("run_cli", [](const std::vector<std::string>& args) {
    std::ostringstream out, err;
    int code;
    {
      py::gil_scoped_release release;
      code = cli::run_cli(args, out, err);
    }
    return py::make_tuple(code, out.str(), err.str());
  });
}
