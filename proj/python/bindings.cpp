#include <pybind11/eigen.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <sstream>

#include <nlohmann/json.hpp>

#include "datamanip/augmentation.hpp"
#include "datamanip/checkpoint.hpp"
#include "datamanip/cli.hpp"
#include "datamanip/config.hpp"
#include "datamanip/inspect.hpp"
#include "datamanip/metrics.hpp"

namespace py = pybind11;
using namespace datamanip;

namespace {

using Pairs = std::vector<std::pair<TokenIds, TokenIds>>;

Pairs as_pairs(const std::vector<DialoguePair>& split) {
  Pairs out;
  for (const auto& p : split) out.emplace_back(p.query, p.response);
  return out;
}

std::vector<DialoguePair> from_pairs(const Pairs& pairs, std::int64_t first_id) {
  std::vector<DialoguePair> out;
  for (const auto& [q, r] : pairs) {
    DialoguePair p;
    p.query = q;
    p.response = r;
    p.id = first_id++;
    out.push_back(std::move(p));
  }
  return out;
}

KeyValues as_key_values(const py::dict& d) {
  KeyValues kv;
  for (const auto& [k, v] : d) {
    kv[py::str(k)] = py::isinstance<py::bool_>(v) ? (v.cast<bool>() ? "true" : "false") : std::string(py::str(v));
  }
  return kv;
}

py::object json_to_python(const std::string& text) {
  return py::module_::import("json").attr("loads")(text);
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "Joint training of a dialogue model and a data manipulation network";

  py::class_<SyntheticCorpus>(m, "SyntheticCorpus")
      .def_property_readonly("train", [](const SyntheticCorpus& c) { return as_pairs(c.corpus.train); })
      .def_property_readonly("valid", [](const SyntheticCorpus& c) { return as_pairs(c.corpus.valid); })
      .def_property_readonly("test", [](const SyntheticCorpus& c) { return as_pairs(c.corpus.test); })
      .def_property_readonly("vocabulary", [](const SyntheticCorpus& c) { return c.vocab.tokens(); })
      .def_property_readonly("train_noisy", [](const SyntheticCorpus& c) {
        std::vector<bool> out;
        for (const auto& p : c.corpus.train) out.push_back(c.is_noisy(p.id));
        return out;
      });

  m.def(
      "make_synthetic_corpus",
      [](const py::dict& spec) {
        CorpusSpec s;
        apply_key_values(corpus_spec_fields(s), as_key_values(spec));
        return make_synthetic_corpus(s);
      },
      py::arg("spec") = py::dict(), "Corpus with controlled label noise; keys as in the synth command.");

  m.def(
      "train_config",
      [](const py::dict& overrides) {
        const TrainConfig c = train_config_from(as_key_values(overrides));
        c.validate();
        const KeyValues kv = train_config_values(c);
        return std::map<std::string, std::string>(kv.begin(), kv.end());
      },
      py::arg("overrides") = py::dict(), "Resolved training configuration as strings.");

  m.def(
      "train",
      [](const SyntheticCorpus& corpus, const py::dict& overrides) {
        const TrainConfig c = train_config_from(as_key_values(overrides));
        std::ostringstream report;
        TrainHooks hooks;
        hooks.logs.report = &report;
        for (const auto& p : corpus.corpus.train) {
          if (corpus.is_noisy(p.id)) hooks.noisy_ids.insert(p.id);
        }
        TrainResult r;
        {
          py::gil_scoped_release release;
          r = train(corpus.corpus, c, corpus.vocab.size(), hooks);
        }
        py::list records;
        std::istringstream lines(report.str());
        for (std::string line; std::getline(lines, line);) records.append(json_to_python(line));
        py::dict instances;
        for (const auto& [id, s] : r.instances) {
          py::dict d;
          d["seen"] = s.seen;
          d["augmented"] = s.augmented;
          d["last_weight"] = s.last_weight;
          instances[py::int_(id)] = d;
        }
        py::dict out;
        out["records"] = records;
        out["instances"] = instances;
        out["final_valid_nll"] = r.final_valid_nll;
        out["stopped_early"] = r.stopped_early;
        return out;
      },
      py::arg("corpus"), py::arg("config") = py::dict(),
      "Runs the training loop; returns per-iteration records and per-instance statistics.");

  m.def(
      "gumbel_softmax",
      [](const Eigen::MatrixXd& logits, double tau, bool hard, std::uint64_t seed) {
        Rng rng(seed);
        return Eigen::MatrixXd(gumbel_softmax(ad::constant(logits), tau, hard, rng).value());
      },
      py::arg("logits"), py::arg("tau"), py::arg("hard") = false, py::arg("seed") = 0);

  m.def("noise_detection_auc", [](const std::vector<double>& clean, const std::vector<double>& noisy) {
    return noise_detection_auc(clean, noisy);
  });

  auto mm = m.def_submodule("metrics", "Response metrics over token-id sentences");
  mm.def("distinct_n", [](const std::vector<metrics::Sentence>& r, int n) { return metrics::distinct_n(r, n); });
  mm.def("intra_distinct_n",
         [](const std::vector<metrics::Sentence>& r, int n) { return metrics::intra_distinct_n(r, n); });
  mm.def("entropy_n", [](const std::vector<metrics::Sentence>& r, const std::vector<metrics::Sentence>& train, int n) {
    return metrics::entropy_n(r, metrics::NgramModel::fit(train), n);
  });
  mm.def("sentence_bleu", &metrics::sentence_bleu);
  mm.def("bleu", [](const std::vector<metrics::Sentence>& h, const std::vector<metrics::Sentence>& r) {
    return metrics::bleu(h, r);
  });
  mm.def(
      "evaluate",
      [](const std::vector<metrics::Sentence>& hyps, const std::vector<metrics::Sentence>& refs,
         const std::vector<metrics::Sentence>& train, const Eigen::MatrixXd& embeddings) {
        const auto model = metrics::NgramModel::fit(train);
        const auto unigram = model.unigram_table(static_cast<int>(embeddings.rows()));
        return json_to_python(metrics::evaluate(hyps, refs, model, embeddings, unigram).to_json().dump());
      },
      py::arg("hypotheses"), py::arg("references"), py::arg("train"), py::arg("embeddings"),
      "All 13 metrics as percentages.");

  m.def(
      "load_checkpoint",
      [](const std::string& path) {
        const Checkpoint c = load_checkpoint(path);
        py::dict out;
        out["config"] = std::map<std::string, std::string>(c.config.begin(), c.config.end());
        out["vocabulary"] = c.vocabulary;
        out["iteration"] = c.state.iteration;
        py::dict theta, phi;
        for (const auto& t : c.theta) theta[py::str(t.name)] = Eigen::MatrixXd(t.value);
        for (const auto& t : c.phi) phi[py::str(t.name)] = Eigen::MatrixXd(t.value);
        out["theta"] = theta;
        out["phi"] = phi;
        return out;
      },
      py::arg("path"));

  m.def(
      "run_cli",
      [](const std::vector<std::string>& args) {
        std::ostringstream out, err;
        int code;
        {
          py::gil_scoped_release release;
          code = run_cli(args, out, err);
        }
        return py::make_tuple(code, out.str(), err.str());
      },
      py::arg("args"), "Runs a subcommand; returns (exit code, stdout, stderr).");

  py::register_exception<std::invalid_argument>(m, "ConfigError", PyExc_ValueError);
}
