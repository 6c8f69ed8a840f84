#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include <sstream>

#include "commands.hpp"
#include "tdtd/error.hpp"
#include "tdtd/metrics.hpp"
#include "tdtd/pcfg.hpp"
#include "tdtd/seq_lm.hpp"
#include "tdtd/tdtd_model.hpp"
#include "tdtd/tdtd_parser.hpp"
#include "tdtd/training.hpp"
#include "tdtd/tree.hpp"

namespace py = pybind11;
using namespace tdtd;

namespace {

std::vector<Tree> parse_all(const std::vector<std::string>& texts) {
  std::vector<Tree> out;
  out.reserve(texts.size());
  for (const auto& t : texts) out.push_back(parse_bracketed(t));
  return out;
}

py::dict report_dict(const TrainReport& report) {
  py::list rows;
  for (const EpochRow& r : report.rows) {
    py::dict row;
    row["epoch"] = r.epoch;
    row["train_nll"] = r.train_nll;
    row["dev_nll"] = r.dev_nll;
    row["tf_prob"] = r.tf_prob;
    row["examples"] = r.examples;
    rows.append(row);
  }
  py::dict d;
  d["rows"] = rows;
  return d;
}

TrainConfig train_config(std::size_t epochs, std::size_t batch_size, double learning_rate, std::uint64_t seed) {
  TrainConfig c;
  c.epochs = epochs;
  c.batch_size = batch_size;
  c.optimizer.learning_rate = learning_rate;
  c.seed = seed;
  return c;
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "Breadth-first tree generation, reranking and PCFG-oracle evaluation";

  // Translators run newest first, so the subclass registers last.
  py::register_exception<Error>(m, "Error", PyExc_RuntimeError);
  py::register_exception<ParseError>(m, "ParseError", PyExc_ValueError);

  py::class_<Tree>(m, "Tree")
      .def_static("parse", &parse_bracketed, py::arg("text"))
      .def("__str__", &to_bracketed)
      .def("__repr__", [](const Tree& t) { return "Tree('" + to_bracketed(t) + "')"; })
      .def("__eq__", &structurally_equal)
      .def("yield_", &Tree::yield)
      .def_property_readonly("words", &Tree::yield)
      .def_property_readonly("depth", &Tree::depth)
      .def_property_readonly("nonterminal_count", &Tree::nonterminal_count)
      .def_property_readonly("terminal_count", &Tree::terminal_count)
      .def("layers",
           [](const Tree& t) {
             std::vector<std::vector<std::string>> out;
             for (const auto& layer : layer_view(t).layers) {
               auto& row = out.emplace_back();
               for (int id : layer) row.push_back(t.node(id).label);
             }
             return out;
           })
      .def("linearize", &linearize_brackets)
      .def("violations", [](const Tree& t) { return validate(t).violations; });

  m.def("delinearize", [](const std::vector<std::string>& tokens) -> py::object {
    auto r = delinearize_brackets(tokens);
    if (auto* t = std::get_if<Tree>(&r)) return py::cast(std::move(*t));
    return py::none();
  }, py::arg("tokens"), "Tree for a well-formed bracket sequence, None otherwise.");

  py::class_<Grammar>(m, "Grammar")
      .def_static("from_text", [](const std::string& text, const std::vector<std::string>& start) {
        GrammarOptions o;
        o.start_symbols = start;
        return load_grammar(text, o);
      }, py::arg("text"), py::arg("start") = std::vector<std::string>{})
      .def_static("from_file", [](const std::filesystem::path& path, const std::vector<std::string>& start) {
        GrammarOptions o;
        o.start_symbols = start;
        return load_grammar_file(path, o);
      }, py::arg("path"), py::arg("start") = std::vector<std::string>{})
      .def("pruned", [](const Grammar& g, double threshold, bool renormalize) {
        return prune_grammar(g, threshold, renormalize);
      }, py::arg("threshold") = kDefaultPruneThreshold, py::arg("renormalize") = true)
      .def_property_readonly("rule_count", [](const Grammar& g) { return g.rules().size(); })
      .def_property_readonly("start_set", &Grammar::start_set)
      .def("sample", [](const Grammar& g, std::uint64_t seed, std::size_t max_depth) {
        Rng rng(seed);
        return sample_tree(g, max_depth, rng);
      }, py::arg("seed"), py::arg("max_depth") = kDefaultOracleMaxDepth)
      .def("dataset", [](const Grammar& g, std::size_t count, std::size_t nodes, std::uint64_t seed,
                         std::size_t max_depth) {
        DatasetSpec spec;
        spec.count = count;
        spec.target_nodes = nodes;
        spec.seed = seed;
        spec.max_depth = max_depth;
        return generate_dataset(g, spec);
      }, py::arg("count"), py::arg("nodes"), py::arg("seed"), py::arg("max_depth") = kDefaultOracleMaxDepth)
      .def("nll", [](const Grammar& g, const Tree& t, double penalty) { return oracle_nll(g, t, penalty); },
           py::arg("tree"), py::arg("penalty") = kDefaultUnseenPenalty);

  py::class_<TdtdModel>(m, "TdtdModel")
      .def(py::init([](const std::vector<Tree>& trees, std::size_t hidden, std::size_t max_depth,
                       std::size_t max_children, std::size_t max_width, std::uint64_t seed) {
             TdtdConfig c;
             c.hidden_size = c.embed_size = hidden;
             c.max_depth = max_depth;
             c.max_children_per_node = max_children;
             c.max_layer_width = max_width;
             return TdtdModel(c, SymbolVocab::from_trees(trees, false), seed);
           }),
           py::arg("trees"), py::arg("hidden") = 32, py::arg("max_depth") = 7, py::arg("max_children") = 8,
           py::arg("max_width") = 64, py::arg("seed") = 0)
      .def_static("load", py::overload_cast<const std::filesystem::path&>(&TdtdModel::load))
      .def("save", py::overload_cast<const std::filesystem::path&>(&TdtdModel::save, py::const_))
      .def("log_prob", py::overload_cast<const Tree&>(&TdtdModel::tree_log_prob, py::const_))
      .def("decision_log_probs", &TdtdModel::decision_log_probs)
      .def("generate", [](const TdtdModel& model, std::uint64_t seed, bool greedy) {
        Rng rng(seed);
        GenerateOptions o;
        o.greedy = greedy;
        GeneratedTree g = model.generate(rng, o);
        return py::make_tuple(std::move(g.tree), g.log_prob, g.decision_log_probs);
      }, py::arg("seed"), py::arg("greedy") = false)
      .def("train", [](TdtdModel& model, const std::vector<Tree>& train_set, const std::vector<Tree>& dev,
                       std::size_t epochs, std::size_t batch_size, double lr, std::uint64_t seed) {
        auto t = make_trainable(model);
        return report_dict(train(*t, train_set, dev, train_config(epochs, batch_size, lr, seed)));
      }, py::arg("train"), py::arg("dev") = std::vector<Tree>{}, py::arg("epochs") = 10,
         py::arg("batch_size") = 16, py::arg("learning_rate") = 1e-3, py::arg("seed") = 1);

  py::class_<TdtdParser>(m, "TdtdParser")
      .def(py::init([](const std::vector<Tree>& trees, std::size_t hidden, bool scaled, std::uint64_t seed) {
             ParserConfig c;
             c.decoder.hidden_size = c.decoder.embed_size = hidden;
             c.scaled_attention = scaled;
             return TdtdParser(c, SymbolVocab::from_trees(trees, true), seed);
           }),
           py::arg("trees"), py::arg("hidden") = 128, py::arg("scaled_attention") = true, py::arg("seed") = 0)
      .def_static("load", py::overload_cast<const std::filesystem::path&>(&TdtdParser::load))
      .def("save", py::overload_cast<const std::filesystem::path&>(&TdtdParser::save, py::const_))
      .def("log_prob", [](const TdtdParser& p, const Tree& t, const std::vector<std::string>& words) {
        return p.conditional_tree_log_prob(t, words);
      }, py::arg("tree"), py::arg("words"))
      .def("rerank", [](const TdtdParser& p, const std::vector<std::string>& words, const std::vector<Tree>& cands) {
        std::vector<std::pair<std::size_t, double>> out;
        for (const auto& r : p.rerank(words, cands)) out.emplace_back(r.index, r.score);
        return out;
      }, py::arg("words"), py::arg("candidates"))
      .def("train", [](TdtdParser& parser, const std::vector<Tree>& train_set, const std::vector<Tree>& dev,
                       std::size_t epochs, std::size_t batch_size, double lr, std::uint64_t seed) {
        auto t = make_trainable(parser);
        return report_dict(train(*t, train_set, dev, train_config(epochs, batch_size, lr, seed)));
      }, py::arg("train"), py::arg("dev") = std::vector<Tree>{}, py::arg("epochs") = 10,
         py::arg("batch_size") = 16, py::arg("learning_rate") = 1e-3, py::arg("seed") = 1);

  py::class_<SeqLm>(m, "SeqLm")
      .def(py::init([](const std::vector<Tree>& trees, std::size_t hidden, std::size_t max_length,
                       std::uint64_t seed) {
             std::vector<std::vector<std::string>> seqs;
             for (const Tree& t : trees) seqs.push_back(linearize_brackets(t));
             return SeqLm(SeqLmConfig{hidden, hidden, max_length}, TokenVocab::from_sequences(seqs), seed);
           }),
           py::arg("trees"), py::arg("hidden") = 32, py::arg("max_length") = 200, py::arg("seed") = 0)
      .def_static("load", py::overload_cast<const std::filesystem::path&>(&SeqLm::load))
      .def("save", py::overload_cast<const std::filesystem::path&>(&SeqLm::save, py::const_))
      .def("log_prob", [](const SeqLm& s, const std::vector<std::string>& tokens) {
        return s.sequence_log_prob(tokens);
      })
      .def("sample", [](const SeqLm& s, std::uint64_t seed) {
        Rng rng(seed);
        SampledSequence q = s.sample(rng);
        return py::make_tuple(q.tokens, q.log_prob, q.terminated);
      }, py::arg("seed"))
      .def("train", [](SeqLm& model, const std::vector<Tree>& train_set, const std::vector<Tree>& dev,
                       std::size_t epochs, std::size_t batch_size, double lr, std::uint64_t seed) {
        auto t = make_trainable(model);
        return report_dict(train(*t, train_set, dev, train_config(epochs, batch_size, lr, seed)));
      }, py::arg("train"), py::arg("dev") = std::vector<Tree>{}, py::arg("epochs") = 10,
         py::arg("batch_size") = 16, py::arg("learning_rate") = 1e-3, py::arg("seed") = 1);

  m.def("bleu", [](const std::vector<std::vector<std::string>>& candidates,
                   const std::vector<std::vector<std::string>>& references, std::size_t n, const std::string& mode) {
    return bleu(candidates, references, n, parse_bleu_mode(mode));
  }, py::arg("candidates"), py::arg("references"), py::arg("n") = 4, py::arg("mode") = "sentence");

  m.def("bracket_f1", [](const Tree& predicted, const Tree& gold) {
    const BracketScore s = bracket_f1(predicted, gold);
    return py::make_tuple(s.precision, s.recall, s.f1);
  }, py::arg("predicted"), py::arg("gold"), "(precision, recall, f1)");

  m.def("sample_report", [](const std::vector<std::vector<std::string>>& sequences, const Grammar& g, double penalty) {
    const SampleReport r = sample_report(sequences, g, penalty);
    py::dict d;
    d["samples"] = r.samples;
    d["nll"] = r.mean_nll;
    d["nll_per_node"] = r.mean_nll_per_node;
    d["fail"] = r.fail_fraction;
    d["dup"] = r.dup_fraction;
    return d;
  }, py::arg("sequences"), py::arg("grammar"), py::arg("penalty") = kDefaultUnseenPenalty,
     "Fail/Dup/NLL report over linearized bracket sequences.");

  m.def("run_cli", [](const std::vector<std::string>& args) {
    std::ostringstream out, err;
    const int code = cli::run(args, out, err);
    return py::make_tuple(code, out.str(), err.str());
  }, py::arg("args"), "Runs a command-line subcommand; returns (exit code, stdout, stderr).");
}
