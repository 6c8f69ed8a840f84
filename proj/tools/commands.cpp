#include "commands.hpp"

#include <openssl/evp.h>

#include <CLI11.hpp>
#include <algorithm>
#include <array>
#include <charconv>
#include <cmath>
#include <concepts>
#include <cstdlib>
#include <exception>
#include <fstream>
#include <functional>
#include <iomanip>
#include <iostream>
#include <json.hpp>
#include <optional>
#include <sstream>
#include <thread>
#include <unordered_map>
#include <vector>

#include "tdtd/config.hpp"
#include "tdtd/error.hpp"
#include "tdtd/metrics.hpp"
#include "tdtd/model_file.hpp"
#include "tdtd/pcfg.hpp"
#include "tdtd/seq_lm.hpp"
#include "tdtd/tdtd_model.hpp"
#include "tdtd/tdtd_parser.hpp"
#include "tdtd/training.hpp"
#include "tdtd/tree.hpp"

namespace tdtd::cli {

namespace fs = std::filesystem;
using Json = nlohmann::ordered_json;

std::string sha256_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open '" + path.string() + "' for hashing");
  std::unique_ptr<EVP_MD_CTX, decltype(&EVP_MD_CTX_free)> md(EVP_MD_CTX_new(), &EVP_MD_CTX_free);
  if (!md || EVP_DigestInit_ex(md.get(), EVP_sha256(), nullptr) != 1) throw Error("sha256: digest init failed");
  std::array<char, 1 << 16> buf{};
  while (in) {
    in.read(buf.data(), buf.size());
    if (in.gcount() > 0) EVP_DigestUpdate(md.get(), buf.data(), static_cast<std::size_t>(in.gcount()));
  }
  std::array<unsigned char, EVP_MAX_MD_SIZE> digest{};
  unsigned int len = 0;
  EVP_DigestFinal_ex(md.get(), digest.data(), &len);
  static constexpr char kHex[] = "0123456789abcdef";
  std::string out;
  for (unsigned int i = 0; i < len; ++i) {
    out.push_back(kHex[digest[i] >> 4]);
    out.push_back(kHex[digest[i] & 0xf]);
  }
  return out;
}

std::uint64_t sample_seed(std::uint64_t base, std::uint64_t index) {
  // splitmix64 finalizer over (base, index).
  std::uint64_t z = base + 0x9e3779b97f4a7c15ULL * (index + 1);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

namespace {

struct Globals {
  bool json = false;
  std::size_t threads = 1;
  std::optional<std::uint64_t> seed;
};

struct Context {
  std::ostream& out;
  std::ostream& err;
  Globals globals;
  std::vector<std::string> args;
};

std::string compact(double v) {
  std::ostringstream s;
  s << std::setprecision(6) << v;
  return s.str();
}

// Summary fields double as the report for the evaluation commands.
class Summary {
 public:
  explicit Summary(std::string command) : command_(std::move(command)) {}

  void add(const std::string& key, const std::string& v) { push(key, v, v); }
  void add(const std::string& key, const char* v) { add(key, std::string(v)); }
  void add(const std::string& key, bool v) { push(key, v ? "true" : "false", v); }
  void add(const std::string& key, double v) {
    push(key, compact(v), std::isfinite(v) ? Json(v) : Json(compact(v)));
  }
  template <std::integral T>
    requires(!std::same_as<T, bool>)
  void add(const std::string& key, T v) {
    push(key, std::to_string(v), Json(v));
  }

  // JSON-only payload, e.g. per-epoch rows.
  Json& extra() { return extra_; }
  const std::string& command() const noexcept { return command_; }

  void write_table(std::ostream& out) const {
    std::size_t width = 0;
    for (const auto& f : fields_) width = std::max(width, f.key.size());
    for (const auto& f : fields_) out << std::left << std::setw(static_cast<int>(width + 2)) << f.key << f.text << '\n';
  }

  void write_tsv(std::ostream& out) const {
    for (std::size_t i = 0; i < fields_.size(); ++i) out << (i ? "\t" : "") << fields_[i].key;
    out << '\n';
    for (std::size_t i = 0; i < fields_.size(); ++i) out << (i ? "\t" : "") << fields_[i].text;
    out << '\n';
  }

  void emit(const Context& ctx, bool ok) const {
    if (ctx.globals.json) {
      Json doc;
      doc["command"] = command_;
      for (const auto& f : fields_) doc[f.key] = f.value;
      for (const auto& [k, v] : extra_.items()) doc[k] = v;
      doc["status"] = ok ? "OK" : "FAIL";
      ctx.out << doc.dump() << '\n';
    }
    ctx.out << command_;
    for (const auto& f : fields_) ctx.out << ' ' << f.key << '=' << f.text;
    ctx.out << (ok ? " OK" : " FAIL") << '\n';
  }

 private:
  struct Field {
    std::string key;
    std::string text;
    Json value;
  };
  void push(const std::string& key, std::string text, Json value) {
    fields_.push_back({key, std::move(text), std::move(value)});
  }

  std::string command_;
  std::vector<Field> fields_;
  Json extra_ = Json::object();
};

// A file, or `out` for an empty path or "-".
class Output {
 public:
  Output(const std::string& path, std::ostream& fallback) : path_(path) {
    if (path.empty() || path == "-") {
      stream_ = &fallback;
      return;
    }
    if (const fs::path parent = fs::path(path).parent_path(); !parent.empty()) fs::create_directories(parent);
    file_.open(path);
    if (!file_) throw Error("cannot write '" + path + "'");
    stream_ = &file_;
    is_file_ = true;
  }
  std::ostream& stream() { return *stream_; }
  bool is_file() const noexcept { return is_file_; }
  const std::string& path() const noexcept { return path_; }
  void close() {
    if (!file_.is_open()) return;
    file_.close();
    if (!file_) throw Error("error writing '" + path_ + "'");
  }

 private:
  std::string path_;
  std::ofstream file_;
  std::ostream* stream_ = nullptr;
  bool is_file_ = false;
};

class Manifest {
 public:
  Manifest(const Context& ctx, const std::string& command) {
    doc_["tool"] = "tdtd";
    doc_["command"] = command;
    doc_["arguments"] = ctx.args;
    doc_["inputs"] = Json::array();
    doc_["outputs"] = Json::array();
  }
  void set(const std::string& key, Json value) { doc_[key] = std::move(value); }
  void input(const fs::path& p) { doc_["inputs"].push_back(entry(p)); }
  void output(const fs::path& p) { doc_["outputs"].push_back(entry(p)); }
  void write(const fs::path& p) const {
    std::ofstream out(p);
    if (!out) throw Error("cannot write manifest '" + p.string() + "'");
    out << doc_.dump(2) << '\n';
  }

 private:
  static Json entry(const fs::path& p) {
    return {{"path", p.string()}, {"bytes", fs::file_size(p)}, {"sha256", sha256_file(p)}};
  }
  Json doc_;
};

std::optional<std::uint64_t> env_seed() {
  const char* v = std::getenv("TDTD_SEED");
  if (v == nullptr || *v == '\0') return std::nullopt;
  const std::string_view text(v);
  std::uint64_t seed = 0;
  const auto res = std::from_chars(text.data(), text.data() + text.size(), seed);
  if (res.ec != std::errc() || res.ptr != text.data() + text.size()) {
    throw Error("TDTD_SEED='" + std::string(text) + "' is not an unsigned integer");
  }
  return seed;
}

// Flag, then config, then the environment.
std::uint64_t require_seed(const Globals& g, std::optional<std::uint64_t> from_config = std::nullopt) {
  if (g.seed) return *g.seed;
  if (from_config) return *from_config;
  if (auto e = env_seed()) return *e;
  throw Error("no seed given (pass --seed or export TDTD_SEED)");
}

template <typename Fn>
void parallel_for(std::size_t n, std::size_t threads, Fn&& fn) {
  const std::size_t workers = std::min(std::max<std::size_t>(1, threads), n);
  if (workers <= 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::vector<std::exception_ptr> errors(workers);
  std::vector<std::thread> pool;
  pool.reserve(workers);
  for (std::size_t w = 0; w < workers; ++w) {
    pool.emplace_back([&, w] {
      try {
        for (std::size_t i = w; i < n; i += workers) fn(i);
      } catch (...) {
        errors[w] = std::current_exception();
      }
    });
  }
  for (auto& t : pool) t.join();
  for (const auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
}

std::vector<std::string> read_lines(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open '" + path.string() + "'");
  std::vector<std::string> lines;
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    lines.push_back(std::move(line));
  }
  return lines;
}

std::string join(std::span<const std::string> tokens) {
  std::string out;
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    if (i) out.push_back(' ');
    out += tokens[i];
  }
  return out;
}

bool is_bracket_token(std::string_view tok) { return tok == ")" || (!tok.empty() && tok.front() == '('); }

// Sentences from a text file (one per line) or from tree yields.
std::vector<std::vector<std::string>> read_sentences(const fs::path& path, std::string_view format,
                                                     bool keep_blank) {
  std::vector<std::vector<std::string>> out;
  if (format == "trees") {
    for (const Tree& t : read_treebank(path)) out.push_back(t.yield());
    return out;
  }
  for (const auto& line : read_lines(path)) {
    auto tokens = split_tokens(line);
    if (tokens.empty() && !keep_blank) continue;
    out.push_back(std::move(tokens));
  }
  return out;
}

struct LoadedModel {
  ModelKind kind = ModelKind::kTdtd;
  std::optional<TdtdModel> tdtd;
  std::optional<TdtdParser> parser;
  std::optional<SeqLm> seq;
};

LoadedModel load_model(const fs::path& path) {
  LoadedModel m;
  m.kind = parse_model_kind(peek_model_kind(path));
  switch (m.kind) {
    case ModelKind::kTdtd: m.tdtd.emplace(TdtdModel::load(path)); break;
    case ModelKind::kTdtdP: m.parser.emplace(TdtdParser::load(path)); break;
    case ModelKind::kSeqLm: m.seq.emplace(SeqLm::load(path)); break;
  }
  return m;
}

GrammarOptions grammar_options(const std::vector<std::string>& start) {
  GrammarOptions o;
  o.start_symbols = start;
  return o;
}

void write_sidecar(Manifest& manifest, const Output& output) {
  if (!output.is_file()) return;
  manifest.output(output.path());
  manifest.write(output.path() + ".manifest.json");
}

// ---------------------------------------------------------------- gen-data

struct GenDataArgs {
  std::string grammar;
  std::size_t nodes = 0;
  std::size_t count = 10000;
  std::size_t max_depth = kDefaultOracleMaxDepth;
  double prune = kDefaultPruneThreshold;
  bool no_renormalize = false;
  std::vector<std::string> start;
  std::string out;
};

bool cmd_gen_data(Context& ctx, const GenDataArgs& a, Summary& s) {
  const std::uint64_t seed = require_seed(ctx.globals);
  if (a.count == 0) throw Error("--count must be at least 1");
  const Grammar grammar =
      prune_grammar(load_grammar_file(a.grammar, grammar_options(a.start)), a.prune, !a.no_renormalize);
  DatasetSpec spec;
  spec.count = a.count;
  spec.target_nodes = a.nodes;
  spec.max_depth = a.max_depth;
  spec.seed = seed;
  const auto trees = generate_dataset(grammar, spec);

  Output out(a.out, ctx.out);
  write_treebank(trees, out.stream());
  out.close();

  Manifest manifest(ctx, "gen-data");
  manifest.set("seed", seed);
  manifest.input(a.grammar);
  write_sidecar(manifest, out);

  s.add("trees", trees.size());
  s.add("nodes", a.nodes);
  s.add("max_depth", a.max_depth);
  s.add("seed", seed);
  s.add("rules", grammar.rules().size());
  if (out.is_file()) s.add("out", a.out);
  return true;
}

// ---------------------------------------------------------------- train

struct TrainArgs {
  std::string config;
  std::vector<std::string> sets;
  std::string model;
  std::string train;
  std::string dev;
  std::optional<std::size_t> epochs;
  std::string name;
  std::string runs_dir = "runs";
  std::size_t samples = 0;
};

std::string_view trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t");
  if (b == std::string_view::npos) return {};
  return s.substr(b, s.find_last_not_of(" \t") - b + 1);
}

void apply_override(ExperimentConfig& cfg, std::string_view assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string_view::npos) throw Error("--set expects key=value, got '" + std::string(assignment) + "'");
  const std::string_view key = trim(assignment.substr(0, eq));
  const std::string_view value = trim(assignment.substr(eq + 1));
  if ((key == "train" || key == "dev") && !fs::exists(fs::path(value))) {
    throw Error("--set " + std::string(key) + ": file '" + std::string(value) + "' does not exist");
  }
  cfg.set(key, value);
}

struct DataShape {
  std::size_t depth = 0;
  std::size_t children = 0;
  std::size_t width = 0;
  std::size_t tokens = 0;
};

DataShape data_shape(std::span<const Tree> a, std::span<const Tree> b) {
  DataShape d;
  for (auto set : {a, b}) {
    for (const Tree& t : set) {
      d.depth = std::max(d.depth, t.depth());
      d.width = std::max(d.width, layer_view(t).max_width());
      for (const TreeNode& n : t.nodes()) d.children = std::max(d.children, n.children.size());
      d.tokens = std::max(d.tokens, 2 * t.nonterminal_count() + t.terminal_count());
    }
  }
  return d;
}

void widen(std::ostream& err, const char* key, std::size_t& value, std::size_t needed) {
  if (value >= needed) return;
  err << "note: raising " << key << " from " << value << " to " << needed << " to cover the data\n";
  value = needed;
}

std::string epoch_file(std::size_t epoch) {
  std::ostringstream name;
  name << "epoch-" << std::setw(3) << std::setfill('0') << epoch << ".model";
  return name.str();
}

bool cmd_train(Context& ctx, const TrainArgs& a, Summary& s) {
  Manifest manifest(ctx, "train");
  ExperimentConfig cfg;
  if (!a.config.empty()) {
    cfg = load_config(a.config);
    manifest.input(a.config);
  }
  for (const auto& kv : a.sets) apply_override(cfg, kv);
  if (!a.model.empty()) cfg.set("model", a.model);
  if (!a.train.empty()) apply_override(cfg, "train=" + a.train);
  if (!a.dev.empty()) apply_override(cfg, "dev=" + a.dev);
  if (a.epochs) cfg.train.epochs = *a.epochs;
  if (!cfg.model) throw Error("no model kind (pass --model or set model in the config)");
  if (cfg.train_path.empty()) throw Error("no training data (pass --train or set train in the config)");
  cfg.seed = require_seed(ctx.globals, cfg.seed);
  const ModelKind kind = *cfg.model;

  const std::vector<Tree> train_set = read_treebank(cfg.train_path);
  const std::vector<Tree> dev_set = cfg.dev_path.empty() ? std::vector<Tree>{} : read_treebank(cfg.dev_path);
  manifest.input(cfg.train_path);
  if (!cfg.dev_path.empty()) manifest.input(cfg.dev_path);

  const DataShape shape = data_shape(train_set, dev_set);
  if (kind == ModelKind::kSeqLm) {
    widen(ctx.err, "max_length", cfg.max_length, shape.tokens + 1);
  } else {
    widen(ctx.err, "max_depth", cfg.max_depth, shape.depth);
    widen(ctx.err, "max_children_per_node", cfg.max_children_per_node, shape.children);
    widen(ctx.err, "max_layer_width", cfg.max_layer_width, shape.width);
  }

  TrainConfig tc = cfg.train_config();
  Rng seeds(*cfg.seed);
  const std::uint64_t init_seed = seeds.fork();
  tc.seed = seeds.fork();

  const fs::path run_dir = fs::path(a.runs_dir) / (a.name.empty() ? std::string(to_string(kind)) + "-" +
                                                                        std::to_string(*cfg.seed)
                                                                  : a.name);
  fs::create_directories(run_dir / "checkpoints");
  {
    std::ofstream out(run_dir / "config.txt");
    out << cfg.to_text();
  }

  std::optional<TdtdModel> tdtd;
  std::optional<TdtdParser> parser;
  std::optional<SeqLm> seq;
  std::unique_ptr<Trainable> model;
  std::vector<Tree> both(train_set);
  both.insert(both.end(), dev_set.begin(), dev_set.end());
  switch (kind) {
    case ModelKind::kTdtd:
      tdtd.emplace(cfg.tdtd_config(kind), SymbolVocab::from_trees(both, false), init_seed);
      model = make_trainable(*tdtd);
      break;
    case ModelKind::kTdtdP:
      parser.emplace(cfg.parser_config(), SymbolVocab::from_trees(train_set, true), init_seed);
      model = make_trainable(*parser);
      break;
    case ModelKind::kSeqLm: {
      std::vector<std::vector<std::string>> seqs;
      for (const Tree& t : both) seqs.push_back(linearize_brackets(t));
      seq.emplace(cfg.seq_lm_config(), TokenVocab::from_sequences(seqs), init_seed);
      model = make_trainable(*seq);
      break;
    }
  }

  std::vector<fs::path> outputs;
  const auto sink = [&](std::size_t epoch, const Trainable& m) {
    const fs::path p = run_dir / "checkpoints" / epoch_file(epoch);
    std::ofstream out(p);
    if (!out) throw Error("cannot write checkpoint '" + p.string() + "'");
    m.save(out);
    out.close();
    outputs.push_back(p);
  };
  const TrainReport report = train(*model, train_set, dev_set, tc, sink);

  const fs::path report_path = run_dir / "report.tsv";
  {
    std::ofstream out(report_path);
    report.write_tsv(out);
  }
  const fs::path final_path = run_dir / "final.model";
  {
    std::ofstream out(final_path);
    model->save(out);
  }
  outputs.push_back(report_path);
  outputs.push_back(final_path);

  if (a.samples > 0 && kind != ModelKind::kTdtdP) {
    const fs::path samples_path = run_dir / "samples.txt";
    std::vector<std::string> lines(a.samples);
    const std::uint64_t base = sample_seed(*cfg.seed, 0xfeedULL);
    parallel_for(a.samples, ctx.globals.threads, [&](std::size_t i) {
      Rng rng(sample_seed(base, i));
      lines[i] = tdtd ? to_bracketed(tdtd->generate(rng).tree) : join(seq->sample(rng).tokens);
    });
    std::ofstream out(samples_path);
    for (const auto& l : lines) out << l << '\n';
    out.close();
    outputs.push_back(samples_path);
  }

  manifest.set("seed", *cfg.seed);
  manifest.set("config", cfg.to_text());
  for (const auto& p : outputs) manifest.output(p);
  manifest.write(run_dir / "manifest.json");

  const EpochRow& last = report.rows.back();
  s.add("model", std::string(to_string(kind)));
  s.add("epochs", tc.epochs);
  s.add("train_trees", train_set.size());
  s.add("dev_trees", dev_set.size());
  s.add("train_nll", last.train_nll);
  s.add("dev_nll", last.dev_nll);
  s.add("seed", *cfg.seed);
  s.add("run_dir", run_dir.string());
  Json rows = Json::array();
  for (const EpochRow& r : report.rows) {
    rows.push_back({{"epoch", r.epoch},
                    {"train_nll", compact(r.train_nll)},
                    {"dev_nll", compact(r.dev_nll)},
                    {"tf_prob", r.tf_prob},
                    {"examples", r.examples}});
  }
  s.extra()["rows"] = std::move(rows);
  return true;
}

// ---------------------------------------------------------------- generate

struct GenerateArgs {
  std::string model;
  std::size_t count = 1000;
  bool greedy = false;
  std::string root;
  std::optional<std::size_t> max_depth;
  std::optional<std::size_t> max_width;
  std::optional<std::size_t> max_length;
  std::string format;
  std::string out;
};

bool cmd_generate(Context& ctx, const GenerateArgs& a, Summary& s) {
  const std::uint64_t seed = require_seed(ctx.globals);
  LoadedModel m = load_model(a.model);
  if (m.kind == ModelKind::kTdtdP) throw Error("tdtd-p models score and rerank; they do not generate");
  const bool tree_model = m.kind == ModelKind::kTdtd;
  const std::string format = a.format.empty() ? (tree_model ? "trees" : "tokens") : a.format;
  if (!tree_model && format == "trees") throw Error("--format trees needs a tdtd model; seq-lm samples may not form trees");

  std::vector<std::string> lines(a.count);
  std::vector<char> valid(a.count, 0);
  std::vector<char> terminated(a.count, 1);
  std::vector<double> log_probs(a.count, 0.0);
  parallel_for(a.count, ctx.globals.threads, [&](std::size_t i) {
    Rng rng(sample_seed(seed, i));
    if (tree_model) {
      GenerateOptions opts;
      opts.greedy = a.greedy;
      if (!a.root.empty()) opts.root_label = a.root;
      opts.max_depth = a.max_depth;
      opts.max_layer_width = a.max_width;
      GeneratedTree g = m.tdtd->generate(rng, opts);
      valid[i] = validate(g.tree).ok();
      log_probs[i] = g.log_prob;
      if (format == "trees") {
        lines[i] = to_bracketed(g.tree);
      } else if (format == "tokens") {
        lines[i] = join(linearize_brackets(g.tree));
      } else {
        lines[i] = join(g.tree.yield());
      }
    } else {
      SampledSequence q = m.seq->sample(rng, a.max_length);
      valid[i] = std::holds_alternative<Tree>(delinearize_brackets(q.tokens));
      terminated[i] = q.terminated;
      log_probs[i] = q.log_prob;
      if (format == "tokens") {
        lines[i] = join(q.tokens);
      } else {
        std::vector<std::string> words;
        for (const auto& t : q.tokens) {
          if (!is_bracket_token(t)) words.push_back(t);
        }
        lines[i] = join(words);
      }
    }
  });

  Output out(a.out, ctx.out);
  for (const auto& l : lines) out.stream() << l << '\n';
  out.close();
  Manifest manifest(ctx, "generate");
  manifest.set("seed", seed);
  manifest.input(a.model);
  write_sidecar(manifest, out);

  const auto invalid = static_cast<std::size_t>(std::count(valid.begin(), valid.end(), 0));
  double mean_lp = 0.0;
  for (double lp : log_probs) mean_lp += lp;
  if (a.count > 0) mean_lp /= static_cast<double>(a.count);
  s.add("model", std::string(to_string(m.kind)));
  s.add("samples", a.count);
  s.add("invalid", invalid);
  if (!tree_model) s.add("unterminated", static_cast<std::size_t>(std::count(terminated.begin(), terminated.end(), 0)));
  s.add("mean_log_prob", mean_lp);
  s.add("seed", seed);
  if (out.is_file()) s.add("out", a.out);
  // Tree models guarantee valid output; anything else is a defect.
  return !tree_model || invalid == 0;
}

// ---------------------------------------------------------------- score

struct ScoreArgs {
  std::string model;
  std::string input;
  std::string out;
};

bool cmd_score(Context& ctx, const ScoreArgs& a, Summary& s) {
  LoadedModel m = load_model(a.model);
  const std::vector<Tree> trees = read_treebank(a.input);
  std::vector<double> scores(trees.size());
  parallel_for(trees.size(), ctx.globals.threads, [&](std::size_t i) {
    try {
      switch (m.kind) {
        case ModelKind::kTdtd: scores[i] = m.tdtd->tree_log_prob(trees[i]); break;
        case ModelKind::kTdtdP: {
          const auto words = trees[i].yield();
          scores[i] = m.parser->conditional_tree_log_prob(trees[i], words);
          break;
        }
        case ModelKind::kSeqLm: scores[i] = m.seq->sequence_log_prob(linearize_brackets(trees[i])); break;
      }
    } catch (const Error& e) {
      throw Error("tree " + std::to_string(i + 1) + ": " + e.what());
    }
  });
  Output out(a.out, ctx.out);
  std::size_t outside = 0;
  double total = 0.0;
  for (double v : scores) {
    out.stream() << ad::format_double(v) << '\n';
    if (std::isfinite(v)) {
      total += v;
    } else {
      ++outside;
    }
  }
  out.close();
  const std::size_t finite = scores.size() - outside;
  s.add("model", std::string(to_string(m.kind)));
  s.add("trees", trees.size());
  s.add("outside_caps", outside);
  s.add("mean_log_prob", finite > 0 ? total / static_cast<double>(finite) : std::nan(""));
  return true;
}

// ---------------------------------------------------------------- rerank

struct RerankArgs {
  std::string model;
  std::string candidates;
  std::string gold;
  std::string out;
};

bool cmd_rerank(Context& ctx, const RerankArgs& a, Summary& s) {
  LoadedModel m = load_model(a.model);
  if (m.kind != ModelKind::kTdtdP) throw Error("rerank needs a tdtd-p model, got " + std::string(to_string(m.kind)));
  const auto blocks = read_candidates(a.candidates);
  std::vector<std::vector<RankedCandidate>> rankings(blocks.size());
  parallel_for(blocks.size(), ctx.globals.threads,
               [&](std::size_t i) { rankings[i] = m.parser->rerank(blocks[i].sentence, blocks[i].candidates); });

  Output out(a.out, ctx.out);
  std::size_t total = 0;
  for (std::size_t i = 0; i < blocks.size(); ++i) {
    write_rerank_tsv(out.stream(), i, blocks[i].candidates, rankings[i]);
    total += blocks[i].candidates.size();
  }
  out.close();
  s.add("sentences", blocks.size());
  s.add("candidates", total);

  if (!a.gold.empty()) {
    const std::vector<Tree> gold = read_treebank(a.gold);
    if (gold.size() != blocks.size()) {
      throw Error("--gold has " + std::to_string(gold.size()) + " trees for " + std::to_string(blocks.size()) +
                  " candidate blocks");
    }
    std::vector<Tree> best;
    std::size_t top1 = 0;
    for (std::size_t i = 0; i < blocks.size(); ++i) {
      if (rankings[i].empty()) throw Error("candidate block " + std::to_string(i) + " is empty");
      best.push_back(blocks[i].candidates[rankings[i].front().index]);
      top1 += structurally_equal(best.back(), gold[i]) ? 1 : 0;
    }
    const BracketScore f1 = corpus_bracket_f1(best, gold);
    s.add("f1", f1.f1);
    s.add("exact_match", static_cast<double>(top1) / static_cast<double>(blocks.size()));
  }
  return true;
}

// ---------------------------------------------------------------- eval-*

struct ReportArgs {
  std::string tsv;
};

void emit_report(Context& ctx, const ReportArgs& r, const Summary& s) {
  if (!ctx.globals.json) s.write_table(ctx.out);
  if (!r.tsv.empty()) {
    Output out(r.tsv, ctx.out);
    s.write_tsv(out.stream());
    out.close();
  }
}

struct EvalNllArgs {
  ReportArgs report;
  std::string grammar;
  std::string samples;
  std::string format = "trees";
  double penalty = kDefaultUnseenPenalty;
  std::vector<std::string> start;
};

bool cmd_eval_nll(Context& ctx, const EvalNllArgs& a, Summary& s) {
  if (!(a.penalty > 0.0 && a.penalty <= 1.0)) throw Error("--penalty must lie in (0, 1]");
  const Grammar grammar = load_grammar_file(a.grammar, grammar_options(a.start));
  SampleReport r;
  if (a.format == "trees") {
    const auto trees = read_treebank(a.samples);
    r = sample_report(trees, grammar, a.penalty);
  } else {
    const auto seqs = read_sentences(a.samples, "text", /*keep_blank=*/true);
    r = sample_report(seqs, grammar, a.penalty);
  }
  s.add("samples", r.samples);
  s.add("nll", r.mean_nll);
  s.add("nll_per_node", r.mean_nll_per_node);
  s.add("fail_pct", 100.0 * r.fail_fraction);
  s.add("dup_pct", 100.0 * r.dup_fraction);
  emit_report(ctx, a.report, s);
  return true;
}

struct EvalBleuArgs {
  ReportArgs report;
  std::string candidates;
  std::string references;
  std::string format = "text";
  std::vector<std::size_t> orders{2, 3, 4, 5};
  std::string mode = "sentence";
};

bool cmd_eval_bleu(Context& ctx, const EvalBleuArgs& a, Summary& s) {
  const BleuMode mode = parse_bleu_mode(a.mode);
  const auto candidates = read_sentences(a.candidates, a.format, /*keep_blank=*/true);
  const auto references = read_sentences(a.references, a.format, /*keep_blank=*/false);
  s.add("candidates", candidates.size());
  s.add("references", references.size());
  s.add("mode", a.mode);
  for (std::size_t n : a.orders) s.add("bleu" + std::to_string(n), bleu(candidates, references, n, mode));
  emit_report(ctx, a.report, s);
  return true;
}

struct EvalF1Args {
  ReportArgs report;
  std::string predicted;
  std::string gold;
};

bool cmd_eval_f1(Context& ctx, const EvalF1Args& a, Summary& s) {
  const auto predicted = read_treebank(a.predicted);
  const auto gold = read_treebank(a.gold);
  const BracketScore f = corpus_bracket_f1(predicted, gold);
  s.add("trees", gold.size());
  s.add("matched", f.matched);
  s.add("predicted", f.predicted);
  s.add("gold", f.gold);
  s.add("precision", f.precision);
  s.add("recall", f.recall);
  s.add("f1", f.f1);
  emit_report(ctx, a.report, s);
  return true;
}

// ---------------------------------------------------------------- grad-check

struct GradCheckArgs {
  std::string model = "tdtd";
  double eps = 1e-5;
  double tolerance = 1e-4;
  std::size_t hidden = 8;
  std::size_t coords = 24;
  double init_scale = 1.0;
};

// Redraws every parameter uniformly in [-scale, scale]; 0 keeps the model's init.
void reinit(ad::ParamStore& params, double scale, std::uint64_t seed) {
  if (scale <= 0.0) return;
  Rng rng(sample_seed(seed, 0x1a17ULL));
  for (auto& [name, t] : params) {
    for (double& v : t.values) v = rng.uniform(-scale, scale);
  }
}

inline constexpr std::string_view kGradCheckTree = "(S (NP (DT the) (NN cat)) (VB sat))";

bool cmd_grad_check(Context& ctx, const GradCheckArgs& a, Summary& s) {
  const ModelKind kind = parse_model_kind(a.model);
  const std::uint64_t seed = ctx.globals.seed.value_or(env_seed().value_or(0));
  const Tree tree = parse_bracketed(kGradCheckTree);
  const std::vector<Tree> trees{tree};
  const std::vector<std::string> words = tree.yield();
  ad::GradCheckOptions opts;
  opts.eps = a.eps;
  opts.max_coords_per_tensor = a.coords;
  opts.seed = seed;

  ad::GradCheckResult r;
  switch (kind) {
    case ModelKind::kTdtd: {
      TdtdModel model(TdtdConfig{.hidden_size = a.hidden, .embed_size = a.hidden}, SymbolVocab::from_trees(trees, false),
                      seed);
      reinit(model.params(), a.init_scale, seed);
      r = ad::gradient_check([&](ad::Graph& g) { return g.scale(model.tree_log_prob(g, tree), -1.0); },
                             model.params(), opts);
      break;
    }
    case ModelKind::kTdtdP: {
      ParserConfig pc;
      pc.decoder.hidden_size = a.hidden;
      pc.decoder.embed_size = a.hidden;
      TdtdParser parser(pc, SymbolVocab::from_trees(trees, true), seed);
      reinit(parser.params(), a.init_scale, seed);
      r = ad::gradient_check(
          [&](ad::Graph& g) { return g.scale(parser.conditional_tree_log_prob(g, tree, words), -1.0); },
          parser.params(), opts);
      break;
    }
    case ModelKind::kSeqLm: {
      const std::vector<std::vector<std::string>> seqs{linearize_brackets(tree)};
      SeqLm model(SeqLmConfig{.hidden_size = a.hidden, .embed_size = a.hidden}, TokenVocab::from_sequences(seqs), seed);
      reinit(model.params(), a.init_scale, seed);
      r = ad::gradient_check([&](ad::Graph& g) { return g.scale(model.sequence_log_prob(g, seqs.front()), -1.0); },
                             model.params(), opts);
      break;
    }
  }
  s.add("model", std::string(to_string(kind)));
  s.add("max_rel_error", r.max_rel_error);
  s.add("tolerance", a.tolerance);
  s.add("coords", r.coords_checked);
  s.add("worst", r.worst_param + "[" + std::to_string(r.worst_index) + "]");
  s.add("analytic", r.worst_analytic);
  s.add("numeric", r.worst_numeric);
  return r.max_rel_error < a.tolerance;
}

// ---------------------------------------------------------------- corpus-filter

struct CorpusFilterArgs {
  std::string input;
  std::string format = "text";
  std::size_t min_len = 17;
  std::size_t max_len = 25;
  std::size_t freq_threshold = 180;
  std::size_t train_size = 80000;
  std::size_t test_size = 3000;
  std::string out_train;
  std::string out_test;
};

bool cmd_corpus_filter(Context& ctx, const CorpusFilterArgs& a, Summary& s) {
  const std::uint64_t seed = require_seed(ctx.globals);
  if (a.min_len > a.max_len) throw Error("--min-len exceeds --max-len");
  if (a.out_train.empty() || a.out_test.empty()) throw Error("--out-train and --out-test are required");

  // Each record keeps its original line so trees are written back unchanged.
  std::vector<std::string> lines;
  std::vector<std::vector<std::string>> sentences;
  if (a.format == "trees") {
    for (const Tree& t : read_treebank(a.input)) {
      lines.push_back(to_bracketed(t));
      sentences.push_back(t.yield());
    }
  } else {
    for (auto& line : read_lines(a.input)) {
      auto tokens = split_tokens(line);
      if (tokens.empty()) continue;
      sentences.push_back(std::move(tokens));
      lines.push_back(join(sentences.back()));
    }
  }

  std::unordered_map<std::string, std::size_t> freq;
  for (const auto& sent : sentences) {
    for (const auto& w : sent) ++freq[w];
  }
  std::vector<std::size_t> kept;
  for (std::size_t i = 0; i < sentences.size(); ++i) {
    const auto& sent = sentences[i];
    if (sent.size() < a.min_len || sent.size() > a.max_len) continue;
    const bool frequent =
        std::all_of(sent.begin(), sent.end(), [&](const std::string& w) { return freq[w] >= a.freq_threshold; });
    if (frequent) kept.push_back(i);
  }
  Rng rng(seed);
  for (std::size_t i = kept.size(); i > 1; --i) std::swap(kept[i - 1], kept[rng.below(i)]);

  const std::size_t n_test = std::min(a.test_size, kept.size());
  const std::size_t n_train = std::min(a.train_size, kept.size() - n_test);
  if (n_test < a.test_size || n_train < a.train_size) {
    ctx.err << "note: " << kept.size() << " sentences pass the filter; requested " << a.test_size << " test + "
            << a.train_size << " train\n";
  }
  Manifest manifest(ctx, "corpus-filter");
  manifest.set("seed", seed);
  manifest.input(a.input);
  {
    Output test(a.out_test, ctx.out);
    for (std::size_t i = 0; i < n_test; ++i) test.stream() << lines[kept[i]] << '\n';
    test.close();
    manifest.output(a.out_test);
  }
  {
    Output train(a.out_train, ctx.out);
    for (std::size_t i = n_test; i < n_test + n_train; ++i) train.stream() << lines[kept[i]] << '\n';
    train.close();
    manifest.output(a.out_train);
  }
  manifest.write(a.out_train + ".manifest.json");

  s.add("input", sentences.size());
  s.add("kept", kept.size());
  s.add("train", n_train);
  s.add("test", n_test);
  s.add("seed", seed);
  return true;
}

// ---------------------------------------------------------------- wiring

void add_report_options(CLI::App* cmd, ReportArgs& r) {
  cmd->add_option("--tsv", r.tsv, "Also write the report as a TSV file");
}

}  // namespace

int run(std::span<const std::string> args, std::ostream& out, std::ostream& err) {
  CLI::App app("Breadth-first tree generation, reranking and PCFG-oracle evaluation", "tdtd");
  app.require_subcommand(1);
  app.fallthrough();
  Globals globals;
  std::uint64_t seed_value = 0;
  app.add_flag("--json", globals.json, "Emit a JSON object before the summary line");
  app.add_option("--threads", globals.threads, "Worker threads for sampling and scoring")->check(CLI::PositiveNumber);
  CLI::Option* seed_opt = app.add_option("--seed", seed_value, "Random seed (falls back to TDTD_SEED)");

  GenDataArgs gen;
  auto* c_gen = app.add_subcommand("gen-data", "Sample a treebank from a PCFG");
  c_gen->add_option("--grammar", gen.grammar, "Rule file")->required()->check(CLI::ExistingFile);
  c_gen->add_option("--nodes", gen.nodes, "Nonterminal count per tree")->required();
  c_gen->add_option("--count", gen.count, "Number of trees")->capture_default_str();
  c_gen->add_option("--max-depth", gen.max_depth, "Depth cap")->capture_default_str();
  c_gen->add_option("--prune", gen.prune, "Drop rules below this probability")->capture_default_str();
  c_gen->add_flag("--no-renormalize", gen.no_renormalize, "Keep sampling weights after pruning");
  c_gen->add_option("--start", gen.start, "Start symbol (repeatable; default S and S_*)");
  c_gen->add_option("--out", gen.out, "Output treebank (default stdout)");

  TrainArgs tr;
  auto* c_train = app.add_subcommand("train", "Train a model and write runs/<name>/");
  c_train->add_option("--model", tr.model, "tdtd, tdtd-p or seq-lm");
  c_train->add_option("--config", tr.config, "Config file")->check(CLI::ExistingFile);
  c_train->add_option("--set", tr.sets, "Override a config key (key=value, repeatable)");
  c_train->add_option("--train", tr.train, "Training treebank");
  c_train->add_option("--dev", tr.dev, "Held-out treebank");
  c_train->add_option("--epochs", tr.epochs, "Epoch count");
  c_train->add_option("--name", tr.name, "Run name (default <model>-<seed>)");
  c_train->add_option("--runs-dir", tr.runs_dir, "Parent of run directories")->capture_default_str();
  c_train->add_option("--samples", tr.samples, "Samples to draw from the final model");

  GenerateArgs ge;
  auto* c_generate = app.add_subcommand("generate", "Sample trees or sequences from a model");
  c_generate->add_option("--model", ge.model, "Model file")->required()->check(CLI::ExistingFile);
  c_generate->add_option("--count", ge.count, "Number of samples")->capture_default_str();
  c_generate->add_flag("--greedy", ge.greedy, "Argmax decoding (tree models)");
  c_generate->add_option("--root", ge.root, "Fixed root label (tree models)");
  c_generate->add_option("--max-depth", ge.max_depth, "Override the depth cap");
  c_generate->add_option("--max-width", ge.max_width, "Override the layer-width cap");
  c_generate->add_option("--max-length", ge.max_length, "Override the sequence length cap");
  c_generate->add_option("--format", ge.format, "trees, tokens or text")
      ->check(CLI::IsMember({"trees", "tokens", "text"}));
  c_generate->add_option("--out", ge.out, "Output file (default stdout)");

  ScoreArgs sc;
  auto* c_score = app.add_subcommand("score", "Log-probability of each tree");
  c_score->add_option("--model", sc.model, "Model file")->required()->check(CLI::ExistingFile);
  c_score->add_option("--input", sc.input, "Treebank")->required()->check(CLI::ExistingFile);
  c_score->add_option("--out", sc.out, "Output file (default stdout)");

  RerankArgs rr;
  auto* c_rerank = app.add_subcommand("rerank", "Rank candidate parses with a tdtd-p model");
  c_rerank->add_option("--model", rr.model, "Model file")->required()->check(CLI::ExistingFile);
  c_rerank->add_option("--candidates", rr.candidates, "Candidate file")->required()->check(CLI::ExistingFile);
  c_rerank->add_option("--gold", rr.gold, "Gold trees, one per block")->check(CLI::ExistingFile);
  c_rerank->add_option("--out", rr.out, "Ranked TSV (default stdout)");

  EvalNllArgs en;
  auto* c_nll = app.add_subcommand("eval-nll", "Oracle NLL, Fail% and Dup% of samples");
  c_nll->add_option("--grammar", en.grammar, "Rule file")->required()->check(CLI::ExistingFile);
  c_nll->add_option("--samples", en.samples, "Samples file")->required()->check(CLI::ExistingFile);
  c_nll->add_option("--format", en.format, "trees or tokens")->check(CLI::IsMember({"trees", "tokens"}))
      ->capture_default_str();
  c_nll->add_option("--penalty", en.penalty, "Probability charged for unseen rules")->capture_default_str();
  c_nll->add_option("--start", en.start, "Start symbol (repeatable)");
  add_report_options(c_nll, en.report);

  EvalBleuArgs eb;
  auto* c_bleu = app.add_subcommand("eval-bleu", "BLEU-n of candidates against a reference set");
  c_bleu->add_option("--candidates", eb.candidates, "Candidate sentences")->required()->check(CLI::ExistingFile);
  c_bleu->add_option("--references", eb.references, "Reference sentences")->required()->check(CLI::ExistingFile);
  c_bleu->add_option("--format", eb.format, "text or trees")->check(CLI::IsMember({"text", "trees"}))
      ->capture_default_str();
  c_bleu->add_option("--n", eb.orders, "BLEU orders")->delimiter(',')->check(CLI::Range(1, 9));
  c_bleu->add_option("--bleu-mode", eb.mode, "sentence or corpus")->check(CLI::IsMember({"sentence", "corpus"}))
      ->capture_default_str();
  add_report_options(c_bleu, eb.report);

  EvalF1Args ef;
  auto* c_f1 = app.add_subcommand("eval-f1", "Labeled bracket F1");
  c_f1->add_option("--predicted", ef.predicted, "Predicted trees")->required()->check(CLI::ExistingFile);
  c_f1->add_option("--gold", ef.gold, "Gold trees")->required()->check(CLI::ExistingFile);
  add_report_options(c_f1, ef.report);

  GradCheckArgs gc;
  auto* c_grad = app.add_subcommand("grad-check", "Finite-difference gradient check on a fixed tree");
  c_grad->add_option("--model", gc.model, "tdtd, tdtd-p or seq-lm")->capture_default_str();
  c_grad->add_option("--eps", gc.eps, "Finite-difference step")->capture_default_str();
  c_grad->add_option("--tolerance", gc.tolerance, "Largest accepted relative error")->capture_default_str();
  c_grad->add_option("--hidden", gc.hidden, "Hidden and embedding size")->capture_default_str();
  c_grad->add_option("--coords", gc.coords, "Coordinates checked per tensor")->capture_default_str();
  c_grad->add_option("--init-scale", gc.init_scale, "Redraw parameters uniformly in [-s, s]")->capture_default_str();

  CorpusFilterArgs cf;
  auto* c_filter = app.add_subcommand("corpus-filter", "Length and word-frequency filter with a train/test split");
  c_filter->add_option("--input", cf.input, "Corpus")->required()->check(CLI::ExistingFile);
  c_filter->add_option("--format", cf.format, "text or trees")->check(CLI::IsMember({"text", "trees"}))
      ->capture_default_str();
  c_filter->add_option("--min-len", cf.min_len, "Shortest kept sentence")->capture_default_str();
  c_filter->add_option("--max-len", cf.max_len, "Longest kept sentence")->capture_default_str();
  c_filter->add_option("--freq-threshold", cf.freq_threshold, "Minimum corpus count of every word")
      ->capture_default_str();
  c_filter->add_option("--train-size", cf.train_size, "Training sentences")->capture_default_str();
  c_filter->add_option("--test-size", cf.test_size, "Test sentences")->capture_default_str();
  c_filter->add_option("--out-train", cf.out_train, "Training output")->required();
  c_filter->add_option("--out-test", cf.out_test, "Test output")->required();

  try {
    std::vector<std::string> reversed(args.rbegin(), args.rend());
    app.parse(reversed);
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() == 0) {
      out << app.help();
      return 0;
    }
    err << "error: " << e.what() << "\n\n" << app.help();
    return e.get_exit_code();
  }
  if (seed_opt->count() > 0) globals.seed = seed_value;

  Context ctx{out, err, globals, std::vector<std::string>(args.begin(), args.end())};
  const CLI::App* chosen = app.get_subcommands().front();
  Summary summary(chosen->get_name());
  try {
    bool ok = false;
    if (chosen == c_gen) ok = cmd_gen_data(ctx, gen, summary);
    else if (chosen == c_train) ok = cmd_train(ctx, tr, summary);
    else if (chosen == c_generate) ok = cmd_generate(ctx, ge, summary);
    else if (chosen == c_score) ok = cmd_score(ctx, sc, summary);
    else if (chosen == c_rerank) ok = cmd_rerank(ctx, rr, summary);
    else if (chosen == c_nll) ok = cmd_eval_nll(ctx, en, summary);
    else if (chosen == c_bleu) ok = cmd_eval_bleu(ctx, eb, summary);
    else if (chosen == c_f1) ok = cmd_eval_f1(ctx, ef, summary);
    else if (chosen == c_grad) ok = cmd_grad_check(ctx, gc, summary);
    else if (chosen == c_filter) ok = cmd_corpus_filter(ctx, cf, summary);
    summary.emit(ctx, ok);
    return ok ? 0 : 1;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    Summary failed(summary.command());
    failed.emit(ctx, false);
    return 1;
  }
}

int run(int argc, const char* const* argv) {
  std::vector<std::string> args;
  for (int i = 1; i < argc; ++i) args.emplace_back(argv[i]);
  return run(args, std::cout, std::cerr);
}

}  // namespace tdtd::cli
