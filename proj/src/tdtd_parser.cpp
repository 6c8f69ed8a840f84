#include "tdtd/tdtd_parser.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <sstream>

#include "tdtd/error.hpp"
#include "tdtd/model_file.hpp"

namespace tdtd {

namespace {

constexpr std::string_view kKind = "tdtd-p";

TdtdConfig with_context(TdtdConfig c) {
  c.context_size = 2 * c.hidden_size;
  return c;
}

}  // namespace

TdtdParser::TdtdParser(ParserConfig config, SymbolVocab vocab, std::uint64_t seed)
    : config_(config),
      model_(with_context(config.decoder), std::move(vocab), seed, [&](ad::ParamStore& store) {
        const std::size_t H = config.decoder.hidden_size;
        const std::size_t E = config.decoder.embed_size;
        GruCell::declare(store, "enc.fwd", E, H);
        GruCell::declare(store, "enc.bwd", E, H);
        store.add("enc.fwd_h0", {H});
        store.add("enc.bwd_h0", {H});
        store.add("root.in_w", {2 * H, E});
        store.add("root.in_b", {E});
        store.add("root.ctx_w", {2 * H, 2 * H});
        store.add("root.ctx_b", {2 * H});
        store.add("attn.query_w", {3 * H, 2 * H});
      }) {
  config_.decoder = model_.config();
  ad::ParamStore& p = model_.params();
  enc_fwd_ = GruCell::bind(p, "enc.fwd");
  enc_bwd_ = GruCell::bind(p, "enc.bwd");
  enc_fwd_h0_ = &p.at("enc.fwd_h0");
  enc_bwd_h0_ = &p.at("enc.bwd_h0");
  root_in_w_ = &p.at("root.in_w");
  root_in_b_ = &p.at("root.in_b");
  root_ctx_w_ = &p.at("root.ctx_w");
  root_ctx_b_ = &p.at("root.ctx_b");
  query_w_ = &p.at("attn.query_w");
}

SentenceEncoding TdtdParser::encode_sentence(ad::Graph& g, std::span<const std::string> tokens) const {
  if (tokens.empty()) throw ContractError("encode_sentence: empty sentence");
  const SymbolVocab& vocab = model_.vocab();
  const std::size_t n = tokens.size();
  std::vector<ad::Var> inputs(n);
  for (std::size_t i = 0; i < n; ++i) {
    inputs[i] = model_.embedding(g, vocab.terminal_symbol(vocab.terminal_index(tokens[i])));
  }
  std::vector<ad::Var> fwd(n), bwd(n);
  ad::Var h = g.param(*enc_fwd_h0_);
  for (std::size_t i = 0; i < n; ++i) fwd[i] = h = enc_fwd_.step(g, h, inputs[i]);
  h = g.param(*enc_bwd_h0_);
  for (std::size_t i = n; i-- > 0;) bwd[i] = h = enc_bwd_.step(g, h, inputs[i]);
  std::vector<ad::Var> rows(n);
  for (std::size_t i = 0; i < n; ++i) rows[i] = g.concat({fwd[i], bwd[i]});
  SentenceEncoding enc;
  enc.states = g.stack_rows(rows);
  enc.summary = g.concat({fwd.back(), bwd.front()});
  enc.length = n;
  return enc;
}

Attention TdtdParser::attend(ad::Graph& g, ad::Var query, const SentenceEncoding& enc) const {
  const ad::Var projected = g.affine(query, g.param(*query_w_));
  ad::Var scores = g.affine(projected, g.transpose(enc.states));
  if (config_.scaled_attention) {
    scores = g.scale(scores, 1.0 / std::sqrt(static_cast<double>(2 * config_.decoder.hidden_size)));
  }
  Attention a;
  a.weights = g.exp(g.log_softmax(scores));
  a.context = g.affine(a.weights, enc.states);
  return a;
}

Conditioning TdtdParser::conditioning(ad::Graph& g, const SentenceEncoding& enc) const {
  Conditioning c;
  c.root_input = g.tanh(g.affine(enc.summary, g.param(*root_in_w_), g.param(*root_in_b_)));
  c.root_context = g.tanh(g.affine(enc.summary, g.param(*root_ctx_w_), g.param(*root_ctx_b_)));
  if (zero_attention_) {
    const std::size_t width = 2 * config_.decoder.hidden_size;
    c.attend = [width](ad::Graph& gr, ad::Var) { return gr.zeros(width); };
  } else {
    c.attend = [this, enc](ad::Graph& gr, ad::Var query) { return attend(gr, query, enc).context; };
  }
  return c;
}

void check_yield(const Tree& tree, std::span<const std::string> tokens) {
  const auto words = tree.yield();
  const std::size_t n = std::min(words.size(), tokens.size());
  for (std::size_t i = 0; i < n; ++i) {
    if (words[i] != tokens[i]) {
      throw Error("tree yield differs from the sentence at position " + std::to_string(i) + ": '" +
                  words[i] + "' vs '" + tokens[i] + "'");
    }
  }
  if (words.size() != tokens.size()) {
    throw Error("tree yield differs from the sentence at position " + std::to_string(n) + ": yield has " +
                std::to_string(words.size()) + " words, sentence has " + std::to_string(tokens.size()));
  }
}

ad::Var TdtdParser::conditional_tree_log_prob(ad::Graph& g, const Tree& tree,
                                              std::span<const std::string> tokens,
                                              const TeacherForcing& tf) const {
  check_yield(tree, tokens);
  const SentenceEncoding enc = encode_sentence(g, tokens);
  const Conditioning cond = conditioning(g, enc);
  return model_.tree_log_prob(g, tree, &cond, tf);
}

double TdtdParser::conditional_tree_log_prob(const Tree& tree, std::span<const std::string> tokens) const {
  ad::Graph g;
  return g.scalar_value(conditional_tree_log_prob(g, tree, tokens));
}

std::vector<RankedCandidate> TdtdParser::rerank(std::span<const std::string> tokens,
                                                std::span<const Tree> candidates) const {
  if (candidates.empty()) throw ContractError("rerank: no candidates");
  for (const Tree& t : candidates) check_yield(t, tokens);
  std::vector<RankedCandidate> out;
  out.reserve(candidates.size());
  for (std::size_t i = 0; i < candidates.size(); ++i) {
    // Fresh graph per candidate keeps memory flat; the encoding is cheap next
    // to the tree walk.
    ad::Graph g;
    const SentenceEncoding enc = encode_sentence(g, tokens);
    const Conditioning cond = conditioning(g, enc);
    double score;
    try {
      score = g.scalar_value(model_.tree_log_prob(g, candidates[i], &cond));
    } catch (const Error&) {
      // Candidates outside the model's caps or vocabulary rank last.
      score = -std::numeric_limits<double>::infinity();
    }
    out.push_back({i, score});
  }
  std::stable_sort(out.begin(), out.end(),
                   [](const RankedCandidate& a, const RankedCandidate& b) { return a.score > b.score; });
  return out;
}

void TdtdParser::save(std::ostream& out) const {
  const TdtdConfig& c = config_.decoder;
  ModelHeader header;
  header.kind = std::string(kKind);
  header.settings = {
      {"hidden_size", std::to_string(c.hidden_size)},
      {"embed_size", std::to_string(c.embed_size)},
      {"max_depth", std::to_string(c.max_depth)},
      {"max_children_per_node", std::to_string(c.max_children_per_node)},
      {"max_layer_width", std::to_string(c.max_layer_width)},
      {"scaled_attention", config_.scaled_attention ? "1" : "0"},
  };
  header.lists = {{"nonterminals", model_.vocab().nonterminals()}, {"terminals", model_.vocab().terminals()}};
  write_model_file(out, header, model_.params());
}

void TdtdParser::save(const std::filesystem::path& path) const {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write model '" + path.string() + "'");
  save(out);
}

TdtdParser TdtdParser::load(std::istream& in) {
  ModelFile file = read_model_file(in);
  if (file.header.kind != kKind) {
    throw Error("model file holds a '" + file.header.kind + "' model, expected '" + std::string(kKind) + "'");
  }
  ParserConfig config;
  config.decoder.hidden_size = file.header.setting_size("hidden_size");
  config.decoder.embed_size = file.header.setting_size("embed_size");
  config.decoder.max_depth = file.header.setting_size("max_depth");
  config.decoder.max_children_per_node = file.header.setting_size("max_children_per_node");
  config.decoder.max_layer_width = file.header.setting_size("max_layer_width");
  config.scaled_attention = file.header.setting_size("scaled_attention") != 0;
  TdtdParser parser(config, SymbolVocab(file.header.list("nonterminals"), file.header.list("terminals")));
  ad::assign_params(parser.params(), file.params);
  return parser;
}

TdtdParser TdtdParser::load(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open model '" + path.string() + "'");
  return load(in);
}

std::vector<CandidateBlock> read_candidates(std::istream& in) {
  std::vector<CandidateBlock> blocks;
  std::string line;
  std::size_t lineno = 0;
  bool open = false;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.find_first_not_of(" \t") == std::string::npos) {
      open = false;
      continue;
    }
    if (!open) {
      blocks.emplace_back();
      blocks.back().sentence = split_tokens(line);
      open = true;
      continue;
    }
    try {
      blocks.back().candidates.push_back(parse_bracketed(line));
    } catch (const ParseError& e) {
      throw ParseError("candidates line " + std::to_string(lineno) + ": " + e.what(), lineno);
    }
  }
  for (std::size_t i = 0; i < blocks.size(); ++i) {
    if (blocks[i].candidates.empty()) {
      throw ParseError("candidate block " + std::to_string(i) + " has no candidates", 0);
    }
  }
  return blocks;
}

std::vector<CandidateBlock> read_candidates(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open candidates '" + path.string() + "'");
  return read_candidates(in);
}

void write_candidates(std::span<const CandidateBlock> blocks, std::ostream& out) {
  for (std::size_t b = 0; b < blocks.size(); ++b) {
    if (b > 0) out << '\n';
    const auto& words = blocks[b].sentence;
    for (std::size_t i = 0; i < words.size(); ++i) out << (i ? " " : "") << words[i];
    out << '\n';
    for (const Tree& t : blocks[b].candidates) out << to_bracketed(t) << '\n';
  }
}

void write_rerank_tsv(std::ostream& out, std::size_t sentence_index, std::span<const Tree> candidates,
                      std::span<const RankedCandidate> ranking) {
  for (std::size_t r = 0; r < ranking.size(); ++r) {
    out << sentence_index << '\t' << r + 1 << '\t' << ad::format_double(ranking[r].score) << '\t'
        << to_bracketed(candidates[ranking[r].index]) << '\n';
  }
}

}  // namespace tdtd
