#include "tdtd/pcfg.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <limits>
#include <set>
#include <sstream>

#include "tdtd/error.hpp"

namespace tdtd {

std::span<const std::size_t> Grammar::rules_for(std::string_view lhs) const {
  auto it = by_lhs_.find(lhs);
  if (it == by_lhs_.end()) return {};
  return it->second;
}

std::optional<std::size_t> Grammar::find(std::string_view lhs,
                                         std::span<const GrammarSymbol> rhs) const {
  // Scan the lhs bucket: buckets are small and this avoids building a key.
  for (std::size_t idx : rules_for(lhs)) {
    const Rule& r = rules_[idx];
    if (r.rhs.size() == rhs.size() && std::equal(r.rhs.begin(), r.rhs.end(), rhs.begin())) {
      return idx;
    }
  }
  return std::nullopt;
}

bool Grammar::is_nonterminal(std::string_view symbol) const {
  return by_lhs_.find(symbol) != by_lhs_.end();
}

std::vector<std::string> Grammar::nonterminals() const {
  std::set<std::string> out;
  for (const Rule& r : rules_) {
    out.insert(r.lhs);
    for (const auto& s : r.rhs) {
      if (!s.terminal) out.insert(s.name);
    }
  }
  return {out.begin(), out.end()};
}

std::vector<std::string> Grammar::terminals() const {
  std::set<std::string> out;
  for (const Rule& r : rules_) {
    for (const auto& s : r.rhs) {
      if (s.terminal) out.insert(s.name);
    }
  }
  return {out.begin(), out.end()};
}

void Grammar::rebuild_index() {
  by_lhs_.clear();
  by_rule_.clear();
  for (std::size_t i = 0; i < rules_.size(); ++i) {
    by_lhs_[rules_[i].lhs].push_back(i);
    by_rule_.emplace(std::make_pair(rules_[i].lhs, rules_[i].rhs), i);
  }
}

namespace {

std::vector<std::string_view> split_fields(std::string_view line) {
  std::vector<std::string_view> out;
  std::size_t i = 0;
  while (i < line.size()) {
    while (i < line.size() && (line[i] == ' ' || line[i] == '\t' || line[i] == '\r')) ++i;
    std::size_t j = i;
    while (j < line.size() && line[j] != ' ' && line[j] != '\t' && line[j] != '\r') ++j;
    if (j > i) out.push_back(line.substr(i, j - i));
    i = j;
  }
  return out;
}

GrammarSymbol to_symbol(std::string_view field) {
  if (field.size() >= 2 && field.front() == '"' && field.back() == '"') {
    return {std::string(field.substr(1, field.size() - 2)), true};
  }
  return {std::string(field), false};
}

bool is_s_family(std::string_view name) {
  return name == "S" || (name.size() > 2 && name.substr(0, 2) == "S_");
}

}  // namespace

Grammar load_grammar(std::string_view text, const GrammarOptions& options) {
  Grammar g;
  std::map<std::string, std::size_t> first_use;  // nonterminal -> line it first appears on an rhs
  std::size_t lineno = 0;
  std::size_t pos = 0;
  while (pos <= text.size()) {
    std::size_t end = text.find('\n', pos);
    if (end == std::string_view::npos) end = text.size();
    const std::string_view line = text.substr(pos, end - pos);
    pos = end + 1;
    ++lineno;
    auto fields = split_fields(line);
    if (fields.empty() || fields.front().front() == '#') continue;
    auto fail = [&](const std::string& what) {
      return ParseError("grammar line " + std::to_string(lineno) + ": " + what, lineno);
    };
    if (fields.size() < 3 || fields.size() > 4) {
      throw fail("expected 'LHS RHS1 [RHS2] PROB' (right-hand side must have 1 or 2 symbols, got " +
                 std::to_string(fields.size() < 2 ? 0 : fields.size() - 2) + ")");
    }
    Rule r;
    r.line = lineno;
    GrammarSymbol lhs = to_symbol(fields.front());
    if (lhs.terminal || lhs.name.empty()) throw fail("left-hand side must be a nonterminal");
    r.lhs = lhs.name;
    for (std::size_t k = 1; k + 1 < fields.size(); ++k) {
      GrammarSymbol s = to_symbol(fields[k]);
      if (s.name.empty()) throw fail("empty symbol");
      if (!s.terminal) first_use.emplace(s.name, lineno);
      r.rhs.push_back(std::move(s));
    }
    const std::string_view prob_field = fields.back();
    double p = 0.0;
    auto res = std::from_chars(prob_field.data(), prob_field.data() + prob_field.size(), p);
    if (res.ec != std::errc() || res.ptr != prob_field.data() + prob_field.size()) {
      throw fail("bad probability '" + std::string(prob_field) + "'");
    }
    if (!(p > 0.0 && p <= 1.0)) {
      throw fail("probability " + std::string(prob_field) + " outside (0, 1]");
    }
    r.prob = p;
    auto key = std::make_pair(r.lhs, r.rhs);
    if (auto it = g.by_rule_.find(key); it != g.by_rule_.end()) {
      throw fail("duplicate rule (first defined on line " +
                 std::to_string(g.rules_[it->second].line) + ")");
    }
    g.by_rule_.emplace(std::move(key), g.rules_.size());
    g.by_lhs_[r.lhs].push_back(g.rules_.size());
    g.rules_.push_back(std::move(r));
  }
  if (g.rules_.empty()) throw ParseError("grammar has no rules", 0);

  for (auto& [lhs, ids] : g.by_lhs_) {
    double total = 0.0;
    for (std::size_t i : ids) total += g.rules_[i].prob;
    for (std::size_t i : ids) g.rules_[i].sample_prob = g.rules_[i].prob / total;
  }

  if (!options.start_symbols.empty()) {
    g.start_set_ = options.start_symbols;
  } else {
    for (const auto& [lhs, ids] : g.by_lhs_) {
      if (is_s_family(lhs)) g.start_set_.push_back(lhs);
    }
  }
  std::sort(g.start_set_.begin(), g.start_set_.end());
  g.start_set_.erase(std::unique(g.start_set_.begin(), g.start_set_.end()), g.start_set_.end());
  if (g.start_set_.empty()) {
    throw ParseError("grammar has no start symbols (no S or S_* nonterminal)", 0);
  }
  for (const auto& s : g.start_set_) {
    if (!g.is_nonterminal(s)) throw ParseError("start symbol '" + s + "' has no rules", 0);
  }

  // Every nonterminal reachable from the start set must have rules.
  std::set<std::string> seen(g.start_set_.begin(), g.start_set_.end());
  std::vector<std::string> frontier(g.start_set_.begin(), g.start_set_.end());
  while (!frontier.empty()) {
    const std::string sym = std::move(frontier.back());
    frontier.pop_back();
    for (std::size_t i : g.rules_for(sym)) {
      for (const auto& s : g.rules_[i].rhs) {
        if (s.terminal || !seen.insert(s.name).second) continue;
        if (!g.is_nonterminal(s.name)) {
          const std::size_t at = first_use.count(s.name) ? first_use.at(s.name) : 0;
          throw ParseError("grammar line " + std::to_string(at) + ": nonterminal '" + s.name +
                               "' is reachable from the start set but has no rules",
                           at);
        }
        frontier.push_back(s.name);
      }
    }
  }
  return g;
}

Grammar load_grammar_file(const std::filesystem::path& path, const GrammarOptions& options) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open grammar '" + path.string() + "'");
  std::ostringstream buf;
  buf << in.rdbuf();
  return load_grammar(buf.str(), options);
}

Grammar prune_grammar(const Grammar& grammar, double threshold, bool renormalize) {
  if (!(threshold >= 0.0)) throw ContractError("prune_grammar: threshold must be >= 0");
  Grammar out;
  out.start_set_ = grammar.start_set_;
  for (const Rule& r : grammar.rules_) {
    if (r.prob >= threshold) out.rules_.push_back(r);
  }
  out.rebuild_index();
  for (const auto& s : out.start_set_) {
    if (out.rules_for(s).empty()) {
      throw Error("prune_grammar: start symbol '" + s + "' has no rules left at threshold " +
                  std::to_string(threshold));
    }
  }
  if (renormalize) {
    for (auto& [lhs, ids] : out.by_lhs_) {
      double total = 0.0;
      for (std::size_t i : ids) total += out.rules_[i].prob;
      for (std::size_t i : ids) out.rules_[i].sample_prob = out.rules_[i].prob / total;
    }
  }
  return out;
}

namespace {

// Draws one rule for `lhs`; nullopt when the draw lands in missing mass or the
// symbol has no rules.
std::optional<std::size_t> draw_rule(const Grammar& g, std::string_view lhs, Rng& rng) {
  auto ids = g.rules_for(lhs);
  if (ids.empty()) return std::nullopt;
  const double u = rng.uniform();
  double acc = 0.0;
  for (std::size_t i : ids) {
    acc += g.rules()[i].sample_prob;
    if (u < acc) return i;
  }
  // Normalized weights can sum to slightly below one.
  if (acc > 1.0 - 1e-9) return ids.back();
  return std::nullopt;
}

// One attempt. Rejects when the depth cap or `max_nonterminals` is exceeded.
std::optional<Tree> try_sample(const Grammar& g, std::size_t max_depth,
                               std::size_t max_nonterminals, Rng& rng) {
  const auto& starts = g.start_set();
  TreeBuilder builder;
  struct Pending {
    int node;
    std::size_t depth;
  };
  std::vector<Pending> stack;
  stack.push_back({builder.add_nonterminal(starts[rng.below(starts.size())]), 0});
  std::size_t nonterminals = 1;
  while (!stack.empty()) {
    const Pending p = stack.back();
    stack.pop_back();
    if (p.depth + 1 > max_depth) return std::nullopt;
    const auto rule_id = draw_rule(g, builder.node(p.node).label, rng);
    if (!rule_id) return std::nullopt;
    const Rule& rule = g.rules()[*rule_id];
    std::vector<Pending> children;
    for (const auto& s : rule.rhs) {
      if (s.terminal) {
        builder.add_terminal(s.name, p.node);
      } else {
        if (++nonterminals > max_nonterminals) return std::nullopt;
        children.push_back({builder.add_nonterminal(s.name, p.node), p.depth + 1});
      }
    }
    // Push right-to-left so expansion proceeds left-to-right.
    for (auto it = children.rbegin(); it != children.rend(); ++it) stack.push_back(*it);
  }
  return std::move(builder).build();
}

}  // namespace

Tree sample_tree(const Grammar& grammar, std::size_t max_depth, Rng& rng) {
  if (max_depth < 1) throw ContractError("sample_tree: max_depth must be >= 1");
  constexpr std::size_t kMaxRejections = 10000;
  for (std::size_t attempt = 0; attempt < kMaxRejections; ++attempt) {
    if (auto t = try_sample(grammar, max_depth, std::numeric_limits<std::size_t>::max(), rng)) {
      return std::move(*t);
    }
  }
  throw Error("sample_tree: " + std::to_string(kMaxRejections) +
              " consecutive rejections; the start set cannot finish within depth " +
              std::to_string(max_depth));
}

std::vector<double> oracle_nll_terms(const Grammar& grammar, const Tree& tree,
                                     double penalty_prob, bool strict_root) {
  if (tree.empty()) throw ContractError("oracle_nll: empty tree");
  if (!(penalty_prob > 0.0 && penalty_prob <= 1.0)) {
    throw ContractError("oracle_nll: penalty probability must lie in (0, 1]");
  }
  const TreeNode& root = tree.node(tree.root());
  if (strict_root && (root.is_terminal() || !grammar.is_nonterminal(root.label))) {
    throw Error("oracle_nll: root label '" + root.label + "' is not a nonterminal of the grammar");
  }
  const double penalty = -std::log(penalty_prob);
  std::vector<double> terms(tree.size(), 0.0);
  std::vector<GrammarSymbol> rhs;
  for (std::size_t i = 0; i < tree.size(); ++i) {
    const TreeNode& n = tree.nodes()[i];
    if (n.is_terminal()) continue;
    rhs.clear();
    for (int c : n.children) {
      const TreeNode& child = tree.node(c);
      rhs.push_back({child.label, child.is_terminal()});
    }
    const auto rule = grammar.find(n.label, rhs);
    terms[i] = rule ? -std::log(grammar.rules()[*rule].prob) : penalty;
  }
  return terms;
}

double oracle_nll(const Grammar& grammar, const Tree& tree, double penalty_prob, bool strict_root) {
  double total = 0.0;
  for (double t : oracle_nll_terms(grammar, tree, penalty_prob, strict_root)) total += t;
  return total;
}

std::vector<Tree> generate_dataset(const Grammar& grammar, const DatasetSpec& spec) {
  if (spec.count == 0) throw ContractError("generate_dataset: count must be >= 1");
  if (spec.target_nodes == 0) throw ContractError("generate_dataset: target_nodes must be >= 1");
  const std::size_t budget =
      spec.max_attempts > 0 ? spec.max_attempts : std::max<std::size_t>(1000000, 1000 * spec.count);
  Rng rng(spec.seed);
  std::vector<Tree> out;
  out.reserve(spec.count);
  std::size_t attempts = 0;
  while (out.size() < spec.count) {
    if (attempts == budget) {
      const double rate = static_cast<double>(out.size()) / static_cast<double>(attempts);
      std::ostringstream msg;
      msg << "generate_dataset: rejection budget of " << budget << " attempts exhausted with "
          << out.size() << "/" << spec.count << " trees of " << spec.target_nodes
          << " nodes (acceptance rate " << rate << ")";
      throw Error(msg.str());
    }
    ++attempts;
    auto t = try_sample(grammar, spec.max_depth, spec.target_nodes, rng);
    if (t && t->nonterminal_count() == spec.target_nodes) out.push_back(std::move(*t));
  }
  return out;
}

}  // namespace tdtd
