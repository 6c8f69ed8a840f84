#pragma once

// PCFG oracle: rule-file loading, pruning, constrained tree sampling, dataset
// generation and oracle negative log-likelihood.

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "tdtd/rng.hpp"
#include "tdtd/tree.hpp"

namespace tdtd {

struct GrammarSymbol {
  std::string name;
  bool terminal = false;

  friend bool operator==(const GrammarSymbol&, const GrammarSymbol&) = default;
  friend auto operator<=>(const GrammarSymbol&, const GrammarSymbol&) = default;
};

struct Rule {
  std::string lhs;
  std::vector<GrammarSymbol> rhs;  // one or two symbols
  double prob = 0.0;               // as written in the rule file; used for scoring
  double sample_prob = 0.0;        // per-lhs sampling weight
  std::size_t line = 0;
};

struct GrammarOptions {
  // Start symbols. When empty, every nonterminal named `S` or `S_*` is used.
  std::vector<std::string> start_symbols;
};

class Grammar {
 public:
  const std::vector<Rule>& rules() const noexcept { return rules_; }
  const std::vector<std::string>& start_set() const noexcept { return start_set_; }
  // Rule indices for `lhs`, in file order; empty for unknown symbols.
  std::span<const std::size_t> rules_for(std::string_view lhs) const;
  std::optional<std::size_t> find(std::string_view lhs, std::span<const GrammarSymbol> rhs) const;
  bool is_nonterminal(std::string_view symbol) const;
  std::vector<std::string> nonterminals() const;
  std::vector<std::string> terminals() const;

 private:
  friend Grammar load_grammar(std::string_view, const GrammarOptions&);
  friend Grammar prune_grammar(const Grammar&, double, bool);
  void rebuild_index();

  std::vector<Rule> rules_;
  std::vector<std::string> start_set_;
  std::map<std::string, std::vector<std::size_t>, std::less<>> by_lhs_;
  std::map<std::pair<std::string, std::vector<GrammarSymbol>>, std::size_t> by_rule_;
};

// Rule file: `LHS RHS1 [RHS2] PROB` per line, terminals in double quotes,
// `#` comments. Sampling weights are normalized per lhs. Errors are
// ParseError carrying the 1-based line number.
Grammar load_grammar(std::string_view text, const GrammarOptions& options = {});
Grammar load_grammar_file(const std::filesystem::path& path, const GrammarOptions& options = {});

inline constexpr double kDefaultPruneThreshold = 1e-6;
inline constexpr double kDefaultUnseenPenalty = 1e-6;
inline constexpr std::size_t kDefaultOracleMaxDepth = 7;

// Drops rules with prob < threshold. With `renormalize`, sampling weights of
// the survivors are rescaled to sum to one per lhs; otherwise they keep their
// original values and the missing mass becomes a rejection during sampling.
// Scoring probabilities are never changed.
Grammar prune_grammar(const Grammar& grammar, double threshold = kDefaultPruneThreshold,
                      bool renormalize = true);

// Root uniform over the start set, expansions drawn from the sampling weights,
// and the whole tree redrawn when it exceeds `max_depth` or cannot finish.
// Throws after 10,000 consecutive rejections.
Tree sample_tree(const Grammar& grammar, std::size_t max_depth, Rng& rng);

// -sum over nonterminal nodes of log P(children | node), natural log. Unseen
// productions cost -log(penalty_prob). With `strict_root`, throws if the root
// label is not a nonterminal of the grammar; otherwise such a root's
// production is simply unseen.
double oracle_nll(const Grammar& grammar, const Tree& tree,
                  double penalty_prob = kDefaultUnseenPenalty, bool strict_root = true);

// Per-node contributions in node order (0 for terminals); sums to oracle_nll.
std::vector<double> oracle_nll_terms(const Grammar& grammar, const Tree& tree,
                                     double penalty_prob = kDefaultUnseenPenalty,
                                     bool strict_root = true);

struct DatasetSpec {
  std::size_t count = 10000;
  std::size_t target_nodes = 10;  // nonterminals, preterminals included
  std::size_t max_depth = kDefaultOracleMaxDepth;
  std::uint64_t seed = 0;
  // Sampling attempts before giving up; 0 means max(1e6, 1000 * count).
  std::size_t max_attempts = 0;
};

std::vector<Tree> generate_dataset(const Grammar& grammar, const DatasetSpec& spec);

}  // namespace tdtd
