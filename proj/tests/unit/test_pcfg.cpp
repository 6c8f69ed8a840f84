#include <cmath>
#include <map>
#include <string>
#include <vector>

#include "doctest.h"
#include "support.hpp"
#include "tdtd/error.hpp"
#include "tdtd/pcfg.hpp"

using namespace tdtd;
using tdtd::testing::kExampleTree;
using tdtd::testing::kNllGrammar;
using tdtd::testing::toy_grammar;

namespace {

std::size_t error_line(const std::string& text) {
  try {
    load_grammar(text);
  } catch (const ParseError& e) {
    return e.position();
  }
  FAIL("expected a parse error");
  return 0;
}

// Non-recursive grammar: every derivation is shallower than the depth cap,
// so sampling never rejects and rule frequencies follow the weights exactly.
constexpr const char* kFlatGrammar =
    "S_a A B 0.3\n"
    "S_a B A 0.5\n"
    "S_a A 0.2\n"
    "S_b B 1.0\n"
    "A \"x\" 0.6\n"
    "A \"y\" 0.4\n"
    "B A A 0.5\n"
    "B \"z\" 0.5\n";

std::string subtree_text(const Tree& t, int id) {
  const TreeNode& n = t.node(id);
  if (n.is_terminal()) return n.label;
  std::string out = "(" + n.label;
  for (int c : n.children) out += " " + subtree_text(t, c);
  return out + ")";
}

}  // namespace

TEST_SUITE("pcfg") {

TEST_CASE("rule lines in the production-table format") {
  GrammarOptions o;
  o.start_symbols = {"NP_13"};
  const Grammar g = load_grammar(
      "NP_13 DT_1 NN_42 0.907\n"
      "ADJP_21 JJ_37 0.959\n"
      "DT_1 \"the\" 1.0\n"
      "NN_42 \"cat\" 1.0\n"
      "JJ_37 \"big\" 1.0\n",
      o);
  const Rule& binary = g.rules()[0];
  CHECK(binary.lhs == "NP_13");
  REQUIRE(binary.rhs.size() == 2);
  CHECK(binary.rhs[0] == GrammarSymbol{"DT_1", false});
  CHECK(binary.rhs[1] == GrammarSymbol{"NN_42", false});
  CHECK(binary.prob == 0.907);
  const Rule& unary = g.rules()[1];
  CHECK(unary.lhs == "ADJP_21");
  REQUIRE(unary.rhs.size() == 1);
  CHECK(unary.prob == 0.959);
  CHECK(g.rules()[2].rhs[0] == GrammarSymbol{"the", true});
  CHECK(g.start_set() == std::vector<std::string>{"NP_13"});
}

TEST_CASE("grammar load errors carry line numbers") {
  CHECK(error_line("S \"a\" 1.0\nS \"b\" 1.5\n") == 2);
  CHECK(error_line("S \"a\" 0\n") == 1);
  CHECK(error_line("S \"a\" \"b\" \"c\" 1.0\n") == 1);
  CHECK(error_line("S \"a\" 0.5\n# comment\nS \"a\" 0.5\n") == 3);
  CHECK(error_line("S \"a\" abc\n") == 1);
  CHECK(error_line("\"S\" \"a\" 1.0\n") == 1);
  CHECK_THROWS_AS(load_grammar("# nothing\n"), ParseError);
}

TEST_CASE("default start set is every S or S_* nonterminal") {
  CHECK(toy_grammar().start_set() == std::vector<std::string>{"S_0", "S_1"});
  GrammarOptions o;
  o.start_symbols = {"X"};
  CHECK_THROWS_AS(load_grammar("S \"a\" 1.0\n", o), ParseError);
}

TEST_CASE("pruning at threshold zero is the identity") {
  const Grammar g = load_grammar(kFlatGrammar);
  const Grammar p = prune_grammar(g, 0.0);
  REQUIRE(p.rules().size() == g.rules().size());
  for (std::size_t i = 0; i < g.rules().size(); ++i) {
    CHECK(p.rules()[i].prob == g.rules()[i].prob);
    CHECK(p.rules()[i].sample_prob == doctest::Approx(g.rules()[i].sample_prob).epsilon(1e-15));
  }
}

TEST_CASE("pruning drops a tiny rule and renormalizes the survivor") {
  const Grammar g = load_grammar("S \"a\" 0.9999995\nS \"b\" 5e-7\n");
  const Grammar p = prune_grammar(g, 1e-6);
  REQUIRE(p.rules().size() == 1);
  CHECK(p.rules()[0].rhs[0].name == "a");
  CHECK(p.rules()[0].sample_prob == 1.0);
  CHECK(p.rules()[0].prob == 0.9999995);
  CHECK(kDefaultPruneThreshold == 1e-6);
}

TEST_CASE("pruning away every rule of a start symbol is an error") {
  const Grammar g = load_grammar("S \"a\" 0.5\nS \"b\" 0.5\n");
  CHECK_THROWS_AS(prune_grammar(g, 0.6), Error);
}

TEST_CASE("pruned sampling distributions sum to one per lhs") {
  const Grammar g = prune_grammar(load_grammar(
      "S A B 0.7\nS A 0.2999\nS B 1e-7\nA \"x\" 0.3\nA \"y\" 0.69\nA \"w\" 5e-7\nB \"z\" 0.4\n"));
  std::map<std::string, double> totals;
  for (const Rule& r : g.rules()) totals[r.lhs] += r.sample_prob;
  for (const auto& [lhs, total] : totals) {
    CAPTURE(lhs);
    CHECK(std::abs(total - 1.0) <= 1e-12);
  }
  for (const Grammar* h : {&toy_grammar()}) {
    std::map<std::string, double> t2;
    for (const Rule& r : h->rules()) t2[r.lhs] += r.sample_prob;
    for (const auto& [lhs, total] : t2) CHECK(std::abs(total - 1.0) <= 1e-12);
  }
}

TEST_CASE("a deterministic grammar always yields the same tree") {
  const Grammar g = load_grammar("S \"a\" 1.0\n");
  Rng rng(3);
  for (int i = 0; i < 20; ++i) CHECK(to_bracketed(sample_tree(g, 7, rng)) == "(S a)");
}

TEST_CASE("samples respect the depth cap") {
  Rng rng(8);
  for (int i = 0; i < 2000; ++i) {
    const Tree t = sample_tree(toy_grammar(), 7, rng);
    CHECK(t.depth() <= 7);
    CHECK(validate(t).ok());
  }
}

TEST_CASE("empirical rule frequencies match sampling probabilities within 3 sigma") {
  const Grammar g = load_grammar(kFlatGrammar);
  std::map<std::string, std::size_t> lhs_uses;
  std::map<std::size_t, std::size_t> rule_uses;
  std::map<std::string, std::size_t> roots;
  Rng rng(2718);
  const std::size_t n = 100000;
  for (std::size_t i = 0; i < n; ++i) {
    const Tree t = sample_tree(g, 7, rng);
    roots[t.node(t.root()).label]++;
    for (const TreeNode& node : t.nodes()) {
      if (node.is_terminal()) continue;
      std::vector<GrammarSymbol> rhs;
      for (int c : node.children) rhs.push_back({t.node(c).label, t.node(c).is_terminal()});
      const auto rule = g.find(node.label, rhs);
      REQUIRE(rule.has_value());
      lhs_uses[node.label]++;
      rule_uses[*rule]++;
    }
  }
  for (std::size_t i = 0; i < g.rules().size(); ++i) {
    const Rule& r = g.rules()[i];
    const double m = static_cast<double>(lhs_uses[r.lhs]);
    const double p = r.sample_prob;
    const double sigma = std::sqrt(m * p * (1.0 - p));
    CAPTURE(i);
    CHECK(std::abs(static_cast<double>(rule_uses[i]) - m * p) <= 3.0 * sigma + 1e-9);
  }
  // Roots are uniform over the start set.
  const double half = static_cast<double>(n) / 2.0;
  CHECK(std::abs(static_cast<double>(roots["S_a"]) - half) <= 3.0 * std::sqrt(n * 0.25));
}

TEST_CASE("oracle NLL of the hand example") {
  const Grammar g = load_grammar(kNllGrammar, {.start_symbols = {"S"}});
  const Tree t = parse_bracketed(kExampleTree);
  const double expected = -(std::log(0.8) + std::log(0.7) + std::log(0.6));
  CHECK(oracle_nll(g, t) == doctest::Approx(expected).epsilon(1e-14));
  CHECK(oracle_nll(g, t) == doctest::Approx(1.0906).epsilon(1e-4));
}

TEST_CASE("an unseen rule adds the penalty") {
  const Grammar g = load_grammar(kNllGrammar, {.start_symbols = {"S"}});
  const Tree seen = parse_bracketed(kExampleTree);
  const Tree unseen = parse_bracketed("(S (NP (DT the) (NN cat)) (VP (VBD sat) (NN cat)))");
  const double extra = oracle_nll(g, unseen, 1e-6) - oracle_nll(g, seen, 1e-6) - (-std::log(0.7));
  // The replaced VP rule contributed -ln 0.6; the new one costs -ln 1e-6.
  CHECK(extra - std::log(0.6) == doctest::Approx(13.8155).epsilon(1e-5));
  CHECK(-std::log(1e-6) == doctest::Approx(13.8155).epsilon(1e-5));
}

TEST_CASE("an all-probability-one grammar scores zero") {
  const Grammar g = load_grammar("S A B 1.0\nA \"x\" 1.0\nB \"y\" 1.0\n");
  CHECK(oracle_nll(g, parse_bracketed("(S (A x) (B y))")) == 0.0);
}

TEST_CASE("an unknown root is an error unless scoring is lenient") {
  const Grammar g = load_grammar(kNllGrammar, {.start_symbols = {"S"}});
  const Tree t = parse_bracketed("(Q (DT the))");
  CHECK_THROWS_AS(oracle_nll(g, t), Error);
  CHECK(oracle_nll(g, t, 1e-6, false) == doctest::Approx(-std::log(1e-6)).epsilon(1e-14));
}

TEST_CASE("oracle NLL is additive over nonterminal nodes") {
  const Grammar& g = toy_grammar();
  Rng rng(17);
  for (int i = 0; i < 200; ++i) {
    const Tree t = sample_tree(g, 7, rng);
    const auto terms = oracle_nll_terms(g, t);
    double sum = 0.0;
    for (double x : terms) sum += x;
    CHECK(sum == doctest::Approx(oracle_nll(g, t)).epsilon(1e-12));
    // Root production plus the NLL of each nonterminal child's subtree.
    double split = terms[static_cast<std::size_t>(t.root())];
    for (int c : t.node(t.root()).children) {
      if (t.node(c).is_terminal()) continue;
      split += oracle_nll(g, parse_bracketed(subtree_text(t, c)));
    }
    CHECK(split == doctest::Approx(oracle_nll(g, t)).epsilon(1e-12));
  }
}

TEST_CASE("oracle samples score without penalty terms") {
  const Grammar& g = toy_grammar();
  Rng rng(5);
  for (int i = 0; i < 500; ++i) {
    const Tree t = sample_tree(g, 7, rng);
    const double a = oracle_nll(g, t, 1e-6);
    CHECK(std::isfinite(a));
    CHECK(a >= 0.0);
    CHECK(a == oracle_nll(g, t, 1e-300));
  }
}

TEST_CASE("generate_dataset") {
  const Grammar& g = toy_grammar();
  DatasetSpec spec;
  spec.count = 200;
  spec.target_nodes = 10;
  spec.seed = 42;
  const auto a = generate_dataset(g, spec);
  REQUIRE(a.size() == 200);
  for (const Tree& t : a) {
    const ValidationReport r = validate(t);
    CHECK(r.ok());
    CHECK(r.nonterminal_count == 10);
    CHECK(r.depth <= 7);
  }
  const auto b = generate_dataset(g, spec);
  for (std::size_t i = 0; i < a.size(); ++i) CHECK(to_bracketed(a[i]) == to_bracketed(b[i]));
  spec.count = 0;
  CHECK_THROWS_AS(generate_dataset(g, spec), ContractError);
}

TEST_CASE("generate_dataset reports the acceptance rate when the budget runs out") {
  const Grammar g = load_grammar("S \"a\" 1.0\n");
  DatasetSpec spec;
  spec.count = 1;
  spec.target_nodes = 3;
  spec.max_attempts = 50;
  CHECK_THROWS_WITH(generate_dataset(g, spec), doctest::Contains("acceptance"));
}

}  // TEST_SUITE
