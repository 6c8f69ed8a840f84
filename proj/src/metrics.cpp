#include "tdtd/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <set>
#include <unordered_set>

#include "tdtd/error.hpp"

namespace tdtd {

namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

struct NllAccumulator {
  double total = 0.0;
  double per_node = 0.0;
  std::size_t count = 0;

  void add(const Grammar& grammar, const Tree& tree, double penalty_prob) {
    const double nll = oracle_nll(grammar, tree, penalty_prob, /*strict_root=*/false);
    total += nll;
    per_node += nll / static_cast<double>(std::max<std::size_t>(1, tree.nonterminal_count()));
    ++count;
  }
};

SampleReport finish(std::size_t samples, std::size_t failures, std::size_t distinct,
                    const NllAccumulator& nll) {
  SampleReport r;
  r.samples = samples;
  r.failures = failures;
  if (samples > 0) {
    r.fail_fraction = static_cast<double>(failures) / static_cast<double>(samples);
    r.dup_fraction = 1.0 - static_cast<double>(distinct) / static_cast<double>(samples);
  }
  r.mean_nll = nll.count > 0 ? nll.total / static_cast<double>(nll.count) : kNaN;
  r.mean_nll_per_node = nll.count > 0 ? nll.per_node / static_cast<double>(nll.count) : kNaN;
  return r;
}

std::string ngram_key(std::span<const std::string> words, std::size_t start, std::size_t n) {
  std::string key;
  for (std::size_t i = 0; i < n; ++i) {
    if (i) key.push_back('\x1f');
    key += words[start + i];
  }
  return key;
}

// Clipped matches and totals for orders 1..n.
void clipped_counts(std::span<const std::string> candidate, const BleuReferences& refs, std::size_t n,
                    std::vector<double>& matches, std::vector<double>& totals) {
  for (std::size_t k = 1; k <= n; ++k) {
    if (candidate.size() < k) continue;
    std::unordered_map<std::string, std::size_t> counts;
    for (std::size_t i = 0; i + k <= candidate.size(); ++i) ++counts[ngram_key(candidate, i, k)];
    std::size_t m = 0;
    for (const auto& [key, c] : counts) m += std::min(c, refs.max_count(key));
    matches[k - 1] += static_cast<double>(m);
    totals[k - 1] += static_cast<double>(candidate.size() - k + 1);
  }
}

double combine(const std::vector<double>& matches, const std::vector<double>& totals, double cand_len,
               double ref_len) {
  if (cand_len <= 0.0) return 0.0;
  double log_sum = 0.0;
  for (std::size_t k = 0; k < matches.size(); ++k) {
    const double p = matches[k] > 0.0 ? matches[k] / totals[k] : 1.0 / (totals[k] + 1.0);
    log_sum += std::log(p);
  }
  const double bp = cand_len < ref_len ? std::exp(1.0 - ref_len / cand_len) : 1.0;
  return bp * std::exp(log_sum / static_cast<double>(matches.size()));
}

void check_order(std::size_t n) {
  if (n < 1) throw ContractError("bleu: n must be >= 1");
}

}  // namespace

SampleReport sample_report(std::span<const Tree> samples, const Grammar& grammar, double penalty_prob) {
  std::unordered_set<std::string> distinct;
  NllAccumulator nll;
  for (const Tree& t : samples) {
    distinct.insert(to_bracketed(t));
    nll.add(grammar, t, penalty_prob);
  }
  return finish(samples.size(), 0, distinct.size(), nll);
}

SampleReport sample_report(std::span<const std::vector<std::string>> samples, const Grammar& grammar,
                           double penalty_prob) {
  std::unordered_set<std::string> distinct;
  NllAccumulator nll;
  std::size_t failures = 0;
  for (const auto& tokens : samples) {
    auto result = delinearize_brackets(tokens);
    if (const Tree* t = std::get_if<Tree>(&result)) {
      distinct.insert(to_bracketed(*t));
      nll.add(grammar, *t, penalty_prob);
    } else {
      ++failures;
      // Raw form, marked so it cannot collide with a canonical tree.
      std::string raw = "\x01";
      for (const auto& tok : tokens) raw += tok + ' ';
      distinct.insert(std::move(raw));
    }
  }
  return finish(samples.size(), failures, distinct.size(), nll);
}

BleuMode parse_bleu_mode(std::string_view text) {
  if (text == "sentence") return BleuMode::kSentenceMean;
  if (text == "corpus") return BleuMode::kCorpus;
  throw Error("unknown BLEU mode '" + std::string(text) + "' (expected sentence or corpus)");
}

BleuReferences::BleuReferences(std::span<const std::vector<std::string>> references, std::size_t max_order)
    : max_order_(max_order) {
  check_order(max_order);
  if (references.empty()) throw ContractError("bleu: no references");
  std::set<std::size_t> lengths;
  for (const auto& ref : references) {
    lengths.insert(ref.size());
    std::unordered_map<std::string, std::size_t> counts;
    for (std::size_t k = 1; k <= max_order; ++k) {
      for (std::size_t i = 0; i + k <= ref.size(); ++i) ++counts[ngram_key(ref, i, k)];
    }
    for (auto& [key, c] : counts) {
      auto& best = max_counts_[key];
      best = std::max(best, c);
    }
  }
  lengths_.assign(lengths.begin(), lengths.end());
}

std::size_t BleuReferences::closest_length(std::size_t length) const {
  std::size_t best = lengths_.front();
  std::size_t best_diff = std::numeric_limits<std::size_t>::max();
  for (std::size_t len : lengths_) {
    const std::size_t diff = len > length ? len - length : length - len;
    // Ascending order keeps the shorter length on ties.
    if (diff < best_diff) {
      best = len;
      best_diff = diff;
    }
  }
  return best;
}

std::size_t BleuReferences::max_count(const std::string& ngram_key) const {
  auto it = max_counts_.find(ngram_key);
  return it == max_counts_.end() ? 0 : it->second;
}

double sentence_bleu(std::span<const std::string> candidate, const BleuReferences& refs, std::size_t n) {
  check_order(n);
  if (n > refs.max_order()) throw ContractError("bleu: references indexed up to a lower order");
  if (candidate.empty()) return 0.0;
  std::vector<double> matches(n, 0.0), totals(n, 0.0);
  clipped_counts(candidate, refs, n, matches, totals);
  return combine(matches, totals, static_cast<double>(candidate.size()),
                 static_cast<double>(refs.closest_length(candidate.size())));
}

double bleu(std::span<const std::vector<std::string>> candidates,
            std::span<const std::vector<std::string>> references, std::size_t n, BleuMode mode) {
  check_order(n);
  if (candidates.empty()) throw ContractError("bleu: no candidates");
  const BleuReferences refs(references, n);
  if (mode == BleuMode::kSentenceMean) {
    double total = 0.0;
    for (const auto& c : candidates) total += sentence_bleu(c, refs, n);
    return total / static_cast<double>(candidates.size());
  }
  std::vector<double> matches(n, 0.0), totals(n, 0.0);
  double cand_len = 0.0;
  double ref_len = 0.0;
  for (const auto& c : candidates) {
    if (c.empty()) continue;
    clipped_counts(c, refs, n, matches, totals);
    cand_len += static_cast<double>(c.size());
    ref_len += static_cast<double>(refs.closest_length(c.size()));
  }
  return combine(matches, totals, cand_len, ref_len);
}

std::vector<LabeledSpan> labeled_spans(const Tree& tree) {
  std::vector<LabeledSpan> out;
  if (tree.empty()) return out;
  // Post-order walk computing each node's [start, end) over the yield.
  std::vector<std::size_t> start(tree.size()), end(tree.size());
  std::size_t next_word = 0;
  struct Frame {
    int node;
    std::size_t child;
  };
  std::vector<Frame> stack{{tree.root(), 0}};
  while (!stack.empty()) {
    Frame& f = stack.back();
    const TreeNode& n = tree.node(f.node);
    const auto id = static_cast<std::size_t>(f.node);
    if (f.child == 0) start[id] = next_word;
    if (n.is_terminal()) {
      end[id] = ++next_word;
      stack.pop_back();
      continue;
    }
    if (f.child < n.children.size()) {
      const int c = n.children[f.child++];
      stack.push_back({c, 0});
      continue;
    }
    end[id] = next_word;
    bool has_nt_child = false;
    for (int c : n.children) has_nt_child = has_nt_child || !tree.node(c).is_terminal();
    if (has_nt_child || n.children.size() >= 2) out.push_back({n.label, start[id], end[id]});
    stack.pop_back();
  }
  return out;
}

namespace {

std::size_t count_matches(std::vector<LabeledSpan> a, std::vector<LabeledSpan> b) {
  std::sort(a.begin(), a.end());
  std::sort(b.begin(), b.end());
  std::size_t m = 0;
  for (std::size_t i = 0, j = 0; i < a.size() && j < b.size();) {
    if (a[i] == b[j]) {
      ++m;
      ++i;
      ++j;
    } else if (a[i] < b[j]) {
      ++i;
    } else {
      ++j;
    }
  }
  return m;
}

void finish(BracketScore& s) {
  s.precision = s.predicted > 0 ? static_cast<double>(s.matched) / static_cast<double>(s.predicted)
                                : (s.gold == 0 ? 1.0 : 0.0);
  s.recall = s.gold > 0 ? static_cast<double>(s.matched) / static_cast<double>(s.gold)
                        : (s.predicted == 0 ? 1.0 : 0.0);
  s.f1 = s.precision + s.recall > 0.0 ? 2.0 * s.precision * s.recall / (s.precision + s.recall) : 0.0;
}

void accumulate(BracketScore& s, const Tree& predicted, const Tree& gold) {
  if (predicted.yield() != gold.yield()) throw Error("bracket_f1: predicted and gold yields differ");
  auto p = labeled_spans(predicted);
  auto g = labeled_spans(gold);
  s.predicted += p.size();
  s.gold += g.size();
  s.matched += count_matches(std::move(p), std::move(g));
}

}  // namespace

BracketScore bracket_f1(const Tree& predicted, const Tree& gold) {
  BracketScore s;
  accumulate(s, predicted, gold);
  finish(s);
  return s;
}

BracketScore corpus_bracket_f1(std::span<const Tree> predicted, std::span<const Tree> gold) {
  if (predicted.size() != gold.size()) {
    throw Error("bracket_f1: " + std::to_string(predicted.size()) + " predicted trees but " +
                std::to_string(gold.size()) + " gold trees");
  }
  BracketScore s;
  for (std::size_t i = 0; i < predicted.size(); ++i) {
    try {
      accumulate(s, predicted[i], gold[i]);
    } catch (const Error& e) {
      throw Error("tree pair " + std::to_string(i) + ": " + e.what());
    }
  }
  finish(s);
  return s;
}

}  // namespace tdtd
