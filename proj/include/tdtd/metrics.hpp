#pragma once

// Sample-quality reports against an oracle grammar, BLEU-n for generated text
// and labeled bracket F1 for parses.

#include <cstddef>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "tdtd/pcfg.hpp"
#include "tdtd/tree.hpp"

namespace tdtd {

struct SampleReport {
  std::size_t samples = 0;
  std::size_t failures = 0;
  double mean_nll = 0.0;           // per tree, over valid samples; NaN when none
  double mean_nll_per_node = 0.0;  // nll / nonterminal count, averaged
  double fail_fraction = 0.0;
  double dup_fraction = 0.0;
};

SampleReport sample_report(std::span<const Tree> samples, const Grammar& grammar,
                           double penalty_prob = kDefaultUnseenPenalty);
// Token sequences are delinearized first; sequences that do not form a tree
// count as failures and are excluded from the NLL.
SampleReport sample_report(std::span<const std::vector<std::string>> samples, const Grammar& grammar,
                           double penalty_prob = kDefaultUnseenPenalty);

enum class BleuMode { kSentenceMean, kCorpus };

BleuMode parse_bleu_mode(std::string_view text);

// Reference set with per-n-gram maximum counts precomputed for clipping.
class BleuReferences {
 public:
  BleuReferences(std::span<const std::vector<std::string>> references, std::size_t max_order);

  std::size_t max_order() const noexcept { return max_order_; }
  // Reference length closest to `length`; ties go to the shorter one.
  std::size_t closest_length(std::size_t length) const;
  std::size_t max_count(const std::string& ngram_key) const;

 private:
  std::size_t max_order_;
  std::vector<std::size_t> lengths_;  // sorted, unique
  std::unordered_map<std::string, std::size_t> max_counts_;
};

// Modified precisions p_1..p_n clipped against all references, uniform
// geometric mean, brevity penalty exp(1 - r/c) when c < r. A zero match
// count becomes 1 / (total + 1). Empty candidates score 0.
double sentence_bleu(std::span<const std::string> candidate, const BleuReferences& refs, std::size_t n);
// kSentenceMean averages sentence scores; kCorpus pools the counts and lengths.
double bleu(std::span<const std::vector<std::string>> candidates,
            std::span<const std::vector<std::string>> references, std::size_t n,
            BleuMode mode = BleuMode::kSentenceMean);

struct LabeledSpan {
  std::string label;
  std::size_t start = 0;
  std::size_t end = 0;  // exclusive

  friend bool operator==(const LabeledSpan&, const LabeledSpan&) = default;
  friend auto operator<=>(const LabeledSpan&, const LabeledSpan&) = default;
};

// Spans of nonterminals with a nonterminal child or at least two children.
std::vector<LabeledSpan> labeled_spans(const Tree& tree);

struct BracketScore {
  std::size_t matched = 0;
  std::size_t predicted = 0;
  std::size_t gold = 0;
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
};

// Multiset span matching. Throws Error when the yields differ.
BracketScore bracket_f1(const Tree& predicted, const Tree& gold);
// Pools counts over all pairs before computing the ratios.
BracketScore corpus_bracket_f1(std::span<const Tree> predicted, std::span<const Tree> gold);

}  // namespace tdtd
