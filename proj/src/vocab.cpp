#include "tdtd/vocab.hpp"

#include <algorithm>
#include <unordered_map>

#include "tdtd/error.hpp"

namespace tdtd {

namespace {

void index_labels(const std::vector<std::string>& labels, std::map<std::string, std::size_t, std::less<>>& out,
                  const char* what) {
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i].empty()) throw ContractError(std::string("vocabulary: empty ") + what);
    if (!out.emplace(labels[i], i).second) {
      throw ContractError(std::string("vocabulary: duplicate ") + what + " '" + labels[i] + "'");
    }
  }
}

std::vector<std::string> by_frequency(const std::unordered_map<std::string, std::size_t>& counts) {
  std::vector<std::pair<std::string, std::size_t>> items(counts.begin(), counts.end());
  std::sort(items.begin(), items.end(), [](const auto& a, const auto& b) {
    return a.second != b.second ? a.second > b.second : a.first < b.first;
  });
  std::vector<std::string> out;
  out.reserve(items.size());
  for (auto& [label, n] : items) out.push_back(std::move(label));
  return out;
}

}  // namespace

SymbolVocab::SymbolVocab(std::vector<std::string> nonterminals, std::vector<std::string> terminals)
    : nonterminals_(std::move(nonterminals)), terminals_(std::move(terminals)) {
  if (nonterminals_.empty()) throw ContractError("vocabulary: no nonterminals");
  if (terminals_.empty()) throw ContractError("vocabulary: no terminals");
  index_labels(nonterminals_, nonterminal_ids_, "nonterminal");
  index_labels(terminals_, terminal_ids_, "terminal");
}

SymbolVocab SymbolVocab::from_trees(std::span<const Tree> trees, bool with_unknown) {
  std::unordered_map<std::string, std::size_t> nt_counts;
  std::unordered_map<std::string, std::size_t> t_counts;
  for (const Tree& t : trees) {
    for (const TreeNode& n : t.nodes()) ++(n.is_terminal() ? t_counts : nt_counts)[n.label];
  }
  std::vector<std::string> terminals;
  if (with_unknown) {
    t_counts.erase(std::string(kUnknownWord));
    terminals.emplace_back(kUnknownWord);
  }
  for (auto& w : by_frequency(t_counts)) terminals.push_back(std::move(w));
  return SymbolVocab(by_frequency(nt_counts), std::move(terminals));
}

std::optional<std::size_t> SymbolVocab::find_nonterminal(std::string_view label) const {
  auto it = nonterminal_ids_.find(label);
  if (it == nonterminal_ids_.end()) return std::nullopt;
  return it->second;
}

std::optional<std::size_t> SymbolVocab::find_terminal(std::string_view word) const {
  auto it = terminal_ids_.find(word);
  if (it == terminal_ids_.end()) return std::nullopt;
  return it->second;
}

std::size_t SymbolVocab::nonterminal_index(std::string_view label) const {
  if (auto i = find_nonterminal(label)) return *i;
  throw Error("nonterminal '" + std::string(label) + "' is not in the vocabulary");
}

std::size_t SymbolVocab::terminal_index(std::string_view word) const {
  if (auto j = find_terminal(word)) return *j;
  if (has_unknown()) return 0;
  throw Error("terminal '" + std::string(word) + "' is not in the vocabulary");
}

}  // namespace tdtd
