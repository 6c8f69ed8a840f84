#pragma once

#include <cstddef>
#include <functional>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "tdtd/tree.hpp"

namespace tdtd {

inline constexpr std::string_view kUnknownWord = "<unk>";

// Symbol ids shared by the tree models' embedding table:
//   0 STOP, 1 layer start, then nonterminals, then terminals.
// Heads work with class-local indices (nonterminal i, terminal j).
class SymbolVocab {
 public:
  static constexpr std::size_t kStop = 0;
  static constexpr std::size_t kLayerStart = 1;
  static constexpr std::size_t kReserved = 2;

  SymbolVocab() = default;
  // `terminals` may start with kUnknownWord to enable the fallback.
  SymbolVocab(std::vector<std::string> nonterminals, std::vector<std::string> terminals);

  // Frequency-sorted (ties by label), unknown word first when requested.
  static SymbolVocab from_trees(std::span<const Tree> trees, bool with_unknown);

  const std::vector<std::string>& nonterminals() const noexcept { return nonterminals_; }
  const std::vector<std::string>& terminals() const noexcept { return terminals_; }
  std::size_t nonterminal_count() const noexcept { return nonterminals_.size(); }
  std::size_t terminal_count() const noexcept { return terminals_.size(); }
  std::size_t symbol_count() const noexcept { return kReserved + nonterminal_count() + terminal_count(); }

  std::size_t nonterminal_symbol(std::size_t i) const noexcept { return kReserved + i; }
  std::size_t terminal_symbol(std::size_t j) const noexcept { return kReserved + nonterminal_count() + j; }

  std::optional<std::size_t> find_nonterminal(std::string_view label) const;
  std::optional<std::size_t> find_terminal(std::string_view word) const;
  bool has_unknown() const noexcept { return !terminals_.empty() && terminals_.front() == kUnknownWord; }

  // Throw Error naming the label when it is out of vocabulary. The terminal
  // lookup falls back to the unknown word when the vocabulary has one.
  std::size_t nonterminal_index(std::string_view label) const;
  std::size_t terminal_index(std::string_view word) const;

 private:
  using Index = std::map<std::string, std::size_t, std::less<>>;
  std::vector<std::string> nonterminals_;
  std::vector<std::string> terminals_;
  Index nonterminal_ids_;
  Index terminal_ids_;
};

}  // namespace tdtd
