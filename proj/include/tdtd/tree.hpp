#pragma once

// Constituency trees, bracketed text I/O, per-depth layer views and the
// bracket-token linearization used by the sequential baseline.

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

namespace tdtd {

enum class NodeKind : std::uint8_t { kNonterminal, kTerminal };

inline constexpr int kNoParent = -1;

struct TreeNode {
  std::string label;
  NodeKind kind = NodeKind::kNonterminal;
  int parent = kNoParent;
  std::vector<int> children;

  bool is_terminal() const noexcept { return kind == NodeKind::kTerminal; }
};

// Ordered labeled tree stored as a node array. Trees built through
// TreeBuilder or the parsers are valid; Tree::from_nodes accepts anything so
// that validate() has something to report on.
class Tree {
 public:
  Tree() = default;

  static Tree from_nodes(std::vector<TreeNode> nodes, int root);

  const std::vector<TreeNode>& nodes() const noexcept { return nodes_; }
  const TreeNode& node(int i) const { return nodes_.at(static_cast<std::size_t>(i)); }
  int root() const noexcept { return root_; }
  std::size_t size() const noexcept { return nodes_.size(); }
  bool empty() const noexcept { return nodes_.empty(); }

  // Terminal labels in depth-first (left-to-right) order.
  std::vector<std::string> yield() const;
  std::size_t nonterminal_count() const;
  std::size_t terminal_count() const;
  // Depth of the deepest node; the root alone has depth 0.
  std::size_t depth() const;

 private:
  std::vector<TreeNode> nodes_;
  int root_ = kNoParent;
};

class TreeBuilder {
 public:
  // The first node added without a parent becomes the root.
  int add_nonterminal(std::string label, int parent = kNoParent);
  int add_terminal(std::string label, int parent);
  std::size_t size() const noexcept { return nodes_.size(); }
  const TreeNode& node(int i) const { return nodes_.at(static_cast<std::size_t>(i)); }
  Tree build() &&;

 private:
  int add(std::string label, NodeKind kind, int parent);
  std::vector<TreeNode> nodes_;
  int root_ = kNoParent;
};

// Same labels, kinds and child order, ignoring node numbering.
bool structurally_equal(const Tree& a, const Tree& b);

// `(LABEL child ...)`; terminals are bare tokens. Whitespace-insensitive. An
// unlabeled outer wrapper around a single constituent, as in `( (S ...) )`,
// is dropped. Errors are ParseError with a character offset.
Tree parse_bracketed(std::string_view text);
// Canonical single-space form: `(S (NP (DT the) (NN cat)) (VP (VBD sat)))`.
std::string to_bracketed(const Tree& tree);

// One tree per line; blank lines and lines starting with '#' are skipped.
// ParseError positions are 1-based line numbers.
std::vector<Tree> read_treebank(std::istream& in);
std::vector<Tree> read_treebank(const std::filesystem::path& path);
void write_treebank(std::span<const Tree> trees, std::ostream& out);

// Nodes grouped by depth. Layer d+1 is the left-to-right concatenation of the
// children of layer d.
struct LayerView {
  std::vector<std::vector<int>> layers;

  std::size_t depth() const noexcept { return layers.empty() ? 0 : layers.size() - 1; }
  std::size_t max_width() const noexcept;
};

LayerView layer_view(const Tree& tree);

struct ValidationReport {
  std::size_t depth = 0;
  std::size_t nonterminal_count = 0;
  std::size_t terminal_count = 0;
  std::vector<std::string> violations;

  bool ok() const noexcept { return violations.empty(); }
};

ValidationReport validate(const Tree& tree);

// Depth-first bracket tokens: `(L` opens a nonterminal, a word is a terminal
// and `)` closes. Length is 2 * nonterminals + terminals.
std::vector<std::string> linearize_brackets(const Tree& tree);

enum class BracketFailureKind : std::uint8_t {
  kEmptySequence,
  kUnmatchedClose,
  kUnclosedOpen,
  kEmptyConstituent,
  kEmptyLabel,
  kStrayTerminal,
  kTrailingTokens,
};

struct BracketFailure {
  BracketFailureKind kind;
  std::size_t position;  // token index of the first violation
  std::string message;
};

using DelinearizeResult = std::variant<Tree, BracketFailure>;

// Never throws on malformed input; reports the first violation instead.
DelinearizeResult delinearize_brackets(std::span<const std::string> tokens);

std::string_view to_string(BracketFailureKind kind);

// Whitespace tokenization of a linearized line.
std::vector<std::string> split_tokens(std::string_view line);

}  // namespace tdtd
