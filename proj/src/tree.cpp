#include "tdtd/tree.hpp"

#include <algorithm>
#include <fstream>
#include <istream>
#include <ostream>
#include <utility>

#include "tdtd/error.hpp"

namespace tdtd {

namespace {

bool is_space(char c) { return c == ' ' || c == '\t' || c == '\n' || c == '\r' || c == '\f' || c == '\v'; }

}  // namespace

// ---------------------------------------------------------------------------
// Tree

Tree Tree::from_nodes(std::vector<TreeNode> nodes, int root) {
  Tree t;
  t.nodes_ = std::move(nodes);
  t.root_ = root;
  return t;
}

std::vector<std::string> Tree::yield() const {
  std::vector<std::string> out;
  if (nodes_.empty()) return out;
  std::vector<int> stack{root_};
  while (!stack.empty()) {
    const int id = stack.back();
    stack.pop_back();
    const TreeNode& n = node(id);
    if (n.is_terminal()) out.push_back(n.label);
    for (auto it = n.children.rbegin(); it != n.children.rend(); ++it) stack.push_back(*it);
  }
  return out;
}

std::size_t Tree::nonterminal_count() const {
  return static_cast<std::size_t>(std::count_if(
      nodes_.begin(), nodes_.end(), [](const TreeNode& n) { return !n.is_terminal(); }));
}

std::size_t Tree::terminal_count() const { return nodes_.size() - nonterminal_count(); }

std::size_t Tree::depth() const { return layer_view(*this).depth(); }

int TreeBuilder::add(std::string label, NodeKind kind, int parent) {
  const int id = static_cast<int>(nodes_.size());
  if (parent == kNoParent) {
    if (root_ != kNoParent) throw ContractError("tree builder: second root '" + label + "'");
    root_ = id;
  } else if (parent < 0 || parent >= id) {
    throw ContractError("tree builder: parent index " + std::to_string(parent) + " out of range");
  } else if (nodes_[static_cast<std::size_t>(parent)].is_terminal()) {
    throw ContractError("tree builder: terminal '" + nodes_[static_cast<std::size_t>(parent)].label +
                        "' cannot have children");
  }
  TreeNode n;
  n.label = std::move(label);
  n.kind = kind;
  n.parent = parent;
  nodes_.push_back(std::move(n));
  if (parent != kNoParent) nodes_[static_cast<std::size_t>(parent)].children.push_back(id);
  return id;
}

int TreeBuilder::add_nonterminal(std::string label, int parent) {
  return add(std::move(label), NodeKind::kNonterminal, parent);
}

int TreeBuilder::add_terminal(std::string label, int parent) {
  if (parent == kNoParent) throw ContractError("tree builder: terminal needs a parent");
  return add(std::move(label), NodeKind::kTerminal, parent);
}

Tree TreeBuilder::build() && { return Tree::from_nodes(std::move(nodes_), root_); }

bool structurally_equal(const Tree& a, const Tree& b) {
  if (a.size() != b.size()) return false;
  if (a.empty()) return true;
  std::vector<std::pair<int, int>> stack{{a.root(), b.root()}};
  while (!stack.empty()) {
    auto [x, y] = stack.back();
    stack.pop_back();
    const TreeNode& nx = a.node(x);
    const TreeNode& ny = b.node(y);
    if (nx.kind != ny.kind || nx.label != ny.label || nx.children.size() != ny.children.size()) {
      return false;
    }
    for (std::size_t i = 0; i < nx.children.size(); ++i) {
      stack.emplace_back(nx.children[i], ny.children[i]);
    }
  }
  return true;
}

// ---------------------------------------------------------------------------
// Bracketed text

Tree parse_bracketed(std::string_view text) {
  // Balance is checked first so that an unbalanced expression is reported as
  // such even when it also contains an empty constituent.
  {
    std::vector<std::size_t> opens;
    for (std::size_t i = 0; i < text.size(); ++i) {
      if (text[i] == '(') {
        opens.push_back(i);
      } else if (text[i] == ')') {
        if (opens.empty()) throw ParseError("unmatched ')' at offset " + std::to_string(i), i);
        opens.pop_back();
      }
    }
    if (!opens.empty()) {
      throw ParseError("unbalanced brackets: " + std::to_string(opens.size()) +
                           " unclosed '(' at end of input (offset " +
                           std::to_string(text.size()) + ")",
                       text.size());
    }
  }

  struct Frame {
    int node;  // kNoParent for the unlabeled outer wrapper
    std::size_t children = 0;
    std::size_t offset;
  };
  TreeBuilder builder;
  std::vector<Frame> stack;
  bool done = false;
  std::size_t i = 0;
  auto read_token = [&]() {
    const std::size_t start = i;
    while (i < text.size() && !is_space(text[i]) && text[i] != '(' && text[i] != ')') ++i;
    return text.substr(start, i - start);
  };

  while (i < text.size()) {
    const char c = text[i];
    if (is_space(c)) {
      ++i;
      continue;
    }
    if (done) throw ParseError("trailing content at offset " + std::to_string(i), i);
    if (c == '(') {
      const std::size_t open_at = i++;
      while (i < text.size() && is_space(text[i])) ++i;
      const std::string_view label = read_token();
      if (label.empty()) {
        if (!stack.empty()) {
          throw ParseError("constituent without a label at offset " + std::to_string(open_at),
                           open_at);
        }
        stack.push_back({kNoParent, 0, open_at});
        continue;
      }
      int parent = kNoParent;
      if (!stack.empty()) {
        Frame& top = stack.back();
        if (top.node == kNoParent && top.children > 0) {
          throw ParseError("several constituents under an unlabeled bracket at offset " +
                               std::to_string(open_at),
                           open_at);
        }
        ++top.children;
        parent = top.node;
      }
      stack.push_back({builder.add_nonterminal(std::string(label), parent), 0, open_at});
    } else if (c == ')') {
      const Frame top = stack.back();
      if (top.children == 0) {
        const std::string what =
            top.node == kNoParent ? std::string("()") : "(" + builder.node(top.node).label + ")";
        throw ParseError("empty constituent " + what + " at offset " + std::to_string(top.offset),
                         top.offset);
      }
      stack.pop_back();
      ++i;
      if (stack.empty()) done = true;
    } else {
      const std::size_t at = i;
      const std::string_view word = read_token();
      if (stack.empty()) {
        throw ParseError("terminal '" + std::string(word) + "' outside any constituent at offset " +
                             std::to_string(at),
                         at);
      }
      Frame& top = stack.back();
      if (top.node == kNoParent) {
        throw ParseError("terminal '" + std::string(word) + "' with siblings under no label at offset " +
                             std::to_string(at),
                         at);
      }
      ++top.children;
      builder.add_terminal(std::string(word), top.node);
    }
  }
  if (!done) throw ParseError("empty input", text.size());
  return std::move(builder).build();
}

namespace {

void append_bracketed(const Tree& tree, int id, std::string& out) {
  const TreeNode& n = tree.node(id);
  if (n.is_terminal()) {
    out += n.label;
    return;
  }
  out += '(';
  out += n.label;
  for (int c : n.children) {
    out += ' ';
    append_bracketed(tree, c, out);
  }
  out += ')';
}

}  // namespace

std::string to_bracketed(const Tree& tree) {
  std::string out;
  if (!tree.empty()) append_bracketed(tree, tree.root(), out);
  return out;
}

std::vector<Tree> read_treebank(std::istream& in) {
  std::vector<Tree> trees;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    std::size_t first = 0;
    while (first < line.size() && is_space(line[first])) ++first;
    if (first == line.size() || line[first] == '#') continue;
    try {
      trees.push_back(parse_bracketed(line));
    } catch (const ParseError& e) {
      throw ParseError("line " + std::to_string(lineno) + ": " + e.what(), lineno);
    }
  }
  return trees;
}

std::vector<Tree> read_treebank(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open treebank '" + path.string() + "'");
  return read_treebank(in);
}

void write_treebank(std::span<const Tree> trees, std::ostream& out) {
  for (const Tree& t : trees) out << to_bracketed(t) << '\n';
}

// ---------------------------------------------------------------------------
// Layers and validation

std::size_t LayerView::max_width() const noexcept {
  std::size_t w = 0;
  for (const auto& l : layers) w = std::max(w, l.size());
  return w;
}

LayerView layer_view(const Tree& tree) {
  LayerView view;
  const auto n = static_cast<int>(tree.size());
  if (tree.root() < 0 || tree.root() >= n) return view;
  std::vector<bool> seen(tree.size(), false);
  std::vector<int> current{tree.root()};
  seen[static_cast<std::size_t>(tree.root())] = true;
  while (!current.empty()) {
    std::vector<int> next;
    for (int id : current) {
      for (int c : tree.node(id).children) {
        if (c < 0 || c >= n || seen[static_cast<std::size_t>(c)]) continue;
        seen[static_cast<std::size_t>(c)] = true;
        next.push_back(c);
      }
    }
    view.layers.push_back(std::move(current));
    current = std::move(next);
  }
  return view;
}

ValidationReport validate(const Tree& tree) {
  ValidationReport report;
  const auto n = static_cast<int>(tree.size());
  for (const TreeNode& node : tree.nodes()) {
    if (node.is_terminal()) {
      ++report.terminal_count;
    } else {
      ++report.nonterminal_count;
    }
  }
  if (n == 0) {
    report.violations.emplace_back("tree has no nodes");
    return report;
  }
  auto name = [&](int id) {
    return "node " + std::to_string(id) + " '" + tree.node(id).label + "'";
  };

  std::size_t roots = 0;
  for (int id = 0; id < n; ++id) {
    if (tree.node(id).parent == kNoParent) ++roots;
  }
  if (roots != 1) report.violations.push_back("tree has " + std::to_string(roots) + " roots");
  if (tree.root() < 0 || tree.root() >= n) {
    report.violations.push_back("root index " + std::to_string(tree.root()) + " out of range");
    return report;
  }
  if (tree.node(tree.root()).parent != kNoParent) {
    report.violations.push_back("root " + name(tree.root()) + " has a parent");
  }

  for (int id = 0; id < n; ++id) {
    const TreeNode& node = tree.node(id);
    if (node.label.empty()) report.violations.push_back(name(id) + " has an empty label");
    if (node.is_terminal() && !node.children.empty()) {
      report.violations.push_back(name(id) + " is a terminal with children");
    }
    if (!node.is_terminal() && node.children.empty()) {
      report.violations.push_back(name(id) + " is a nonterminal with no children");
    }
    if (node.parent != kNoParent) {
      if (node.parent < 0 || node.parent >= n) {
        report.violations.push_back(name(id) + " has out-of-range parent");
      } else {
        const auto& siblings = tree.node(node.parent).children;
        if (std::count(siblings.begin(), siblings.end(), id) != 1) {
          report.violations.push_back(name(id) + " is not listed once among its parent's children");
        }
      }
    }
    for (int c : node.children) {
      if (c < 0 || c >= n) {
        report.violations.push_back(name(id) + " has out-of-range child " + std::to_string(c));
      } else if (tree.node(c).parent != id) {
        report.violations.push_back(name(id) + " lists child " + std::to_string(c) +
                                    " whose parent differs");
      }
    }
  }

  const LayerView view = layer_view(tree);
  std::size_t reached = 0;
  for (const auto& l : view.layers) reached += l.size();
  if (reached != tree.size()) {
    report.violations.push_back(std::to_string(tree.size() - reached) +
                                " node(s) unreachable from the root");
  }
  report.depth = view.depth();
  return report;
}

// ---------------------------------------------------------------------------
// Bracket linearization

std::vector<std::string> linearize_brackets(const Tree& tree) {
  std::vector<std::string> out;
  if (tree.empty()) return out;
  // Negative entries mark pending close brackets.
  std::vector<int> stack{tree.root()};
  while (!stack.empty()) {
    const int id = stack.back();
    stack.pop_back();
    if (id < 0) {
      out.emplace_back(")");
      continue;
    }
    const TreeNode& n = tree.node(id);
    if (n.is_terminal()) {
      out.push_back(n.label);
      continue;
    }
    out.push_back("(" + n.label);
    stack.push_back(-1);
    for (auto it = n.children.rbegin(); it != n.children.rend(); ++it) stack.push_back(*it);
  }
  return out;
}

std::string_view to_string(BracketFailureKind kind) {
  switch (kind) {
    case BracketFailureKind::kEmptySequence: return "empty sequence";
    case BracketFailureKind::kUnmatchedClose: return "unmatched close";
    case BracketFailureKind::kUnclosedOpen: return "unclosed open";
    case BracketFailureKind::kEmptyConstituent: return "empty constituent";
    case BracketFailureKind::kEmptyLabel: return "empty label";
    case BracketFailureKind::kStrayTerminal: return "stray terminal";
    case BracketFailureKind::kTrailingTokens: return "trailing tokens";
  }
  return "unknown";
}

DelinearizeResult delinearize_brackets(std::span<const std::string> tokens) {
  auto failure = [](BracketFailureKind kind, std::size_t pos) {
    return BracketFailure{kind, pos,
                          std::string(to_string(kind)) + " at token " + std::to_string(pos)};
  };
  if (tokens.empty()) return failure(BracketFailureKind::kEmptySequence, 0);

  std::vector<std::size_t> opens;
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    const std::string& t = tokens[i];
    if (t == ")") {
      if (opens.empty()) return failure(BracketFailureKind::kUnmatchedClose, i);
      opens.pop_back();
    } else if (!t.empty() && t.front() == '(') {
      opens.push_back(i);
    }
  }
  if (!opens.empty()) return failure(BracketFailureKind::kUnclosedOpen, opens.front());

  TreeBuilder builder;
  struct Frame {
    int node;
    std::size_t open_at;
  };
  std::vector<Frame> stack;
  bool done = false;
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    const std::string& t = tokens[i];
    if (done) return failure(BracketFailureKind::kTrailingTokens, i);
    if (t == ")") {
      const Frame top = stack.back();
      if (builder.node(top.node).children.empty()) {
        return failure(BracketFailureKind::kEmptyConstituent, top.open_at);
      }
      stack.pop_back();
      if (stack.empty()) done = true;
    } else if (!t.empty() && t.front() == '(') {
      if (t.size() == 1) return failure(BracketFailureKind::kEmptyLabel, i);
      const int parent = stack.empty() ? kNoParent : stack.back().node;
      stack.push_back({builder.add_nonterminal(t.substr(1), parent), i});
    } else {
      if (stack.empty()) return failure(BracketFailureKind::kStrayTerminal, i);
      builder.add_terminal(t, stack.back().node);
    }
  }
  return std::move(builder).build();
}

std::vector<std::string> split_tokens(std::string_view line) {
  std::vector<std::string> out;
  std::size_t i = 0;
  while (i < line.size()) {
    while (i < line.size() && is_space(line[i])) ++i;
    std::size_t j = i;
    while (j < line.size() && !is_space(line[j])) ++j;
    if (j > i) out.emplace_back(line.substr(i, j - i));
    i = j;
  }
  return out;
}

}  // namespace tdtd
