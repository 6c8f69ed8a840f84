#include "support.hpp"

#include <atomic>
#include <fstream>
#include <sstream>
#include <unistd.h>

#include "tdtd/error.hpp"

#ifndef TDTD_SOURCE_DIR
#error "TDTD_SOURCE_DIR must be defined"
#endif

namespace tdtd::testing {

std::filesystem::path toy_grammar_path() { return std::filesystem::path(TDTD_SOURCE_DIR) / "data" / "toy.pcfg"; }

const Grammar& toy_grammar() {
  static const Grammar g = prune_grammar(load_grammar_file(toy_grammar_path()));
  return g;
}

namespace {

// A subtree shape: label, is-word flag, children.
struct Shape {
  std::string label;
  bool word = false;
  std::vector<Shape> children;
};

std::vector<Shape> subtrees(const std::vector<std::string>& nts, const std::vector<std::string>& ts,
                            std::size_t depth, std::size_t max_depth, std::size_t max_children);

// Every child sequence of length 1..max_children for a node at `depth`.
std::vector<std::vector<Shape>> child_sequences(const std::vector<std::string>& nts,
                                                const std::vector<std::string>& ts, std::size_t depth,
                                                std::size_t max_depth, std::size_t max_children) {
  const auto options = subtrees(nts, ts, depth + 1, max_depth, max_children);
  std::vector<std::vector<Shape>> out;
  std::vector<std::vector<Shape>> frontier{{}};
  for (std::size_t len = 1; len <= max_children; ++len) {
    std::vector<std::vector<Shape>> grown;
    for (const auto& prefix : frontier) {
      for (const auto& o : options) {
        auto seq = prefix;
        seq.push_back(o);
        grown.push_back(std::move(seq));
      }
    }
    out.insert(out.end(), grown.begin(), grown.end());
    frontier = std::move(grown);
  }
  return out;
}

std::vector<Shape> subtrees(const std::vector<std::string>& nts, const std::vector<std::string>& ts,
                            std::size_t depth, std::size_t max_depth, std::size_t max_children) {
  std::vector<Shape> out;
  for (const auto& t : ts) out.push_back({t, true, {}});
  if (depth >= max_depth) return out;
  const auto seqs = child_sequences(nts, ts, depth, max_depth, max_children);
  for (const auto& nt : nts) {
    for (const auto& seq : seqs) out.push_back({nt, false, seq});
  }
  return out;
}

void build(const Shape& s, TreeBuilder& b, int parent) {
  if (s.word) {
    b.add_terminal(s.label, parent);
    return;
  }
  const int id = b.add_nonterminal(s.label, parent);
  for (const auto& c : s.children) build(c, b, id);
}

}  // namespace

std::vector<Tree> enumerate_trees(const std::vector<std::string>& nonterminals,
                                  const std::vector<std::string>& terminals, std::size_t max_depth,
                                  std::size_t max_children) {
  std::vector<Tree> out;
  const auto seqs = child_sequences(nonterminals, terminals, 0, max_depth, max_children);
  for (const auto& root : nonterminals) {
    for (const auto& seq : seqs) {
      TreeBuilder b;
      build(Shape{root, false, seq}, b, kNoParent);
      out.push_back(std::move(b).build());
    }
  }
  return out;
}

TempDir::TempDir(const std::string& tag) {
  static std::atomic<int> counter{0};
  path_ = std::filesystem::temp_directory_path() /
          ("tdtd-" + tag + "-" + std::to_string(::getpid()) + "-" + std::to_string(counter++));
  std::filesystem::remove_all(path_);
  std::filesystem::create_directories(path_);
}

TempDir::~TempDir() {
  std::error_code ec;
  std::filesystem::remove_all(path_, ec);
}

std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open '" + path.string() + "'");
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

void write_file(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  out << text;
  if (!out) throw Error("cannot write '" + path.string() + "'");
}

}  // namespace tdtd::testing
