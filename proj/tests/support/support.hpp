#pragma once

// Fixtures shared by the unit tests and the acceptance runner.

#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include "tdtd/pcfg.hpp"
#include "tdtd/tree.hpp"

namespace tdtd::testing {

inline constexpr const char* kExampleTree = "(S (NP (DT the) (NN cat)) (VP (VBD sat)))";
// Five nonterminals over a three-word sentence.
inline constexpr const char* kFiveNodeTree = "(S (NP (DT the) (NN cat)) (VB sat))";

inline constexpr const char* kNllGrammar =
    "S NP VP 0.8\n"
    "NP DT NN 1.0\n"
    "VP VBD 0.6\n"
    "DT \"the\" 1.0\n"
    "NN \"cat\" 0.7\n"
    "VBD \"sat\" 1.0\n";

// Path of the toy grammar shipped in data/.
std::filesystem::path toy_grammar_path();
const Grammar& toy_grammar();

// Every tree over the given labels with depth <= max_depth and at most
// max_children children per node; nodes at depth max_depth are words.
std::vector<Tree> enumerate_trees(const std::vector<std::string>& nonterminals,
                                  const std::vector<std::string>& terminals, std::size_t max_depth,
                                  std::size_t max_children);

// Fresh empty directory under the system temp dir, removed on destruction.
class TempDir {
 public:
  explicit TempDir(const std::string& tag);
  ~TempDir();
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;
  const std::filesystem::path& path() const noexcept { return path_; }
  std::filesystem::path operator/(const std::string& name) const { return path_ / name; }

 private:
  std::filesystem::path path_;
};

std::string read_file(const std::filesystem::path& path);
void write_file(const std::filesystem::path& path, const std::string& text);

}  // namespace tdtd::testing
