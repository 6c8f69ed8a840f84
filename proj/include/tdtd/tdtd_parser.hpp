#pragma once

// Sentence-conditioned tree scoring and candidate reranking. A bidirectional
// GRU encodes the sentence; its summary drives the root prediction and every
// decoder decision attends over the token states.

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <span>
#include <string>
#include <vector>

#include "tdtd/tdtd_model.hpp"

namespace tdtd {

struct ParserConfig {
  TdtdConfig decoder{.hidden_size = 128, .embed_size = 128};
  // Divide attention scores by sqrt(2 * hidden_size).
  bool scaled_attention = true;
};

struct SentenceEncoding {
  ad::Var states;   // [tokens × 2H], forward ‖ backward per row
  ad::Var summary;  // last forward ‖ first backward
  std::size_t length = 0;
};

struct Attention {
  ad::Var context;
  ad::Var weights;
};

struct RankedCandidate {
  std::size_t index = 0;  // position in the input candidate list
  double score = 0.0;     // conditional log-probability
};

class TdtdParser {
 public:
  // The vocabulary should include the unknown word so unseen tokens map to it.
  TdtdParser(ParserConfig config, SymbolVocab vocab, std::uint64_t seed = 0);

  const ParserConfig& config() const noexcept { return config_; }
  const TdtdModel& model() const noexcept { return model_; }
  ad::ParamStore& params() noexcept { return model_.params(); }
  const ad::ParamStore& params() const noexcept { return model_.params(); }

  // Ablation switch: replace every attention context with zeros.
  void set_zero_attention(bool on) noexcept { zero_attention_ = on; }

  SentenceEncoding encode_sentence(ad::Graph& g, std::span<const std::string> tokens) const;
  Attention attend(ad::Graph& g, ad::Var query, const SentenceEncoding& enc) const;
  // Root input and root-layer parent state derived from the sentence.
  Conditioning conditioning(ad::Graph& g, const SentenceEncoding& enc) const;

  // log p(tree | sentence). Throws Error when the yield differs from the
  // sentence, naming the first divergent position.
  ad::Var conditional_tree_log_prob(ad::Graph& g, const Tree& tree, std::span<const std::string> tokens,
                                    const TeacherForcing& tf = {}) const;
  double conditional_tree_log_prob(const Tree& tree, std::span<const std::string> tokens) const;

  // Sorted by score, best first; ties keep input order.
  std::vector<RankedCandidate> rerank(std::span<const std::string> tokens,
                                      std::span<const Tree> candidates) const;

  void save(std::ostream& out) const;
  void save(const std::filesystem::path& path) const;
  static TdtdParser load(std::istream& in);
  static TdtdParser load(const std::filesystem::path& path);

 private:
  ParserConfig config_;
  TdtdModel model_;
  bool zero_attention_ = false;
  GruCell enc_fwd_, enc_bwd_;
  ad::Tensor* enc_fwd_h0_ = nullptr;
  ad::Tensor* enc_bwd_h0_ = nullptr;
  ad::Tensor* root_in_w_ = nullptr;
  ad::Tensor* root_in_b_ = nullptr;
  ad::Tensor* root_ctx_w_ = nullptr;
  ad::Tensor* root_ctx_b_ = nullptr;
  ad::Tensor* query_w_ = nullptr;
};

// Throws Error when `tree`'s terminal yield differs from `tokens`.
void check_yield(const Tree& tree, std::span<const std::string> tokens);

// Blocks separated by blank lines: a whitespace-tokenized sentence, then one
// bracketed candidate per line.
struct CandidateBlock {
  std::vector<std::string> sentence;
  std::vector<Tree> candidates;
};

std::vector<CandidateBlock> read_candidates(std::istream& in);
std::vector<CandidateBlock> read_candidates(const std::filesystem::path& path);
void write_candidates(std::span<const CandidateBlock> blocks, std::ostream& out);

// `sentence_index<TAB>rank<TAB>score<TAB>bracketed_tree`, rank 1 first.
void write_rerank_tsv(std::ostream& out, std::size_t sentence_index, std::span<const Tree> candidates,
                      std::span<const RankedCandidate> ranking);

}  // namespace tdtd
