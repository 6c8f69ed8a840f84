#pragma once

// Breadth-first tree decoder. A tree is produced layer by layer: for each
// nonterminal of the finished layer (left to right) the model emits child
// symbols until STOP. Three recurrences feed each prediction:
//   layer states  h  bidirectional GRU over a finished layer, each input
//                    joined with its parent's state
//   ancestor      s  GRU down the root-to-node label path
//   generation    u  GRU over symbols emitted so far in the current layer,
//                    continuing across parent boundaries
// Each decision is a gate over {nonterminal, terminal, STOP} times a
// class-conditional softmax.

#include <array>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "tdtd/autodiff.hpp"
#include "tdtd/gru.hpp"
#include "tdtd/rng.hpp"
#include "tdtd/tree.hpp"
#include "tdtd/vocab.hpp"

namespace tdtd {

struct TdtdConfig {
  std::size_t hidden_size = 32;
  std::size_t embed_size = 32;
  // Nodes at depth max_depth must be terminals.
  std::size_t max_depth = 7;
  std::size_t max_children_per_node = 8;
  std::size_t max_layer_width = 64;
  // Width of the per-decision extra context; 0 for the unconditional model.
  std::size_t context_size = 0;

  void validate() const;
};

enum class OutcomeClass : std::uint8_t { kNonterminal = 0, kTerminal = 1, kStop = 2 };

struct Outcome {
  OutcomeClass cls = OutcomeClass::kStop;
  std::size_t index = 0;  // class-local; unused for STOP

  friend bool operator==(const Outcome&, const Outcome&) = default;
};

struct ClassMask {
  bool nonterminal = true;
  bool terminal = true;
  bool stop = true;

  bool allows(OutcomeClass c) const noexcept {
    return c == OutcomeClass::kNonterminal ? nonterminal : c == OutcomeClass::kTerminal ? terminal : stop;
  }
};

// Log-probabilities; masked gate classes are -inf.
struct NodeDistribution {
  std::array<double, 3> gate{};
  std::vector<double> nonterminal;
  std::vector<double> terminal;

  double log_prob(const Outcome& o) const;
};

// Per-tree conditioning used by the parser.
struct Conditioning {
  ad::Var root_input;    // embed_size
  ad::Var root_context;  // 2 * hidden_size, parent state of the root layer
  // Maps the query [u; h_parent] to a context_size vector.
  std::function<ad::Var(ad::Graph&, ad::Var)> attend;
};

// Scheduled sampling: each gold symbol fed to the generation GRU is replaced
// by the model's greedy prediction with probability 1 - prob. The rng is not
// touched when prob >= 1.
struct TeacherForcing {
  double prob = 1.0;
  Rng* rng = nullptr;
};

struct GenerateOptions {
  bool greedy = false;
  std::optional<std::string> root_label;
  // Override the configured caps when set.
  std::optional<std::size_t> max_depth;
  std::optional<std::size_t> max_layer_width;
};

struct GeneratedTree {
  Tree tree;
  std::vector<double> decision_log_probs;  // root first, then every child/STOP decision
  double log_prob = 0.0;
};

class TdtdModel {
 public:
  // `declare_extra` registers additional parameters before initialization.
  TdtdModel(TdtdConfig config, SymbolVocab vocab, std::uint64_t seed = 0,
            const std::function<void(ad::ParamStore&)>& declare_extra = {});
  TdtdModel(TdtdModel&&) noexcept = default;
  TdtdModel& operator=(TdtdModel&&) noexcept = default;
  TdtdModel(const TdtdModel&) = delete;
  TdtdModel& operator=(const TdtdModel&) = delete;

  const TdtdConfig& config() const noexcept { return config_; }
  const SymbolVocab& vocab() const noexcept { return vocab_; }
  ad::ParamStore& params() noexcept { return params_; }
  const ad::ParamStore& params() const noexcept { return params_; }

  // Building blocks. Invalid `prev` Vars select the learned initial state.
  ad::Var embedding(ad::Graph& g, std::size_t symbol) const;
  std::vector<ad::Var> encode_layer(ad::Graph& g, std::span<const ad::Var> inputs,
                                    std::span<const ad::Var> parent_states) const;
  ad::Var depth_step(ad::Graph& g, ad::Var parent_state, ad::Var embedding) const;
  ad::Var gen_step(ad::Graph& g, ad::Var prev, ad::Var embedding) const;
  NodeDistribution predict_node(std::span<const double> u, std::span<const double> ancestor,
                                std::span<const double> parent_state, std::span<const double> extra,
                                ClassMask mask = {}) const;
  std::vector<double> root_distribution() const;

  // Teacher-forced log p(tree), root term included. Throws Error for labels
  // outside the vocabulary or trees outside the configured caps.
  ad::Var tree_log_prob(ad::Graph& g, const Tree& tree, const Conditioning* cond = nullptr,
                        const TeacherForcing& tf = {}) const;
  // As above; trees outside the caps have log probability -inf.
  double tree_log_prob(const Tree& tree) const;
  // Per-decision log-probs of a gold tree in generation order.
  std::vector<double> decision_log_probs(const Tree& tree) const;

  GeneratedTree generate(Rng& rng, const GenerateOptions& options = {}) const;

  void save(std::ostream& out) const;
  void save(const std::filesystem::path& path) const;
  static TdtdModel load(std::istream& in);
  static TdtdModel load(const std::filesystem::path& path);

 private:
  friend class Walker;
  ad::Var feature(ad::Graph& g, ad::Var u, ad::Var ancestor, ad::Var parent_state, ad::Var extra) const;

  TdtdConfig config_;
  SymbolVocab vocab_;
  ad::ParamStore params_;

  ad::Tensor* embed_ = nullptr;
  GruCell layer_fwd_, layer_bwd_, depth_rnn_, gen_rnn_;
  ad::Tensor* layer_fwd_h0_ = nullptr;
  ad::Tensor* layer_bwd_h0_ = nullptr;
  ad::Tensor* depth_h0_ = nullptr;
  ad::Tensor* gen_h0_ = nullptr;
  ad::Tensor* root_state_ = nullptr;    // unconditional only
  ad::Tensor* root_context_ = nullptr;  // unconditional only
  ad::Tensor* root_w_ = nullptr;
  ad::Tensor* root_b_ = nullptr;
  ad::Tensor* gate_w_ = nullptr;
  ad::Tensor* gate_b_ = nullptr;
  ad::Tensor* nt_w_ = nullptr;
  ad::Tensor* nt_b_ = nullptr;
  ad::Tensor* t_w_ = nullptr;
  ad::Tensor* t_b_ = nullptr;
};

// Width of the feature vector fed to the heads.
std::size_t feature_size(const TdtdConfig& config);

}  // namespace tdtd
