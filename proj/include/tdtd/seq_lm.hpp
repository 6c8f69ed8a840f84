#pragma once

// GRU language model over linearized bracket sequences.

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <iosfwd>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "tdtd/autodiff.hpp"
#include "tdtd/gru.hpp"
#include "tdtd/rng.hpp"
#include "tdtd/tdtd_model.hpp"

namespace tdtd {

// Ids: 0 BOS (input only), 1 EOS, then tokens. The output softmax ranges over
// ids 1.. so it has size() - 1 outcomes.
class TokenVocab {
 public:
  static constexpr std::size_t kBos = 0;
  static constexpr std::size_t kEos = 1;
  static constexpr std::size_t kReserved = 2;

  TokenVocab() = default;
  explicit TokenVocab(std::vector<std::string> tokens);
  // Frequency-sorted, ties by token.
  static TokenVocab from_sequences(std::span<const std::vector<std::string>> sequences);

  std::size_t size() const noexcept { return kReserved + tokens_.size(); }
  std::size_t output_size() const noexcept { return size() - 1; }
  const std::vector<std::string>& tokens() const noexcept { return tokens_; }
  // Throws Error naming the token when it is out of vocabulary.
  std::size_t id(std::string_view token) const;
  const std::string& token(std::size_t id) const;

 private:
  std::vector<std::string> tokens_;
  std::map<std::string, std::size_t, std::less<>> ids_;
};

struct SeqLmConfig {
  std::size_t hidden_size = 32;
  std::size_t embed_size = 32;
  std::size_t max_length = 200;
};

struct SampledSequence {
  std::vector<std::string> tokens;         // EOS excluded
  std::vector<double> step_log_probs;      // one per sampled id, EOS included
  bool terminated = false;                 // EOS drawn before max_length
  double log_prob = 0.0;
};

class SeqLm {
 public:
  SeqLm(SeqLmConfig config, TokenVocab vocab, std::uint64_t seed = 0);
  SeqLm(SeqLm&&) noexcept = default;
  SeqLm& operator=(SeqLm&&) noexcept = default;
  SeqLm(const SeqLm&) = delete;
  SeqLm& operator=(const SeqLm&) = delete;

  const SeqLmConfig& config() const noexcept { return config_; }
  const TokenVocab& vocab() const noexcept { return vocab_; }
  ad::ParamStore& params() noexcept { return params_; }
  const ad::ParamStore& params() const noexcept { return params_; }

  // BOS-prefixed, EOS-terminated teacher-forced log-probability.
  ad::Var sequence_log_prob(ad::Graph& g, std::span<const std::string> tokens,
                            const TeacherForcing& tf = {}) const;
  double sequence_log_prob(std::span<const std::string> tokens) const;
  // Log-probabilities over output ids 1.. after reading `prefix`.
  std::vector<double> next_distribution(std::span<const std::string> prefix) const;

  SampledSequence sample(Rng& rng, std::optional<std::size_t> max_length = std::nullopt) const;

  void save(std::ostream& out) const;
  void save(const std::filesystem::path& path) const;
  static SeqLm load(std::istream& in);
  static SeqLm load(const std::filesystem::path& path);

 private:
  ad::Var step(ad::Graph& g, ad::Var h, std::size_t input_id) const;
  ad::Var output(ad::Graph& g, ad::Var h) const;

  SeqLmConfig config_;
  TokenVocab vocab_;
  ad::ParamStore params_;
  ad::Tensor* embed_ = nullptr;
  GruCell rnn_;
  ad::Tensor* h0_ = nullptr;
  ad::Tensor* out_w_ = nullptr;
  ad::Tensor* out_b_ = nullptr;
};

}  // namespace tdtd
