#include "tdtd/seq_lm.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <unordered_map>

#include "tdtd/error.hpp"
#include "tdtd/model_file.hpp"

namespace tdtd {

namespace {

constexpr std::string_view kKind = "seq-lm";

}  // namespace

TokenVocab::TokenVocab(std::vector<std::string> tokens) : tokens_(std::move(tokens)) {
  if (tokens_.empty()) throw ContractError("token vocabulary: no tokens");
  for (std::size_t i = 0; i < tokens_.size(); ++i) {
    if (tokens_[i].empty()) throw ContractError("token vocabulary: empty token");
    if (!ids_.emplace(tokens_[i], kReserved + i).second) {
      throw ContractError("token vocabulary: duplicate token '" + tokens_[i] + "'");
    }
  }
}

TokenVocab TokenVocab::from_sequences(std::span<const std::vector<std::string>> sequences) {
  std::unordered_map<std::string, std::size_t> counts;
  for (const auto& seq : sequences) {
    for (const auto& t : seq) ++counts[t];
  }
  std::vector<std::pair<std::string, std::size_t>> items(counts.begin(), counts.end());
  std::sort(items.begin(), items.end(), [](const auto& a, const auto& b) {
    return a.second != b.second ? a.second > b.second : a.first < b.first;
  });
  std::vector<std::string> tokens;
  tokens.reserve(items.size());
  for (auto& [t, n] : items) tokens.push_back(std::move(t));
  return TokenVocab(std::move(tokens));
}

std::size_t TokenVocab::id(std::string_view token) const {
  auto it = ids_.find(token);
  if (it == ids_.end()) throw Error("token '" + std::string(token) + "' is not in the vocabulary");
  return it->second;
}

const std::string& TokenVocab::token(std::size_t id) const {
  if (id < kReserved || id >= size()) throw ContractError("token id " + std::to_string(id) + " has no text");
  return tokens_[id - kReserved];
}

SeqLm::SeqLm(SeqLmConfig config, TokenVocab vocab, std::uint64_t seed)
    : config_(config), vocab_(std::move(vocab)) {
  if (config_.hidden_size < 1 || config_.embed_size < 1 || config_.max_length < 1) {
    throw ContractError("seq-lm config: sizes and max_length must be >= 1");
  }
  const std::size_t H = config_.hidden_size;
  params_.add("embed", {vocab_.size(), config_.embed_size});
  GruCell::declare(params_, "rnn", config_.embed_size, H);
  params_.add("rnn.h0", {H});
  params_.add("out.w", {H, vocab_.output_size()});
  params_.add("out.b", {vocab_.output_size()});
  Rng rng(seed);
  params_.init_uniform(rng);
  embed_ = &params_.at("embed");
  rnn_ = GruCell::bind(params_, "rnn");
  h0_ = &params_.at("rnn.h0");
  out_w_ = &params_.at("out.w");
  out_b_ = &params_.at("out.b");
}

ad::Var SeqLm::step(ad::Graph& g, ad::Var h, std::size_t input_id) const {
  return rnn_.step(g, h.valid() ? h : g.param(*h0_), g.lookup(g.param(*embed_), input_id));
}

ad::Var SeqLm::output(ad::Graph& g, ad::Var h) const {
  return g.log_softmax(g.affine(h, g.param(*out_w_), g.param(*out_b_)));
}

ad::Var SeqLm::sequence_log_prob(ad::Graph& g, std::span<const std::string> tokens,
                                 const TeacherForcing& tf) const {
  if (tf.prob < 1.0 && tf.rng == nullptr) {
    throw ContractError("scheduled sampling needs an rng when teacher-forcing prob < 1");
  }
  std::vector<std::size_t> targets;
  targets.reserve(tokens.size() + 1);
  for (const auto& t : tokens) targets.push_back(vocab_.id(t));
  targets.push_back(TokenVocab::kEos);

  std::vector<ad::Var> terms;
  terms.reserve(targets.size());
  ad::Var h;
  std::size_t input = TokenVocab::kBos;
  for (std::size_t target : targets) {
    h = step(g, h, input);
    const ad::Var lsm = output(g, h);
    terms.push_back(g.pick(lsm, target - 1));
    input = target;
    if (tf.prob < 1.0 && tf.rng->uniform() >= tf.prob) {
      const auto v = g.value(lsm);
      input = static_cast<std::size_t>(std::max_element(v.begin(), v.end()) - v.begin()) + 1;
    }
  }
  return g.sum(g.concat(terms));
}

double SeqLm::sequence_log_prob(std::span<const std::string> tokens) const {
  ad::Graph g;
  return g.scalar_value(sequence_log_prob(g, tokens));
}

std::vector<double> SeqLm::next_distribution(std::span<const std::string> prefix) const {
  ad::Graph g;
  ad::Var h = step(g, ad::Var{}, TokenVocab::kBos);
  for (const auto& t : prefix) h = step(g, h, vocab_.id(t));
  const auto v = g.value(output(g, h));
  return {v.begin(), v.end()};
}

SampledSequence SeqLm::sample(Rng& rng, std::optional<std::size_t> max_length) const {
  const std::size_t limit = max_length.value_or(config_.max_length);
  if (limit < 1) throw ContractError("sample: max_length must be >= 1");
  SampledSequence out;
  ad::Graph g;
  ad::Var h;
  std::size_t input = TokenVocab::kBos;
  std::vector<double> p(vocab_.output_size());
  while (out.tokens.size() < limit) {
    h = step(g, h, input);
    const auto lsm = g.value(output(g, h));
    std::transform(lsm.begin(), lsm.end(), p.begin(), [](double x) { return std::exp(x); });
    const std::size_t o = rng.categorical(p);
    out.step_log_probs.push_back(lsm[o]);
    out.log_prob += lsm[o];
    input = o + 1;
    if (input == TokenVocab::kEos) {
      out.terminated = true;
      break;
    }
    out.tokens.push_back(vocab_.token(input));
  }
  return out;
}

void SeqLm::save(std::ostream& out) const {
  ModelHeader header;
  header.kind = std::string(kKind);
  header.settings = {
      {"hidden_size", std::to_string(config_.hidden_size)},
      {"embed_size", std::to_string(config_.embed_size)},
      {"max_length", std::to_string(config_.max_length)},
  };
  header.lists = {{"tokens", vocab_.tokens()}};
  write_model_file(out, header, params_);
}

void SeqLm::save(const std::filesystem::path& path) const {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write model '" + path.string() + "'");
  save(out);
}

SeqLm SeqLm::load(std::istream& in) {
  ModelFile file = read_model_file(in);
  if (file.header.kind != kKind) {
    throw Error("model file holds a '" + file.header.kind + "' model, expected '" + std::string(kKind) + "'");
  }
  SeqLmConfig config;
  config.hidden_size = file.header.setting_size("hidden_size");
  config.embed_size = file.header.setting_size("embed_size");
  config.max_length = file.header.setting_size("max_length");
  SeqLm model(config, TokenVocab(file.header.list("tokens")));
  ad::assign_params(model.params_, file.params);
  return model;
}

SeqLm SeqLm::load(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open model '" + path.string() + "'");
  return load(in);
}

}  // namespace tdtd
