#include "tdtd/tdtd_model.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>

#include "tdtd/error.hpp"
#include "tdtd/model_file.hpp"

namespace tdtd {

namespace {

constexpr double kNegInf = -std::numeric_limits<double>::infinity();

// A gold tree asked for an outcome the caps forbid.
class CapViolation : public Error {
 public:
  using Error::Error;
};

struct Caps {
  std::size_t max_depth;
  std::size_t max_children;
  std::size_t max_width;
};

const char* class_name(OutcomeClass c) {
  switch (c) {
    case OutcomeClass::kNonterminal: return "nonterminal";
    case OutcomeClass::kTerminal: return "terminal";
    case OutcomeClass::kStop: return "STOP";
  }
  return "?";
}

std::vector<double> values_of(const ad::Graph& g, ad::Var v) {
  auto s = g.value(v);
  return {s.begin(), s.end()};
}

}  // namespace

void TdtdConfig::validate() const {
  if (hidden_size < 1 || embed_size < 1) throw ContractError("tdtd config: sizes must be >= 1");
  if (max_depth < 1 || max_children_per_node < 1 || max_layer_width < 1) {
    throw ContractError("tdtd config: max_depth, max_children_per_node and max_layer_width must be >= 1");
  }
}

std::size_t feature_size(const TdtdConfig& config) {
  return 4 * config.hidden_size + config.context_size;
}

double NodeDistribution::log_prob(const Outcome& o) const {
  const double g = gate[static_cast<std::size_t>(o.cls)];
  switch (o.cls) {
    case OutcomeClass::kNonterminal: return g + nonterminal.at(o.index);
    case OutcomeClass::kTerminal: return g + terminal.at(o.index);
    case OutcomeClass::kStop: return g;
  }
  return kNegInf;
}

TdtdModel::TdtdModel(TdtdConfig config, SymbolVocab vocab, std::uint64_t seed,
                     const std::function<void(ad::ParamStore&)>& declare_extra)
    : config_(config), vocab_(std::move(vocab)) {
  config_.validate();
  const std::size_t H = config_.hidden_size;
  const std::size_t E = config_.embed_size;
  const std::size_t N = vocab_.nonterminal_count();
  const std::size_t T = vocab_.terminal_count();
  const std::size_t F = feature_size(config_);
  if (N == 0 || T == 0) throw ContractError("tdtd model: empty vocabulary");

  params_.add("embed", {vocab_.symbol_count(), E});
  GruCell::declare(params_, "layer.fwd", E + 2 * H, H);
  GruCell::declare(params_, "layer.bwd", E + 2 * H, H);
  params_.add("layer.fwd_h0", {H});
  params_.add("layer.bwd_h0", {H});
  GruCell::declare(params_, "depth", E, H);
  params_.add("depth.h0", {H});
  GruCell::declare(params_, "gen", E, H);
  params_.add("gen.h0", {H});
  if (config_.context_size == 0) {
    params_.add("root.state", {E});
    params_.add("root.context", {2 * H});
  }
  params_.add("root.w", {E, N});
  params_.add("root.b", {N});
  params_.add("head.gate_w", {F, 3});
  params_.add("head.gate_b", {3});
  params_.add("head.nt_w", {F, N});
  params_.add("head.nt_b", {N});
  params_.add("head.t_w", {F, T});
  params_.add("head.t_b", {T});
  if (declare_extra) declare_extra(params_);

  Rng rng(seed);
  params_.init_uniform(rng);

  embed_ = &params_.at("embed");
  layer_fwd_ = GruCell::bind(params_, "layer.fwd");
  layer_bwd_ = GruCell::bind(params_, "layer.bwd");
  depth_rnn_ = GruCell::bind(params_, "depth");
  gen_rnn_ = GruCell::bind(params_, "gen");
  layer_fwd_h0_ = &params_.at("layer.fwd_h0");
  layer_bwd_h0_ = &params_.at("layer.bwd_h0");
  depth_h0_ = &params_.at("depth.h0");
  gen_h0_ = &params_.at("gen.h0");
  root_state_ = params_.find("root.state");
  root_context_ = params_.find("root.context");
  root_w_ = &params_.at("root.w");
  root_b_ = &params_.at("root.b");
  gate_w_ = &params_.at("head.gate_w");
  gate_b_ = &params_.at("head.gate_b");
  nt_w_ = &params_.at("head.nt_w");
  nt_b_ = &params_.at("head.nt_b");
  t_w_ = &params_.at("head.t_w");
  t_b_ = &params_.at("head.t_b");
}

ad::Var TdtdModel::embedding(ad::Graph& g, std::size_t symbol) const {
  if (symbol >= vocab_.symbol_count()) {
    throw ContractError("embedding: symbol id " + std::to_string(symbol) + " out of range");
  }
  return g.lookup(g.param(*embed_), symbol);
}

std::vector<ad::Var> TdtdModel::encode_layer(ad::Graph& g, std::span<const ad::Var> inputs,
                                             std::span<const ad::Var> parent_states) const {
  if (inputs.size() != parent_states.size()) {
    throw ContractError("encode_layer: " + std::to_string(inputs.size()) + " inputs but " +
                        std::to_string(parent_states.size()) + " parent states");
  }
  const std::size_t n = inputs.size();
  std::vector<ad::Var> joined(n);
  for (std::size_t i = 0; i < n; ++i) {
    if (!parent_states[i].valid()) {
      throw ContractError("encode_layer: node " + std::to_string(i) + " has no parent state");
    }
    joined[i] = g.concat({inputs[i], parent_states[i]});
  }
  std::vector<ad::Var> fwd(n), bwd(n);
  ad::Var h = g.param(*layer_fwd_h0_);
  for (std::size_t i = 0; i < n; ++i) fwd[i] = h = layer_fwd_.step(g, h, joined[i]);
  h = g.param(*layer_bwd_h0_);
  for (std::size_t i = n; i-- > 0;) bwd[i] = h = layer_bwd_.step(g, h, joined[i]);
  std::vector<ad::Var> out(n);
  for (std::size_t i = 0; i < n; ++i) out[i] = g.concat({fwd[i], bwd[i]});
  return out;
}

ad::Var TdtdModel::depth_step(ad::Graph& g, ad::Var parent_state, ad::Var embedding) const {
  return depth_rnn_.step(g, parent_state.valid() ? parent_state : g.param(*depth_h0_), embedding);
}

ad::Var TdtdModel::gen_step(ad::Graph& g, ad::Var prev, ad::Var embedding) const {
  return gen_rnn_.step(g, prev.valid() ? prev : g.param(*gen_h0_), embedding);
}

ad::Var TdtdModel::feature(ad::Graph& g, ad::Var u, ad::Var ancestor, ad::Var parent_state,
                           ad::Var extra) const {
  if (config_.context_size == 0) return g.concat({u, ancestor, parent_state});
  if (!extra.valid()) throw ContractError("tdtd model: conditional model needs extra context");
  return g.concat({u, ancestor, parent_state, extra});
}

namespace {

// Lazily built distribution for one decision.
class Step {
 public:
  Step(ad::Graph& g, ad::Var feature, ClassMask mask, ad::Tensor& gate_w, ad::Tensor& gate_b,
       ad::Tensor& nt_w, ad::Tensor& nt_b, ad::Tensor& t_w, ad::Tensor& t_b)
      : g_(g), feature_(feature), mask_(mask), nt_w_(nt_w), nt_b_(nt_b), t_w_(t_w), t_b_(t_b) {
    std::vector<std::size_t> allowed;
    for (std::size_t c = 0; c < 3; ++c) {
      if (mask.allows(static_cast<OutcomeClass>(c))) {
        slot_[c] = allowed.size();
        allowed.push_back(c);
      }
    }
    const ad::Var logits = g.affine(feature, g.param(gate_w), g.param(gate_b));
    gate_ = g.log_softmax(allowed.size() == 3 ? logits : g.gather(logits, allowed));
    const auto v = g.value(gate_);
    gate_values_.fill(kNegInf);
    for (std::size_t c = 0; c < 3; ++c) {
      if (mask.allows(static_cast<OutcomeClass>(c))) gate_values_[c] = v[slot_[c]];
    }
  }

  const ClassMask& mask() const noexcept { return mask_; }
  double gate(OutcomeClass c) const { return gate_values_[static_cast<std::size_t>(c)]; }

  ad::Var head(OutcomeClass c) {
    ad::Var& h = c == OutcomeClass::kNonterminal ? nt_head_ : t_head_;
    if (!h.valid()) {
      const bool nt = c == OutcomeClass::kNonterminal;
      h = g_.log_softmax(
          g_.affine(feature_, g_.param(nt ? nt_w_ : t_w_), g_.param(nt ? nt_b_ : t_b_)));
    }
    return h;
  }

  std::span<const double> head_values(OutcomeClass c) { return g_.value(head(c)); }

  ad::Var log_prob(const Outcome& o) {
    const ad::Var gate = g_.pick(gate_, slot_[static_cast<std::size_t>(o.cls)]);
    if (o.cls == OutcomeClass::kStop) return gate;
    return g_.add(gate, g_.pick(head(o.cls), o.index));
  }

  Outcome greedy() {
    Outcome best;
    double best_score = kNegInf;
    bool found = false;
    for (OutcomeClass c : {OutcomeClass::kNonterminal, OutcomeClass::kTerminal, OutcomeClass::kStop}) {
      if (!mask_.allows(c)) continue;
      Outcome o{c, 0};
      double score = gate(c);
      if (c != OutcomeClass::kStop) {
        const auto hv = head_values(c);
        const auto it = std::max_element(hv.begin(), hv.end());
        o.index = static_cast<std::size_t>(it - hv.begin());
        score += *it;
      }
      if (!found || score > best_score) {
        best = o;
        best_score = score;
        found = true;
      }
    }
    return best;
  }

  Outcome sample(Rng& rng) {
    std::array<double, 3> w{};
    for (std::size_t c = 0; c < 3; ++c) {
      w[c] = mask_.allows(static_cast<OutcomeClass>(c)) ? std::exp(gate_values_[c]) : 0.0;
    }
    Outcome o{static_cast<OutcomeClass>(rng.categorical(w)), 0};
    if (o.cls != OutcomeClass::kStop) {
      const auto hv = head_values(o.cls);
      std::vector<double> p(hv.size());
      std::transform(hv.begin(), hv.end(), p.begin(), [](double x) { return std::exp(x); });
      o.index = rng.categorical(p);
    }
    return o;
  }

 private:
  ad::Graph& g_;
  ad::Var feature_;
  ClassMask mask_;
  ad::Tensor& nt_w_;
  ad::Tensor& nt_b_;
  ad::Tensor& t_w_;
  ad::Tensor& t_b_;
  ad::Var gate_;
  ad::Var nt_head_;
  ad::Var t_head_;
  std::array<std::size_t, 3> slot_{};
  std::array<double, 3> gate_values_{};
};

struct StepInfo {
  int parent;  // builder id of the node whose children are being emitted
  std::size_t child_index;
};

class Policy {
 public:
  virtual ~Policy() = default;
  virtual std::size_t root(std::span<const double> log_probs) = 0;
  virtual Outcome choose(Step& step, const StepInfo& info) = 0;
  // Symbol fed to the generation GRU after `chosen`.
  virtual Outcome feed(Step&, const Outcome& chosen) { return chosen; }
};

// Replays a gold tree. Builder ids follow breadth-first order, so they index
// the gold tree's layer-order node list directly.
class GoldPolicy final : public Policy {
 public:
  GoldPolicy(const Tree& tree, const SymbolVocab& vocab, const TeacherForcing& tf)
      : tree_(tree), vocab_(vocab), tf_(tf) {
    if (tree.empty()) throw ContractError("tree_log_prob: empty tree");
    for (const auto& layer : layer_view(tree).layers) order_.insert(order_.end(), layer.begin(), layer.end());
    if (tf_.prob < 1.0 && tf_.rng == nullptr) {
      throw ContractError("scheduled sampling needs an rng when teacher-forcing prob < 1");
    }
  }

  std::size_t root(std::span<const double>) override {
    const TreeNode& r = tree_.node(tree_.root());
    if (r.is_terminal()) throw CapViolation("tree root is a terminal");
    return vocab_.nonterminal_index(r.label);
  }

  Outcome choose(Step&, const StepInfo& info) override {
    const TreeNode& parent = tree_.node(order_.at(static_cast<std::size_t>(info.parent)));
    if (info.child_index >= parent.children.size()) return {OutcomeClass::kStop, 0};
    const TreeNode& child = tree_.node(parent.children[info.child_index]);
    if (child.is_terminal()) return {OutcomeClass::kTerminal, vocab_.terminal_index(child.label)};
    return {OutcomeClass::kNonterminal, vocab_.nonterminal_index(child.label)};
  }

  Outcome feed(Step& step, const Outcome& chosen) override {
    if (tf_.prob >= 1.0) return chosen;
    if (tf_.rng->uniform() < tf_.prob) return chosen;
    return step.greedy();
  }

 private:
  const Tree& tree_;
  const SymbolVocab& vocab_;
  TeacherForcing tf_;
  std::vector<int> order_;
};

class SamplingPolicy final : public Policy {
 public:
  SamplingPolicy(Rng& rng, bool greedy, std::optional<std::size_t> root)
      : rng_(rng), greedy_(greedy), fixed_root_(root) {}

  std::size_t root(std::span<const double> log_probs) override {
    if (fixed_root_) return *fixed_root_;
    if (greedy_) {
      return static_cast<std::size_t>(std::max_element(log_probs.begin(), log_probs.end()) -
                                      log_probs.begin());
    }
    std::vector<double> p(log_probs.size());
    std::transform(log_probs.begin(), log_probs.end(), p.begin(), [](double x) { return std::exp(x); });
    return rng_.categorical(p);
  }

  Outcome choose(Step& step, const StepInfo&) override {
    return greedy_ ? step.greedy() : step.sample(rng_);
  }

 private:
  Rng& rng_;
  bool greedy_;
  std::optional<std::size_t> fixed_root_;
};

}  // namespace

class Walker {
 public:
  Walker(const TdtdModel& model, ad::Graph& g, const Conditioning* cond, Caps caps)
      : m_(model), g_(g), cond_(cond), caps_(caps) {
    if (model.config_.context_size > 0 && (cond == nullptr || !cond->attend)) {
      throw ContractError("tdtd model: conditional model needs a sentence conditioning");
    }
  }

  // Returns the summed log-probability; fills `builder` and `decisions`.
  ad::Var run(Policy& policy, TreeBuilder& builder, std::vector<double>* decisions) {
    const SymbolVocab& vocab = m_.vocab_;
    std::vector<ad::Var> terms;
    auto record = [&](ad::Var lp) {
      terms.push_back(lp);
      if (decisions != nullptr) decisions->push_back(g_.scalar_value(lp));
    };

    const ad::Var root_in = cond_ != nullptr ? cond_->root_input : g_.param(*m_.root_state_);
    const ad::Var root_lsm =
        g_.log_softmax(g_.affine(root_in, g_.param(*m_.root_w_), g_.param(*m_.root_b_)));
    const std::size_t root = policy.root(g_.value(root_lsm));
    if (root >= vocab.nonterminal_count()) throw ContractError("root index out of range");
    record(g_.pick(root_lsm, root));
    builder.add_nonterminal(vocab.nonterminals()[root]);
    slots_.push_back({vocab.nonterminal_symbol(root), true, kNoParent, {}, {}});

    std::vector<int> layer{0};
    {
      const ad::Var ctx = cond_ != nullptr ? cond_->root_context : g_.param(*m_.root_context_);
      finish_layer(layer, std::vector<ad::Var>{ctx}, true);
    }
    for (std::size_t depth = 0;; ++depth) {
      std::vector<int> parents;
      for (int id : layer) {
        if (slot(id).nonterminal) parents.push_back(id);
      }
      if (parents.empty()) break;
      const std::size_t child_depth = depth + 1;
      ad::Var u = m_.gen_step(g_, ad::Var{}, m_.embedding(g_, SymbolVocab::kLayerStart));
      std::vector<int> next;
      std::size_t remaining = parents.size();
      for (int p : parents) {
        --remaining;
        const Slot& ps = slot(p);
        const ad::Var ancestor = ps.ancestor;
        const ad::Var parent_state = ps.state;
        for (std::size_t k = 0;; ++k) {
          ClassMask mask;
          mask.stop = k >= 1;
          const bool emit = k < caps_.max_children && (k == 0 || next.size() + remaining < caps_.max_width);
          mask.terminal = emit;
          mask.nonterminal = emit && child_depth < caps_.max_depth;

          ad::Var extra;
          if (cond_ != nullptr && cond_->attend) extra = cond_->attend(g_, g_.concat({u, parent_state}));
          Step step(g_, m_.feature(g_, u, ancestor, parent_state, extra), mask, *m_.gate_w_,
                    *m_.gate_b_, *m_.nt_w_, *m_.nt_b_, *m_.t_w_, *m_.t_b_);
          const Outcome o = policy.choose(step, {p, k});
          if (!mask.allows(o.cls)) {
            throw CapViolation(std::string("tree exceeds model caps: ") + class_name(o.cls) +
                               " not allowed as child " + std::to_string(k + 1) + " at depth " +
                               std::to_string(child_depth) + " (max_depth " +
                               std::to_string(caps_.max_depth) + ", max_children_per_node " +
                               std::to_string(caps_.max_children) + ", max_layer_width " +
                               std::to_string(caps_.max_width) + ")");
          }
          record(step.log_prob(o));
          const Outcome fed = policy.feed(step, o);
          u = m_.gen_step(g_, u, m_.embedding(g_, symbol_of(fed)));
          if (o.cls == OutcomeClass::kStop) break;
          const bool nt = o.cls == OutcomeClass::kNonterminal;
          const int id = nt ? builder.add_nonterminal(vocab.nonterminals()[o.index], p)
                            : builder.add_terminal(vocab.terminals()[o.index], p);
          slots_.push_back({symbol_of(o), nt, p, {}, {}});
          next.push_back(id);
        }
      }
      std::vector<ad::Var> parent_states;
      parent_states.reserve(next.size());
      for (int id : next) {
        parent_states.push_back(slot(slot(id).parent).state);
      }
      finish_layer(next, parent_states, false);
      layer = std::move(next);
    }

    if (terms.size() == 1) return terms.front();
    return g_.sum(g_.concat(terms));
  }

 private:
  struct Slot {
    std::size_t symbol;
    bool nonterminal;
    int parent;
    ad::Var state;     // layer state, 2H
    ad::Var ancestor;  // ancestor state, H; nonterminals only
  };

  Slot& slot(int id) { return slots_.at(static_cast<std::size_t>(id)); }

  std::size_t symbol_of(const Outcome& o) const {
    switch (o.cls) {
      case OutcomeClass::kNonterminal: return m_.vocab_.nonterminal_symbol(o.index);
      case OutcomeClass::kTerminal: return m_.vocab_.terminal_symbol(o.index);
      case OutcomeClass::kStop: return SymbolVocab::kStop;
    }
    return SymbolVocab::kStop;
  }

  // Encodes a finished layer and extends ancestor states. Layers without
  // nonterminals are never expanded, so they are left unencoded.
  void finish_layer(const std::vector<int>& layer, const std::vector<ad::Var>& parent_states, bool is_root) {
    bool any_nt = false;
    for (int id : layer) any_nt = any_nt || slot(id).nonterminal;
    if (!any_nt) return;
    std::vector<ad::Var> inputs;
    inputs.reserve(layer.size());
    for (int id : layer) inputs.push_back(m_.embedding(g_, slot(id).symbol));
    const auto states = m_.encode_layer(g_, inputs, parent_states);
    for (std::size_t i = 0; i < layer.size(); ++i) {
      Slot& s = slot(layer[i]);
      s.state = states[i];
      if (!s.nonterminal) continue;
      const ad::Var up = is_root ? ad::Var{} : slot(s.parent).ancestor;
      s.ancestor = m_.depth_step(g_, up, inputs[i]);
    }
  }

  const TdtdModel& m_;
  ad::Graph& g_;
  const Conditioning* cond_;
  Caps caps_;
  std::vector<Slot> slots_;
};

NodeDistribution TdtdModel::predict_node(std::span<const double> u, std::span<const double> ancestor,
                                         std::span<const double> parent_state,
                                         std::span<const double> extra, ClassMask mask) const {
  const std::size_t H = config_.hidden_size;
  if (u.size() != H || ancestor.size() != H || parent_state.size() != 2 * H ||
      extra.size() != config_.context_size) {
    throw DimensionError("predict_node: state sizes do not match the model configuration");
  }
  if (!mask.nonterminal && !mask.terminal && !mask.stop) {
    throw ContractError("predict_node: mask excludes every class");
  }
  ad::Graph g;
  auto as_var = [&](std::span<const double> s) { return g.constant({s.begin(), s.end()}); };
  const ad::Var ex = config_.context_size > 0 ? as_var(extra) : ad::Var{};
  Step step(g, feature(g, as_var(u), as_var(ancestor), as_var(parent_state), ex), mask, *gate_w_,
            *gate_b_, *nt_w_, *nt_b_, *t_w_, *t_b_);
  NodeDistribution d;
  for (std::size_t c = 0; c < 3; ++c) d.gate[c] = step.gate(static_cast<OutcomeClass>(c));
  d.nonterminal = values_of(g, step.head(OutcomeClass::kNonterminal));
  d.terminal = values_of(g, step.head(OutcomeClass::kTerminal));
  return d;
}

std::vector<double> TdtdModel::root_distribution() const {
  if (root_state_ == nullptr) throw ContractError("root_distribution: conditional model");
  ad::Graph g;
  return values_of(g, g.log_softmax(g.affine(g.param(*root_state_), g.param(*root_w_), g.param(*root_b_))));
}

ad::Var TdtdModel::tree_log_prob(ad::Graph& g, const Tree& tree, const Conditioning* cond,
                                 const TeacherForcing& tf) const {
  GoldPolicy policy(tree, vocab_, tf);
  Walker walker(*this, g, cond,
                {config_.max_depth, config_.max_children_per_node, config_.max_layer_width});
  TreeBuilder builder;
  return walker.run(policy, builder, nullptr);
}

double TdtdModel::tree_log_prob(const Tree& tree) const {
  ad::Graph g;
  try {
    return g.scalar_value(tree_log_prob(g, tree));
  } catch (const CapViolation&) {
    return kNegInf;
  }
}

std::vector<double> TdtdModel::decision_log_probs(const Tree& tree) const {
  ad::Graph g;
  GoldPolicy policy(tree, vocab_, {});
  Walker walker(*this, g, nullptr,
                {config_.max_depth, config_.max_children_per_node, config_.max_layer_width});
  TreeBuilder builder;
  std::vector<double> out;
  walker.run(policy, builder, &out);
  return out;
}

GeneratedTree TdtdModel::generate(Rng& rng, const GenerateOptions& options) const {
  std::optional<std::size_t> root;
  if (options.root_label) root = vocab_.nonterminal_index(*options.root_label);
  const Caps caps{options.max_depth.value_or(config_.max_depth), config_.max_children_per_node,
                  options.max_layer_width.value_or(config_.max_layer_width)};
  if (caps.max_depth < 1 || caps.max_width < 1) throw ContractError("generate: caps must be >= 1");
  SamplingPolicy policy(rng, options.greedy, root);
  ad::Graph g;
  Walker walker(*this, g, nullptr, caps);
  TreeBuilder builder;
  GeneratedTree out;
  out.log_prob = g.scalar_value(walker.run(policy, builder, &out.decision_log_probs));
  out.tree = std::move(builder).build();
  return out;
}

namespace {

constexpr std::string_view kKind = "tdtd";

}  // namespace

void TdtdModel::save(std::ostream& out) const {
  if (config_.context_size > 0) throw ContractError("save: conditional models are saved by the parser");
  ModelHeader header;
  header.kind = std::string(kKind);
  header.settings = {
      {"hidden_size", std::to_string(config_.hidden_size)},
      {"embed_size", std::to_string(config_.embed_size)},
      {"max_depth", std::to_string(config_.max_depth)},
      {"max_children_per_node", std::to_string(config_.max_children_per_node)},
      {"max_layer_width", std::to_string(config_.max_layer_width)},
  };
  header.lists = {{"nonterminals", vocab_.nonterminals()}, {"terminals", vocab_.terminals()}};
  write_model_file(out, header, params_);
}

void TdtdModel::save(const std::filesystem::path& path) const {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write model '" + path.string() + "'");
  save(out);
}

TdtdModel TdtdModel::load(std::istream& in) {
  ModelFile file = read_model_file(in);
  if (file.header.kind != kKind) {
    throw Error("model file holds a '" + file.header.kind + "' model, expected '" + std::string(kKind) + "'");
  }
  TdtdConfig config;
  config.hidden_size = file.header.setting_size("hidden_size");
  config.embed_size = file.header.setting_size("embed_size");
  config.max_depth = file.header.setting_size("max_depth");
  config.max_children_per_node = file.header.setting_size("max_children_per_node");
  config.max_layer_width = file.header.setting_size("max_layer_width");
  TdtdModel model(config, SymbolVocab(file.header.list("nonterminals"), file.header.list("terminals")));
  ad::assign_params(model.params_, file.params);
  return model;
}

TdtdModel TdtdModel::load(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open model '" + path.string() + "'");
  return load(in);
}

}  // namespace tdtd
