#include "tdtd/config.hpp"

#include <charconv>
#include <fstream>
#include <functional>
#include <sstream>

#include "tdtd/error.hpp"

namespace tdtd {

namespace {

std::string_view trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

[[noreturn]] void bad_value(std::string_view key, std::string_view value, const char* expected) {
  throw Error("cannot parse '" + std::string(value) + "' as " + expected + " for " + std::string(key));
}

std::size_t parse_size(std::string_view key, std::string_view v) {
  std::size_t out = 0;
  auto res = std::from_chars(v.data(), v.data() + v.size(), out);
  if (v.empty() || res.ec != std::errc() || res.ptr != v.data() + v.size()) bad_value(key, v, "an integer");
  return out;
}

std::uint64_t parse_u64(std::string_view key, std::string_view v) {
  std::uint64_t out = 0;
  auto res = std::from_chars(v.data(), v.data() + v.size(), out);
  if (v.empty() || res.ec != std::errc() || res.ptr != v.data() + v.size()) bad_value(key, v, "an integer");
  return out;
}

double parse_real(std::string_view key, std::string_view v) {
  double out = 0.0;
  auto res = std::from_chars(v.data(), v.data() + v.size(), out);
  if (v.empty() || res.ec != std::errc() || res.ptr != v.data() + v.size()) bad_value(key, v, "a number");
  return out;
}

bool parse_bool(std::string_view key, std::string_view v) {
  if (v == "true" || v == "1" || v == "yes" || v == "on") return true;
  if (v == "false" || v == "0" || v == "no" || v == "off") return false;
  bad_value(key, v, "a boolean");
}

std::string show(double v) { return ad::format_double(v); }
std::string show(bool v) { return v ? "true" : "false"; }
std::string show(std::size_t v) { return std::to_string(v); }

struct Entry {
  std::string key;
  std::function<void(ExperimentConfig&, std::string_view)> set;
  std::function<std::optional<std::string>(const ExperimentConfig&)> get;  // nullopt when unset
};

template <typename Field>
Entry size_entry(std::string key, Field field) {
  return {key, [key, field](ExperimentConfig& c, std::string_view v) { field(c) = parse_size(key, v); },
          [field](const ExperimentConfig& c) -> std::optional<std::string> { return show(field(c)); }};
}

template <typename Field>
Entry real_entry(std::string key, Field field) {
  return {key, [key, field](ExperimentConfig& c, std::string_view v) { field(c) = parse_real(key, v); },
          [field](const ExperimentConfig& c) -> std::optional<std::string> { return show(field(c)); }};
}

template <typename Field>
Entry bool_entry(std::string key, Field field) {
  return {key, [key, field](ExperimentConfig& c, std::string_view v) { field(c) = parse_bool(key, v); },
          [field](const ExperimentConfig& c) -> std::optional<std::string> { return show(field(c)); }};
}

const std::vector<Entry>& entries() {
  using C = ExperimentConfig;
  static const std::vector<Entry> table = {
      {"model",
       [](C& c, std::string_view v) { c.model = parse_model_kind(v); },
       [](const C& c) -> std::optional<std::string> {
         if (!c.model) return std::nullopt;
         return std::string(to_string(*c.model));
       }},
      {"hidden_size", [](C& c, std::string_view v) { c.hidden_size = parse_size("hidden_size", v); },
       [](const C& c) -> std::optional<std::string> {
         if (!c.hidden_size) return std::nullopt;
         return show(*c.hidden_size);
       }},
      {"embed_size", [](C& c, std::string_view v) { c.embed_size = parse_size("embed_size", v); },
       [](const C& c) -> std::optional<std::string> {
         if (!c.embed_size) return std::nullopt;
         return show(*c.embed_size);
       }},
      size_entry("max_depth", [](auto& c) -> auto& { return c.max_depth; }),
      size_entry("max_children_per_node", [](auto& c) -> auto& { return c.max_children_per_node; }),
      size_entry("max_layer_width", [](auto& c) -> auto& { return c.max_layer_width; }),
      size_entry("max_length", [](auto& c) -> auto& { return c.max_length; }),
      bool_entry("scaled_attention", [](auto& c) -> auto& { return c.scaled_attention; }),
      {"optimizer",
       [](C& c, std::string_view v) {
         if (v == "adam") {
           c.train.optimizer.kind = ad::OptimizerKind::kAdam;
         } else if (v == "sgd") {
           c.train.optimizer.kind = ad::OptimizerKind::kSgd;
         } else {
           bad_value("optimizer", v, "adam or sgd");
         }
       },
       [](const C& c) -> std::optional<std::string> { return std::string(c.train.optimizer.kind == ad::OptimizerKind::kAdam ? "adam" : "sgd"); }},
      real_entry("learning_rate", [](auto& c) -> auto& { return c.train.optimizer.learning_rate; }),
      real_entry("beta1", [](auto& c) -> auto& { return c.train.optimizer.beta1; }),
      real_entry("beta2", [](auto& c) -> auto& { return c.train.optimizer.beta2; }),
      real_entry("clip_norm", [](auto& c) -> auto& { return c.train.optimizer.clip_norm; }),
      size_entry("batch_size", [](auto& c) -> auto& { return c.train.batch_size; }),
      size_entry("epochs", [](auto& c) -> auto& { return c.train.epochs; }),
      size_entry("eval_period", [](auto& c) -> auto& { return c.train.eval_period; }),
      {"seed", [](C& c, std::string_view v) { c.seed = parse_u64("seed", v); },
       [](const C& c) -> std::optional<std::string> {
         if (!c.seed) return std::nullopt;
         return std::to_string(*c.seed);
       }},
      bool_entry("curriculum", [](auto& c) -> auto& { return c.train.curriculum.enabled; }),
      size_entry("curriculum_initial_depth", [](auto& c) -> auto& { return c.train.curriculum.initial_depth; }),
      size_entry("curriculum_initial_width", [](auto& c) -> auto& { return c.train.curriculum.initial_width; }),
      size_entry("curriculum_period", [](auto& c) -> auto& { return c.train.curriculum.period; }),
      size_entry("curriculum_depth_increment", [](auto& c) -> auto& { return c.train.curriculum.depth_increment; }),
      size_entry("curriculum_width_increment", [](auto& c) -> auto& { return c.train.curriculum.width_increment; }),
      bool_entry("scheduled_sampling", [](auto& c) -> auto& { return c.train.sampling.enabled; }),
      real_entry("tf_initial_prob", [](auto& c) -> auto& { return c.train.sampling.initial_prob; }),
      real_entry("tf_final_prob", [](auto& c) -> auto& { return c.train.sampling.final_prob; }),
      size_entry("tf_anneal_steps", [](auto& c) -> auto& { return c.train.sampling.anneal_steps; }),
      {"tf_anneal",
       [](C& c, std::string_view v) {
         if (v == "linear") {
           c.train.sampling.anneal = AnnealKind::kLinear;
         } else if (v == "exponential") {
           c.train.sampling.anneal = AnnealKind::kExponential;
         } else {
           bad_value("tf_anneal", v, "linear or exponential");
         }
       },
       [](const C& c) -> std::optional<std::string> {
         return std::string(c.train.sampling.anneal == AnnealKind::kLinear ? "linear" : "exponential");
       }},
      {"train", [](C& c, std::string_view v) { c.train_path = std::string(v); },
       [](const C& c) -> std::optional<std::string> {
         if (c.train_path.empty()) return std::nullopt;
         return c.train_path;
       }},
      {"dev", [](C& c, std::string_view v) { c.dev_path = std::string(v); },
       [](const C& c) -> std::optional<std::string> {
         if (c.dev_path.empty()) return std::nullopt;
         return c.dev_path;
       }},
  };
  return table;
}

const Entry* find_entry(std::string_view key) {
  for (const Entry& e : entries()) {
    if (e.key == key) return &e;
  }
  return nullptr;
}

}  // namespace

void ExperimentConfig::set(std::string_view key, std::string_view value) {
  const Entry* e = find_entry(key);
  if (e == nullptr) throw Error("unknown config key '" + std::string(key) + "'");
  e->set(*this, value);
}

std::string ExperimentConfig::to_text() const {
  std::ostringstream out;
  for (const Entry& e : entries()) {
    if (const auto v = e.get(*this)) {
      out << e.key << " = " << *v << '\n';
    } else {
      out << "# " << e.key << " unset\n";
    }
  }
  return out.str();
}

const std::vector<std::string>& ExperimentConfig::keys() {
  static const std::vector<std::string> names = [] {
    std::vector<std::string> out;
    for (const Entry& e : entries()) out.push_back(e.key);
    return out;
  }();
  return names;
}

std::size_t ExperimentConfig::resolved_hidden_size(ModelKind kind) const {
  return hidden_size.value_or(kind == ModelKind::kTdtdP ? 128 : 32);
}

std::size_t ExperimentConfig::resolved_embed_size(ModelKind kind) const {
  return embed_size.value_or(kind == ModelKind::kTdtdP ? 128 : 32);
}

TdtdConfig ExperimentConfig::tdtd_config(ModelKind kind) const {
  TdtdConfig c;
  c.hidden_size = resolved_hidden_size(kind);
  c.embed_size = resolved_embed_size(kind);
  c.max_depth = max_depth;
  c.max_children_per_node = max_children_per_node;
  c.max_layer_width = max_layer_width;
  return c;
}

ParserConfig ExperimentConfig::parser_config() const {
  ParserConfig c;
  c.decoder = tdtd_config(ModelKind::kTdtdP);
  c.scaled_attention = scaled_attention;
  return c;
}

SeqLmConfig ExperimentConfig::seq_lm_config() const {
  SeqLmConfig c;
  c.hidden_size = resolved_hidden_size(ModelKind::kSeqLm);
  c.embed_size = resolved_embed_size(ModelKind::kSeqLm);
  c.max_length = max_length;
  return c;
}

TrainConfig ExperimentConfig::train_config() const {
  if (!seed) throw Error("no seed configured (set seed in the config, pass --seed, or export TDTD_SEED)");
  TrainConfig c = train;
  c.seed = *seed;
  c.validate();
  return c;
}

ExperimentConfig load_config(std::istream& in, ExperimentConfig base, const std::filesystem::path& base_dir) {
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    std::string_view body = line;
    if (const auto hash = body.find('#'); hash != std::string_view::npos) body = body.substr(0, hash);
    body = trim(body);
    if (body.empty()) continue;
    const auto eq = body.find('=');
    if (eq == std::string_view::npos) {
      throw ParseError("config line " + std::to_string(lineno) + ": expected 'key = value'", lineno);
    }
    const std::string_view key = trim(body.substr(0, eq));
    const std::string_view value = trim(body.substr(eq + 1));
    try {
      if (key == "train" || key == "dev") {
        std::filesystem::path p(value);
        if (p.is_relative() && !base_dir.empty()) p = base_dir / p;
        if (!std::filesystem::exists(p)) throw Error("file '" + p.string() + "' does not exist");
        base.set(key, p.string());
      } else {
        base.set(key, value);
      }
    } catch (const Error& e) {
      throw ParseError("config line " + std::to_string(lineno) + ": " + e.what(), lineno);
    }
  }
  return base;
}

ExperimentConfig load_config(const std::filesystem::path& path, ExperimentConfig base) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open config '" + path.string() + "'");
  return load_config(in, std::move(base), path.parent_path());
}

}  // namespace tdtd
