#pragma once

// Experiment configuration: `key = value` lines with `#` comments. Every
// model and training setting has a key; unknown keys are rejected.

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "tdtd/seq_lm.hpp"
#include "tdtd/tdtd_model.hpp"
#include "tdtd/tdtd_parser.hpp"
#include "tdtd/training.hpp"

namespace tdtd {

struct ExperimentConfig {
  std::optional<ModelKind> model;
  // Unset sizes resolve per model kind: 128 for the parser, 32 otherwise.
  std::optional<std::size_t> hidden_size;
  std::optional<std::size_t> embed_size;
  std::size_t max_depth = 7;
  std::size_t max_children_per_node = 8;
  std::size_t max_layer_width = 64;
  std::size_t max_length = 200;
  bool scaled_attention = true;
  TrainConfig train;
  std::optional<std::uint64_t> seed;
  std::string train_path;
  std::string dev_path;

  // Throws Error for unknown keys or unparseable values.
  void set(std::string_view key, std::string_view value);
  // Every key with its resolved value, one `key = value` per line.
  std::string to_text() const;

  static const std::vector<std::string>& keys();

  std::size_t resolved_hidden_size(ModelKind kind) const;
  std::size_t resolved_embed_size(ModelKind kind) const;
  TdtdConfig tdtd_config(ModelKind kind = ModelKind::kTdtd) const;
  ParserConfig parser_config() const;
  SeqLmConfig seq_lm_config() const;
  // Training settings with the seed applied; throws when no seed is set.
  TrainConfig train_config() const;
};

// Applies the file's settings on top of `base`. Errors carry the line number.
// Path settings must name existing files; relative paths resolve against
// `base_dir`.
ExperimentConfig load_config(std::istream& in, ExperimentConfig base = {},
                             const std::filesystem::path& base_dir = {});
ExperimentConfig load_config(const std::filesystem::path& path, ExperimentConfig base = {});

}  // namespace tdtd
