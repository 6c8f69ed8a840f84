#pragma once

// Model files: a `TDTD-MODEL v1` header with the model kind, `key=value`
// settings and named vocabulary lists, followed by an embedded checkpoint.

#include <filesystem>
#include <iosfwd>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "tdtd/autodiff.hpp"

namespace tdtd {

inline constexpr std::string_view kModelMagic = "TDTD-MODEL v1";

struct ModelHeader {
  std::string kind;
  std::vector<std::pair<std::string, std::string>> settings;
  std::vector<std::pair<std::string, std::vector<std::string>>> lists;

  const std::string& setting(std::string_view key) const;
  std::size_t setting_size(std::string_view key) const;
  const std::vector<std::string>& list(std::string_view name) const;
};

void write_model_file(std::ostream& out, const ModelHeader& header, const ad::ParamStore& params);

struct ModelFile {
  ModelHeader header;
  ad::ParamStore params;
};

ModelFile read_model_file(std::istream& in);
ModelFile read_model_file(const std::filesystem::path& path);
// Kind recorded in a model file, without loading the parameters.
std::string peek_model_kind(const std::filesystem::path& path);

}  // namespace tdtd
