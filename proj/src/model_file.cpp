#include "tdtd/model_file.hpp"

#include <charconv>
#include <fstream>
#include <sstream>

#include "tdtd/error.hpp"

namespace tdtd {

const std::string& ModelHeader::setting(std::string_view key) const {
  for (const auto& [k, v] : settings) {
    if (k == key) return v;
  }
  throw ParseError("model file: missing setting '" + std::string(key) + "'", 0);
}

std::size_t ModelHeader::setting_size(std::string_view key) const {
  const std::string& v = setting(key);
  std::size_t out = 0;
  auto res = std::from_chars(v.data(), v.data() + v.size(), out);
  if (res.ec != std::errc() || res.ptr != v.data() + v.size()) {
    throw ParseError("model file: setting '" + std::string(key) + "' is not an integer: " + v, 0);
  }
  return out;
}

const std::vector<std::string>& ModelHeader::list(std::string_view name) const {
  for (const auto& [n, items] : lists) {
    if (n == name) return items;
  }
  throw ParseError("model file: missing list '" + std::string(name) + "'", 0);
}

void write_model_file(std::ostream& out, const ModelHeader& header, const ad::ParamStore& params) {
  out << kModelMagic << '\n' << "kind=" << header.kind << '\n';
  for (const auto& [k, v] : header.settings) out << k << '=' << v << '\n';
  for (const auto& [name, items] : header.lists) {
    out << "list " << name << ' ' << items.size() << '\n';
    for (const auto& item : items) out << item << '\n';
  }
  ad::save_params(params, out);
}

ModelFile read_model_file(std::istream& in) {
  ModelFile file;
  std::string line;
  std::size_t lineno = 0;
  auto fail = [&](const std::string& what) {
    return ParseError("model file line " + std::to_string(lineno) + ": " + what, lineno);
  };
  if (!std::getline(in, line) || (++lineno, line != kModelMagic)) {
    throw ParseError("model file line 1: expected '" + std::string(kModelMagic) + "'", 1);
  }
  std::ostringstream rest;
  bool have_checkpoint = false;
  while (std::getline(in, line)) {
    ++lineno;
    if (line == ad::kCheckpointMagic) {
      rest << line << '\n' << in.rdbuf();
      have_checkpoint = true;
      break;
    }
    if (line.rfind("list ", 0) == 0) {
      std::istringstream fields(line.substr(5));
      std::string name;
      std::size_t count = 0;
      if (!(fields >> name >> count)) throw fail("malformed list header");
      std::vector<std::string> items;
      items.reserve(count);
      for (std::size_t i = 0; i < count; ++i) {
        if (!std::getline(in, line)) throw fail("list '" + name + "' is truncated");
        ++lineno;
        items.push_back(line);
      }
      file.header.lists.emplace_back(std::move(name), std::move(items));
      continue;
    }
    const auto eq = line.find('=');
    if (eq == std::string::npos || eq == 0) throw fail("expected key=value");
    std::string key = line.substr(0, eq);
    std::string value = line.substr(eq + 1);
    if (key == "kind") {
      file.header.kind = std::move(value);
    } else {
      file.header.settings.emplace_back(std::move(key), std::move(value));
    }
  }
  if (file.header.kind.empty()) throw ParseError("model file: missing kind", 0);
  if (!have_checkpoint) throw ParseError("model file: missing embedded checkpoint", lineno);
  std::istringstream body(rest.str());
  file.params = ad::load_params(body, lineno - 1);
  return file;
}

ModelFile read_model_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open model '" + path.string() + "'");
  return read_model_file(in);
}

std::string peek_model_kind(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open model '" + path.string() + "'");
  std::string line;
  if (!std::getline(in, line) || line != kModelMagic) {
    throw ParseError("model file line 1: expected '" + std::string(kModelMagic) + "'", 1);
  }
  while (std::getline(in, line)) {
    if (line.rfind("kind=", 0) == 0) return line.substr(5);
  }
  throw ParseError("model file: missing kind", 0);
}

}  // namespace tdtd
