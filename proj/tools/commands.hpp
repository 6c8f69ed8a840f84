#pragma once

// Command-line front end. Every subcommand ends its output with a one-line
// summary `<command> key=value ... OK|FAIL`; the exit status is 0 iff OK.

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <span>
#include <string>

namespace tdtd::cli {

// `args` excludes the program name.
int run(std::span<const std::string> args, std::ostream& out, std::ostream& err);
int run(int argc, const char* const* argv);

// Hex SHA-256 of a file's bytes.
std::string sha256_file(const std::filesystem::path& path);

// Seed of the i-th generated sample, independent of thread scheduling.
std::uint64_t sample_seed(std::uint64_t base, std::uint64_t index);

}  // namespace tdtd::cli
