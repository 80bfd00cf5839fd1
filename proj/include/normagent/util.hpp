#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace normagent {

std::string trim(std::string_view s);
std::string to_lower(std::string_view s);
bool iequals(std::string_view a, std::string_view b);
std::vector<std::string> split_lines(std::string_view text);

// Lowercased alphanumeric tokens, in order of appearance.
std::vector<std::string> tokenize(std::string_view text);

std::string sha256_hex(std::string_view data);

// Fixed-point formatting ("%.Nf"); used wherever emitted files must be
// byte-stable across runs and platforms.
std::string format_fixed(double value, int precision);
// Signed fixed-point ("+1.3", "-0.1").
std::string format_signed(double value, int precision);

std::string read_text_file(const std::filesystem::path& path);
void write_text_file(const std::filesystem::path& path, std::string_view content);
// Writes to a sibling temp file and renames over the target.
void write_text_file_atomic(const std::filesystem::path& path, std::string_view content);

}  // namespace normagent
