#pragma once

#include <filesystem>
#include <sstream>
#include <string>
#include <vector>

namespace ebd {

// Writes content to path via a temporary file in the same directory followed
// by an atomic rename, so interrupted runs never leave truncated outputs.
void write_file_atomic(const std::filesystem::path& path, const std::string& content);

std::string read_file(const std::filesystem::path& path);

// Shortest decimal representation that round-trips a double exactly.
std::string format_double(double v);

std::vector<std::string> split_lines(const std::string& text);

// Parses whitespace-separated doubles; throws ParseError naming `what` on bad tokens.
std::vector<double> parse_doubles(const std::string& line, const std::string& what);

}  // namespace ebd
