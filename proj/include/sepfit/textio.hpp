#pragma once

#include <filesystem>
#include <string>
#include <vector>

namespace sepfit {

/// Splits CSV text into rows of fields. Handles double-quoted fields with
/// doubled-quote escapes, CRLF line endings, and trims unquoted whitespace.
std::vector<std::vector<std::string>> parse_csv_rows(const std::string& text);

std::string csv_escape(const std::string& field);

/// Shortest round-trip decimal representation; identical on every platform
/// with a conforming std::to_chars.
std::string format_double(double v);

std::string read_file(const std::filesystem::path& path);
void write_file(const std::filesystem::path& path, const std::string& content);

/// Lower-case hex SHA-256 of a file's bytes.
std::string sha256_file(const std::filesystem::path& path);

}  // namespace sepfit
