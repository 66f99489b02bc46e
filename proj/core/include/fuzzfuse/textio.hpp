#pragma once

#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

namespace fuzzfuse::textio {

/// Shortest representation that round-trips to the same double.
std::string format_double(double value);

/// Parses a full field as a double; throws kParse with `context` on failure.
double parse_double(std::string_view field, std::string_view context);
long long parse_int(std::string_view field, std::string_view context);

/// Splits one CSV record on commas. Quoting is not supported; identifiers
/// in the artifact formats never contain commas.
std::vector<std::string_view> split_fields(std::string_view line);

/// Reads a text file into lines, dropping a trailing '\r' and a final empty
/// line. Throws kIo if the file cannot be opened.
std::vector<std::string> read_lines(const std::filesystem::path& path);
std::string read_file(const std::filesystem::path& path);

/// Writes `content` byte-for-byte, creating parent directories as needed.
void write_file(const std::filesystem::path& path, std::string_view content);

}  // namespace fuzzfuse::textio
