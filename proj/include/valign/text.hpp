#pragma once

#include <cstddef>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

namespace valign::text {

bool is_valid_utf8(std::string_view s);

/// Number of code points; assumes valid UTF-8.
std::size_t codepoint_count(std::string_view s);

/// Byte offset of the code point boundary at or before `pos`.
std::size_t utf8_floor(std::string_view s, std::size_t pos);

std::string_view trim(std::string_view s);
std::string to_lower_ascii(std::string_view s);
bool is_blank(std::string_view s);

/// Whitespace-separated tokens.
std::vector<std::string_view> split_ws(std::string_view s);

/// Lowercase alphanumeric runs; everything else is a separator.
std::vector<std::string> alnum_tokens(std::string_view s);

std::string sha256_hex(std::string_view data);

// JSONL helpers. Records are written one compact JSON object per line.
void write_jsonl(const std::filesystem::path& path, const std::vector<nlohmann::json>& records);
std::vector<nlohmann::json> read_jsonl(const std::filesystem::path& path);

void write_file(const std::filesystem::path& path, std::string_view contents);
std::string read_file(const std::filesystem::path& path);

} // namespace valign::text
