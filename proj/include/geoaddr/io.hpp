#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

namespace geoaddr::io {

// Creates parent directories as needed. Output uses '\n' line endings only.
void write_text(const std::filesystem::path& path, std::string_view content);
std::string read_text(const std::filesystem::path& path);

void write_jsonl(const std::filesystem::path& path, std::span<const nlohmann::json> records);

// Calls fn(record, line_number) per non-empty line; parse and callback
// failures surface as FormatError carrying the file name and line number.
void for_each_jsonl(const std::filesystem::path& path,
                    const std::function<void(const nlohmann::json&, std::size_t)>& fn);

void write_binary(const std::filesystem::path& path, std::span<const std::uint8_t> bytes);
std::vector<std::uint8_t> read_binary(const std::filesystem::path& path);

// Little-endian packing helpers.
void append_le(std::vector<std::uint8_t>& out, std::int32_t v);
void append_le(std::vector<std::uint8_t>& out, double v);
std::int32_t read_le_i32(std::span<const std::uint8_t> in, std::size_t offset);
double read_le_f64(std::span<const std::uint8_t> in, std::size_t offset);

// FNV-1a 64 over bytes, rendered as 16 hex digits. Used for provenance hashes.
std::string fnv1a_hex(std::string_view bytes);
std::string file_hash(const std::filesystem::path& path);

}  // namespace geoaddr::io
