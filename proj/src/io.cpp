#include "geoaddr/io.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <sstream>

#include "geoaddr/errors.hpp"

namespace geoaddr::io {

namespace fs = std::filesystem;

namespace {

void ensure_parent(const fs::path& path) {
    if (path.has_parent_path()) fs::create_directories(path.parent_path());
}

}  // namespace

void write_text(const fs::path& path, std::string_view content) {
    ensure_parent(path);
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw FormatError("cannot open for writing: " + path.string());
    out.write(content.data(), static_cast<std::streamsize>(content.size()));
    if (!out) throw FormatError("write failed: " + path.string());
}

std::string read_text(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw FormatError("cannot open: " + path.string());
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

void write_jsonl(const fs::path& path, std::span<const nlohmann::json> records) {
    std::string buf;
    for (const auto& r : records) {
        buf += r.dump();
        buf += '\n';
    }
    write_text(path, buf);
}

void for_each_jsonl(const fs::path& path, const std::function<void(const nlohmann::json&, std::size_t)>& fn) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw FormatError("cannot open: " + path.string());
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty()) continue;
        nlohmann::json j;
        try {
            j = nlohmann::json::parse(line);
        } catch (const nlohmann::json::exception& e) {
            throw FormatError(path.string() + ":" + std::to_string(line_no) + ": " + e.what());
        }
        try {
            fn(j, line_no);
        } catch (const nlohmann::json::exception& e) {
            throw FormatError(path.string() + ":" + std::to_string(line_no) + ": " + e.what());
        }
    }
}

void write_binary(const fs::path& path, std::span<const std::uint8_t> bytes) {
    ensure_parent(path);
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw FormatError("cannot open for writing: " + path.string());
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
}

std::vector<std::uint8_t> read_binary(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw FormatError("cannot open: " + path.string());
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void append_le(std::vector<std::uint8_t>& out, std::int32_t v) {
    const auto u = static_cast<std::uint32_t>(v);
    for (int b = 0; b < 4; ++b) out.push_back(static_cast<std::uint8_t>(u >> (8 * b)));
}

void append_le(std::vector<std::uint8_t>& out, double v) {
    const auto u = std::bit_cast<std::uint64_t>(v);
    for (int b = 0; b < 8; ++b) out.push_back(static_cast<std::uint8_t>(u >> (8 * b)));
}

std::int32_t read_le_i32(std::span<const std::uint8_t> in, std::size_t offset) {
    if (offset + 4 > in.size()) throw FormatError("binary buffer truncated");
    std::uint32_t u = 0;
    for (int b = 0; b < 4; ++b) u |= static_cast<std::uint32_t>(in[offset + b]) << (8 * b);
    return static_cast<std::int32_t>(u);
}

double read_le_f64(std::span<const std::uint8_t> in, std::size_t offset) {
    if (offset + 8 > in.size()) throw FormatError("binary buffer truncated");
    std::uint64_t u = 0;
    for (int b = 0; b < 8; ++b) u |= static_cast<std::uint64_t>(in[offset + b]) << (8 * b);
    return std::bit_cast<double>(u);
}

std::string fnv1a_hex(std::string_view bytes) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char c : bytes) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    static constexpr char kHex[] = "0123456789abcdef";
    std::string out(16, '0');
    for (int i = 15; i >= 0; --i) {
        out[static_cast<std::size_t>(i)] = kHex[h & 0xf];
        h >>= 4;
    }
    return out;
}

std::string file_hash(const fs::path& path) { return fnv1a_hex(read_text(path)); }

}  // namespace geoaddr::io
