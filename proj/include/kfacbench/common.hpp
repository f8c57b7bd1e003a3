#pragma once

#include <charconv>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <string_view>
#include <system_error>

namespace kfacbench {

// ----------------------------------------------------------------------------
// Error hierarchy
// ----------------------------------------------------------------------------

class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// Shape or index mismatch between operands.
class DimensionError : public Error {
public:
    using Error::Error;
};

// Numerical failure: singular system, failed convergence, non-finite data.
class NumericalError : public Error {
public:
    using Error::Error;
};

// Invalid argument value (counts, ranges, enum names).
class ParameterError : public Error {
public:
    using Error::Error;
};

// Invalid or inconsistent configuration file / manifest.
class ConfigError : public Error {
public:
    using Error::Error;
};

class IoError : public Error {
public:
    using Error::Error;
};

// ----------------------------------------------------------------------------
// Hashing (stable across platforms and runs)
// ----------------------------------------------------------------------------

constexpr std::uint64_t fnv1a64(std::string_view s) {
    std::uint64_t h = 0xcbf29ce484222325ull;
    for (char c : s) {
        h ^= static_cast<std::uint64_t>(static_cast<unsigned char>(c));
        h *= 0x100000001b3ull;
    }
    return h;
}

// SplitMix64 finalizer, used as a general-purpose 64-bit scrambler.
constexpr std::uint64_t mix64(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ull;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ull;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebull;
    return x ^ (x >> 31);
}

inline std::string hash_hex(std::uint64_t h) {
    char buf[17];
    static const char* digits = "0123456789abcdef";
    for (int i = 15; i >= 0; --i) {
        buf[15 - i] = digits[(h >> (4 * i)) & 0xf];
    }
    buf[16] = '\0';
    return std::string(buf);
}

// ----------------------------------------------------------------------------
// Number formatting: shortest round-trip representation, locale-independent.
// ----------------------------------------------------------------------------

inline std::string format_double(double v) {
    char buf[64];
    auto res = std::to_chars(buf, buf + sizeof(buf), v);
    return std::string(buf, res.ptr);
}

// ----------------------------------------------------------------------------
// File helpers. Writes are atomic (temp file + rename) so interrupted runs
// never leave half-written records behind.
// ----------------------------------------------------------------------------

inline std::string read_file(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw IoError("cannot open file for reading: " + path.string());
    }
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

inline void write_file_atomic(const std::filesystem::path& path, std::string_view content) {
    std::filesystem::path tmp = path;
    tmp += ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) {
            throw IoError("cannot open file for writing: " + tmp.string());
        }
        out.write(content.data(), static_cast<std::streamsize>(content.size()));
        if (!out) {
            throw IoError("write failed: " + tmp.string());
        }
    }
    std::filesystem::rename(tmp, path);
}

} // namespace kfacbench
