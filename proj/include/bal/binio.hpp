#pragma once

#include <cstdint>
#include <filesystem>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "bal/tensor.hpp"

namespace bal {

enum class FormatErrorCode { io, bad_magic, version_mismatch, checksum_mismatch, truncated, malformed };

std::string_view to_string(FormatErrorCode code);

class FormatError : public std::runtime_error {
public:
    FormatError(FormatErrorCode code, const std::string& what)
        : std::runtime_error(std::string(to_string(code)) + ": " + what), code_(code) {}
    FormatErrorCode code() const noexcept { return code_; }

private:
    FormatErrorCode code_;
};

/// 64-bit FNV-1a.
std::uint64_t fnv1a64(std::string_view bytes, std::uint64_t h = 0xCBF29CE484222325ull);

struct TensorRecord {
    std::string name;
    Tensor tensor;
};

/// Little-endian binary writer for the shared container layout:
///   8-byte magic | u32 version | u32-length-prefixed header text |
///   tensor records... | u64 FNV-1a checksum of everything before it.
/// A tensor record is: u32-length-prefixed name, u32 rank, u32 extents,
/// float32 payload.
class BinaryWriter {
public:
    BinaryWriter(std::string_view magic, std::uint32_t version, std::string_view header);

    void u32(std::uint32_t v);
    void u64(std::uint64_t v);
    void f32(float v);
    void prefixed(std::string_view s);
    void tensor(std::string_view name, const Tensor& t);

    /// Appends the checksum and returns the finished byte string.
    std::string finish() &&;

private:
    std::string buf_;
};

/// Parsed container. Structure and checksum are validated on construction;
/// errors are reported as distinct FormatErrorCodes.
struct Container {
    std::uint32_t version = 0;
    std::string header;
    std::vector<TensorRecord> tensors;

    static Container parse(std::string_view bytes, std::string_view magic, std::uint32_t expected_version);

    const Tensor& get(std::string_view name) const;
    const Tensor* find(std::string_view name) const;
};

std::string read_file(const std::filesystem::path& path);
void write_file(const std::filesystem::path& path, std::string_view bytes);

}  // namespace bal
