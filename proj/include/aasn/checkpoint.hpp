#pragma once

#include <cstdint>
#include <filesystem>
#include <string>

#include "aasn/optim.hpp"

namespace aasn {

// Container of named float tensors:
//
//   "AASN" | u32 version | u32 header_len | header (UTF-8)
//   | u32 count | count x ( u32 name_len | name | u32 dims[4] | f32 payload )
//
// All integers and floats little-endian. The header is free text; model
// checkpoints put their configuration there.
inline constexpr std::uint32_t kArchiveVersion = 1;

struct TensorArchive {
    std::string header;
    NamedTensors<float> entries;
};

void write_archive(const std::filesystem::path& path, const TensorArchive& archive);

// Throws LoadError on bad magic, version mismatch, truncation or trailing bytes.
[[nodiscard]] TensorArchive read_archive(const std::filesystem::path& path);

[[nodiscard]] std::string encode_archive(const TensorArchive& archive);
[[nodiscard]] TensorArchive decode_archive(const std::string& bytes);

} // namespace aasn
