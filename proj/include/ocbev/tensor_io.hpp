#pragma once

// Binary tensor files.
//
// OCBT (single tensor, 32-bit):  "OCBT" | rank u32 | extents u64[rank] | f32 LE payload
// OCBW (named list, 64-bit):     "OCBW" | version u32 | count u32 |
//                                count x (name_len u32 | utf-8 name | rank u32 | extents u64[rank] | f64 LE payload)

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "ocbev/autodiff.hpp"

namespace ocbev {

inline constexpr std::uint32_t kCheckpointVersion = 1;

struct NamedTensor {
    std::string name;
    nn::Tensor tensor;

    friend bool operator==(const NamedTensor&, const NamedTensor&) = default;
};

/// Values are rounded to the nearest 32-bit float.
std::string encode_ocbt(const nn::Tensor& t);
nn::Tensor decode_ocbt(const std::string& bytes);

std::string encode_ocbw(const std::vector<NamedTensor>& tensors);
std::vector<NamedTensor> decode_ocbw(const std::string& bytes);

void write_ocbt(const std::filesystem::path& path, const nn::Tensor& t);
nn::Tensor read_ocbt(const std::filesystem::path& path);
void write_ocbw(const std::filesystem::path& path, const std::vector<NamedTensor>& tensors);
std::vector<NamedTensor> read_ocbw(const std::filesystem::path& path);

std::string read_file(const std::filesystem::path& path);
/// Writes through a temporary file and renames it into place.
void write_file(const std::filesystem::path& path, const std::string& bytes);

}  // namespace ocbev
