#pragma once

// 8-bit binary PGM ("P5", maxval 255). A value x in [0, 1] is stored as
// floor(255 x + 0.5), clamped to [0, 255]; NaN stores 0.

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

namespace ocbev {

struct GrayImage {
    std::size_t width = 0;
    std::size_t height = 0;
    std::vector<std::uint8_t> pixels;  // row-major, row 0 first
};

std::uint8_t quantize_unit(double x);
/// `values` is row-major height x width.
GrayImage image_from_unit(const std::vector<double>& values, std::size_t height, std::size_t width);

std::string encode_pgm(const GrayImage& img);
/// Accepts comments and arbitrary whitespace in the header; maxval must be 255.
GrayImage decode_pgm(const std::string& bytes);

void write_pgm(const std::filesystem::path& path, const GrayImage& img);

}  // namespace ocbev
