#include "ocbev/pgm.hpp"

#include <cctype>
#include <cmath>

#include "ocbev/error.hpp"
#include "ocbev/tensor_io.hpp"

namespace ocbev {

std::uint8_t quantize_unit(double x) {
    if (!(x > 0.0)) return 0;
    const double v = std::floor(255.0 * x + 0.5);
    return v >= 255.0 ? 255 : static_cast<std::uint8_t>(v);
}

GrayImage image_from_unit(const std::vector<double>& values, std::size_t height, std::size_t width) {
    if (values.size() != height * width) throw ShapeError("image_from_unit: value count does not match shape");
    GrayImage img{width, height, {}};
    img.pixels.reserve(values.size());
    for (double v : values) img.pixels.push_back(quantize_unit(v));
    return img;
}

std::string encode_pgm(const GrayImage& img) {
    if (img.pixels.size() != img.width * img.height) throw ShapeError("encode_pgm: pixel count does not match shape");
    std::string out = "P5\n" + std::to_string(img.width) + " " + std::to_string(img.height) + "\n255\n";
    out.append(img.pixels.begin(), img.pixels.end());
    return out;
}

namespace {

std::size_t header_number(const std::string& b, std::size_t& pos) {
    for (;;) {
        while (pos < b.size() && std::isspace(static_cast<unsigned char>(b[pos]))) ++pos;
        if (pos < b.size() && b[pos] == '#') {
            while (pos < b.size() && b[pos] != '\n') ++pos;
            continue;
        }
        break;
    }
    if (pos >= b.size() || !std::isdigit(static_cast<unsigned char>(b[pos]))) throw ParseError("pgm: bad header");
    std::size_t v = 0;
    while (pos < b.size() && std::isdigit(static_cast<unsigned char>(b[pos]))) {
        v = v * 10 + static_cast<std::size_t>(b[pos] - '0');
        if (v > (1u << 30)) throw ParseError("pgm: header value too large");
        ++pos;
    }
    return v;
}

}  // namespace

GrayImage decode_pgm(const std::string& bytes) {
    if (bytes.size() < 2 || bytes[0] != 'P' || bytes[1] != '5') throw ParseError("pgm: missing P5 magic");
    std::size_t pos = 2;
    GrayImage img;
    img.width = header_number(bytes, pos);
    img.height = header_number(bytes, pos);
    if (header_number(bytes, pos) != 255) throw ParseError("pgm: only maxval 255 is supported");
    if (pos >= bytes.size() || !std::isspace(static_cast<unsigned char>(bytes[pos])))
        throw ParseError("pgm: bad header terminator");
    ++pos;
    if (bytes.size() - pos != img.width * img.height) throw ParseError("pgm: payload size mismatch");
    img.pixels.assign(bytes.begin() + static_cast<std::ptrdiff_t>(pos), bytes.end());
    return img;
}

void write_pgm(const std::filesystem::path& path, const GrayImage& img) { write_file(path, encode_pgm(img)); }

}  // namespace ocbev
