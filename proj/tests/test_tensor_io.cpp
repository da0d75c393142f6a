#include <cmath>
#include <cstring>
#include <filesystem>
#include <limits>
#include <sstream>

#include "doctest.h"
#include "ocbev/error.hpp"
#include "ocbev/parameters.hpp"
#include "ocbev/pgm.hpp"
#include "ocbev/tensor_io.hpp"

using namespace ocbev;
using nn::Tensor;

TEST_CASE("OCBT layout and rounding") {
    const Tensor t({2, 3}, {0.1, -2.5, 3.0, 1e-3, 0.0, 7.25});
    const std::string bytes = encode_ocbt(t);
    CHECK(bytes.substr(0, 4) == "OCBT");
    CHECK(bytes.size() == 4 + 4 + 2 * 8 + 6 * 4);
    std::uint32_t rank;
    std::memcpy(&rank, bytes.data() + 4, 4);
    CHECK(rank == 2);
    const Tensor back = decode_ocbt(bytes);
    CHECK(back.shape() == t.shape());
    for (std::size_t i = 0; i < t.size(); ++i) CHECK(back[i] == static_cast<double>(static_cast<float>(t[i])));
    CHECK(encode_ocbt(back) == bytes);
    CHECK_THROWS_AS(decode_ocbt("OCBX" + bytes.substr(4)), Error);
    CHECK_THROWS_AS(decode_ocbt(bytes.substr(0, bytes.size() - 1)), Error);
}

TEST_CASE("OCBW round trips bit-exactly") {
    std::vector<NamedTensor> ts{{"a.w", nn::normal_tensor({3, 4}, 1.0, 1)},
                                {"b", Tensor({1}, {std::numeric_limits<double>::denorm_min()})},
                                {"empty", Tensor({0})}};
    const std::string bytes = encode_ocbw(ts);
    CHECK(bytes.substr(0, 4) == "OCBW");
    const auto back = decode_ocbw(bytes);
    CHECK(back == ts);
    CHECK(encode_ocbw(back) == bytes);
    CHECK_THROWS_AS(decode_ocbw(bytes.substr(0, 10)), Error);
    std::string bumped = bytes;
    bumped[4] = 9;
    CHECK_THROWS_AS(decode_ocbw(bumped), Error);

    const auto dir = std::filesystem::temp_directory_path() / "ocbev_tensor_io_test";
    std::filesystem::create_directories(dir);
    write_ocbw(dir / "w.ocbw", ts);
    CHECK(read_ocbw(dir / "w.ocbw") == ts);
    write_ocbt(dir / "t.ocbt", ts[0].tensor);
    CHECK(read_ocbt(dir / "t.ocbt").shape() == ts[0].tensor.shape());
    CHECK_THROWS_AS(read_file(dir / "missing"), Error);
    std::filesystem::remove_all(dir);
}

namespace {

// Independent decoder: whitespace-separated header tokens, then the raster.
std::vector<int> reference_pgm(const std::string& bytes, int& w, int& h) {
    std::istringstream in(bytes);
    std::string magic;
    int maxval = 0;
    in >> magic >> w >> h >> maxval;
    in.get();
    std::vector<int> px;
    for (char c; in.get(c);) px.push_back(static_cast<unsigned char>(c));
    if (magic != "P5" || maxval != 255) px.clear();
    return px;
}

}  // namespace

TEST_CASE("pgm quantization rounds half up") {
    CHECK(quantize_unit(0.0) == 0);
    CHECK(quantize_unit(1.0) == 255);
    CHECK(quantize_unit(-0.3) == 0);
    CHECK(quantize_unit(7.0) == 255);
    CHECK(quantize_unit(std::nan("")) == 0);
    CHECK(quantize_unit(0.5) == 128);             // 127.5 rounds up
    CHECK(quantize_unit(0.49 / 255.0) == 0);
    CHECK(quantize_unit(100.0 / 255.0) == 100);
}

TEST_CASE("pgm round trip through a reference decoder") {
    std::vector<double> v;
    for (int i = 0; i < 12; ++i) v.push_back(i / 11.0);
    const GrayImage img = image_from_unit(v, 3, 4);
    const std::string bytes = encode_pgm(img);
    CHECK(bytes.rfind("P5\n4 3\n255\n", 0) == 0);
    int w = 0, h = 0;
    const std::vector<int> ref = reference_pgm(bytes, w, h);
    CHECK(w == 4);
    CHECK(h == 3);
    REQUIRE(ref.size() == 12);
    for (std::size_t i = 0; i < 12; ++i) CHECK(ref[i] == static_cast<int>(std::floor(255.0 * v[i] + 0.5)));
    const GrayImage back = decode_pgm(bytes);
    CHECK(back.width == 4);
    CHECK(back.height == 3);
    CHECK(back.pixels == img.pixels);

    CHECK(decode_pgm("P5 # comment\n2 1\n255\n\x01\x02").pixels == std::vector<std::uint8_t>{1, 2});
    CHECK_THROWS_AS(decode_pgm("P2\n1 1\n255\n0"), ParseError);
    CHECK_THROWS_AS(decode_pgm("P5\n2 2\n255\n\x01"), ParseError);
    CHECK_THROWS_AS(decode_pgm("P5\n1 1\n65535\n\x01"), ParseError);
    CHECK_THROWS_AS(image_from_unit({0.1, 0.2}, 3, 1), ShapeError);
}
