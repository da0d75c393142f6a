#include "ocbev/tensor_io.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <limits>
#include <sstream>

#include "ocbev/error.hpp"

namespace ocbev {

namespace {

template <class U>
void put_le(std::string& out, U v) {
    for (std::size_t i = 0; i < sizeof(U); ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

class Reader {
public:
    Reader(const std::string& bytes, const char* what) : bytes_(bytes), what_(what) {}

    template <class U>
    U get() {
        need(sizeof(U));
        U v = 0;
        for (std::size_t i = 0; i < sizeof(U); ++i) {
            v |= static_cast<U>(static_cast<unsigned char>(bytes_[pos_ + i])) << (8 * i);
        }
        pos_ += sizeof(U);
        return v;
    }

    std::string take(std::size_t n) {
        need(n);
        std::string s = bytes_.substr(pos_, n);
        pos_ += n;
        return s;
    }

    bool done() const { return pos_ == bytes_.size(); }
    std::size_t remaining() const { return bytes_.size() - pos_; }

private:
    void need(std::size_t n) const {
        if (bytes_.size() - pos_ < n) throw ParseError(std::string(what_) + ": truncated file");
    }

    const std::string& bytes_;
    const char* what_;
    std::size_t pos_ = 0;
};

void put_shape(std::string& out, const nn::Shape& shape) {
    put_le<std::uint32_t>(out, static_cast<std::uint32_t>(shape.size()));
    for (std::size_t e : shape) put_le<std::uint64_t>(out, e);
}

nn::Shape get_shape(Reader& r, const char* what) {
    const auto rank = r.get<std::uint32_t>();
    if (rank > 16) throw ParseError(std::string(what) + ": implausible rank " + std::to_string(rank));
    nn::Shape shape(rank);
    std::size_t count = 1;
    for (auto& e : shape) {
        const auto v = r.get<std::uint64_t>();
        if (v != 0 && count > std::numeric_limits<std::size_t>::max() / v) {
            throw ParseError(std::string(what) + ": extent overflow");
        }
        e = static_cast<std::size_t>(v);
        count *= e;
    }
    return shape;
}

}  // namespace

std::string encode_ocbt(const nn::Tensor& t) {
    std::string out = "OCBT";
    put_shape(out, t.shape());
    out.reserve(out.size() + 4 * t.size());
    for (double v : t.data()) put_le<std::uint32_t>(out, std::bit_cast<std::uint32_t>(static_cast<float>(v)));
    return out;
}

nn::Tensor decode_ocbt(const std::string& bytes) {
    Reader r(bytes, "OCBT");
    if (r.take(4) != "OCBT") throw ParseError("OCBT: bad magic");
    nn::Shape shape = get_shape(r, "OCBT");
    const std::size_t n = nn::shape_size(shape);
    if (r.remaining() != 4 * n) throw ParseError("OCBT: payload size does not match extents");
    std::vector<double> data(n);
    for (auto& v : data) v = static_cast<double>(std::bit_cast<float>(r.get<std::uint32_t>()));
    return nn::Tensor(std::move(shape), std::move(data));
}

std::string encode_ocbw(const std::vector<NamedTensor>& tensors) {
    std::string out = "OCBW";
    put_le<std::uint32_t>(out, kCheckpointVersion);
    put_le<std::uint32_t>(out, static_cast<std::uint32_t>(tensors.size()));
    for (const auto& [name, t] : tensors) {
        put_le<std::uint32_t>(out, static_cast<std::uint32_t>(name.size()));
        out += name;
        put_shape(out, t.shape());
        for (double v : t.data()) put_le<std::uint64_t>(out, std::bit_cast<std::uint64_t>(v));
    }
    return out;
}

std::vector<NamedTensor> decode_ocbw(const std::string& bytes) {
    Reader r(bytes, "OCBW");
    if (r.take(4) != "OCBW") throw ParseError("OCBW: bad magic");
    const auto version = r.get<std::uint32_t>();
    if (version != kCheckpointVersion) throw ParseError("OCBW: unsupported version " + std::to_string(version));
    const auto count = r.get<std::uint32_t>();
    std::vector<NamedTensor> out;
    for (std::uint32_t i = 0; i < count; ++i) {
        const auto len = r.get<std::uint32_t>();
        std::string name = r.take(len);
        nn::Shape shape = get_shape(r, "OCBW");
        const std::size_t n = nn::shape_size(shape);
        if (r.remaining() / 8 < n) throw ParseError("OCBW: truncated payload for '" + name + "'");
        std::vector<double> data(n);
        for (auto& v : data) v = std::bit_cast<double>(r.get<std::uint64_t>());
        out.push_back({std::move(name), nn::Tensor(std::move(shape), std::move(data))});
    }
    if (!r.done()) throw ParseError("OCBW: trailing bytes");
    return out;
}

std::string read_file(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error("cannot open '" + path.string() + "' for reading");
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

void write_file(const std::filesystem::path& path, const std::string& bytes) {
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    const std::filesystem::path tmp = path.string() + ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) throw Error("cannot open '" + path.string() + "' for writing");
        out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
        if (!out) throw Error("write to '" + path.string() + "' failed");
    }
    std::filesystem::rename(tmp, path);
}

void write_ocbt(const std::filesystem::path& path, const nn::Tensor& t) { write_file(path, encode_ocbt(t)); }
nn::Tensor read_ocbt(const std::filesystem::path& path) { return decode_ocbt(read_file(path)); }
void write_ocbw(const std::filesystem::path& path, const std::vector<NamedTensor>& tensors) {
    write_file(path, encode_ocbw(tensors));
}
std::vector<NamedTensor> read_ocbw(const std::filesystem::path& path) { return decode_ocbw(read_file(path)); }

}  // namespace ocbev
