#include "tsgb/image_io.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <fstream>
#include <iterator>
#include <string>

#include "tsgb/error.hpp"

namespace tsgb {

namespace {

class HeaderReader {
public:
    explicit HeaderReader(std::span<const std::uint8_t> bytes) : b_(bytes) {}

    std::size_t number() {
        skip_space_and_comments();
        std::size_t v = 0;
        std::size_t digits = 0;
        while (pos_ < b_.size() && std::isdigit(b_[pos_])) {
            v = v * 10 + (b_[pos_++] - '0');
            ++digits;
        }
        if (digits == 0) throw DataError("malformed PNM header");
        return v;
    }

    std::size_t pos() const { return pos_; }
    void skip(std::size_t n) { pos_ += n; }

private:
    void skip_space_and_comments() {
        while (pos_ < b_.size()) {
            if (b_[pos_] == '#') {
                while (pos_ < b_.size() && b_[pos_] != '\n') ++pos_;
            } else if (std::isspace(b_[pos_])) {
                ++pos_;
            } else {
                break;
            }
        }
    }

    std::span<const std::uint8_t> b_;
    std::size_t pos_ = 0;
};

}  // namespace

Tensor decode_pnm(std::span<const std::uint8_t> bytes) {
    if (bytes.size() < 2 || bytes[0] != 'P' || (bytes[1] != '5' && bytes[1] != '6')) {
        throw DataError("not a binary PGM/PPM image (expected P5 or P6)");
    }
    const std::size_t channels = bytes[1] == '5' ? 1 : 3;
    HeaderReader r(bytes);
    r.skip(2);
    const std::size_t width = r.number();
    const std::size_t height = r.number();
    const std::size_t maxval = r.number();
    if (maxval == 0 || maxval > 255) throw DataError("only 8-bit PNM images are supported");
    if (width == 0 || height == 0) throw DataError("PNM image has zero extent");
    const std::size_t start = r.pos() + 1;  // single whitespace after maxval
    const std::size_t count = width * height * channels;
    if (bytes.size() < start + count) throw DataError("PNM pixel data is truncated");

    Tensor t(Shape{1, channels, height, width});
    for (std::size_t i = 0; i < width * height; ++i) {
        for (std::size_t c = 0; c < channels; ++c) {
            t[c * width * height + i] =
                static_cast<float>(bytes[start + i * channels + c]) / static_cast<float>(maxval);
        }
    }
    return t;
}

Tensor read_pnm(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open image '" + path.string() + "'");
    std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    try {
        return decode_pnm(bytes);
    } catch (const DataError& e) {
        throw DataError(path.string() + ": " + e.what());
    }
}

std::vector<std::uint8_t> encode_pnm(const Tensor& image) {
    const Shape& s = image.shape();
    if (s.n != 1 || (s.c != 1 && s.c != 3)) throw ShapeError("PNM export needs a 1x1xHxW or 1x3xHxW tensor, got " + s.str());
    const std::string header =
        std::string(s.c == 1 ? "P5" : "P6") + "\n" + std::to_string(s.w) + " " + std::to_string(s.h) + "\n255\n";
    std::vector<std::uint8_t> out(header.begin(), header.end());
    for (std::size_t i = 0; i < s.plane(); ++i) {
        for (std::size_t c = 0; c < s.c; ++c) {
            const long v = std::lround(static_cast<double>(image[c * s.plane() + i]) * 255.0);
            out.push_back(static_cast<std::uint8_t>(std::clamp(v, 0L, 255L)));
        }
    }
    return out;
}

void write_pnm(const Tensor& image, const std::filesystem::path& path) {
    const auto bytes = encode_pnm(image);
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write image '" + path.string() + "'");
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw IoError("short write to image '" + path.string() + "'");
}

}  // namespace tsgb
