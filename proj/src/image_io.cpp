#include "fundus/image_io.hpp"

#include "fundus/error.hpp"

#include <png.h>

#include <algorithm>
#include <cctype>
#include <cmath>
#include <csetjmp>
#include <cstring>
#include <fstream>
#include <iterator>
#include <string>

namespace fundus::io {

using imaging::FundusImage;

namespace {

class PpmCursor {
public:
    explicit PpmCursor(std::span<const std::uint8_t> bytes) : bytes_(bytes) {}

    void skip_space_and_comments() {
        while (pos_ < bytes_.size()) {
            const char c = static_cast<char>(bytes_[pos_]);
            if (c == '#') {
                while (pos_ < bytes_.size() && bytes_[pos_] != '\n') ++pos_;
            } else if (c == ' ' || c == '\t' || c == '\n' || c == '\r' || c == '\f' || c == '\v') {
                ++pos_;
            } else {
                return;
            }
        }
    }

    int read_uint() {
        skip_space_and_comments();
        if (pos_ >= bytes_.size() || !std::isdigit(bytes_[pos_]))
            throw Error(ErrorCode::CorruptData, "PPM: expected an unsigned integer");
        long long v = 0;
        while (pos_ < bytes_.size() && std::isdigit(bytes_[pos_])) {
            v = v * 10 + (bytes_[pos_++] - '0');
            if (v > 1'000'000'000) throw Error(ErrorCode::CorruptData, "PPM: integer too large");
        }
        return static_cast<int>(v);
    }

    std::size_t pos() const { return pos_; }
    void advance(std::size_t n) { pos_ += n; }
    std::size_t remaining() const { return bytes_.size() - pos_; }

private:
    std::span<const std::uint8_t> bytes_;
    std::size_t pos_ = 0;
};

struct PngBuffer {
    std::vector<std::uint8_t> out;
};

void png_append(png_structp png, png_bytep data, png_size_t length) {
    auto* buf = static_cast<PngBuffer*>(png_get_io_ptr(png));
    buf->out.insert(buf->out.end(), data, data + length);
}

void png_no_flush(png_structp) {}

/// `rows` holds packed scanlines of `stride` bytes each.
std::vector<std::uint8_t> encode_png(int width, int height, int bit_depth, int color_type,
                                     const std::vector<std::uint8_t>& rows, std::size_t stride) {
    png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    if (!png) throw Error(ErrorCode::Io, "png_create_write_struct failed");
    png_infop info = png_create_info_struct(png);
    if (!info) {
        png_destroy_write_struct(&png, nullptr);
        throw Error(ErrorCode::Io, "png_create_info_struct failed");
    }
    PngBuffer buffer;
    std::vector<png_bytep> row_ptrs(static_cast<std::size_t>(height));
    for (int y = 0; y < height; ++y)
        row_ptrs[static_cast<std::size_t>(y)] =
            const_cast<png_bytep>(rows.data() + static_cast<std::size_t>(y) * stride);
    if (setjmp(png_jmpbuf(png))) {
        png_destroy_write_struct(&png, &info);
        throw Error(ErrorCode::Io, "PNG encoding failed");
    }
    png_set_write_fn(png, &buffer, png_append, png_no_flush);
    png_set_IHDR(png, info, static_cast<png_uint_32>(width), static_cast<png_uint_32>(height),
                 bit_depth, color_type, PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT,
                 PNG_FILTER_TYPE_DEFAULT);
    png_write_info(png, info);
    png_write_image(png, row_ptrs.data());
    png_write_end(png, nullptr);
    png_destroy_write_struct(&png, &info);
    return std::move(buffer.out);
}

} // namespace

FundusImage read_ppm(std::span<const std::uint8_t> bytes) {
    if (bytes.size() < 2 || bytes[0] != 'P' || (bytes[1] != '3' && bytes[1] != '6'))
        throw Error(ErrorCode::UnsupportedFormat, "not a P3/P6 PPM");
    const bool binary = bytes[1] == '6';
    PpmCursor cur(bytes);
    cur.advance(2);
    FundusImage img;
    img.width = cur.read_uint();
    img.height = cur.read_uint();
    const int maxval = cur.read_uint();
    if (img.width <= 0 || img.height <= 0) throw Error(ErrorCode::CorruptData, "PPM: zero dimension");
    if (maxval != 255) throw Error(ErrorCode::UnsupportedFormat, "PPM: only maxval 255 is supported");
    const std::size_t count = static_cast<std::size_t>(img.width) * img.height * 3;
    img.pixels.resize(count);
    if (binary) {
        // exactly one whitespace byte separates the header from the raster
        if (cur.remaining() < 1) throw Error(ErrorCode::CorruptData, "PPM: truncated header");
        cur.advance(1);
        if (cur.remaining() < count) throw Error(ErrorCode::CorruptData, "PPM: truncated raster");
        std::memcpy(img.pixels.data(), bytes.data() + cur.pos(), count);
    } else {
        for (std::size_t i = 0; i < count; ++i) {
            const int v = cur.read_uint();
            if (v > 255) throw Error(ErrorCode::CorruptData, "PPM: sample exceeds maxval");
            img.pixels[i] = static_cast<std::uint8_t>(v);
        }
    }
    return img;
}

FundusImage read_png(std::span<const std::uint8_t> bytes) {
    png_image image;
    std::memset(&image, 0, sizeof image);
    image.version = PNG_IMAGE_VERSION;
    if (!png_image_begin_read_from_memory(&image, bytes.data(), bytes.size())) {
        std::string msg = image.message;
        png_image_free(&image);
        throw Error(ErrorCode::CorruptData, "PNG: " + msg);
    }
    // Read as RGBA and drop alpha rather than compositing.
    image.format = PNG_FORMAT_RGBA;
    std::vector<std::uint8_t> rgba(PNG_IMAGE_SIZE(image));
    if (!png_image_finish_read(&image, nullptr, rgba.data(), 0, nullptr)) {
        std::string msg = image.message;
        png_image_free(&image);
        throw Error(ErrorCode::CorruptData, "PNG: " + msg);
    }
    FundusImage img;
    img.width = static_cast<int>(image.width);
    img.height = static_cast<int>(image.height);
    img.pixels.resize(static_cast<std::size_t>(img.width) * img.height * 3);
    for (std::size_t i = 0, n = static_cast<std::size_t>(img.width) * img.height; i < n; ++i) {
        img.pixels[i * 3 + 0] = rgba[i * 4 + 0];
        img.pixels[i * 3 + 1] = rgba[i * 4 + 1];
        img.pixels[i * 3 + 2] = rgba[i * 4 + 2];
    }
    return img;
}

std::vector<std::uint8_t> write_ppm(const FundusImage& image) {
    const std::string header =
        "P6\n" + std::to_string(image.width) + " " + std::to_string(image.height) + "\n255\n";
    std::vector<std::uint8_t> out(header.begin(), header.end());
    out.insert(out.end(), image.pixels.begin(), image.pixels.end());
    return out;
}

std::vector<std::uint8_t> write_ppm_ascii(const FundusImage& image) {
    std::string text =
        "P3\n" + std::to_string(image.width) + " " + std::to_string(image.height) + "\n255\n";
    for (int y = 0; y < image.height; ++y) {
        for (int x = 0; x < image.width; ++x) {
            const auto* p = image.at(x, y);
            text += std::to_string(p[0]) + ' ' + std::to_string(p[1]) + ' ' + std::to_string(p[2]);
            text += x + 1 == image.width ? '\n' : ' ';
        }
    }
    return {text.begin(), text.end()};
}

std::vector<std::uint8_t> write_png_rgb(const FundusImage& image) {
    return encode_png(image.width, image.height, 8, PNG_COLOR_TYPE_RGB, image.pixels,
                      static_cast<std::size_t>(image.width) * 3);
}

std::vector<std::uint8_t> write_png_gray(const Plane<double>& values) {
    std::vector<std::uint8_t> rows(values.size());
    for (std::size_t i = 0; i < rows.size(); ++i) {
        const double v = std::clamp(values.values()[i], 0.0, 1.0);
        rows[i] = static_cast<std::uint8_t>(std::lround(v * 255.0));
    }
    return encode_png(values.width(), values.height(), 8, PNG_COLOR_TYPE_GRAY, rows,
                      static_cast<std::size_t>(values.width()));
}

std::vector<std::uint8_t> write_png_bits(int width, int height, std::span<const std::uint8_t> on) {
    const std::size_t stride = (static_cast<std::size_t>(width) + 7) / 8;
    std::vector<std::uint8_t> rows(stride * static_cast<std::size_t>(height), 0);
    for (int y = 0; y < height; ++y)
        for (int x = 0; x < width; ++x)
            if (on[static_cast<std::size_t>(y) * width + x])
                rows[static_cast<std::size_t>(y) * stride + x / 8] |=
                    static_cast<std::uint8_t>(0x80u >> (x % 8));
    return encode_png(width, height, 1, PNG_COLOR_TYPE_GRAY, rows, stride);
}

Plane<std::uint8_t> read_png_mask(std::span<const std::uint8_t> bytes) {
    const FundusImage img = read_png(bytes);
    Plane<std::uint8_t> mask(img.width, img.height, 0);
    for (int y = 0; y < img.height; ++y)
        for (int x = 0; x < img.width; ++x) mask(x, y) = imaging::luminance(img.at(x, y)) > 0.5;
    return mask;
}

std::vector<std::uint8_t> read_file(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error(ErrorCode::Io, "cannot open " + path.string());
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void write_file(const std::filesystem::path& path, std::span<const std::uint8_t> bytes) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw Error(ErrorCode::Io, "cannot write " + path.string());
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw Error(ErrorCode::Io, "short write to " + path.string());
}

} // namespace fundus::io
