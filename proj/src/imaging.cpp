#include "fundus/imaging.hpp"

#include "fundus/error.hpp"
#include "fundus/hash.hpp"
#include "fundus/image_io.hpp"

#include <algorithm>
#include <array>
#include <cmath>

namespace fundus::imaging {

namespace {

constexpr std::array<std::uint8_t, 8> kPngSignature{0x89, 'P', 'N', 'G', '\r', '\n', 0x1A, '\n'};

bool looks_like_png(std::span<const std::uint8_t> bytes) {
    return bytes.size() >= kPngSignature.size() &&
           std::equal(kPngSignature.begin(), kPngSignature.end(), bytes.begin());
}

bool looks_like_ppm(std::span<const std::uint8_t> bytes) {
    return bytes.size() >= 2 && bytes[0] == 'P' && (bytes[1] == '3' || bytes[1] == '6');
}

int to_bin(double v) {
    return std::clamp(static_cast<int>(std::floor(v * 255.0 + 0.5)), 0, 255);
}

using Lut = std::array<double, 256>;

Lut tile_mapping(const GrayImage& gray, int x0, int y0, int x1, int y1, double clip) {
    std::array<double, 256> hist{};
    for (int y = y0; y < y1; ++y)
        for (int x = x0; x < x1; ++x) hist[static_cast<std::size_t>(to_bin(gray(x, y)))] += 1.0;
    const double n = static_cast<double>(x1 - x0) * (y1 - y0);
    const double limit = std::max(1.0, clip * n / 256.0);
    double excess = 0.0;
    for (auto& h : hist) {
        if (h > limit) {
            excess += h - limit;
            h = limit;
        }
    }
    const double share = excess / 256.0;
    Lut lut{};
    double cdf = 0.0;
    for (std::size_t b = 0; b < 256; ++b) {
        cdf += hist[b] + share;
        lut[b] = std::min(1.0, cdf / n);
    }
    return lut;
}

// Splits a pixel coordinate into the two nearest tile centres and a blend weight.
struct TileBlend {
    int lo;
    int hi;
    double w;
};

TileBlend blend(int pixel, int tile, int tiles) {
    const double f = (pixel + 0.5) / tile - 0.5;
    if (f <= 0.0) return {0, 0, 0.0};
    const int lo = static_cast<int>(std::floor(f));
    if (lo >= tiles - 1) return {tiles - 1, tiles - 1, 0.0};
    return {lo, lo + 1, f - lo};
}

} // namespace

double luminance(const std::uint8_t* rgb) noexcept {
    return (0.299 * rgb[0] + 0.587 * rgb[1] + 0.114 * rgb[2]) / 255.0;
}

FundusImage decode_image(std::span<const std::uint8_t> bytes, FormatHint hint) {
    if (bytes.empty()) throw Error(ErrorCode::CorruptData, "empty image data");
    const bool png = looks_like_png(bytes);
    const bool ppm = looks_like_ppm(bytes);
    if ((hint == FormatHint::png && !png) || (hint == FormatHint::ppm && !ppm) || (!png && !ppm))
        throw Error(ErrorCode::UnsupportedFormat, "expected PNG or PPM data");
    FundusImage img = png ? io::read_png(bytes) : io::read_ppm(bytes);
    if (img.width < kMinDimension || img.height < kMinDimension)
        throw Error(ErrorCode::TooSmall, "image is " + std::to_string(img.width) + "x" +
                                             std::to_string(img.height) + ", minimum is 64x64");
    img.source_id = sha256_hex(bytes);
    return img;
}

GrayImage extract_green_channel(const FundusImage& image) {
    GrayImage out(image.width, image.height);
    for (int y = 0; y < image.height; ++y)
        for (int x = 0; x < image.width; ++x) out(x, y) = image.at(x, y)[1] / 255.0;
    return out;
}

GrayImage normalize_illumination(const GrayImage& gray, int tile, double clip) {
    if (tile < 8) throw Error(ErrorCode::BadParams, "tile must be at least 8 pixels");
    if (!(clip > 0.0)) throw Error(ErrorCode::BadParams, "clip must be positive");
    const int w = gray.width();
    const int h = gray.height();
    if (w == 0 || h == 0) return gray;
    const int tiles_x = (w + tile - 1) / tile;
    const int tiles_y = (h + tile - 1) / tile;

    std::vector<Lut> luts(static_cast<std::size_t>(tiles_x) * tiles_y);
    for (int ty = 0; ty < tiles_y; ++ty)
        for (int tx = 0; tx < tiles_x; ++tx)
            luts[static_cast<std::size_t>(ty) * tiles_x + tx] =
                tile_mapping(gray, tx * tile, ty * tile, std::min(w, (tx + 1) * tile),
                             std::min(h, (ty + 1) * tile), clip);

    auto lut_at = [&](int tx, int ty) -> const Lut& {
        return luts[static_cast<std::size_t>(ty) * tiles_x + tx];
    };

    GrayImage out(w, h);
    for (int y = 0; y < h; ++y) {
        const TileBlend by = blend(y, tile, tiles_y);
        for (int x = 0; x < w; ++x) {
            const TileBlend bx = blend(x, tile, tiles_x);
            const auto b = static_cast<std::size_t>(to_bin(gray(x, y)));
            const double top =
                (1.0 - bx.w) * lut_at(bx.lo, by.lo)[b] + bx.w * lut_at(bx.hi, by.lo)[b];
            const double bottom =
                (1.0 - bx.w) * lut_at(bx.lo, by.hi)[b] + bx.w * lut_at(bx.hi, by.hi)[b];
            out(x, y) = std::clamp((1.0 - by.w) * top + by.w * bottom, 0.0, 1.0);
        }
    }
    return out;
}

FovMask detect_fov_mask(const FundusImage& image, double threshold) {
    if (!(threshold > 0.0 && threshold < 1.0))
        throw Error(ErrorCode::BadParams, "threshold must lie in (0, 1)");
    FovMask mask(image.width, image.height, 0);
    double max_lum = 0.0;
    for (int y = 0; y < image.height; ++y)
        for (int x = 0; x < image.width; ++x) max_lum = std::max(max_lum, luminance(image.at(x, y)));
    if (max_lum <= 0.0) return mask;

    FovMask bright(image.width, image.height, 0);
    for (int y = 0; y < image.height; ++y)
        for (int x = 0; x < image.width; ++x)
            bright(x, y) = luminance(image.at(x, y)) / max_lum > threshold;

    Plane<int> labels;
    const int n = label_components(bright, false, labels);
    if (n == 0) return mask;
    std::vector<std::size_t> area(static_cast<std::size_t>(n) + 1, 0);
    for (int id : labels.values()) ++area[static_cast<std::size_t>(id)];
    area[0] = 0;
    // Ties resolve to the component met first in raster order (lowest label).
    const int keep = static_cast<int>(std::max_element(area.begin(), area.end()) - area.begin());
    for (int y = 0; y < image.height; ++y)
        for (int x = 0; x < image.width; ++x) mask(x, y) = labels(x, y) == keep;
    return mask;
}

FundusImage resize_bilinear(const FundusImage& image, int w, int h) {
    if (w < 16 || h < 16) throw Error(ErrorCode::BadParams, "target dimensions must be at least 16");
    if (image.width <= 0 || image.height <= 0) throw Error(ErrorCode::BadParams, "empty source image");
    FundusImage out;
    out.width = w;
    out.height = h;
    out.pixels.resize(static_cast<std::size_t>(w) * h * 3);
    out.source_id = image.source_id;

    auto sample = [](int dst, int src_len, int dst_len) {
        double s = (dst + 0.5) * src_len / dst_len - 0.5;
        s = std::clamp(s, 0.0, static_cast<double>(src_len - 1));
        const int lo = static_cast<int>(std::floor(s));
        const int hi = std::min(lo + 1, src_len - 1);
        return TileBlend{lo, hi, s - lo};
    };

    for (int y = 0; y < h; ++y) {
        const TileBlend sy = sample(y, image.height, h);
        for (int x = 0; x < w; ++x) {
            const TileBlend sx = sample(x, image.width, w);
            const auto* p00 = image.at(sx.lo, sy.lo);
            const auto* p10 = image.at(sx.hi, sy.lo);
            const auto* p01 = image.at(sx.lo, sy.hi);
            const auto* p11 = image.at(sx.hi, sy.hi);
            auto* q = out.at(x, y);
            for (int c = 0; c < 3; ++c) {
                const double top = (1.0 - sx.w) * p00[c] + sx.w * p10[c];
                const double bottom = (1.0 - sx.w) * p01[c] + sx.w * p11[c];
                q[c] = static_cast<std::uint8_t>(
                    std::clamp(std::lround((1.0 - sy.w) * top + sy.w * bottom), 0L, 255L));
            }
        }
    }
    return out;
}

} // namespace fundus::imaging
