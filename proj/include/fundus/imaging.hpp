#pragma once

#include "fundus/raster.hpp"

#include <cstdint>
#include <span>
#include <string>
#include <vector>

namespace fundus::imaging {

struct FovTag;

/// Decoded RGB photograph, 8 bits per channel, row-major (r, g, b) triples.
struct FundusImage {
    int width = 0;
    int height = 0;
    std::vector<std::uint8_t> pixels;
    std::string source_id;

    [[nodiscard]] const std::uint8_t* at(int x, int y) const {
        return pixels.data() + (static_cast<std::size_t>(y) * width + x) * 3;
    }
    [[nodiscard]] std::uint8_t* at(int x, int y) {
        return pixels.data() + (static_cast<std::size_t>(y) * width + x) * 3;
    }
    friend bool operator==(const FundusImage&, const FundusImage&) = default;
};

/// Scalars in [0, 1].
using GrayImage = Plane<double>;
/// 1 inside the circular field of view.
using FovMask = Plane<std::uint8_t, FovTag>;

enum class FormatHint { png, ppm, automatic };

inline constexpr int kMinDimension = 64;

/// Decodes PNG or PPM bytes. `source_id` is the SHA-256 of `bytes`.
/// Throws UnsupportedFormat, CorruptData or TooSmall (either side < 64).
FundusImage decode_image(std::span<const std::uint8_t> bytes,
                         FormatHint hint = FormatHint::automatic);

GrayImage extract_green_channel(const FundusImage& image);

/// Tile-based clipped histogram equalisation (256 bins, bilinear blending of
/// neighbouring tile mappings). Throws BadParams for tile < 8 or clip <= 0.
GrayImage normalize_illumination(const GrayImage& gray, int tile = 32, double clip = 2.0);

inline constexpr double kDefaultFovThreshold = 0.06;

/// Pixels whose luminance exceeds `threshold` times the image's maximum
/// luminance, reduced to the largest 4-connected component. Threshold must lie
/// in (0, 1). An all-dark image yields an empty mask.
FovMask detect_fov_mask(const FundusImage& image, double threshold = kDefaultFovThreshold);

/// Bilinear resampling with pixel-centre alignment. Throws BadParams if
/// w or h is below 16.
FundusImage resize_bilinear(const FundusImage& image, int w, int h);

/// Rec. 601 luma scaled to [0, 1].
double luminance(const std::uint8_t* rgb) noexcept;

} // namespace fundus::imaging
