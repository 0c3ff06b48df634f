#pragma once

#include "fundus/imaging.hpp"

#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

namespace fundus::io {

/// Raw decoders; they do not apply the minimum-size gate of decode_image.
imaging::FundusImage read_ppm(std::span<const std::uint8_t> bytes);
imaging::FundusImage read_png(std::span<const std::uint8_t> bytes);

/// Binary (P6) PPM.
std::vector<std::uint8_t> write_ppm(const imaging::FundusImage& image);
/// Plain (P3) PPM.
std::vector<std::uint8_t> write_ppm_ascii(const imaging::FundusImage& image);

std::vector<std::uint8_t> write_png_rgb(const imaging::FundusImage& image);
/// 8-bit grayscale PNG; values are clamped to [0, 1] and scaled to 0..255.
std::vector<std::uint8_t> write_png_gray(const Plane<double>& values);

/// 1-bit grayscale PNG (on = white).
template <typename Tag>
std::vector<std::uint8_t> write_png_mask(const Plane<std::uint8_t, Tag>& mask);
std::vector<std::uint8_t> write_png_bits(int width, int height,
                                         std::span<const std::uint8_t> on);

/// Any PNG; a pixel is on when its luminance is above one half.
Plane<std::uint8_t> read_png_mask(std::span<const std::uint8_t> bytes);

std::vector<std::uint8_t> read_file(const std::filesystem::path& path);
void write_file(const std::filesystem::path& path, std::span<const std::uint8_t> bytes);

template <typename Tag>
std::vector<std::uint8_t> write_png_mask(const Plane<std::uint8_t, Tag>& mask) {
    return write_png_bits(mask.width(), mask.height(), mask.values());
}

} // namespace fundus::io
