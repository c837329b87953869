#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <vector>

namespace nodule {

/// 8-bit image with three planar channels, each width*height, row-major.
struct RgbImage {
    int width = 0;
    int height = 0;
    std::array<std::vector<std::uint8_t>, 3> channels;

    RgbImage() = default;
    RgbImage(int width, int height);

    [[nodiscard]] std::uint8_t at(int c, int x, int y) const {
        return channels[c][static_cast<std::size_t>(y) * width + x];
    }
    std::uint8_t& at(int c, int x, int y) { return channels[c][static_cast<std::size_t>(y) * width + x]; }
};

/// 8-bit RGB PNG without timestamps, so identical images give identical bytes.
void write_png(const RgbImage& img, const std::filesystem::path& path);
/// Reads 8-bit RGB or RGBA PNG (alpha dropped); other layouts raise FormatError.
RgbImage read_png(const std::filesystem::path& path);

}  // namespace nodule
