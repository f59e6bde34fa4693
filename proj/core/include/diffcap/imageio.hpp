#pragma once

#include <cstdint>
#include <filesystem>
#include <vector>

#include "diffcap/rng.hpp"

namespace diffcap {

// 8-bit RGB raster, row-major, interleaved channels.
struct Image {
    int width = 0;
    int height = 0;
    std::vector<std::uint8_t> rgb;  // size = 3 * width * height

    std::uint8_t& at(int x, int y, int c) { return rgb[std::size_t(3) * (std::size_t(y) * width + x) + c]; }
    std::uint8_t at(int x, int y, int c) const { return rgb[std::size_t(3) * (std::size_t(y) * width + x) + c]; }
};

Image read_png(const std::filesystem::path& path);
void write_png(const std::filesystem::path& path, const Image& img);

// Channel planes scaled to [0,1], each height x width.
std::vector<Matrix> to_planes(const Image& img);

}  // namespace diffcap
