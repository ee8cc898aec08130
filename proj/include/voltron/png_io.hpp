#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace voltron {

// 8-bit RGB raster, row-major, 3 bytes per pixel.
struct Image {
    int width = 0;
    int height = 0;
    std::vector<uint8_t> rgb;

    uint8_t at(int y, int x, int ch) const { return rgb[(size_t(y) * width + x) * 3 + ch]; }
    uint8_t& at(int y, int x, int ch) { return rgb[(size_t(y) * width + x) * 3 + ch]; }
};

// Reads an 8-bit, non-interlaced PNG (grayscale, RGB, or RGBA; alpha is
// dropped). Throws DataError on anything else or on a malformed file.
Image read_png(const std::string& path);

// Writes an 8-bit RGB PNG.
void write_png(const std::string& path, const Image& img);

}  // namespace voltron
