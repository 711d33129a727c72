#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "texstat/common.hpp"

namespace texstat {

// 8-bit raster with interleaved samples; channels is 1 (gray) or 3 (RGB).
struct ImageU8 {
    std::int64_t height = 0;
    std::int64_t width = 0;
    std::int64_t channels = 0;
    std::vector<unsigned char> pixels;  // height * width * channels, row-major
};

// Decodes a PNG or JPEG file (dispatch on magic bytes). 16-bit PNGs are
// reduced to 8 bits; palette images are expanded; alpha is dropped. The
// result has 1 or 3 channels depending on the file's color model.
ImageU8 read_image(const std::string& path);

// Channel-count adapters; both emit a note to stderr when they actually
// convert, since the caller expected the other layout on disk.
ImageU8 to_rgb(const ImageU8& img, const std::string& context);
ImageU8 to_gray(const ImageU8& img, const std::string& context);

void write_png(const std::string& path, const ImageU8& img);

}  // namespace texstat
