#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace uvid {

/// 8-bit interleaved RGB image.
struct ImageU8 {
    int width = 0;
    int height = 0;
    std::vector<std::uint8_t> rgb;  // width*height*3, row-major

    std::uint8_t* px(int x, int y) { return rgb.data() + 3 * (y * width + x); }
    const std::uint8_t* px(int x, int y) const { return rgb.data() + 3 * (y * width + x); }
};

/// Decodes a PNG to 8-bit RGB (palette/gray expanded, alpha stripped,
/// 16-bit narrowed). Throws std::runtime_error naming the file on failure.
ImageU8 read_png(const std::string& path);

/// Writes 8-bit RGB PNG atomically (temp file + rename).
void write_png(const std::string& path, const ImageU8& img);

ImageU8 resize_bilinear(const ImageU8& src, int out_w, int out_h);
ImageU8 resize_nearest(const ImageU8& src, int out_w, int out_h);

}  // namespace uvid
