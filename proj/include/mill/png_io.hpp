#pragma once

// 16-bit RGB PNG read/write through libpng. Values map to [0, 65535] by
// round(v * 65535) after clipping to [0,1].

#include <png.h>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <memory>
#include <stdexcept>
#include <string>
#include <vector>

#include "mill/image.hpp"

namespace mill::io {

namespace detail {

struct FileCloser {
    void operator()(std::FILE* f) const {
        if (f) std::fclose(f);
    }
};
using FilePtr = std::unique_ptr<std::FILE, FileCloser>;

}  // namespace detail

inline void write_png16(const std::filesystem::path& path, const ImageBuffer& img) {
    detail::FilePtr fp(std::fopen(path.c_str(), "wb"));
    if (!fp) throw std::runtime_error("write_png16: cannot open " + path.string());

    png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    png_infop info = png ? png_create_info_struct(png) : nullptr;
    if (!png || !info) {
        png_destroy_write_struct(&png, &info);
        throw std::runtime_error("write_png16: libpng init failed");
    }
    std::vector<png_byte> row(static_cast<std::size_t>(img.width()) * 3 * 2);
    if (setjmp(png_jmpbuf(png))) {
        png_destroy_write_struct(&png, &info);
        throw std::runtime_error("write_png16: libpng error writing " + path.string());
    }
    png_init_io(png, fp.get());
    png_set_IHDR(png, info, img.width(), img.height(), 16, PNG_COLOR_TYPE_RGB, PNG_INTERLACE_NONE,
                 PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
    // Fixed zlib settings keep the byte stream stable across runs.
    png_set_compression_level(png, 6);
    png_write_info(png, info);
    for (int y = 0; y < img.height(); ++y) {
        for (int x = 0; x < img.width(); ++x)
            for (int c = 0; c < 3; ++c) {
                const double v = std::clamp(img.at(y, x, c), 0.0, 1.0);
                const auto q = static_cast<unsigned>(std::lround(v * 65535.0));
                const std::size_t i = (static_cast<std::size_t>(x) * 3 + c) * 2;
                row[i] = static_cast<png_byte>(q >> 8);  // PNG is big-endian
                row[i + 1] = static_cast<png_byte>(q & 0xff);
            }
        png_write_row(png, row.data());
    }
    png_write_end(png, nullptr);
    png_destroy_write_struct(&png, &info);
}

/// Reads 8- or 16-bit RGB/RGBA/gray PNGs into an sRGB-tagged buffer.
inline ImageBuffer read_png(const std::filesystem::path& path) {
    detail::FilePtr fp(std::fopen(path.c_str(), "rb"));
    if (!fp) throw std::runtime_error("read_png: cannot open " + path.string());

    png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    png_infop info = png ? png_create_info_struct(png) : nullptr;
    if (!png || !info) {
        png_destroy_read_struct(&png, &info, nullptr);
        throw std::runtime_error("read_png: libpng init failed");
    }
    ImageBuffer img;
    std::vector<png_byte> row;
    if (setjmp(png_jmpbuf(png))) {
        png_destroy_read_struct(&png, &info, nullptr);
        throw std::runtime_error("read_png: libpng error reading " + path.string());
    }
    png_init_io(png, fp.get());
    png_read_info(png, info);
    const int width = static_cast<int>(png_get_image_width(png, info));
    const int height = static_cast<int>(png_get_image_height(png, info));
    const int depth = png_get_bit_depth(png, info);
    const int type = png_get_color_type(png, info);
    if (type == PNG_COLOR_TYPE_PALETTE) png_set_palette_to_rgb(png);
    if (type == PNG_COLOR_TYPE_GRAY || type == PNG_COLOR_TYPE_GRAY_ALPHA) png_set_gray_to_rgb(png);
    if (type & PNG_COLOR_MASK_ALPHA) png_set_strip_alpha(png);
    if (depth < 8) png_set_packing(png);
    png_read_update_info(png, info);
    const int out_depth = png_get_bit_depth(png, info);

    img = ImageBuffer(height, width, Encoding::srgb);
    row.resize(png_get_rowbytes(png, info));
    const double scale = out_depth == 16 ? 65535.0 : 255.0;
    for (int y = 0; y < height; ++y) {
        png_read_row(png, row.data(), nullptr);
        for (int x = 0; x < width; ++x)
            for (int c = 0; c < 3; ++c) {
                const std::size_t i = static_cast<std::size_t>(x) * 3 + c;
                const unsigned q = out_depth == 16 ? (unsigned(row[2 * i]) << 8) | row[2 * i + 1] : row[i];
                img.at(y, x, c) = q / scale;
            }
    }
    png_read_end(png, nullptr);
    png_destroy_read_struct(&png, &info, nullptr);
    return img;
}

}  // namespace mill::io
