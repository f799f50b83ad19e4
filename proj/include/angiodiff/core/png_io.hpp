#pragma once

#include <cstdio>
#include <filesystem>
#include <string>
#include <vector>

#include <png.h>

#include "angiodiff/core/errors.hpp"
#include "angiodiff/core/image.hpp"

namespace angiodiff {

// 8-bit PNG round trip for the dataset layout. Grayscale for 1-channel
// images, RGB for 3-channel. Values are quantized with round(v * 255).

inline void write_png(const std::filesystem::path& path, const Image& img) {
    if (img.channels() != 1 && img.channels() != 3)
        throw InvalidArgument("write_png: only 1- or 3-channel images");
    const int h = img.height(), w = img.width(), ch = img.channels();

    std::vector<unsigned char> bytes(static_cast<size_t>(h) * w * ch);
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x)
            for (int c = 0; c < ch; ++c) {
                const float v = std::clamp(img.at(c, y, x), 0.0f, 1.0f);
                bytes[(static_cast<size_t>(y) * w + x) * ch + c] =
                    static_cast<unsigned char>(std::lround(v * 255.0f));
            }
    std::vector<png_bytep> rows(h);
    for (int y = 0; y < h; ++y) rows[y] = bytes.data() + static_cast<size_t>(y) * w * ch;

    FILE* fp = std::fopen(path.string().c_str(), "wb");
    if (!fp) throw IoError("write_png: cannot open " + path.string());

    png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    png_infop info = png ? png_create_info_struct(png) : nullptr;
    if (!png || !info || setjmp(png_jmpbuf(png))) {
        if (png) png_destroy_write_struct(&png, info ? &info : nullptr);
        std::fclose(fp);
        throw IoError("write_png: libpng failure for " + path.string());
    }
    png_init_io(png, fp);
    png_set_IHDR(png, info, w, h, 8,
                 ch == 1 ? PNG_COLOR_TYPE_GRAY : PNG_COLOR_TYPE_RGB,
                 PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
    png_write_info(png, info);
    png_write_image(png, rows.data());
    png_write_end(png, nullptr);
    png_destroy_write_struct(&png, &info);
    std::fclose(fp);
}

inline Image read_png(const std::filesystem::path& path) {
    FILE* fp = std::fopen(path.string().c_str(), "rb");
    if (!fp) throw IoError("read_png: cannot open " + path.string());

    png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    png_infop info = png ? png_create_info_struct(png) : nullptr;
    std::vector<unsigned char> bytes;
    std::vector<png_bytep> rows;
    int w = 0, h = 0, ch = 0;
    if (!png || !info || setjmp(png_jmpbuf(png))) {
        if (png) png_destroy_read_struct(&png, info ? &info : nullptr, nullptr);
        std::fclose(fp);
        throw IoError("read_png: libpng failure for " + path.string());
    }
    png_init_io(png, fp);
    png_read_info(png, info);

    const png_byte color_type = png_get_color_type(png, info);
    const png_byte bit_depth = png_get_bit_depth(png, info);
    if (bit_depth == 16) png_set_strip_16(png);
    if (color_type == PNG_COLOR_TYPE_PALETTE) png_set_palette_to_rgb(png);
    if (color_type == PNG_COLOR_TYPE_GRAY && bit_depth < 8) png_set_expand_gray_1_2_4_to_8(png);
    if (png_get_valid(png, info, PNG_INFO_tRNS)) png_set_tRNS_to_alpha(png);
    if (color_type & PNG_COLOR_MASK_ALPHA) png_set_strip_alpha(png);
    png_read_update_info(png, info);

    w = static_cast<int>(png_get_image_width(png, info));
    h = static_cast<int>(png_get_image_height(png, info));
    ch = static_cast<int>(png_get_channels(png, info));

    bytes.resize(static_cast<size_t>(h) * w * ch);
    rows.resize(h);
    for (int y = 0; y < h; ++y) rows[y] = bytes.data() + static_cast<size_t>(y) * w * ch;
    png_read_image(png, rows.data());
    png_read_end(png, nullptr);
    png_destroy_read_struct(&png, &info, nullptr);
    std::fclose(fp);

    if (ch != 1 && ch != 3)
        throw IoError("read_png: unsupported channel count in " + path.string());
    Image img(h, w, ch);
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x)
            for (int c = 0; c < ch; ++c)
                img.at(c, y, x) =
                    bytes[(static_cast<size_t>(y) * w + x) * ch + c] / 255.0f;
    return img;
}

}  // namespace angiodiff
