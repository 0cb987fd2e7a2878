#include "tempo/png_image.hpp"

#include "tempo/error.hpp"

#include <png.h>

#include <cstdio>
#include <cstdlib>
#include <memory>

namespace tempo {

namespace {

struct FileCloser {
    void operator()(std::FILE* f) const noexcept { std::fclose(f); }
};
using FilePtr = std::unique_ptr<std::FILE, FileCloser>;

} // namespace

RgbImage::RgbImage(std::uint32_t w, std::uint32_t h, Rgb fill) : width(w), height(h), pixels(std::size_t{w} * h * 3) {
    for (std::size_t i = 0; i < pixels.size(); i += 3) {
        pixels[i] = fill[0];
        pixels[i + 1] = fill[1];
        pixels[i + 2] = fill[2];
    }
}

Rgb RgbImage::at(std::uint32_t x, std::uint32_t y) const {
    const auto i = (std::size_t{y} * width + x) * 3;
    return {pixels[i], pixels[i + 1], pixels[i + 2]};
}

void RgbImage::set(std::uint32_t x, std::uint32_t y, Rgb c) {
    const auto i = (std::size_t{y} * width + x) * 3;
    pixels[i] = c[0];
    pixels[i + 1] = c[1];
    pixels[i + 2] = c[2];
}

void RgbImage::line(int x0, int y0, int x1, int y1, Rgb c) {
    const int dx = std::abs(x1 - x0);
    const int dy = -std::abs(y1 - y0);
    const int sx = x0 < x1 ? 1 : -1;
    const int sy = y0 < y1 ? 1 : -1;
    int err = dx + dy;
    while (true) {
        if (x0 >= 0 && y0 >= 0 && x0 < static_cast<int>(width) && y0 < static_cast<int>(height)) {
            set(static_cast<std::uint32_t>(x0), static_cast<std::uint32_t>(y0), c);
        }
        if (x0 == x1 && y0 == y1) {
            break;
        }
        const int e2 = 2 * err;
        if (e2 >= dy) {
            err += dy;
            x0 += sx;
        }
        if (e2 <= dx) {
            err += dx;
            y0 += sy;
        }
    }
}

void write_png(const std::filesystem::path& path, const RgbImage& image) {
    if (image.width == 0 || image.height == 0) {
        throw InputError("cannot write an empty image");
    }
    FilePtr f(std::fopen(path.string().c_str(), "wb"));
    if (!f) {
        throw IoError("cannot create " + path.string());
    }
    png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    png_infop info = png ? png_create_info_struct(png) : nullptr;
    if (!png || !info) {
        png_destroy_write_struct(&png, &info);
        throw IoError("libpng initialisation failed");
    }
    if (setjmp(png_jmpbuf(png))) {
        png_destroy_write_struct(&png, &info);
        throw IoError("PNG encoding failed for " + path.string());
    }
    png_init_io(png, f.get());
    png_set_IHDR(png, info, image.width, image.height, 8, PNG_COLOR_TYPE_RGB, PNG_INTERLACE_NONE,
                 PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
    png_write_info(png, info);
    for (std::uint32_t y = 0; y < image.height; ++y) {
        auto* row = const_cast<png_bytep>(image.pixels.data() + std::size_t{y} * image.width * 3);
        png_write_row(png, row);
    }
    png_write_end(png, nullptr);
    png_destroy_write_struct(&png, &info);
}

RgbImage read_png(const std::filesystem::path& path) {
    FilePtr f(std::fopen(path.string().c_str(), "rb"));
    if (!f) {
        throw IoError("cannot open " + path.string());
    }
    png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    png_infop info = png ? png_create_info_struct(png) : nullptr;
    if (!png || !info) {
        png_destroy_read_struct(&png, &info, nullptr);
        throw IoError("libpng initialisation failed");
    }
    if (setjmp(png_jmpbuf(png))) {
        png_destroy_read_struct(&png, &info, nullptr);
        throw DataError("PNG decoding failed for " + path.string());
    }
    png_init_io(png, f.get());
    png_read_info(png, info);
    const auto w = png_get_image_width(png, info);
    const auto h = png_get_image_height(png, info);
    if (png_get_color_type(png, info) != PNG_COLOR_TYPE_RGB || png_get_bit_depth(png, info) != 8) {
        png_destroy_read_struct(&png, &info, nullptr);
        throw DataError("only 8-bit RGB PNGs are supported");
    }
    RgbImage img(w, h);
    for (std::uint32_t y = 0; y < h; ++y) {
        png_read_row(png, img.pixels.data() + std::size_t{y} * w * 3, nullptr);
    }
    png_read_end(png, nullptr);
    png_destroy_read_struct(&png, &info, nullptr);
    return img;
}

} // namespace tempo
