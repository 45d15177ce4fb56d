#pragma once

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <memory>
#include <string>
#include <vector>

#include <png.h>

#include "olbp/common.hpp"
#include "olbp/tensor.hpp"

namespace olbp {

// Single-channel raster; the carrier for masks, label maps, density maps and
// probability maps.
template <typename T>
struct Plane {
    std::int64_t h = 0, w = 0;
    std::vector<T> v;

    Plane() = default;
    Plane(std::int64_t h_, std::int64_t w_, T fill = T(0))
        : h(h_), w(w_), v(static_cast<std::size_t>(h_ * w_), fill) {}

    T& at(std::int64_t i, std::int64_t j) { return v[static_cast<std::size_t>(i * w + j)]; }
    T at(std::int64_t i, std::int64_t j) const { return v[static_cast<std::size_t>(i * w + j)]; }
    std::int64_t size() const { return h * w; }
    bool same_dims(std::int64_t hh, std::int64_t ww) const { return h == hh && w == ww; }
};

// Interleaved 8-bit RGB image.
struct ImageRGB8 {
    std::int64_t h = 0, w = 0;
    std::vector<std::uint8_t> v;  // r,g,b per pixel

    ImageRGB8() = default;
    ImageRGB8(std::int64_t h_, std::int64_t w_) : h(h_), w(w_), v(std::size_t(h_ * w_ * 3), 0) {}
    std::uint8_t& at(std::int64_t i, std::int64_t j, int c) {
        return v[static_cast<std::size_t>((i * w + j) * 3 + c)];
    }
    std::uint8_t at(std::int64_t i, std::int64_t j, int c) const {
        return v[static_cast<std::size_t>((i * w + j) * 3 + c)];
    }
};

namespace detail {

struct FileCloser {
    void operator()(std::FILE* f) const {
        if (f) std::fclose(f);
    }
};
using FilePtr = std::unique_ptr<std::FILE, FileCloser>;

inline void write_png(const std::string& path, std::int64_t w, std::int64_t h, int bit_depth,
                      int color_type, const std::uint8_t* data, std::int64_t row_bytes,
                      const std::vector<png_color>* palette) {
    FilePtr fp(std::fopen(path.c_str(), "wb"));
    if (!fp) throw DataError("cannot open for writing: " + path);
    png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    png_infop info = png ? png_create_info_struct(png) : nullptr;
    if (!png || !info) {
        png_destroy_write_struct(&png, &info);
        throw DataError("libpng init failed for " + path);
    }
    if (setjmp(png_jmpbuf(png))) {
        png_destroy_write_struct(&png, &info);
        throw DataError("libpng write failed for " + path);
    }
    png_init_io(png, fp.get());
    png_set_IHDR(png, info, static_cast<png_uint_32>(w), static_cast<png_uint_32>(h),
                 bit_depth, color_type, PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT,
                 PNG_FILTER_TYPE_DEFAULT);
    if (palette)
        png_set_PLTE(png, info, palette->data(), static_cast<int>(palette->size()));
    png_write_info(png, info);
    if (bit_depth == 16 && std::endian::native == std::endian::little) png_set_swap(png);
    std::vector<png_bytep> rows(static_cast<std::size_t>(h));
    for (std::int64_t i = 0; i < h; ++i)
        rows[static_cast<std::size_t>(i)] =
            const_cast<png_bytep>(data + i * row_bytes);
    png_write_image(png, rows.data());
    png_write_end(png, nullptr);
    png_destroy_write_struct(&png, &info);
}

struct PngReader {
    png_structp png = nullptr;
    png_infop info = nullptr;
    FilePtr fp;
    png_uint_32 w = 0, h = 0;
    int bit_depth = 0, color_type = 0;

    explicit PngReader(const std::string& path) : fp(std::fopen(path.c_str(), "rb")) {
        if (!fp) throw DataError("cannot open: " + path);
        png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
        info = png ? png_create_info_struct(png) : nullptr;
        if (!png || !info) {
            png_destroy_read_struct(&png, &info, nullptr);
            throw DataError("libpng init failed for " + path);
        }
        if (setjmp(png_jmpbuf(png))) {
            png_destroy_read_struct(&png, &info, nullptr);
            throw DataError("not a readable PNG: " + path);
        }
        png_init_io(png, fp.get());
        png_read_info(png, info);
        png_get_IHDR(png, info, &w, &h, &bit_depth, &color_type, nullptr, nullptr, nullptr);
    }
    ~PngReader() { png_destroy_read_struct(&png, &info, nullptr); }

    void read_rows(std::uint8_t* data, std::int64_t row_bytes) {
        if (setjmp(png_jmpbuf(png))) throw DataError("libpng row read failed");
        std::vector<png_bytep> rows(h);
        for (png_uint_32 i = 0; i < h; ++i)
            rows[i] = data + static_cast<std::int64_t>(i) * row_bytes;
        png_read_image(png, rows.data());
    }
};

}  // namespace detail

inline void write_png_gray8(const std::string& path, const Plane<std::uint8_t>& img) {
    detail::write_png(path, img.w, img.h, 8, PNG_COLOR_TYPE_GRAY, img.v.data(), img.w, nullptr);
}

inline void write_png_gray16(const std::string& path, const Plane<std::uint16_t>& img) {
    detail::write_png(path, img.w, img.h, 16, PNG_COLOR_TYPE_GRAY,
                      reinterpret_cast<const std::uint8_t*>(img.v.data()), img.w * 2, nullptr);
}

inline void write_png_rgb8(const std::string& path, const ImageRGB8& img) {
    detail::write_png(path, img.w, img.h, 8, PNG_COLOR_TYPE_RGB, img.v.data(), img.w * 3,
                      nullptr);
}

// Label maps are stored as 8-bit palette PNGs whose pixel value is the label.
// The palette is a fixed deterministic colouring (label 0 black).
inline void write_png_indexed8(const std::string& path, const Plane<std::uint8_t>& labels) {
    std::vector<png_color> palette(256);
    palette[0] = {0, 0, 0};
    for (int i = 1; i < 256; ++i) {
        const std::uint64_t m = mix_seed(0xc01005u, static_cast<std::uint64_t>(i));
        palette[static_cast<std::size_t>(i)] = {static_cast<png_byte>(64 + (m & 0xbf)),
                                                static_cast<png_byte>(64 + ((m >> 8) & 0xbf)),
                                                static_cast<png_byte>(64 + ((m >> 16) & 0xbf))};
    }
    detail::write_png(path, labels.w, labels.h, 8, PNG_COLOR_TYPE_PALETTE, labels.v.data(),
                      labels.w, &palette);
}

inline Plane<std::uint8_t> read_png_gray8(const std::string& path) {
    detail::PngReader r(path);
    if (r.color_type != PNG_COLOR_TYPE_GRAY || r.bit_depth != 8)
        throw DataError("expected 8-bit grayscale PNG: " + path);
    Plane<std::uint8_t> img(r.h, r.w);
    r.read_rows(img.v.data(), img.w);
    return img;
}

inline Plane<std::uint16_t> read_png_gray16(const std::string& path) {
    detail::PngReader r(path);
    if (r.color_type != PNG_COLOR_TYPE_GRAY || r.bit_depth != 16)
        throw DataError("expected 16-bit grayscale PNG: " + path);
    if (std::endian::native == std::endian::little) png_set_swap(r.png);
    Plane<std::uint16_t> img(r.h, r.w);
    r.read_rows(reinterpret_cast<std::uint8_t*>(img.v.data()), img.w * 2);
    return img;
}

// Reads palette indices untransformed; also accepts plain 8-bit gray, whose
// values are then the labels.
inline Plane<std::uint8_t> read_png_indexed8(const std::string& path) {
    detail::PngReader r(path);
    if ((r.color_type != PNG_COLOR_TYPE_PALETTE && r.color_type != PNG_COLOR_TYPE_GRAY) ||
        r.bit_depth != 8)
        throw DataError("expected 8-bit indexed or gray PNG: " + path);
    Plane<std::uint8_t> img(r.h, r.w);
    r.read_rows(img.v.data(), img.w);
    return img;
}

inline ImageRGB8 read_png_rgb8(const std::string& path) {
    detail::PngReader r(path);
    if (setjmp(png_jmpbuf(r.png))) throw DataError("PNG transform failed: " + path);
    if (r.color_type == PNG_COLOR_TYPE_PALETTE) png_set_palette_to_rgb(r.png);
    if (r.color_type == PNG_COLOR_TYPE_GRAY || r.color_type == PNG_COLOR_TYPE_GRAY_ALPHA)
        png_set_gray_to_rgb(r.png);
    if (r.bit_depth == 16) png_set_strip_16(r.png);
    if (png_get_valid(r.png, r.info, PNG_INFO_tRNS)) png_set_tRNS_to_alpha(r.png);
    if (r.color_type & PNG_COLOR_MASK_ALPHA) png_set_strip_alpha(r.png);
    png_read_update_info(r.png, r.info);
    ImageRGB8 img(r.h, r.w);
    r.read_rows(img.v.data(), img.w * 3);
    return img;
}

// Binary masks on disk use {0,255}; anything else is a pipeline bug.
inline void write_mask_png(const std::string& path, const Plane<std::uint8_t>& mask01) {
    Plane<std::uint8_t> img(mask01.h, mask01.w);
    for (std::int64_t i = 0; i < mask01.size(); ++i) {
        if (mask01.v[std::size_t(i)] > 1)
            throw DataError("mask value outside {0,1} when writing " + path);
        img.v[std::size_t(i)] = mask01.v[std::size_t(i)] ? 255 : 0;
    }
    write_png_gray8(path, img);
}

inline Plane<std::uint8_t> read_mask_png(const std::string& path) {
    Plane<std::uint8_t> img = read_png_gray8(path);
    for (auto& px : img.v) {
        if (px != 0 && px != 255) throw DataError("mask value outside {0,255} in " + path);
        px = px ? 1 : 0;
    }
    return img;
}

// Probability maps round-trip through 8-bit gray.
inline void write_prob_png(const std::string& path, const Plane<double>& p) {
    Plane<std::uint8_t> img(p.h, p.w);
    for (std::int64_t i = 0; i < p.size(); ++i) {
        const double v = std::clamp(p.v[std::size_t(i)], 0.0, 1.0);
        img.v[std::size_t(i)] = static_cast<std::uint8_t>(std::lround(v * 255.0));
    }
    write_png_gray8(path, img);
}

inline Plane<double> read_prob_png(const std::string& path) {
    Plane<std::uint8_t> img = read_png_gray8(path);
    Plane<double> p(img.h, img.w);
    for (std::int64_t i = 0; i < p.size(); ++i)
        p.v[std::size_t(i)] = img.v[std::size_t(i)] / 255.0;
    return p;
}

// Bilinear resampling, half-pixel-centre convention, edge clamped.
template <typename T>
Plane<T> resize_bilinear(const Plane<T>& in, std::int64_t h_out, std::int64_t w_out) {
    if (h_out < 1 || w_out < 1) throw ShapeError("resize_bilinear: target axes must be >= 1");
    Plane<T> out(h_out, w_out);
    const double sy = static_cast<double>(in.h) / static_cast<double>(h_out);
    const double sx = static_cast<double>(in.w) / static_cast<double>(w_out);
    for (std::int64_t i = 0; i < h_out; ++i) {
        const double fy = std::clamp((i + 0.5) * sy - 0.5, 0.0, double(in.h - 1));
        const std::int64_t y0 = static_cast<std::int64_t>(fy);
        const std::int64_t y1 = std::min(y0 + 1, in.h - 1);
        const double wy = fy - double(y0);
        for (std::int64_t j = 0; j < w_out; ++j) {
            const double fx = std::clamp((j + 0.5) * sx - 0.5, 0.0, double(in.w - 1));
            const std::int64_t x0 = static_cast<std::int64_t>(fx);
            const std::int64_t x1 = std::min(x0 + 1, in.w - 1);
            const double wx = fx - double(x0);
            const double v = (1 - wy) * ((1 - wx) * in.at(y0, x0) + wx * in.at(y0, x1)) +
                             wy * ((1 - wx) * in.at(y1, x0) + wx * in.at(y1, x1));
            out.at(i, j) = static_cast<T>(v);
        }
    }
    return out;
}

// RGB image in [0,1] as a (1,3,h,w) tensor, optionally bilinearly resized.
template <typename T>
Tensor4<T> image_to_tensor(const ImageRGB8& img, std::int64_t h_out = 0, std::int64_t w_out = 0) {
    if (h_out <= 0) h_out = img.h;
    if (w_out <= 0) w_out = img.w;
    Tensor4<T> t({1, 3, h_out, w_out});
    for (int c = 0; c < 3; ++c) {
        Plane<double> plane(img.h, img.w);
        for (std::int64_t i = 0; i < img.h; ++i)
            for (std::int64_t j = 0; j < img.w; ++j)
                plane.at(i, j) = img.at(i, j, c) / 255.0;
        Plane<double> scaled =
            (h_out == img.h && w_out == img.w) ? plane : resize_bilinear(plane, h_out, w_out);
        for (std::int64_t i = 0; i < h_out * w_out; ++i)
            t.data()[c * h_out * w_out + i] = static_cast<T>(scaled.v[std::size_t(i)]);
    }
    return t;
}

}  // namespace olbp
