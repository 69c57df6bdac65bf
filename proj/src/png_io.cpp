// SPDX-License-Identifier: Apache-2.0
#include "crossmatch/png_io.hpp"

#include <png.h>

#include <cmath>
#include <cstdio>
#include <memory>
#include <vector>

#include "crossmatch/common.hpp"

namespace crossmatch::pngio {

namespace {

struct FileCloser {
    void operator()(FILE* f) const {
        if (f) std::fclose(f);
    }
};
using FilePtr = std::unique_ptr<FILE, FileCloser>;

// Decodes any PNG to row-major samples in [0, 65535], channels collapsed later.
struct RawPng {
    png_uint_32 w = 0, h = 0;
    int channels = 0;
    int bit_depth = 0;
    std::vector<uint16_t> data;  // h*w*channels
};

RawPng read_raw(const std::string& path) {
    FilePtr f(std::fopen(path.c_str(), "rb"));
    check_data(f != nullptr, "cannot open " + path);
    png_byte sig[8];
    check_data(std::fread(sig, 1, 8, f.get()) == 8 && png_sig_cmp(sig, 0, 8) == 0,
               "not a PNG file: " + path);

    png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    check_data(png != nullptr, "libpng init failed");
    png_infop info = png_create_info_struct(png);
    if (!info) {
        png_destroy_read_struct(&png, nullptr, nullptr);
        throw DataError("libpng info init failed");
    }
    RawPng out;
    std::vector<png_bytep> rows;
    std::vector<png_byte> buf;
    if (setjmp(png_jmpbuf(png))) {
        png_destroy_read_struct(&png, &info, nullptr);
        throw DataError("corrupt PNG: " + path);
    }
    png_init_io(png, f.get());
    png_set_sig_bytes(png, 8);
    png_read_info(png, info);

    png_uint_32 w, h;
    int depth, color;
    png_get_IHDR(png, info, &w, &h, &depth, &color, nullptr, nullptr, nullptr);
    if (color == PNG_COLOR_TYPE_PALETTE) png_set_palette_to_rgb(png);
    if (color == PNG_COLOR_TYPE_GRAY && depth < 8) png_set_expand_gray_1_2_4_to_8(png);
    if (png_get_valid(png, info, PNG_INFO_tRNS)) png_set_tRNS_to_alpha(png);
    png_set_strip_alpha(png);
    png_read_update_info(png, info);

    depth = png_get_bit_depth(png, info);
    const int channels = png_get_channels(png, info);
    const size_t stride = png_get_rowbytes(png, info);
    buf.resize(stride * h);
    rows.resize(h);
    for (png_uint_32 y = 0; y < h; ++y) rows[y] = buf.data() + y * stride;
    png_read_image(png, rows.data());
    png_read_end(png, nullptr);
    png_destroy_read_struct(&png, &info, nullptr);

    out.w = w;
    out.h = h;
    out.channels = channels;
    out.bit_depth = depth;
    out.data.resize(static_cast<size_t>(w) * h * channels);
    for (png_uint_32 y = 0; y < h; ++y) {
        const png_byte* r = buf.data() + y * stride;
        for (size_t i = 0; i < static_cast<size_t>(w) * channels; ++i) {
            if (depth == 16)
                out.data[y * w * channels + i] = static_cast<uint16_t>((r[2 * i] << 8) | r[2 * i + 1]);
            else
                out.data[y * w * channels + i] = r[i];
        }
    }
    return out;
}

void write_gray(const std::string& path, int w, int h, int depth, const std::vector<uint16_t>& v) {
    FilePtr f(std::fopen(path.c_str(), "wb"));
    check_data(f != nullptr, "cannot write " + path);
    png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    check_data(png != nullptr, "libpng init failed");
    png_infop info = png_create_info_struct(png);
    if (!info) {
        png_destroy_write_struct(&png, nullptr);
        throw DataError("libpng info init failed");
    }
    std::vector<png_byte> buf;
    std::vector<png_bytep> rows;
    if (setjmp(png_jmpbuf(png))) {
        png_destroy_write_struct(&png, &info);
        throw DataError("PNG write failed: " + path);
    }
    png_init_io(png, f.get());
    png_set_IHDR(png, info, w, h, depth, PNG_COLOR_TYPE_GRAY, PNG_INTERLACE_NONE,
                 PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
    const size_t stride = static_cast<size_t>(w) * (depth == 16 ? 2 : 1);
    buf.resize(stride * h);
    rows.resize(h);
    for (int y = 0; y < h; ++y) {
        png_byte* r = buf.data() + y * stride;
        for (int x = 0; x < w; ++x) {
            const uint16_t s = v[static_cast<size_t>(y) * w + x];
            if (depth == 16) {
                r[2 * x] = static_cast<png_byte>(s >> 8);
                r[2 * x + 1] = static_cast<png_byte>(s & 0xFF);
            } else {
                r[x] = static_cast<png_byte>(s);
            }
        }
        rows[y] = r;
    }
    png_set_rows(png, info, rows.data());
    png_write_png(png, info, PNG_TRANSFORM_IDENTITY, nullptr);
    png_destroy_write_struct(&png, &info);
}

}  // namespace

Image read_image(const std::string& path) {
    RawPng raw = read_raw(path);
    Image img(1, static_cast<int>(raw.h), static_cast<int>(raw.w));
    const double scale = raw.bit_depth == 16 ? 65535.0 : 255.0;
    for (size_t p = 0; p < static_cast<size_t>(raw.h) * raw.w; ++p) {
        double acc = 0.0;
        for (int c = 0; c < raw.channels; ++c) acc += raw.data[p * raw.channels + c];
        img.v[p] = acc / (raw.channels * scale);
    }
    return img;
}

Mask read_mask(const std::string& path) {
    RawPng raw = read_raw(path);
    check_data(raw.channels == 1, "mask must be single-channel: " + path);
    Mask m(static_cast<int>(raw.h), static_cast<int>(raw.w));
    for (size_t p = 0; p < m.size(); ++p) m.v[p] = raw.data[p];
    return m;
}

void write_image16(const std::string& path, const Image& img) {
    check_data(img.c == 1, "write_image16 expects single channel");
    std::vector<uint16_t> v(img.size());
    for (size_t i = 0; i < v.size(); ++i) {
        double x = img.v[i];
        x = x < 0.0 ? 0.0 : (x > 1.0 ? 1.0 : x);
        v[i] = static_cast<uint16_t>(std::lround(x * 65535.0));
    }
    write_gray(path, img.w, img.h, 16, v);
}

void write_mask8(const std::string& path, const Mask& mask) {
    std::vector<uint16_t> v(mask.size());
    for (size_t i = 0; i < v.size(); ++i) {
        check_data(mask.v[i] >= 0 && mask.v[i] <= 255, "mask id out of 8-bit range");
        v[i] = static_cast<uint16_t>(mask.v[i]);
    }
    write_gray(path, mask.w, mask.h, 8, v);
}

}  // namespace crossmatch::pngio
