#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <csetjmp>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <stdexcept>
#include <string>
#include <vector>

#include <png.h>

#include "mostnet/image.hpp"

namespace mostnet {

class PngError : public std::runtime_error {
public:
    PngError(const std::string& what, std::size_t offset)
        : std::runtime_error("png: " + what + " at byte offset " + std::to_string(offset)), offset_(offset) {}
    std::size_t offset() const { return offset_; }

private:
    std::size_t offset_;
};

namespace png_detail {

// libpng reports failures through longjmp; everything the callbacks touch
// lives here so nothing with a destructor sits between setjmp and longjmp.
struct Context {
    const std::vector<std::uint8_t>* bytes = nullptr;
    std::size_t pos = 0;
    char message[256] = {};
};

inline void on_error(png_structp png, png_const_charp msg) {
    auto* ctx = static_cast<Context*>(png_get_error_ptr(png));
    std::snprintf(ctx->message, sizeof(ctx->message), "%s", msg);
    png_longjmp(png, 1);
}

inline void on_warning(png_structp, png_const_charp) {}

inline void on_read(png_structp png, png_bytep out, png_size_t length) {
    auto* ctx = static_cast<Context*>(png_get_io_ptr(png));
    if (length > ctx->bytes->size() - ctx->pos) {
        ctx->pos = ctx->bytes->size();
        png_error(png, "stream ends early");
    }
    std::memcpy(out, ctx->bytes->data() + ctx->pos, length);
    ctx->pos += length;
}

inline void on_write(png_structp png, png_bytep data, png_size_t length) {
    auto* out = static_cast<std::vector<std::uint8_t>*>(png_get_io_ptr(png));
    out->insert(out->end(), data, data + length);
}

inline void on_flush(png_structp) {}

struct DecodeResult {
    std::uint32_t width = 0, height = 0;
    int channels = 0;  // after transforms: 1 (gray) or 3 (RGB)
    int depth = 0;     // 8 or 16
    std::vector<std::uint8_t> pixels;
    std::vector<png_bytep> rows;
};

inline bool decode_into(Context& ctx, DecodeResult& result) {
    png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, &ctx, on_error, on_warning);
    if (!png) {
        std::snprintf(ctx.message, sizeof(ctx.message), "out of memory");
        return false;
    }
    png_infop info = png_create_info_struct(png);
    if (!info || setjmp(png_jmpbuf(png))) {
        png_destroy_read_struct(&png, info ? &info : nullptr, nullptr);
        return false;
    }
    png_set_read_fn(png, &ctx, on_read);
    png_read_info(png, info);
    const int color = png_get_color_type(png, info);
    if (color == PNG_COLOR_TYPE_PALETTE) png_set_palette_to_rgb(png);
    if (color == PNG_COLOR_TYPE_GRAY && png_get_bit_depth(png, info) < 8) png_set_expand_gray_1_2_4_to_8(png);
    if (color & PNG_COLOR_MASK_ALPHA) png_set_strip_alpha(png);
    png_set_interlace_handling(png);
    png_read_update_info(png, info);

    result.width = png_get_image_width(png, info);
    result.height = png_get_image_height(png, info);
    result.channels = png_get_channels(png, info);
    result.depth = png_get_bit_depth(png, info);
    const std::size_t row_bytes = png_get_rowbytes(png, info);
    result.pixels.resize(row_bytes * result.height);
    result.rows.resize(result.height);
    for (std::uint32_t y = 0; y < result.height; ++y) result.rows[y] = result.pixels.data() + y * row_bytes;
    png_read_image(png, result.rows.data());
    png_read_end(png, nullptr);
    png_destroy_read_struct(&png, &info, nullptr);
    return true;
}

}  // namespace png_detail

// Decodes any PNG libpng reads. Gray (with or without alpha) yields 1
// channel; RGB, RGBA and palette images yield 3. Alpha is dropped. Samples
// are scaled by 1 / (2^depth - 1), so 16-bit input keeps its precision.
inline Image png_decode(const std::vector<std::uint8_t>& bytes) {
    png_detail::Context ctx;
    ctx.bytes = &bytes;
    if (bytes.size() < 8 || png_sig_cmp(bytes.data(), 0, 8) != 0) throw PngError("missing PNG signature", 0);
    png_detail::DecodeResult r;
    if (!png_detail::decode_into(ctx, r)) throw PngError(ctx.message, ctx.pos);
    if (r.channels != 1 && r.channels != 3) throw PngError("unexpected channel count " + std::to_string(r.channels), 0);

    Image img(static_cast<std::size_t>(r.channels), r.height, r.width);
    const double max_level = r.depth == 16 ? 65535.0 : 255.0;
    const std::size_t per_row = static_cast<std::size_t>(r.width) * static_cast<std::size_t>(r.channels);
    for (std::size_t y = 0; y < r.height; ++y)
        for (std::size_t i = 0; i < per_row; ++i) {
            const std::size_t k = y * per_row + i;
            const std::uint32_t v = r.depth == 16 ? (std::uint32_t{r.pixels[2 * k]} << 8) | r.pixels[2 * k + 1] : r.pixels[k];
            img.at(i % img.channels, y, i / img.channels) = static_cast<float>(v / max_level);
        }
    return img;
}

// 8-bit PNG, grayscale for 1-channel images and RGB for 3-channel ones.
// Values are clamped to [0, 1] and rounded to the nearest level.
inline std::vector<std::uint8_t> png_encode(const Image& img) {
    if (img.channels != 1 && img.channels != 3) throw std::invalid_argument("png_encode: 1 or 3 channels required");
    if (img.width == 0 || img.height == 0) throw std::invalid_argument("png_encode: empty image");
    std::vector<std::uint8_t> pixels(img.height * img.width * img.channels);
    for (std::size_t y = 0; y < img.height; ++y)
        for (std::size_t x = 0; x < img.width; ++x)
            for (std::size_t c = 0; c < img.channels; ++c) {
                const float v = std::clamp(img.at(c, y, x), 0.0f, 1.0f);
                pixels[(y * img.width + x) * img.channels + c] = static_cast<std::uint8_t>(std::lround(v * 255.0f));
            }
    std::vector<png_bytep> rows(img.height);
    for (std::size_t y = 0; y < img.height; ++y) rows[y] = pixels.data() + y * img.width * img.channels;

    std::vector<std::uint8_t> out;
    png_detail::Context ctx;
    png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, &ctx, png_detail::on_error, png_detail::on_warning);
    if (!png) throw std::runtime_error("png_encode: out of memory");
    png_infop info = png_create_info_struct(png);
    if (!info || setjmp(png_jmpbuf(png))) {
        png_destroy_write_struct(&png, info ? &info : nullptr);
        throw std::runtime_error(std::string("png_encode: ") + ctx.message);
    }
    png_set_write_fn(png, &out, png_detail::on_write, png_detail::on_flush);
    png_set_IHDR(png, info, static_cast<png_uint_32>(img.width), static_cast<png_uint_32>(img.height), 8,
                 img.channels == 1 ? PNG_COLOR_TYPE_GRAY : PNG_COLOR_TYPE_RGB, PNG_INTERLACE_NONE,
                 PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
    png_set_rows(png, info, rows.data());
    png_write_png(png, info, PNG_TRANSFORM_IDENTITY, nullptr);
    png_destroy_write_struct(&png, &info);
    return out;
}

inline std::vector<std::uint8_t> read_file_bytes(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot open " + path.string());
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

inline void write_file_bytes(const std::filesystem::path& path, const std::vector<std::uint8_t>& bytes) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("cannot write " + path.string());
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw std::runtime_error("short write to " + path.string());
}

inline Image read_png(const std::filesystem::path& path) {
    try {
        return png_decode(read_file_bytes(path));
    } catch (const PngError& e) {
        throw std::runtime_error(path.string() + ": " + e.what());
    }
}

inline void write_png(const std::filesystem::path& path, const Image& img) { write_file_bytes(path, png_encode(img)); }

}  // namespace mostnet
