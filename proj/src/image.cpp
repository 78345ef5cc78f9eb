#include "promptseg/image.hpp"

#include <png.h>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <memory>

#include "promptseg/errors.hpp"

namespace promptseg {

namespace {

struct FileCloser {
    void operator()(FILE* f) const {
        if (f) std::fclose(f);
    }
};
using FilePtr = std::unique_ptr<FILE, FileCloser>;

struct PngRead {
    png_structp png = nullptr;
    png_infop info = nullptr;
    ~PngRead() { png_destroy_read_struct(&png, &info, nullptr); }
};

struct PngWrite {
    png_structp png = nullptr;
    png_infop info = nullptr;
    ~PngWrite() { png_destroy_write_struct(&png, &info); }
};

// Decode to 8-bit rows; gray or RGB depending on want_color.
std::vector<std::vector<uint8_t>> decode_png(const std::string& path, bool want_color, int* h,
                                             int* w, int* channels) {
    FilePtr fp(std::fopen(path.c_str(), "rb"));
    if (!fp) throw IoError("cannot open PNG: " + path);

    PngRead ctx;
    ctx.png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    if (!ctx.png) throw IoError("libpng init failed");
    ctx.info = png_create_info_struct(ctx.png);
    if (!ctx.info) throw IoError("libpng init failed");
    if (setjmp(png_jmpbuf(ctx.png))) throw IoError("corrupt PNG: " + path);

    png_init_io(ctx.png, fp.get());
    png_read_info(ctx.png, ctx.info);

    png_set_strip_16(ctx.png);
    png_set_packing(ctx.png);
    const png_byte color_type = png_get_color_type(ctx.png, ctx.info);
    if (color_type == PNG_COLOR_TYPE_PALETTE) png_set_palette_to_rgb(ctx.png);
    if (color_type == PNG_COLOR_TYPE_GRAY && png_get_bit_depth(ctx.png, ctx.info) < 8)
        png_set_expand_gray_1_2_4_to_8(ctx.png);
    png_set_strip_alpha(ctx.png);
    if (want_color) {
        if (color_type == PNG_COLOR_TYPE_GRAY || color_type == PNG_COLOR_TYPE_GRAY_ALPHA)
            png_set_gray_to_rgb(ctx.png);
    } else {
        if (color_type & PNG_COLOR_MASK_COLOR) png_set_rgb_to_gray_fixed(ctx.png, 1, -1, -1);
    }
    png_read_update_info(ctx.png, ctx.info);

    *h = static_cast<int>(png_get_image_height(ctx.png, ctx.info));
    *w = static_cast<int>(png_get_image_width(ctx.png, ctx.info));
    *channels = static_cast<int>(png_get_channels(ctx.png, ctx.info));

    std::vector<std::vector<uint8_t>> rows(*h);
    std::vector<png_bytep> row_ptrs(*h);
    const size_t rowbytes = png_get_rowbytes(ctx.png, ctx.info);
    for (int y = 0; y < *h; ++y) {
        rows[y].resize(rowbytes);
        row_ptrs[y] = rows[y].data();
    }
    png_read_image(ctx.png, row_ptrs.data());
    png_read_end(ctx.png, nullptr);
    return rows;
}

void encode_png(const std::string& path, int h, int w, int channels,
                const std::vector<uint8_t>& bytes) {
    FilePtr fp(std::fopen(path.c_str(), "wb"));
    if (!fp) throw IoError("cannot write PNG: " + path);

    PngWrite ctx;
    ctx.png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    if (!ctx.png) throw IoError("libpng init failed");
    ctx.info = png_create_info_struct(ctx.png);
    if (!ctx.info) throw IoError("libpng init failed");
    if (setjmp(png_jmpbuf(ctx.png))) throw IoError("PNG write failed: " + path);

    png_init_io(ctx.png, fp.get());
    const int color = channels == 1 ? PNG_COLOR_TYPE_GRAY : PNG_COLOR_TYPE_RGB;
    png_set_IHDR(ctx.png, ctx.info, w, h, 8, color, PNG_INTERLACE_NONE,
                 PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
    png_write_info(ctx.png, ctx.info);
    std::vector<png_bytep> row_ptrs(h);
    for (int y = 0; y < h; ++y)
        row_ptrs[y] = const_cast<uint8_t*>(bytes.data() + static_cast<size_t>(y) * w * channels);
    png_write_image(ctx.png, row_ptrs.data());
    png_write_end(ctx.png, nullptr);
}

} // namespace

Image read_image_png(const std::string& path) {
    int h, w, ch;
    auto rows = decode_png(path, /*want_color=*/true, &h, &w, &ch);
    Image img(h, w, 3);
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x)
            for (int c = 0; c < 3; ++c)
                img.at(y, x, c) = rows[y][static_cast<size_t>(x) * ch + (ch >= 3 ? c : 0)] / 255.0;
    return img;
}

LabelMap read_mask_png(const std::string& path) {
    int h, w, ch;
    auto rows = decode_png(path, /*want_color=*/false, &h, &w, &ch);
    LabelMap m(h, w);
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) m.at(y, x) = rows[y][static_cast<size_t>(x) * ch];
    return m;
}

void write_image_png(const std::string& path, const Image& img) {
    if (img.c != 3 && img.c != 1) throw ValidationError("write_image_png: 1 or 3 channels only");
    std::vector<uint8_t> bytes(static_cast<size_t>(img.h) * img.w * img.c);
    for (size_t i = 0; i < bytes.size(); ++i)
        bytes[i] = static_cast<uint8_t>(std::lround(std::clamp(img.v[i], 0.0, 1.0) * 255.0));
    encode_png(path, img.h, img.w, img.c, bytes);
}

void write_mask_png(const std::string& path, const LabelMap& mask) {
    encode_png(path, mask.h, mask.w, 1, mask.v);
}

Image resize_bilinear(const Image& src, int out_h, int out_w) {
    Image out(out_h, out_w, src.c);
    const double sy = static_cast<double>(src.h) / out_h;
    const double sx = static_cast<double>(src.w) / out_w;
    for (int y = 0; y < out_h; ++y) {
        const double fy = std::clamp((y + 0.5) * sy - 0.5, 0.0, src.h - 1.0);
        const int y0 = static_cast<int>(fy);
        const int y1 = std::min(y0 + 1, src.h - 1);
        const double wy = fy - y0;
        for (int x = 0; x < out_w; ++x) {
            const double fx = std::clamp((x + 0.5) * sx - 0.5, 0.0, src.w - 1.0);
            const int x0 = static_cast<int>(fx);
            const int x1 = std::min(x0 + 1, src.w - 1);
            const double wx = fx - x0;
            for (int c = 0; c < src.c; ++c) {
                const double top = src.at(y0, x0, c) * (1 - wx) + src.at(y0, x1, c) * wx;
                const double bot = src.at(y1, x0, c) * (1 - wx) + src.at(y1, x1, c) * wx;
                out.at(y, x, c) = top * (1 - wy) + bot * wy;
            }
        }
    }
    return out;
}

LabelMap resize_nearest(const LabelMap& src, int out_h, int out_w) {
    LabelMap out(out_h, out_w);
    const double sy = static_cast<double>(src.h) / out_h;
    const double sx = static_cast<double>(src.w) / out_w;
    for (int y = 0; y < out_h; ++y) {
        const int yy = std::min(static_cast<int>((y + 0.5) * sy), src.h - 1);
        for (int x = 0; x < out_w; ++x) {
            const int xx = std::min(static_cast<int>((x + 0.5) * sx), src.w - 1);
            out.at(y, x) = src.at(yy, xx);
        }
    }
    return out;
}

namespace {

LetterboxInfo letterbox_geometry(int src_h, int src_w, int canvas) {
    LetterboxInfo info;
    info.src_h = src_h;
    info.src_w = src_w;
    info.canvas = canvas;
    const double scale = std::min(static_cast<double>(canvas) / src_h,
                                  static_cast<double>(canvas) / src_w);
    info.box_h = std::max(1, static_cast<int>(std::round(src_h * scale)));
    info.box_w = std::max(1, static_cast<int>(std::round(src_w * scale)));
    info.off_y = (canvas - info.box_h) / 2;
    info.off_x = (canvas - info.box_w) / 2;
    return info;
}

} // namespace

Image letterbox_image(const Image& src, int canvas, LetterboxInfo* info_out) {
    const LetterboxInfo info = letterbox_geometry(src.h, src.w, canvas);
    Image content = resize_bilinear(src, info.box_h, info.box_w);
    Image out(canvas, canvas, src.c, 0.0);
    for (int y = 0; y < info.box_h; ++y)
        for (int x = 0; x < info.box_w; ++x)
            for (int c = 0; c < src.c; ++c)
                out.at(y + info.off_y, x + info.off_x, c) = content.at(y, x, c);
    if (info_out) *info_out = info;
    return out;
}

LabelMap letterbox_mask(const LabelMap& src, int canvas, LetterboxInfo* info_out) {
    const LetterboxInfo info = letterbox_geometry(src.h, src.w, canvas);
    LabelMap content = resize_nearest(src, info.box_h, info.box_w);
    LabelMap out(canvas, canvas, 0);
    for (int y = 0; y < info.box_h; ++y)
        for (int x = 0; x < info.box_w; ++x)
            out.at(y + info.off_y, x + info.off_x) = content.at(y, x);
    if (info_out) *info_out = info;
    return out;
}

LabelMap unletterbox_labels(const LabelMap& canvas_labels, const LetterboxInfo& info) {
    if (canvas_labels.h != info.canvas || canvas_labels.w != info.canvas)
        throw ValidationError("unletterbox_labels: canvas shape mismatch");
    LabelMap content(info.box_h, info.box_w);
    for (int y = 0; y < info.box_h; ++y)
        for (int x = 0; x < info.box_w; ++x)
            content.at(y, x) = canvas_labels.at(y + info.off_y, x + info.off_x);
    return resize_nearest(content, info.src_h, info.src_w);
}

Grid upsample_bilinear(const Grid& src, int out_h, int out_w) {
    Grid out(out_h, out_w);
    const double sy = static_cast<double>(src.h) / out_h;
    const double sx = static_cast<double>(src.w) / out_w;
    for (int y = 0; y < out_h; ++y) {
        const double fy = std::clamp((y + 0.5) * sy - 0.5, 0.0, src.h - 1.0);
        const int y0 = static_cast<int>(fy);
        const int y1 = std::min(y0 + 1, src.h - 1);
        const double wy = fy - y0;
        for (int x = 0; x < out_w; ++x) {
            const double fx = std::clamp((x + 0.5) * sx - 0.5, 0.0, src.w - 1.0);
            const int x0 = static_cast<int>(fx);
            const int x1 = std::min(x0 + 1, src.w - 1);
            const double wx = fx - x0;
            const double top = src.at(y0, x0) * (1 - wx) + src.at(y0, x1) * wx;
            const double bot = src.at(y1, x0) * (1 - wx) + src.at(y1, x1) * wx;
            out.at(y, x) = top * (1 - wy) + bot * wy;
        }
    }
    return out;
}

} // namespace promptseg
