#pragma once

#include <string>
#include <vector>

#include "promptseg/grid.hpp"

namespace promptseg {

// H x W x C raster, row-major, channel-interleaved, values in [0,1].
struct Image {
    int h = 0;
    int w = 0;
    int c = 0;
    std::vector<double> v;

    Image() = default;
    Image(int h_, int w_, int c_, double fill = 0.0)
        : h(h_), w(w_), c(c_), v(static_cast<size_t>(h_) * w_ * c_, fill) {}

    double& at(int y, int x, int ch) { return v[(static_cast<size_t>(y) * w + x) * c + ch]; }
    const double& at(int y, int x, int ch) const {
        return v[(static_cast<size_t>(y) * w + x) * c + ch];
    }
};

// Letterbox transform bookkeeping, needed to map predictions back to the
// source resolution at evaluation time.
struct LetterboxInfo {
    int src_h = 0, src_w = 0;     // original dims
    int box_h = 0, box_w = 0;     // resized content dims inside the canvas
    int off_y = 0, off_x = 0;     // content offset (centered)
    int canvas = 0;
};

// 8-bit PNG codecs. Masks are single-channel label maps; images are gray or
// RGB and come back as 3-channel rasters in [0,1].
Image read_image_png(const std::string& path);
LabelMap read_mask_png(const std::string& path);
void write_image_png(const std::string& path, const Image& img);
void write_mask_png(const std::string& path, const LabelMap& mask);

// Bilinear resize for images, nearest-neighbor for label maps.
Image resize_bilinear(const Image& src, int out_h, int out_w);
LabelMap resize_nearest(const LabelMap& src, int out_h, int out_w);

// Fit into a square canvas preserving aspect ratio, zero padding, centered.
Image letterbox_image(const Image& src, int canvas, LetterboxInfo* info = nullptr);
LabelMap letterbox_mask(const LabelMap& src, int canvas, LetterboxInfo* info = nullptr);

// Inverse of letterbox_mask: crop the content region and resize back to the
// source dims (nearest-neighbor).
LabelMap unletterbox_labels(const LabelMap& canvas_labels, const LetterboxInfo& info);

// Bilinear upsample of a real-valued grid (mask logits -> canvas).
Grid upsample_bilinear(const Grid& src, int out_h, int out_w);

} // namespace promptseg
