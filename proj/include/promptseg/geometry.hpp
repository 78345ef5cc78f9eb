#pragma once

#include <array>

#include "promptseg/grid.hpp"

namespace promptseg {

// Normalized center-size box. Coordinates are ratios of the canvas sides;
// derived corners cx +/- w/2, cy +/- h/2 are clamped into [0,1] for all area
// computations.
struct NormBox {
    double cx = 0;
    double cy = 0;
    double w = 0;
    double h = 0;
};

// Gradient of a pairwise box quantity with respect to both boxes'
// (cx, cy, w, h) coordinates.
struct BoxPairGrad {
    std::array<double, 4> da{};
    std::array<double, 4> db{};
};

// Tightest axis-aligned box over foreground pixels. Pixel-edge convention:
// pixel column j spans [j, j+1)/W, so a full-foreground mask maps to the
// whole canvas. The mask must be sampled on the given canvas.
NormBox box_from_mask(const BinaryMask& mask, int canvas_h, int canvas_w);
NormBox box_from_mask(const BinaryMask& mask);

double box_iou(const NormBox& a, const NormBox& b);
double box_giou(const NormBox& a, const NormBox& b);
double l1_box(const NormBox& a, const NormBox& b);

// Value plus analytic gradients, used by the training objective and checked
// against finite differences in the acceptance suite.
double box_giou_grad(const NormBox& a, const NormBox& b, BoxPairGrad* grad);
double l1_box_grad(const NormBox& a, const NormBox& b, BoxPairGrad* grad);

// Rasterize a normalized box back onto a canvas (used by tests to verify the
// cover property of box_from_mask).
BinaryMask rasterize_box(const NormBox& box, int canvas_h, int canvas_w);

} // namespace promptseg
