#include "promptseg/geometry.hpp"

#include <algorithm>
#include <cmath>

namespace promptseg {

namespace {

struct Corners {
    // clamped corners
    double x1, x2, y1, y2;
    // clamp activity: 1 where the corner moved with the raw value, 0 where clamped
    double cx1, cx2, cy1, cy2;
};

Corners corners_of(const NormBox& b) {
    Corners c{};
    const double rx1 = b.cx - b.w / 2, rx2 = b.cx + b.w / 2;
    const double ry1 = b.cy - b.h / 2, ry2 = b.cy + b.h / 2;
    c.x1 = std::clamp(rx1, 0.0, 1.0);
    c.x2 = std::clamp(rx2, 0.0, 1.0);
    c.y1 = std::clamp(ry1, 0.0, 1.0);
    c.y2 = std::clamp(ry2, 0.0, 1.0);
    c.cx1 = (rx1 > 0.0 && rx1 < 1.0) ? 1.0 : 0.0;
    c.cx2 = (rx2 > 0.0 && rx2 < 1.0) ? 1.0 : 0.0;
    c.cy1 = (ry1 > 0.0 && ry1 < 1.0) ? 1.0 : 0.0;
    c.cy2 = (ry2 > 0.0 && ry2 < 1.0) ? 1.0 : 0.0;
    return c;
}

double area(const Corners& c) { return (c.x2 - c.x1) * (c.y2 - c.y1); }

// Map a gradient in clamped-corner space [dx1,dx2,dy1,dy2] to (cx,cy,w,h).
std::array<double, 4> to_center_size(const Corners& c, double dx1, double dx2, double dy1,
                                     double dy2) {
    std::array<double, 4> g{};
    g[0] = dx1 * c.cx1 + dx2 * c.cx2;                    // d/dcx
    g[1] = dy1 * c.cy1 + dy2 * c.cy2;                    // d/dcy
    g[2] = -0.5 * dx1 * c.cx1 + 0.5 * dx2 * c.cx2;       // d/dw
    g[3] = -0.5 * dy1 * c.cy1 + 0.5 * dy2 * c.cy2;       // d/dh
    return g;
}

struct OverlapTerms {
    Corners a, b;
    double inter = 0, uni = 0, hull = 0, iou = 0;
};

OverlapTerms overlap_terms(const NormBox& a, const NormBox& b) {
    OverlapTerms t;
    t.a = corners_of(a);
    t.b = corners_of(b);
    const double iw = std::min(t.a.x2, t.b.x2) - std::max(t.a.x1, t.b.x1);
    const double ih = std::min(t.a.y2, t.b.y2) - std::max(t.a.y1, t.b.y1);
    t.inter = (iw > 0 && ih > 0) ? iw * ih : 0.0;
    t.uni = area(t.a) + area(t.b) - t.inter;
    const double hw = std::max(t.a.x2, t.b.x2) - std::min(t.a.x1, t.b.x1);
    const double hh = std::max(t.a.y2, t.b.y2) - std::min(t.a.y1, t.b.y1);
    t.hull = hw * hh;
    t.iou = t.inter / t.uni;
    return t;
}

} // namespace

NormBox box_from_mask(const BinaryMask& mask, int canvas_h, int canvas_w) {
    if (mask.h != canvas_h || mask.w != canvas_w)
        throw ValidationError("box_from_mask: mask is not sampled on the given canvas");
    int min_r = mask.h, max_r = -1, min_c = mask.w, max_c = -1;
    for (int r = 0; r < mask.h; ++r)
        for (int c = 0; c < mask.w; ++c)
            if (mask.at(r, c)) {
                min_r = std::min(min_r, r);
                max_r = std::max(max_r, r);
                min_c = std::min(min_c, c);
                max_c = std::max(max_c, c);
            }
    if (max_r < 0) throw ValidationError("empty mask has no box");
    // pixel-edge convention: pixel j spans [j, j+1)
    const double x1 = min_c, x2 = max_c + 1.0;
    const double y1 = min_r, y2 = max_r + 1.0;
    NormBox b;
    b.cx = (x1 + x2) / 2.0 / canvas_w;
    b.cy = (y1 + y2) / 2.0 / canvas_h;
    b.w = (x2 - x1) / canvas_w;
    b.h = (y2 - y1) / canvas_h;
    return b;
}

NormBox box_from_mask(const BinaryMask& mask) { return box_from_mask(mask, mask.h, mask.w); }

double box_iou(const NormBox& a, const NormBox& b) { return overlap_terms(a, b).iou; }

double box_giou(const NormBox& a, const NormBox& b) {
    const OverlapTerms t = overlap_terms(a, b);
    return t.iou - (t.hull - t.uni) / t.hull;
}

double l1_box(const NormBox& a, const NormBox& b) {
    return std::abs(a.cx - b.cx) + std::abs(a.cy - b.cy) + std::abs(a.w - b.w) +
           std::abs(a.h - b.h);
}

double box_giou_grad(const NormBox& a, const NormBox& b, BoxPairGrad* grad) {
    const OverlapTerms t = overlap_terms(a, b);
    const double giou = t.iou - (t.hull - t.uni) / t.hull;
    if (!grad) return giou;

    const Corners& A = t.a;
    const Corners& B = t.b;
    const double aw = A.x2 - A.x1, ah = A.y2 - A.y1;
    const double bw = B.x2 - B.x1, bh = B.y2 - B.y1;
    const double iw = std::min(A.x2, B.x2) - std::max(A.x1, B.x1);
    const double ih = std::min(A.y2, B.y2) - std::max(A.y1, B.y1);
    const bool has_inter = iw > 0 && ih > 0;
    const double hw = std::max(A.x2, B.x2) - std::min(A.x1, B.x1);
    const double hh = std::max(A.y2, B.y2) - std::min(A.y1, B.y1);

    // corner-space partials, order [x1, x2, y1, y2] for each box
    double dI_a[4] = {0, 0, 0, 0}, dI_b[4] = {0, 0, 0, 0};
    if (has_inter) {
        dI_a[0] = (A.x1 >= B.x1) ? -ih : 0;
        dI_b[0] = (B.x1 > A.x1) ? -ih : 0;
        dI_a[1] = (A.x2 <= B.x2) ? ih : 0;
        dI_b[1] = (B.x2 < A.x2) ? ih : 0;
        dI_a[2] = (A.y1 >= B.y1) ? -iw : 0;
        dI_b[2] = (B.y1 > A.y1) ? -iw : 0;
        dI_a[3] = (A.y2 <= B.y2) ? iw : 0;
        dI_b[3] = (B.y2 < A.y2) ? iw : 0;
    }
    const double dA[4] = {-ah, ah, -aw, aw};
    const double dB[4] = {-bh, bh, -bw, bw};
    double dU_a[4], dU_b[4];
    for (int i = 0; i < 4; ++i) {
        dU_a[i] = dA[i] - dI_a[i];
        dU_b[i] = dB[i] - dI_b[i];
    }
    double dH_a[4], dH_b[4];
    dH_a[0] = (A.x1 <= B.x1) ? -hh : 0;
    dH_b[0] = (B.x1 < A.x1) ? -hh : 0;
    dH_a[1] = (A.x2 >= B.x2) ? hh : 0;
    dH_b[1] = (B.x2 > A.x2) ? hh : 0;
    dH_a[2] = (A.y1 <= B.y1) ? -hw : 0;
    dH_b[2] = (B.y1 < A.y1) ? -hw : 0;
    dH_a[3] = (A.y2 >= B.y2) ? hw : 0;
    dH_b[3] = (B.y2 > A.y2) ? hw : 0;

    // GIoU = I/U - 1 + U/H
    const double U2 = t.uni * t.uni, H2 = t.hull * t.hull;
    double ga[4], gb[4];
    for (int i = 0; i < 4; ++i) {
        ga[i] = (dI_a[i] * t.uni - t.inter * dU_a[i]) / U2 +
                (dU_a[i] * t.hull - t.uni * dH_a[i]) / H2;
        gb[i] = (dI_b[i] * t.uni - t.inter * dU_b[i]) / U2 +
                (dU_b[i] * t.hull - t.uni * dH_b[i]) / H2;
    }
    grad->da = to_center_size(A, ga[0], ga[1], ga[2], ga[3]);
    grad->db = to_center_size(B, gb[0], gb[1], gb[2], gb[3]);
    return giou;
}

double l1_box_grad(const NormBox& a, const NormBox& b, BoxPairGrad* grad) {
    const double d[4] = {a.cx - b.cx, a.cy - b.cy, a.w - b.w, a.h - b.h};
    double val = 0;
    for (int i = 0; i < 4; ++i) {
        val += std::abs(d[i]);
        if (grad) {
            const double s = d[i] > 0 ? 1.0 : (d[i] < 0 ? -1.0 : 0.0);
            grad->da[i] = s;
            grad->db[i] = -s;
        }
    }
    return val;
}

BinaryMask rasterize_box(const NormBox& box, int canvas_h, int canvas_w) {
    const Corners c = corners_of(box);
    BinaryMask m(canvas_h, canvas_w, 0);
    const int c0 = std::max(0, static_cast<int>(std::floor(c.x1 * canvas_w)));
    const int c1 = std::min(canvas_w, static_cast<int>(std::ceil(c.x2 * canvas_w)));
    const int r0 = std::max(0, static_cast<int>(std::floor(c.y1 * canvas_h)));
    const int r1 = std::min(canvas_h, static_cast<int>(std::ceil(c.y2 * canvas_h)));
    for (int r = r0; r < r1; ++r)
        for (int col = c0; col < c1; ++col) m.at(r, col) = 1;
    return m;
}

} // namespace promptseg
