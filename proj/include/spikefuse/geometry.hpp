#pragma once

#include <cmath>

namespace spikefuse {

/// Axis-aligned box given by center and extents, in pixels.
struct BBox {
    double cx = 0.0;
    double cy = 0.0;
    double w = 0.0;
    double h = 0.0;
};

inline double iou(const BBox& a, const BBox& b) {
    double ax0 = a.cx - a.w / 2, ax1 = a.cx + a.w / 2;
    double ay0 = a.cy - a.h / 2, ay1 = a.cy + a.h / 2;
    double bx0 = b.cx - b.w / 2, bx1 = b.cx + b.w / 2;
    double by0 = b.cy - b.h / 2, by1 = b.cy + b.h / 2;
    double ix = std::max(0.0, std::min(ax1, bx1) - std::max(ax0, bx0));
    double iy = std::max(0.0, std::min(ay1, by1) - std::max(ay0, by0));
    double inter = ix * iy;
    double uni = a.w * a.h + b.w * b.h - inter;
    return uni > 0.0 ? inter / uni : 0.0;
}

inline double center_error(const BBox& a, const BBox& b) {
    double dx = a.cx - b.cx;
    double dy = a.cy - b.cy;
    return std::sqrt(dx * dx + dy * dy);
}

}  // namespace spikefuse
