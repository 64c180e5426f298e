#pragma once

// Axis-aligned boxes, the 0..1000 coordinate normalization applied to every
// bounding box, and IoU. IoU is computed in normalized coordinate space to
// avoid double rounding.

#include <array>
#include <cstdint>

#include "iag/common.hpp"

namespace iag {

// Pixel-space box, x0 < x1, y0 < y1 (floats so denormalization is lossless).
struct BoxPx {
    double x0 = 0, y0 = 0, x1 = 0, y1 = 0;
    bool operator==(const BoxPx&) const = default;
};

// Normalized box on the 0..1000 integer grid.
struct BoxNorm {
    int x0 = 0, y0 = 0, x1 = 0, y1 = 0;
    bool operator==(const BoxNorm&) const = default;
    std::array<int, 4> coords() const { return {x0, y0, x1, y1}; }
};

// round(coord / extent * 1000), round-half-up. Rejects degenerate or
// out-of-image boxes.
BoxNorm normalize_bbox(const BoxPx& b, int width, int height);

// coord / 1000 * extent. Rejects coordinates outside [0,1000].
BoxPx denormalize_bbox(const BoxNorm& b, int width, int height);

// Intersection over union of ordered boxes; 0 when the union has zero area.
// Throws on unordered boxes (x0 > x1 or y0 > y1).
double iou(const BoxPx& a, const BoxPx& b);
double iou(const BoxNorm& a, const BoxNorm& b);

}  // namespace iag
