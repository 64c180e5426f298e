#include "iag/geometry.hpp"

#include <algorithm>
#include <cmath>

#include "iag/common.hpp"

namespace iag {

namespace {
int round_half_up(double v) { return (int)std::floor(v + 0.5); }
}  // namespace

BoxNorm normalize_bbox(const BoxPx& b, int width, int height) {
    check(width > 0 && height > 0, "normalize_bbox: image extent must be positive");
    check(b.x0 < b.x1 && b.y0 < b.y1, "normalize_bbox: degenerate box");
    check(b.x0 >= 0 && b.y0 >= 0 && b.x1 <= width && b.y1 <= height,
          "normalize_bbox: box outside image");
    return BoxNorm{round_half_up(b.x0 / width * 1000.0), round_half_up(b.y0 / height * 1000.0),
                   round_half_up(b.x1 / width * 1000.0), round_half_up(b.y1 / height * 1000.0)};
}

BoxPx denormalize_bbox(const BoxNorm& b, int width, int height) {
    check(width > 0 && height > 0, "denormalize_bbox: image extent must be positive");
    for (int c : b.coords()) check(c >= 0 && c <= 1000, "denormalize_bbox: coordinate outside [0,1000]");
    return BoxPx{b.x0 / 1000.0 * width, b.y0 / 1000.0 * height, b.x1 / 1000.0 * width,
                 b.y1 / 1000.0 * height};
}

double iou(const BoxPx& a, const BoxPx& b) {
    check(a.x0 <= a.x1 && a.y0 <= a.y1, "iou: first box unordered");
    check(b.x0 <= b.x1 && b.y0 <= b.y1, "iou: second box unordered");
    double ix = std::max(0.0, std::min(a.x1, b.x1) - std::max(a.x0, b.x0));
    double iy = std::max(0.0, std::min(a.y1, b.y1) - std::max(a.y0, b.y0));
    double inter = ix * iy;
    double area_a = (a.x1 - a.x0) * (a.y1 - a.y0);
    double area_b = (b.x1 - b.x0) * (b.y1 - b.y0);
    double uni = area_a + area_b - inter;
    if (uni <= 0.0) return 0.0;
    return inter / uni;
}

double iou(const BoxNorm& a, const BoxNorm& b) {
    return iou(BoxPx{(double)a.x0, (double)a.y0, (double)a.x1, (double)a.y1},
               BoxPx{(double)b.x0, (double)b.y0, (double)b.x1, (double)b.y1});
}

}  // namespace iag
