#pragma once

#include <utility>
#include <vector>

#include "movgan/tensor.hpp"

namespace movgan {

// Axis-aligned box in normalized frame coordinates. 0 <= x0 < x1 <= 1,
// 0 <= y0 < y1 <= 1; degenerate boxes are rejected at construction.
struct BoundingBox {
    double x0 = 0.0, y0 = 0.0, x1 = 0.0, y1 = 0.0;

    BoundingBox() = default;
    BoundingBox(double x0_, double y0_, double x1_, double y1_);

    double width() const { return x1 - x0; }
    double height() const { return y1 - y0; }
    double area() const { return width() * height(); }
};

struct LayoutInstance {
    int category_id = 0;
    int instance_id = 0;
    BoundingBox box;
};

// The generation condition for one frame: an ordered set of instances.
struct FrameLayout {
    std::vector<LayoutInstance> instances;
    int frame_index = 0;

    // Checks category range, distinct instance ids and the instance cap.
    // Pass category_count/max_instances <= 0 to skip the respective check.
    void validate(int category_count, int max_instances) const;
};

// Indices of `layout.instances` sorted by instance_id. Every fusion over
// instances (rasterization, feature placement) iterates in this order so
// that floating-point sums are invariant to the input permutation.
std::vector<int> canonical_order(const FrameLayout& layout);

// Pixel coverage rule: pixel (r, c) on an H x W canvas is covered by a box
// iff its center ((c+0.5)/W, (r+0.5)/H) lies in [x0,x1) x [y0,y1).
inline bool pixel_center_in(double lo, double hi, int index, int n) {
    double center = (index + 0.5) / n;
    return center >= lo && center < hi;
}

// Half-open index range [first, last) of covered cells along one axis,
// exactly consistent with pixel_center_in.
std::pair<int, int> coverage_range(double lo, double hi, int n);

// Affine placing the unit sampling grid onto the box region, [-1,1] grid
// convention with align-corners-off semantics: source = scale * u + offset.
// Returned as a 2x3 row-major matrix [[sx, 0, tx], [0, sy, ty]].
Tensor box_to_affine(const BoundingBox& box);

// canvas[e, r, c] = sum of table rows over instances covering (r, c), in
// canonical instance order; exactly zero where nothing covers.
// table is [C, E]; result is [E, H, W].
Tensor rasterize_layout(const FrameLayout& layout, const Tensor& table, int height, int width);

// Bilinear resampling of `feature` [F, h, w] into the box region of an
// H x W canvas: pixels covered by the box sample the feature with border
// clamping, everything else stays exactly zero. Differentiable w.r.t.
// feature values.
Tensor stn_place(const Tensor& feature, const BoundingBox& box, int height, int width);
void stn_place_backward(const Tensor& grad_canvas, const BoundingBox& box, Tensor& grad_feature);

// Bilinear crop-and-resize of the box region of `image` [F, H, W] to
// [F, out_h, out_w]. Sampling is clamped to the box's pixel footprint, so
// the crop never reads pixels the box does not cover.
Tensor stn_crop(const Tensor& image, const BoundingBox& box, int out_h, int out_w);
void stn_crop_backward(const Tensor& grad_crop, const BoundingBox& box, Tensor& grad_image);

// Out-of-range sampling behaviour. Placement must leave uncovered canvas
// exactly zero; cropping clamps to the border so a constant image crops to
// the same constant.
enum class PadMode { kZero, kBorder };

// Shared warp kernel: dst[f, i, j] samples src at normalized coordinates
// (ax * u_j + bx, ay * v_i + by) where (u_j, v_i) are the dst pixel centers
// in [-1, 1], unnormalized with align-corners OFF.
void bilinear_warp(const Tensor& src, double ax, double bx, double ay, double by, PadMode pad,
                   Tensor& dst);

// Accumulates d(loss)/d(src) given d(loss)/d(dst) for the same warp.
void bilinear_warp_backward(const Tensor& grad_dst, double ax, double bx, double ay, double by,
                            PadMode pad, Tensor& grad_src);

}  // namespace movgan
