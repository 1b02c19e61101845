#include "movgan/layout.hpp"

#include <algorithm>
#include <cmath>
#include <unordered_set>

#include "movgan/errors.hpp"

namespace movgan {

BoundingBox::BoundingBox(double x0_, double y0_, double x1_, double y1_)
    : x0(x0_), y0(y0_), x1(x1_), y1(y1_) {
    if (!(std::isfinite(x0) && std::isfinite(y0) && std::isfinite(x1) && std::isfinite(y1)))
        throw ValidationError("box has non-finite coordinates");
    if (!(x0 >= 0.0 && x0 < x1 && x1 <= 1.0 && y0 >= 0.0 && y0 < y1 && y1 <= 1.0))
        throw ValidationError("degenerate or out-of-range box (" + std::to_string(x0) + "," +
                              std::to_string(y0) + "," + std::to_string(x1) + "," +
                              std::to_string(y1) + ")");
}

void FrameLayout::validate(int category_count, int max_instances) const {
    if (frame_index < 0) throw ValidationError("negative frame index");
    if (max_instances > 0 && static_cast<int>(instances.size()) > max_instances)
        throw ValidationError("layout has " + std::to_string(instances.size()) +
                              " instances, max is " + std::to_string(max_instances));
    std::unordered_set<int> ids;
    for (const auto& inst : instances) {
        if (category_count > 0 && (inst.category_id < 0 || inst.category_id >= category_count))
            throw ValidationError("category_id " + std::to_string(inst.category_id) +
                                  " outside [0, " + std::to_string(category_count) + ")");
        if (!ids.insert(inst.instance_id).second)
            throw ValidationError("duplicate instance_id " + std::to_string(inst.instance_id));
    }
}

std::vector<int> canonical_order(const FrameLayout& layout) {
    std::vector<int> order(layout.instances.size());
    for (size_t i = 0; i < order.size(); ++i) order[i] = static_cast<int>(i);
    std::sort(order.begin(), order.end(), [&](int a, int b) {
        return layout.instances[a].instance_id < layout.instances[b].instance_id;
    });
    for (size_t i = 1; i < order.size(); ++i)
        if (layout.instances[order[i - 1]].instance_id == layout.instances[order[i]].instance_id)
            throw ValidationError("duplicate instance_id " +
                                  std::to_string(layout.instances[order[i]].instance_id));
    return order;
}

std::pair<int, int> coverage_range(double lo, double hi, int n) {
    // First index whose center passes `bound`, nudged so the result agrees
    // exactly with the pixel_center_in predicate in double arithmetic.
    auto lower_index = [n](double bound) {
        int c = static_cast<int>(std::ceil(bound * n - 0.5));
        c = std::max(0, std::min(c, n));
        while (c > 0 && (c - 1 + 0.5) / n >= bound) --c;
        while (c < n && (c + 0.5) / n < bound) ++c;
        return c;
    };
    int first = lower_index(lo);
    int last = lower_index(hi);
    return {first, std::max(first, last)};
}

Tensor box_to_affine(const BoundingBox& box) {
    Tensor m({2, 3});
    m.at(0, 0) = box.x1 - box.x0;
    m.at(0, 2) = box.x0 + box.x1 - 1.0;
    m.at(1, 1) = box.y1 - box.y0;
    m.at(1, 2) = box.y0 + box.y1 - 1.0;
    return m;
}

Tensor rasterize_layout(const FrameLayout& layout, const Tensor& table, int height, int width) {
    if (table.rank() != 2) throw ConfigError("embedding table must be [categories, dim]");
    if (height < 4 || width < 4) throw InputError("canvas smaller than 4x4");
    const int embed_dim = table.dim(1);
    Tensor canvas({embed_dim, height, width});
    for (int idx : canonical_order(layout)) {
        const LayoutInstance& inst = layout.instances[idx];
        if (inst.category_id < 0 || inst.category_id >= table.dim(0))
            throw ConfigError("category_id " + std::to_string(inst.category_id) +
                              " outside embedding table with " + std::to_string(table.dim(0)) +
                              " rows");
        auto [c0, c1] = coverage_range(inst.box.x0, inst.box.x1, width);
        auto [r0, r1] = coverage_range(inst.box.y0, inst.box.y1, height);
        for (int e = 0; e < embed_dim; ++e) {
            const double v = table.at(inst.category_id, e);
            for (int r = r0; r < r1; ++r)
                for (int c = c0; c < c1; ++c) canvas.at(e, r, c) += v;
        }
    }
    return canvas;
}

namespace {

// One sampling location: corner indices and weights along one axis.
struct AxisSample {
    int i0 = 0, i1 = 0;
    double w0 = 0.0, w1 = 0.0;
};

inline AxisSample axis_sample_clamped(double coord, int lo_idx, int hi_idx) {
    AxisSample s;
    double p = std::min(std::max(coord, static_cast<double>(lo_idx)),
                        static_cast<double>(hi_idx));
    const int lo = static_cast<int>(std::floor(p));
    s.w1 = p - lo;
    s.w0 = 1.0 - s.w1;
    s.i0 = std::min(std::max(lo, lo_idx), hi_idx);
    s.i1 = std::min(std::max(lo + 1, lo_idx), hi_idx);
    return s;
}

inline AxisSample axis_sample(double coord, int size, PadMode pad) {
    if (pad == PadMode::kBorder) return axis_sample_clamped(coord, 0, size - 1);
    AxisSample s;
    const int lo = static_cast<int>(std::floor(coord));
    s.w1 = coord - lo;
    s.w0 = 1.0 - s.w1;
    s.i0 = lo;
    s.i1 = lo + 1;
    if (s.i0 < 0 || s.i0 >= size) s.w0 = 0.0, s.i0 = 0;
    if (s.i1 < 0 || s.i1 >= size) s.w1 = 0.0, s.i1 = 0;
    return s;
}

// Index clamp bounds for sampling inside a box footprint; falls back to the
// nearest pixel when the box covers no pixel center.
inline std::pair<int, int> clamp_bounds(double lo, double hi, int n) {
    auto [first, last] = coverage_range(lo, hi, n);
    if (first < last) return {first, last - 1};
    int nearest = std::min(std::max(static_cast<int>(std::floor(0.5 * (lo + hi) * n)), 0), n - 1);
    return {nearest, nearest};
}

}  // namespace

void bilinear_warp(const Tensor& src, double ax, double bx, double ay, double by, PadMode pad,
                   Tensor& dst) {
    const int channels = src.dim(0), sh = src.dim(1), sw = src.dim(2);
    const int oh = dst.dim(1), ow = dst.dim(2);
    for (int i = 0; i < oh; ++i) {
        const double v = (2.0 * i + 1.0) / oh - 1.0;
        const double py = ((ay * v + by + 1.0) * sh - 1.0) * 0.5;
        const AxisSample ys = axis_sample(py, sh, pad);
        for (int j = 0; j < ow; ++j) {
            const double u = (2.0 * j + 1.0) / ow - 1.0;
            const double px = ((ax * u + bx + 1.0) * sw - 1.0) * 0.5;
            const AxisSample xs = axis_sample(px, sw, pad);
            if (ys.w0 == 0.0 && ys.w1 == 0.0) continue;
            if (xs.w0 == 0.0 && xs.w1 == 0.0) continue;
            for (int f = 0; f < channels; ++f) {
                dst.at(f, i, j) = ys.w0 * (xs.w0 * src.at(f, ys.i0, xs.i0) +
                                           xs.w1 * src.at(f, ys.i0, xs.i1)) +
                                  ys.w1 * (xs.w0 * src.at(f, ys.i1, xs.i0) +
                                           xs.w1 * src.at(f, ys.i1, xs.i1));
            }
        }
    }
}

void bilinear_warp_backward(const Tensor& grad_dst, double ax, double bx, double ay, double by,
                            PadMode pad, Tensor& grad_src) {
    const int channels = grad_src.dim(0), sh = grad_src.dim(1), sw = grad_src.dim(2);
    const int oh = grad_dst.dim(1), ow = grad_dst.dim(2);
    for (int i = 0; i < oh; ++i) {
        const double v = (2.0 * i + 1.0) / oh - 1.0;
        const double py = ((ay * v + by + 1.0) * sh - 1.0) * 0.5;
        const AxisSample ys = axis_sample(py, sh, pad);
        for (int j = 0; j < ow; ++j) {
            const double u = (2.0 * j + 1.0) / ow - 1.0;
            const double px = ((ax * u + bx + 1.0) * sw - 1.0) * 0.5;
            const AxisSample xs = axis_sample(px, sw, pad);
            for (int f = 0; f < channels; ++f) {
                const double g = grad_dst.at(f, i, j);
                if (g == 0.0) continue;
                grad_src.at(f, ys.i0, xs.i0) += ys.w0 * xs.w0 * g;
                grad_src.at(f, ys.i0, xs.i1) += ys.w0 * xs.w1 * g;
                grad_src.at(f, ys.i1, xs.i0) += ys.w1 * xs.w0 * g;
                grad_src.at(f, ys.i1, xs.i1) += ys.w1 * xs.w1 * g;
            }
        }
    }
}

namespace {

// Shared place traversal: visits every covered canvas pixel with its source
// sample. fn(f, r, c, ys, xs) reads or writes one value.
template <typename Fn>
void place_visit(const BoundingBox& box, int channels, int sh, int sw, int height, int width,
                 Fn&& fn) {
    const double sx = box.x1 - box.x0, tx = box.x0 + box.x1 - 1.0;
    const double sy = box.y1 - box.y0, ty = box.y0 + box.y1 - 1.0;
    const double ax = 1.0 / sx, bx = -tx / sx, ay = 1.0 / sy, by = -ty / sy;
    auto [c0, c1] = coverage_range(box.x0, box.x1, width);
    auto [r0, r1] = coverage_range(box.y0, box.y1, height);
    for (int r = r0; r < r1; ++r) {
        const double v = (2.0 * r + 1.0) / height - 1.0;
        const double py = ((ay * v + by + 1.0) * sh - 1.0) * 0.5;
        const AxisSample ys = axis_sample_clamped(py, 0, sh - 1);
        for (int c = c0; c < c1; ++c) {
            const double u = (2.0 * c + 1.0) / width - 1.0;
            const double px = ((ax * u + bx + 1.0) * sw - 1.0) * 0.5;
            const AxisSample xs = axis_sample_clamped(px, 0, sw - 1);
            for (int f = 0; f < channels; ++f) fn(f, r, c, ys, xs);
        }
    }
}

// Shared crop traversal; sampling indices are clamped to the box footprint.
template <typename Fn>
void crop_visit(const BoundingBox& box, int channels, int sh, int sw, int out_h, int out_w,
                Fn&& fn) {
    const double sx = box.x1 - box.x0, tx = box.x0 + box.x1 - 1.0;
    const double sy = box.y1 - box.y0, ty = box.y0 + box.y1 - 1.0;
    auto [x_lo, x_hi] = clamp_bounds(box.x0, box.x1, sw);
    auto [y_lo, y_hi] = clamp_bounds(box.y0, box.y1, sh);
    for (int i = 0; i < out_h; ++i) {
        const double v = (2.0 * i + 1.0) / out_h - 1.0;
        const double py = ((sy * v + ty + 1.0) * sh - 1.0) * 0.5;
        const AxisSample ys = axis_sample_clamped(py, y_lo, y_hi);
        for (int j = 0; j < out_w; ++j) {
            const double u = (2.0 * j + 1.0) / out_w - 1.0;
            const double px = ((sx * u + tx + 1.0) * sw - 1.0) * 0.5;
            const AxisSample xs = axis_sample_clamped(px, x_lo, x_hi);
            for (int f = 0; f < channels; ++f) fn(f, i, j, ys, xs);
        }
    }
}

}  // namespace

Tensor stn_place(const Tensor& feature, const BoundingBox& box, int height, int width) {
    if (feature.rank() != 3) throw ConfigError("stn_place expects [F, h, w] feature");
    Tensor canvas({feature.dim(0), height, width});
    place_visit(box, feature.dim(0), feature.dim(1), feature.dim(2), height, width,
                [&](int f, int r, int c, const AxisSample& ys, const AxisSample& xs) {
                    canvas.at(f, r, c) =
                        ys.w0 * (xs.w0 * feature.at(f, ys.i0, xs.i0) +
                                 xs.w1 * feature.at(f, ys.i0, xs.i1)) +
                        ys.w1 * (xs.w0 * feature.at(f, ys.i1, xs.i0) +
                                 xs.w1 * feature.at(f, ys.i1, xs.i1));
                });
    return canvas;
}

void stn_place_backward(const Tensor& grad_canvas, const BoundingBox& box, Tensor& grad_feature) {
    place_visit(box, grad_feature.dim(0), grad_feature.dim(1), grad_feature.dim(2),
                grad_canvas.dim(1), grad_canvas.dim(2),
                [&](int f, int r, int c, const AxisSample& ys, const AxisSample& xs) {
                    const double g = grad_canvas.at(f, r, c);
                    if (g == 0.0) return;
                    grad_feature.at(f, ys.i0, xs.i0) += ys.w0 * xs.w0 * g;
                    grad_feature.at(f, ys.i0, xs.i1) += ys.w0 * xs.w1 * g;
                    grad_feature.at(f, ys.i1, xs.i0) += ys.w1 * xs.w0 * g;
                    grad_feature.at(f, ys.i1, xs.i1) += ys.w1 * xs.w1 * g;
                });
}

Tensor stn_crop(const Tensor& image, const BoundingBox& box, int out_h, int out_w) {
    if (image.rank() != 3) throw ConfigError("stn_crop expects [F, H, W] image");
    Tensor crop({image.dim(0), out_h, out_w});
    crop_visit(box, image.dim(0), image.dim(1), image.dim(2), out_h, out_w,
               [&](int f, int i, int j, const AxisSample& ys, const AxisSample& xs) {
                   crop.at(f, i, j) =
                       ys.w0 * (xs.w0 * image.at(f, ys.i0, xs.i0) +
                                xs.w1 * image.at(f, ys.i0, xs.i1)) +
                       ys.w1 * (xs.w0 * image.at(f, ys.i1, xs.i0) +
                                xs.w1 * image.at(f, ys.i1, xs.i1));
               });
    return crop;
}

void stn_crop_backward(const Tensor& grad_crop, const BoundingBox& box, Tensor& grad_image) {
    crop_visit(box, grad_image.dim(0), grad_image.dim(1), grad_image.dim(2), grad_crop.dim(1),
               grad_crop.dim(2),
               [&](int f, int i, int j, const AxisSample& ys, const AxisSample& xs) {
                   const double g = grad_crop.at(f, i, j);
                   if (g == 0.0) return;
                   grad_image.at(f, ys.i0, xs.i0) += ys.w0 * xs.w0 * g;
                   grad_image.at(f, ys.i0, xs.i1) += ys.w0 * xs.w1 * g;
                   grad_image.at(f, ys.i1, xs.i0) += ys.w1 * xs.w0 * g;
                   grad_image.at(f, ys.i1, xs.i1) += ys.w1 * xs.w1 * g;
               });
}

}  // namespace movgan
