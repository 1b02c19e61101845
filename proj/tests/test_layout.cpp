#include <cmath>

#include "doctest.h"
#include "movgan/autodiff.hpp"
#include "movgan/errors.hpp"
#include "movgan/layout.hpp"
#include "movgan/rng.hpp"
#include "test_util.hpp"

using namespace movgan;

namespace {

// Independent reference: walks every pixel and every instance, applying the
// center-in-[x0,x1)x[y0,y1) rule directly. Instances are summed in canonical
// order so equality with the range-based implementation is exact.
Tensor raster_brute_force(const FrameLayout& layout, const Tensor& table, int h, int w) {
    const int e = table.dim(1);
    Tensor canvas({e, h, w});
    auto order = canonical_order(layout);
    for (int r = 0; r < h; ++r)
        for (int c = 0; c < w; ++c)
            for (int idx : order) {
                const auto& inst = layout.instances[idx];
                if (pixel_center_in(inst.box.x0, inst.box.x1, c, w) &&
                    pixel_center_in(inst.box.y0, inst.box.y1, r, h))
                    for (int k = 0; k < e; ++k) canvas.at(k, r, c) += table.at(inst.category_id, k);
            }
    return canvas;
}

FrameLayout random_layout(Rng& rng, int max_instances, int categories) {
    FrameLayout layout;
    const int n = rng.uniform_int(0, max_instances);
    for (int i = 0; i < n; ++i) {
        double x0 = rng.uniform(0.0, 0.85);
        double y0 = rng.uniform(0.0, 0.85);
        double x1 = rng.uniform(x0 + 0.05, 1.0);
        double y1 = rng.uniform(y0 + 0.05, 1.0);
        layout.instances.push_back(
            {rng.uniform_int(0, categories - 1), i, BoundingBox(x0, y0, x1, y1)});
    }
    return layout;
}

}  // namespace

TEST_CASE("rasterize: zero instances give an all-zero canvas") {
    Rng rng(1);
    Tensor table = rng.normal_tensor({5, 3});
    Tensor canvas = rasterize_layout(FrameLayout{}, table, 8, 8);
    for (int64_t i = 0; i < canvas.size(); ++i) CHECK(canvas[i] == 0.0);
}

TEST_CASE("rasterize: full-cover box paints every pixel with the embedding") {
    Rng rng(2);
    Tensor table = rng.normal_tensor({5, 3});
    FrameLayout layout;
    layout.instances.push_back({2, 0, BoundingBox(0, 0, 1, 1)});
    Tensor canvas = rasterize_layout(layout, table, 8, 8);
    for (int r = 0; r < 8; ++r)
        for (int c = 0; c < 8; ++c)
            for (int k = 0; k < 3; ++k) CHECK(canvas.at(k, r, c) == table.at(2, k));
}

TEST_CASE("rasterize: overlapping boxes match the per-pixel brute force exactly") {
    Rng rng(3);
    Tensor table = rng.normal_tensor({6, 4});
    FrameLayout layout;
    layout.instances.push_back({1, 7, BoundingBox(0.1, 0.1, 0.6, 0.7)});
    layout.instances.push_back({4, 3, BoundingBox(0.4, 0.3, 0.9, 0.9)});
    Tensor got = rasterize_layout(layout, table, 8, 8);
    Tensor want = raster_brute_force(layout, table, 8, 8);
    for (int64_t i = 0; i < got.size(); ++i) CHECK(got[i] == want[i]);
}

TEST_CASE("rasterize: oracle equivalence on random layouts") {
    Rng rng(4);
    Tensor table = rng.normal_tensor({10, 4});
    for (int trial = 0; trial < 100; ++trial) {
        FrameLayout layout = random_layout(rng, 11, 10);
        Tensor got = rasterize_layout(layout, table, 16, 16);
        Tensor want = raster_brute_force(layout, table, 16, 16);
        REQUIRE(max_abs_diff(got, want) == 0.0);
    }
}

TEST_CASE("rasterize: additive over disjoint instance sets") {
    Rng rng(5);
    Tensor table = rng.normal_tensor({4, 3});
    FrameLayout a, b, both;
    a.instances.push_back({0, 0, BoundingBox(0.0, 0.0, 0.45, 0.45)});
    b.instances.push_back({1, 1, BoundingBox(0.55, 0.55, 1.0, 1.0)});
    both.instances = a.instances;
    both.instances.push_back(b.instances[0]);
    Tensor ca = rasterize_layout(a, table, 12, 12);
    Tensor cb = rasterize_layout(b, table, 12, 12);
    Tensor cboth = rasterize_layout(both, table, 12, 12);
    for (int64_t i = 0; i < cboth.size(); ++i) CHECK(cboth[i] == ca[i] + cb[i]);
}

TEST_CASE("rasterize: permuting instances leaves the canvas bitwise unchanged") {
    Rng rng(6);
    Tensor table = rng.normal_tensor({8, 5});
    FrameLayout layout = random_layout(rng, 8, 8);
    FrameLayout reversed = layout;
    std::reverse(reversed.instances.begin(), reversed.instances.end());
    Tensor a = rasterize_layout(layout, table, 16, 16);
    Tensor b = rasterize_layout(reversed, table, 16, 16);
    for (int64_t i = 0; i < a.size(); ++i) CHECK(a[i] == b[i]);
}

TEST_CASE("box_to_affine hand values") {
    Tensor id = box_to_affine(BoundingBox(0, 0, 1, 1));
    CHECK(id.at(0, 0) == doctest::Approx(1.0));
    CHECK(id.at(0, 2) == doctest::Approx(0.0));
    CHECK(id.at(1, 1) == doctest::Approx(1.0));
    CHECK(id.at(1, 2) == doctest::Approx(0.0));

    Tensor mid = box_to_affine(BoundingBox(0.25, 0.25, 0.75, 0.75));
    CHECK(mid.at(0, 0) == doctest::Approx(0.5));
    CHECK(mid.at(0, 2) == doctest::Approx(0.0));
    CHECK(mid.at(1, 1) == doctest::Approx(0.5));
    CHECK(mid.at(1, 2) == doctest::Approx(0.0));

    Tensor half = box_to_affine(BoundingBox(0, 0, 0.5, 1));
    CHECK(half.at(0, 0) == doctest::Approx(0.5));
    CHECK(half.at(0, 2) == doctest::Approx(-0.5));
    CHECK(half.at(1, 1) == doctest::Approx(1.0));
    CHECK(half.at(1, 2) == doctest::Approx(0.0));
}

TEST_CASE("degenerate boxes are rejected") {
    CHECK_THROWS_AS(BoundingBox(0.5, 0.2, 0.5, 0.8), ValidationError);
    CHECK_THROWS_AS(BoundingBox(0.2, 0.9, 0.8, 0.9), ValidationError);
    CHECK_THROWS_AS(BoundingBox(-0.1, 0.0, 0.5, 0.5), ValidationError);
    CHECK_THROWS_AS(BoundingBox(0.0, 0.0, 1.1, 0.5), ValidationError);
}

TEST_CASE("stn_place: identity box reproduces the feature exactly") {
    Rng rng(7);
    Tensor feature = rng.normal_tensor({2, 6, 6});
    Tensor canvas = stn_place(feature, BoundingBox(0, 0, 1, 1), 6, 6);
    CHECK(max_abs_diff(canvas, feature) == 0.0);
}

TEST_CASE("stn_place: zero feature gives zero canvas") {
    Tensor feature({3, 4, 4});
    Tensor canvas = stn_place(feature, BoundingBox(0.2, 0.3, 0.7, 0.9), 16, 16);
    for (int64_t i = 0; i < canvas.size(); ++i) CHECK(canvas[i] == 0.0);
}

TEST_CASE("stn_place: constant feature mass approximates box area") {
    Tensor feature = Tensor::full({1, 8, 8}, 1.0);
    Tensor canvas = stn_place(feature, BoundingBox(0.5, 0.5, 1.0, 1.0), 16, 16);
    double sum = 0.0;
    for (int64_t i = 0; i < canvas.size(); ++i) sum += canvas[i];
    CHECK(sum == doctest::Approx(64.0).epsilon(0.15));
}

TEST_CASE("stn_place: exactly zero outside the covered box footprint") {
    Rng rng(8);
    const int canvas_size = 32;
    for (int trial = 0; trial < 50; ++trial) {
        double wpx = rng.uniform(4.0, 24.0), hpx = rng.uniform(4.0, 24.0);
        double x0 = rng.uniform(0.0, 1.0 - wpx / canvas_size);
        double y0 = rng.uniform(0.0, 1.0 - hpx / canvas_size);
        BoundingBox box(x0, y0, x0 + wpx / canvas_size, y0 + hpx / canvas_size);
        Tensor feature = rng.normal_tensor({2, 16, 16});
        Tensor canvas = stn_place(feature, box, canvas_size, canvas_size);
        auto [c0, c1] = coverage_range(box.x0, box.x1, canvas_size);
        auto [r0, r1] = coverage_range(box.y0, box.y1, canvas_size);
        // Stronger than the 1-pixel-dilation bound: every uncovered pixel is 0.
        for (int f = 0; f < 2; ++f)
            for (int r = 0; r < canvas_size; ++r)
                for (int c = 0; c < canvas_size; ++c)
                    if (r < r0 || r >= r1 || c < c0 || c >= c1)
                        REQUIRE(canvas.at(f, r, c) == 0.0);
    }
}

TEST_CASE("stn_crop: full box of a constant image is the constant") {
    Tensor image = Tensor::full({3, 10, 10}, 0.37);
    Tensor crop = stn_crop(image, BoundingBox(0, 0, 1, 1), 6, 6);
    for (int64_t i = 0; i < crop.size(); ++i) CHECK(crop[i] == doctest::Approx(0.37));
}

TEST_CASE("stn_crop: constant image crops to the constant for interior boxes") {
    Tensor image = Tensor::full({1, 12, 12}, -0.8);
    Tensor crop = stn_crop(image, BoundingBox(0.1, 0.4, 0.55, 0.95), 5, 7);
    for (int64_t i = 0; i < crop.size(); ++i) CHECK(crop[i] == doctest::Approx(-0.8));
}

TEST_CASE("place then crop recovers smooth fields within 5% relative L2") {
    Rng rng(9);
    const int canvas_size = 32;
    for (int trial = 0; trial < 50; ++trial) {
        double wpx = rng.uniform(4.0, 28.0), hpx = rng.uniform(4.0, 28.0);
        double x0 = rng.uniform(0.0, 1.0 - wpx / canvas_size);
        double y0 = rng.uniform(0.0, 1.0 - hpx / canvas_size);
        BoundingBox box(x0, y0, x0 + wpx / canvas_size, y0 + hpx / canvas_size);
        Tensor feature = movgan::test::smooth_field(1, 16, 16, rng);
        Tensor canvas = stn_place(feature, box, canvas_size, canvas_size);
        Tensor back = stn_crop(canvas, box, 16, 16);
        double num = l2_diff(back, feature);
        double den = 0.0;
        for (int64_t i = 0; i < feature.size(); ++i) den += feature[i] * feature[i];
        den = std::sqrt(den);
        REQUIRE(num / den < 0.05);
    }
}

TEST_CASE("stn gradients match central finite differences") {
    Rng rng(10);
    Tensor feature = rng.normal_tensor({2, 5, 5});
    BoundingBox box(0.15, 0.2, 0.8, 0.75);
    Tensor proj_place = rng.normal_tensor({2, 12, 12});
    Tensor proj_crop = rng.normal_tensor({2, 6, 6});

    Tape tape;
    Var f = tape.leaf(feature, true);
    Var placed = ad::stn_place(f, box, 12, 12);
    Var s = ad::dot_const(placed, proj_place);
    tape.backward(s);
    const Tensor& gf = tape.grad(f);

    auto eval_place = [&]() {
        Tensor c = stn_place(feature, box, 12, 12);
        double acc = 0.0;
        for (int64_t i = 0; i < c.size(); ++i) acc += c[i] * proj_place[i];
        return acc;
    };
    int checked = 0;
    for (int64_t i = 0; i < feature.size(); ++i) {
        double fd = movgan::test::central_diff(eval_place, feature, i);
        if (std::abs(fd) < 1e-10 && std::abs(gf[i]) < 1e-10) continue;
        REQUIRE(movgan::test::rel_err(gf[i], fd) < 1e-3);
        ++checked;
    }
    CHECK(checked > 10);

    Tensor image = rng.normal_tensor({2, 12, 12});
    Tape tape2;
    Var im = tape2.leaf(image, true);
    Var cropped = ad::stn_crop(im, box, 6, 6);
    Var s2 = ad::dot_const(cropped, proj_crop);
    tape2.backward(s2);
    const Tensor& gi = tape2.grad(im);

    auto eval_crop = [&]() {
        Tensor c = stn_crop(image, box, 6, 6);
        double acc = 0.0;
        for (int64_t i = 0; i < c.size(); ++i) acc += c[i] * proj_crop[i];
        return acc;
    };
    checked = 0;
    for (int64_t i = 0; i < image.size(); ++i) {
        double fd = movgan::test::central_diff(eval_crop, image, i);
        if (std::abs(fd) < 1e-10 && std::abs(gi[i]) < 1e-10) continue;
        REQUIRE(movgan::test::rel_err(gi[i], fd) < 1e-3);
        ++checked;
    }
    CHECK(checked > 10);
}

TEST_CASE("rasterize embedding-dimension mismatch raises a configuration error") {
    Tensor table({4, 3});
    FrameLayout layout;
    layout.instances.push_back({9, 0, BoundingBox(0.1, 0.1, 0.5, 0.5)});
    CHECK_THROWS_AS(rasterize_layout(layout, table, 8, 8), ConfigError);
}

TEST_CASE("layout validation catches duplicates and range violations") {
    FrameLayout layout;
    layout.instances.push_back({0, 1, BoundingBox(0.1, 0.1, 0.5, 0.5)});
    layout.instances.push_back({1, 1, BoundingBox(0.2, 0.2, 0.6, 0.6)});
    CHECK_THROWS_AS(layout.validate(10, 10), ValidationError);
    layout.instances[1].instance_id = 2;
    CHECK_NOTHROW(layout.validate(10, 10));
    CHECK_THROWS_AS(layout.validate(1, 10), ValidationError);
    CHECK_THROWS_AS(layout.validate(10, 1), ValidationError);
}
