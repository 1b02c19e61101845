#include <cmath>

#include "doctest.h"
#include "movgan/discriminator.hpp"
#include "movgan/rng.hpp"
#include "test_util.hpp"

using namespace movgan;

namespace {

DiscriminatorConfig mini_config() {
    DiscriminatorConfig cfg;
    cfg.categories = 6;
    cfg.embed_dim = 4;
    cfg.resolution = 16;
    cfg.clip_length = 8;
    cfg.max_instances = 4;
    cfg.global_channels = 6;
    cfg.local_channels = 6;
    cfg.label_channels = 3;
    cfg.crop_size = 8;
    cfg.head_channels = 8;
    return cfg;
}

FrameLayout sample_layout() {
    FrameLayout layout;
    layout.instances.push_back({1, 0, BoundingBox(0.1, 0.15, 0.45, 0.6)});
    layout.instances.push_back({4, 1, BoundingBox(0.5, 0.4, 0.9, 0.85)});
    return layout;
}

}  // namespace

TEST_CASE("aggregate: hand values and weight normalization") {
    CHECK(aggregate(1.0, 3.0, 2.0) == 2.0);
    CHECK(aggregate(0.0, 0.0, 0.0) == 0.0);
    Rng rng(40);
    for (int i = 0; i < 1000; ++i) {
        double c = rng.normal(0.0, 3.0);
        CHECK(std::abs(aggregate(c, c, c) - c) < 1e-12);
        double a = rng.normal(), b = rng.normal(), m = rng.normal();
        CHECK(std::abs(aggregate(a, b, m) - ((a + b) / 4.0 + m / 2.0)) < 1e-12);
    }
}

TEST_CASE("fuse_layout: empty layout is finite and deterministic") {
    DiscriminatorConfig cfg = mini_config();
    DiscriminatorState state = DiscriminatorState::init(cfg, 41);
    Rng rng(42);
    Tensor frame = rng.uniform_tensor({3, 16, 16}, -1.0, 1.0);
    Tensor a = fuse_layout(state, frame, FrameLayout{});
    Tensor b = fuse_layout(state, frame, FrameLayout{});
    CHECK(a.all_finite());
    CHECK(max_abs_diff(a, b) == 0.0);
    CHECK(a.shape() == std::vector<int>{cfg.fused_channels(), 4, 4});
}

TEST_CASE("fuse_layout: permutation of instances is bitwise invisible") {
    DiscriminatorConfig cfg = mini_config();
    DiscriminatorState state = DiscriminatorState::init(cfg, 43);
    Rng rng(44);
    Tensor frame = rng.uniform_tensor({3, 16, 16}, -1.0, 1.0);
    FrameLayout layout = sample_layout();
    layout.instances.push_back({2, 2, BoundingBox(0.3, 0.1, 0.6, 0.5)});
    FrameLayout permuted = layout;
    std::swap(permuted.instances[0], permuted.instances[2]);
    Tensor a = fuse_layout(state, frame, layout);
    Tensor b = fuse_layout(state, frame, permuted);
    CHECK(max_abs_diff(a, b) == 0.0);
}

TEST_CASE("score_image: finite, deterministic, responsive to the frame") {
    DiscriminatorConfig cfg = mini_config();
    DiscriminatorState state = DiscriminatorState::init(cfg, 45);
    Rng rng(46);
    Tensor frame = rng.uniform_tensor({3, 16, 16}, -1.0, 1.0);
    Tensor fused = fuse_layout(state, frame, sample_layout());
    double s1 = score_image(state, frame, fused);
    double s2 = score_image(state, frame, fused);
    CHECK(std::isfinite(s1));
    CHECK(s1 == s2);

    Tensor noisy = frame;
    for (int64_t i = 0; i < noisy.size(); ++i) noisy[i] += 0.05 * rng.normal();
    CHECK(std::abs(score_image(state, noisy, fused) - s1) > 0.0);
}

TEST_CASE("score_motion: zero-gap plane and asymmetric inputs stay finite") {
    DiscriminatorConfig cfg = mini_config();
    DiscriminatorState state = DiscriminatorState::init(cfg, 47);
    Rng rng(48);
    FramePairSample pair;
    pair.frame1 = rng.uniform_tensor({3, 16, 16}, -1.0, 1.0);
    pair.frame2 = rng.uniform_tensor({3, 16, 16}, -1.0, 1.0);
    pair.t1 = 3;
    pair.t2 = 3;
    CHECK(pair.delta_t() == 0);
    Tensor plane = delta_plane_tensor(cfg, pair.t1, pair.t2);
    for (int64_t i = 0; i < plane.size(); ++i) CHECK(plane[i] == 0.0);

    Tensor f1 = fuse_layout(state, pair.frame1, sample_layout());
    Tensor f2 = fuse_layout(state, pair.frame2, sample_layout());
    double m = score_motion(state, pair, f1, f2);
    CHECK(std::isfinite(m));
    CHECK(m == score_motion(state, pair, f1, f2));

    FramePairSample swapped;
    swapped.frame1 = pair.frame2;
    swapped.frame2 = pair.frame1;
    swapped.t1 = pair.t2;
    swapped.t2 = pair.t1;
    CHECK(std::isfinite(score_motion(state, swapped, f2, f1)));
}

TEST_CASE("discriminate equals the composition of its sub-calls exactly") {
    DiscriminatorConfig cfg = mini_config();
    DiscriminatorState state = DiscriminatorState::init(cfg, 49);
    Rng rng(50);
    Tensor clip = rng.uniform_tensor({8, 3, 16, 16}, -1.0, 1.0);
    std::vector<FrameLayout> layouts(8, sample_layout());
    for (int t = 0; t < 8; ++t) layouts[static_cast<size_t>(t)].frame_index = t;

    const int t1 = 2, t2 = 6;
    double whole = discriminate(state, clip, layouts, t1, t2);

    auto frame_at = [&](int t) {
        Tensor f({3, 16, 16});
        for (int c = 0; c < 3; ++c)
            for (int i = 0; i < 16; ++i)
                for (int j = 0; j < 16; ++j) f.at(c, i, j) = clip.at(t, c, i, j);
        return f;
    };
    Tensor fr1 = frame_at(t1), fr2 = frame_at(t2);
    Tensor fu1 = fuse_layout(state, fr1, layouts[t1]);
    Tensor fu2 = fuse_layout(state, fr2, layouts[t2]);
    FramePairSample pair{fr1, fr2, t1, t2};
    double composed = aggregate(score_image(state, fr1, fu1), score_image(state, fr2, fu2),
                                score_motion(state, pair, fu1, fu2));
    CHECK(whole == composed);
}

TEST_CASE("discriminate: out-of-range frame index is an input error") {
    DiscriminatorConfig cfg = mini_config();
    DiscriminatorState state = DiscriminatorState::init(cfg, 51);
    Rng rng(52);
    Tensor clip = rng.uniform_tensor({4, 3, 16, 16}, -1.0, 1.0);
    std::vector<FrameLayout> layouts(4);
    CHECK_THROWS_AS(discriminate(state, clip, layouts, 0, 4), InputError);
    CHECK_THROWS_AS(discriminate(state, clip, layouts, -1, 2), InputError);
}

TEST_CASE("half-precision forward stays within 1e-1 of full precision") {
    DiscriminatorConfig cfg = mini_config();
    DiscriminatorState full = DiscriminatorState::init(cfg, 53);
    DiscriminatorState half = full;
    half.config.half_precision = true;

    Rng rng(54);
    for (int trial = 0; trial < 5; ++trial) {
        Tensor clip = rng.uniform_tensor({8, 3, 16, 16}, -1.0, 1.0);
        std::vector<FrameLayout> layouts(8, sample_layout());
        double a = discriminate(full, clip, layouts, 1, 5);
        double b = discriminate(half, clip, layouts, 1, 5);
        CHECK(std::abs(a - b) < 1e-1);
    }
}

TEST_CASE("discriminate gradients flow and match finite differences") {
    DiscriminatorConfig cfg = mini_config();
    DiscriminatorState state = DiscriminatorState::init(cfg, 55);
    Rng rng(56);
    Tensor frame1 = rng.uniform_tensor({3, 16, 16}, -1.0, 1.0);
    Tensor frame2 = rng.uniform_tensor({3, 16, 16}, -1.0, 1.0);
    FrameLayout layout = sample_layout();
    const int t1 = 1, t2 = 4;

    Tape tape;
    BoundParams p = bind(tape, state.params, true);
    Var f1 = tape.leaf(frame1, true);
    Var f2 = tape.leaf(frame2, true);
    Var fused1 = fuse_layout(tape, p, cfg, f1, layout, ConditioningMode::kLayoutIdentity);
    Var fused2 = fuse_layout(tape, p, cfg, f2, layout, ConditioningMode::kLayoutIdentity);
    Var d1 = score_image(tape, p, cfg, f1, fused1);
    Var d2 = score_image(tape, p, cfg, f2, fused2);
    Var delta = tape.leaf(delta_plane_tensor(cfg, t1, t2), true);
    Var dm = score_motion(tape, p, cfg, f1, f2, delta, fused1, fused2);
    Var out = aggregate(tape, d1, d2, dm);
    tape.backward(out);

    Tensor gf1 = tape.grad(f1);
    Tensor gdelta = tape.grad(delta);
    Tensor gtable = tape.grad(p["label_table"]);

    double gf1_norm = 0.0, gdelta_norm = 0.0, gtable_norm = 0.0;
    for (int64_t i = 0; i < gf1.size(); ++i) gf1_norm += gf1[i] * gf1[i];
    for (int64_t i = 0; i < gdelta.size(); ++i) gdelta_norm += gdelta[i] * gdelta[i];
    for (int64_t i = 0; i < gtable.size(); ++i) gtable_norm += gtable[i] * gtable[i];
    CHECK(gf1_norm > 0.0);
    CHECK(gdelta_norm > 0.0);
    CHECK(gtable_norm > 0.0);

    // Finite-difference spot check on the frame-1 path.
    auto eval = [&]() {
        Tape t;
        BoundParams pp = bind(t, state.params, false);
        Var a = t.constant(frame1);
        Var b = t.constant(frame2);
        return discriminate(t, pp, cfg, a, b, layout, layout, t1, t2,
                            ConditioningMode::kLayoutIdentity)
            .value()[0];
    };
    int checked = 0;
    for (int probe = 0; probe < 24; ++probe) {
        int64_t i = static_cast<int64_t>(rng.next_u64() % static_cast<uint64_t>(frame1.size()));
        double fd = movgan::test::central_diff(eval, frame1, i);
        if (std::abs(fd) < 1e-10 && std::abs(gf1[i]) < 1e-10) continue;
        CHECK(movgan::test::rel_err(gf1[i], fd) < 1e-3);
        ++checked;
    }
    CHECK(checked > 5);
}
