#include <cmath>

#include "doctest.h"
#include "movgan/generator.hpp"
#include "movgan/rng.hpp"
#include "test_util.hpp"

using namespace movgan;

namespace {

GeneratorConfig mini_config() {
    GeneratorConfig cfg;
    cfg.categories = 6;
    cfg.embed_dim = 4;
    cfg.z_content_dim = 8;
    cfg.z_motion_dim = 6;
    cfg.base_resolution = 4;
    cfg.resolution = 16;
    cfg.clip_length = 8;
    cfg.max_instances = 4;
    cfg.id_embed_dim = 8;
    cfg.style_hidden = 12;
    cfg.local_channels = 6;
    cfg.local_seed = 4;
    cfg.global_channels = 8;
    cfg.decoder_channels = 10;
    cfg.synth_hidden = 12;
    cfg.motion_dim = 6;
    return cfg;
}

FrameLayout two_instance_layout() {
    FrameLayout layout;
    layout.instances.push_back({1, 0, BoundingBox(0.1, 0.15, 0.45, 0.6)});
    layout.instances.push_back({3, 1, BoundingBox(0.5, 0.4, 0.9, 0.85)});
    return layout;
}

}  // namespace

TEST_CASE("first_layer: bias only at the grid origin") {
    GeneratorState state = GeneratorState::init(mini_config(), 11);
    CoordinateGrid grid;
    grid.ts = {0.0, 0.5};
    grid.ys = {0.0, 0.5};
    grid.xs = {0.0, 0.5};
    Tensor f = first_layer(state, grid);
    const Tensor& b = state.params.get("inr.b");
    for (int k = 0; k < state.config.synth_hidden; ++k)
        CHECK(f.at(0, 0, 0, k) == doctest::Approx(b.at(k)).epsilon(1e-12));
}

TEST_CASE("first_layer: time difference is exactly the w_t slope") {
    GeneratorState state = GeneratorState::init(mini_config(), 12);
    CoordinateGrid grid = CoordinateGrid::uniform(8, 16, 16);
    Tensor f = first_layer(state, grid);
    const Tensor& wt = state.params.get("inr.wt");
    const double sigma_t = state.config.frequencies.sigma_t;
    double worst = 0.0;
    for (int t = 1; t < 8; ++t) {
        const double dt = grid.ts[t] - grid.ts[t - 1];
        for (int i = 0; i < 16; ++i)
            for (int j = 0; j < 16; ++j)
                for (int k = 0; k < state.config.synth_hidden; ++k) {
                    double diff = f.at(t, i, j, k) - f.at(t - 1, i, j, k);
                    worst = std::max(worst, std::abs(diff - dt * sigma_t * wt.at(k)));
                }
    }
    CHECK(worst < 1e-5);
}

TEST_CASE("first_layer: matches an independent scalar loop on a 2x2x2 grid") {
    GeneratorState state = GeneratorState::init(mini_config(), 13);
    CoordinateGrid grid;
    grid.ts = {0.2, 0.7};
    grid.ys = {0.3, 0.8};
    grid.xs = {0.1, 0.9};
    Tensor f = first_layer(state, grid);
    const auto& p = state.params;
    const auto& fq = state.config.frequencies;
    for (int t = 0; t < 2; ++t)
        for (int i = 0; i < 2; ++i)
            for (int j = 0; j < 2; ++j)
                for (int k = 0; k < state.config.synth_hidden; ++k) {
                    double want = fq.sigma_x * p.get("inr.wx").at(k) * grid.xs[j] +
                                  fq.sigma_y * p.get("inr.wy").at(k) * grid.ys[i] +
                                  fq.sigma_t * p.get("inr.wt").at(k) * grid.ts[t] +
                                  p.get("inr.b").at(k);
                    REQUIRE(f.at(t, i, j, k) == doctest::Approx(want).epsilon(1e-12));
                }
}

TEST_CASE("encode_global: deterministic, correctly shaped, layout sensitive") {
    GeneratorConfig cfg = mini_config();
    GeneratorState state = GeneratorState::init(cfg, 14);
    Rng rng(15);
    Tensor z = rng.normal_tensor({cfg.z_content_dim});
    FrameLayout layout = two_instance_layout();

    Tensor a = encode_global(state, z, layout);
    Tensor b = encode_global(state, z, layout);
    CHECK(max_abs_diff(a, b) == 0.0);

    CHECK(a.shape() == std::vector<int>{1, cfg.global_channels + cfg.z_content_dim,
                                        cfg.base_resolution, cfg.base_resolution});

    Tensor empty = encode_global(state, z, FrameLayout{});
    CHECK(l2_diff(a, empty) > 0.0);
}

TEST_CASE("encode_local: zero case, full-cover spread, additivity") {
    GeneratorConfig cfg = mini_config();
    GeneratorState state = GeneratorState::init(cfg, 16);

    Tensor none = encode_local(state, FrameLayout{});
    for (int64_t i = 0; i < none.size(); ++i) CHECK(none[i] == 0.0);

    FrameLayout full;
    full.instances.push_back({2, 0, BoundingBox(0, 0, 1, 1)});
    Tensor spread = encode_local(state, full);
    int nonzero_pixels = 0;
    for (int r = 0; r < cfg.base_resolution; ++r)
        for (int c = 0; c < cfg.base_resolution; ++c) {
            double mag = 0.0;
            for (int ch = 0; ch < cfg.local_channels; ++ch)
                mag += std::abs(spread.at(0, ch, r, c));
            if (mag > 0.0) ++nonzero_pixels;
        }
    CHECK(nonzero_pixels == cfg.base_resolution * cfg.base_resolution);

    FrameLayout a, b, both;
    a.instances.push_back({1, 0, BoundingBox(0.0, 0.0, 0.45, 0.45)});
    b.instances.push_back({4, 1, BoundingBox(0.55, 0.55, 1.0, 1.0)});
    both.instances = {a.instances[0], b.instances[0]};
    Tensor fa = encode_local(state, a);
    Tensor fb = encode_local(state, b);
    Tensor fboth = encode_local(state, both);
    for (int64_t i = 0; i < fboth.size(); ++i) CHECK(fboth[i] == fa[i] + fb[i]);
}

TEST_CASE("motion_features: deterministic with the configured width") {
    GeneratorConfig cfg = mini_config();
    GeneratorState state = GeneratorState::init(cfg, 17);
    Rng rng(18);
    Tensor zm = rng.normal_tensor({cfg.z_motion_dim});
    Tensor f1 = motion_features(state, zm);
    Tensor f2 = motion_features(state, zm);
    CHECK(f1.shape() == std::vector<int>{cfg.motion_dim});
    CHECK(max_abs_diff(f1, f2) == 0.0);
}

TEST_CASE("generate_video: shape, range, determinism") {
    GeneratorConfig cfg = mini_config();
    GeneratorState state = GeneratorState::init(cfg, 19);
    LatentPair z = sample_latents(cfg, 7);
    FrameLayout layout = two_instance_layout();
    CoordinateGrid grid = CoordinateGrid::uniform(4, 16, 16);

    Tensor clip = generate_video(state, z, layout, grid);
    CHECK(clip.shape() == std::vector<int>{4, 3, 16, 16});
    for (int64_t i = 0; i < clip.size(); ++i) {
        REQUIRE(clip[i] >= -1.0);
        REQUIRE(clip[i] <= 1.0);
    }
    Tensor again = generate_video(state, z, layout, grid);
    CHECK(max_abs_diff(clip, again) == 0.0);
}

TEST_CASE("generate_video: sub-grid equals slices of the full generation") {
    GeneratorConfig cfg = mini_config();
    GeneratorState state = GeneratorState::init(cfg, 20);
    LatentPair z = sample_latents(cfg, 8);
    FrameLayout layout = two_instance_layout();
    CoordinateGrid full = CoordinateGrid::uniform(8, 16, 16);
    Tensor whole = generate_video(state, z, layout, full);

    CoordinateGrid sub = full;
    sub.ts = {full.ts[0], full.ts[4]};  // {0, 0.5} = frames {0, T/2}
    Tensor part = generate_video(state, z, layout, sub);

    double worst = 0.0;
    for (int c = 0; c < 3; ++c)
        for (int i = 0; i < 16; ++i)
            for (int j = 0; j < 16; ++j) {
                worst = std::max(worst, std::abs(part.at(0, c, i, j) - whole.at(0, c, i, j)));
                worst = std::max(worst, std::abs(part.at(1, c, i, j) - whole.at(4, c, i, j)));
            }
    CHECK(worst < 1e-6);
}

TEST_CASE("generate_video: permuting instances is bitwise invisible") {
    GeneratorConfig cfg = mini_config();
    GeneratorState state = GeneratorState::init(cfg, 21);
    LatentPair z = sample_latents(cfg, 9);
    FrameLayout layout;
    layout.instances.push_back({1, 0, BoundingBox(0.1, 0.1, 0.5, 0.5)});
    layout.instances.push_back({3, 1, BoundingBox(0.3, 0.3, 0.8, 0.7)});
    layout.instances.push_back({5, 2, BoundingBox(0.55, 0.2, 0.95, 0.9)});
    FrameLayout permuted = layout;
    std::swap(permuted.instances[0], permuted.instances[2]);
    std::swap(permuted.instances[0], permuted.instances[1]);

    CoordinateGrid grid = CoordinateGrid::uniform(3, 16, 16);
    Tensor a = generate_video(state, z, layout, grid);
    Tensor b = generate_video(state, z, permuted, grid);
    CHECK(max_abs_diff(a, b) == 0.0);
}

TEST_CASE("generate_video: moving one box changes the output") {
    GeneratorConfig cfg = mini_config();
    GeneratorState state = GeneratorState::init(cfg, 22);
    LatentPair z = sample_latents(cfg, 10);
    FrameLayout layout = two_instance_layout();
    FrameLayout moved = layout;
    moved.instances[0].box = BoundingBox(0.2, 0.25, 0.55, 0.7);
    CoordinateGrid grid = CoordinateGrid::uniform(2, 16, 16);
    CHECK(l2_diff(generate_video(state, z, layout, grid),
                  generate_video(state, z, moved, grid)) > 0.0);
}

TEST_CASE("motion latent: frame 1 fixed, later frames diverge") {
    GeneratorConfig cfg = mini_config();
    GeneratorState state = GeneratorState::init(cfg, 23);
    FrameLayout layout = two_instance_layout();
    CoordinateGrid grid = CoordinateGrid::uniform(6, 16, 16);

    LatentPair za = sample_latents(cfg, 30);
    LatentPair zb = za;
    Rng rng(31);
    zb.z_motion = rng.normal_tensor({cfg.z_motion_dim});

    Tensor ca = generate_video(state, za, layout, grid);
    Tensor cb = generate_video(state, zb, layout, grid);

    std::vector<double> diff(6, 0.0);
    for (int t = 0; t < 6; ++t) {
        double s = 0.0;
        for (int c = 0; c < 3; ++c)
            for (int i = 0; i < 16; ++i)
                for (int j = 0; j < 16; ++j) {
                    double d = ca.at(t, c, i, j) - cb.at(t, c, i, j);
                    s += d * d;
                }
        diff[t] = std::sqrt(s);
    }
    CHECK(diff[0] == 0.0);  // motion only modulates the time term
    CHECK(diff[5] > diff[1]);
    double early = (diff[0] + diff[1] + diff[2]) / 3.0;
    double late = (diff[3] + diff[4] + diff[5]) / 3.0;
    CHECK(late > early);
}

TEST_CASE("generate_video: grid/state resolution mismatch is a configuration error") {
    GeneratorConfig cfg = mini_config();
    GeneratorState state = GeneratorState::init(cfg, 24);
    LatentPair z = sample_latents(cfg, 11);
    CoordinateGrid grid = CoordinateGrid::uniform(2, 8, 8);
    CHECK_THROWS_AS(generate_video(state, z, FrameLayout{}, grid), ConfigError);
}

TEST_CASE("generator gradients: z_content path matches finite differences") {
    GeneratorConfig cfg = mini_config();
    cfg.resolution = 8;
    cfg.base_resolution = 4;
    GeneratorState state = GeneratorState::init(cfg, 25);
    FrameLayout layout;
    layout.instances.push_back({2, 0, BoundingBox(0.2, 0.2, 0.8, 0.8)});
    CoordinateGrid grid = CoordinateGrid::uniform(2, 8, 8);
    LatentPair z = sample_latents(cfg, 12);
    Rng rng(26);
    Tensor proj = rng.normal_tensor({2, 3, 8, 8});

    Tape tape;
    BoundParams p = bind(tape, state.params, false);
    Var zc = tape.leaf(z.z_content, true);
    Var zm = tape.leaf(z.z_motion, true);
    Var clip = generate_frames(tape, p, cfg, zc, zm, layout, grid,
                               ConditioningMode::kLayoutIdentity);
    Var s = ad::dot_const(clip, proj);
    tape.backward(s);
    Tensor gz = tape.grad(zc);
    Tensor gm = tape.grad(zm);

    auto eval = [&]() {
        Tensor clip2 = generate_video(state, z, layout, grid);
        double acc = 0.0;
        for (int64_t i = 0; i < clip2.size(); ++i) acc += clip2[i] * proj[i];
        return acc;
    };
    for (int64_t i = 0; i < z.z_content.size(); ++i) {
        double fd = movgan::test::central_diff(eval, z.z_content, i);
        REQUIRE(movgan::test::rel_err(gz[i], fd) < 1e-3);
    }
    for (int64_t i = 0; i < z.z_motion.size(); ++i) {
        double fd = movgan::test::central_diff(eval, z.z_motion, i);
        if (std::abs(fd) < 1e-10 && std::abs(gm[i]) < 1e-10) continue;
        REQUIRE(movgan::test::rel_err(gm[i], fd) < 1e-3);
    }
}
