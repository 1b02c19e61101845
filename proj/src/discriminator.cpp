#include "movgan/discriminator.hpp"

#include <Eigen/Core>
#include <cmath>

#include "movgan/errors.hpp"
#include "movgan/rng.hpp"

namespace movgan {

void DiscriminatorConfig::validate() const {
    if (categories < 1 || embed_dim < 1 || global_channels < 1 || local_channels < 1 ||
        label_channels < 1 || head_channels < 1 || max_instances < 1)
        throw ConfigError("discriminator dimensions must be positive");
    if (resolution % 4 != 0 || resolution < 8)
        throw ConfigError("discriminator resolution must be a multiple of 4, >= 8");
    if (crop_size < 4 || crop_size % 2 != 0)
        throw ConfigError("crop_size must be an even number >= 4");
    if (clip_length < 1) throw ConfigError("clip_length must be >= 1");
}

double quantize_f16(double v) {
    return static_cast<double>(static_cast<float>(Eigen::half(static_cast<float>(v))));
}

Tensor quantize_f16(const Tensor& t) {
    Tensor q = t;
    for (int64_t i = 0; i < q.size(); ++i) q[i] = quantize_f16(q[i]);
    return q;
}

NamedParams DiscriminatorState::effective_params() const {
    if (!config.half_precision) return params;
    NamedParams q;
    for (const auto& [name, tensor] : params.items) q.add(name, quantize_f16(tensor));
    return q;
}

namespace {

Var linear(Tape&, Var x, const BoundParams& p, const std::string& prefix) {
    Var w = p[prefix + ".w"];
    const int fan_in = w.value().dim(0);
    Var y = ad::matmul(x, ad::scale(w, 1.0 / std::sqrt(static_cast<double>(fan_in))));
    return ad::add_rowvec(y, p[prefix + ".b"]);
}

Var conv(Tape&, Var x, const BoundParams& p, const std::string& prefix, int stride, int pad) {
    Var w = p[prefix + ".w"];
    const auto& ws = w.value().shape();
    const int fan_in = ws[1] * ws[2] * ws[3];
    return ad::conv2d(x, ad::scale(w, 1.0 / std::sqrt(static_cast<double>(fan_in))),
                      p[prefix + ".b"], stride, pad);
}

// Two stride-2 stages then global pool + linear; shared by both heads.
Var classifier_head(Tape& tape, const BoundParams& p, Var x, const std::string& prefix) {
    Var h = ad::leaky_relu(conv(tape, x, p, prefix + ".0", 2, 1));
    h = ad::leaky_relu(conv(tape, h, p, prefix + ".1", 2, 1));
    Var pooled = ad::global_avg_pool(h);
    Var logit = linear(tape, pooled, p, prefix + ".out");
    return ad::reshape(logit, {});
}

}  // namespace

Var fuse_layout(Tape& tape, const BoundParams& p, const DiscriminatorConfig& cfg, Var frame,
                const FrameLayout& layout, ConditioningMode mode) {
    layout.validate(cfg.categories, cfg.max_instances);
    const int fr = cfg.feature_resolution();

    // Global branch: rasterized layout (empty raster when geometry is hidden).
    FrameLayout raster_layout = mode_uses_boxes(mode) ? layout : FrameLayout{};
    Var raster = ad::rasterize(p["label_table"], raster_layout, cfg.resolution, cfg.resolution);
    Var g = ad::reshape(raster, {1, cfg.embed_dim, cfg.resolution, cfg.resolution});
    g = ad::leaky_relu(conv(tape, g, p, "glob.0", 2, 1));
    g = ad::leaky_relu(conv(tape, g, p, "glob.1", 2, 1));
    Var global_feat = ad::reshape(g, {cfg.global_channels, fr, fr});

    // Local branch: crop each instance from the frame, encode, scatter back.
    Var local_feat{};
    if (mode_uses_boxes(mode) && !layout.instances.empty()) {
        std::vector<Var> placed;
        for (int idx : canonical_order(layout)) {
            const LayoutInstance& inst = layout.instances[idx];
            Var crop = ad::stn_crop(frame, inst.box, cfg.crop_size, cfg.crop_size);
            Var c = ad::reshape(crop, {1, 3, cfg.crop_size, cfg.crop_size});
            c = ad::leaky_relu(conv(tape, c, p, "loc.0", 2, 1));
            c = ad::leaky_relu(conv(tape, c, p, "loc.1", 1, 1));
            Var flat = ad::reshape(c, {cfg.local_channels, cfg.crop_size / 2, cfg.crop_size / 2});
            placed.push_back(ad::stn_place(flat, inst.box, fr, fr));
        }
        local_feat = placed.size() == 1 ? placed[0] : ad::add_many(placed);
    } else {
        local_feat = tape.constant(Tensor({cfg.local_channels, fr, fr}));
    }

    // Label plane: category multi-hot projected and broadcast, used by the
    // label-only ablation modes; zero otherwise.
    Var label_feat{};
    if (mode_uses_label_vector(mode)) {
        Tensor multihot({1, cfg.categories});
        for (const auto& inst : layout.instances) multihot.at(0, inst.category_id) = 1.0;
        Var code = ad::matmul(tape.constant(multihot),
                              ad::scale(p["label_proj.w"],
                                        1.0 / std::sqrt(static_cast<double>(cfg.categories))));
        Var plane = ad::broadcast_rows(ad::reshape(code, {cfg.label_channels}), fr * fr);
        // [fr*fr, C] -> [C, fr, fr]
        Tensor perm({cfg.label_channels, fr, fr});
        const Tensor& pv = plane.value();
        for (int i = 0; i < fr; ++i)
            for (int j = 0; j < fr; ++j)
                for (int c = 0; c < cfg.label_channels; ++c)
                    perm.at(c, i, j) = pv.at(i * fr + j, c);
        int pid = plane.id;
        int oid = static_cast<int>(tape.node_count());
        const int lc = cfg.label_channels;
        label_feat = tape.make_node(std::move(perm), {pid}, [pid, oid, fr, lc](Tape& tp) {
            const Tensor& gg = tp.grad_buffer(oid);
            if (!tp.requires_grad(Var{&tp, pid})) return;
            Tensor& gp = tp.grad_buffer(pid);
            for (int i = 0; i < fr; ++i)
                for (int j = 0; j < fr; ++j)
                    for (int c = 0; c < lc; ++c) gp.at(i * fr + j, c) += gg.at(c, i, j);
        });
    } else {
        label_feat = tape.constant(Tensor({cfg.label_channels, fr, fr}));
    }

    return ad::concat({global_feat, local_feat, label_feat}, 0);
}

Var score_image(Tape& tape, const BoundParams& p, const DiscriminatorConfig& cfg, Var frame,
                Var fused) {
    const int fr = cfg.feature_resolution();
    Var small = ad::avg_pool(ad::reshape(frame, {1, 3, cfg.resolution, cfg.resolution}), 4);
    Var x = ad::concat({small, ad::reshape(fused, {1, cfg.fused_channels(), fr, fr})}, 1);
    return classifier_head(tape, p, x, "di");
}

Tensor delta_plane_tensor(const DiscriminatorConfig& cfg, int t1, int t2) {
    const int fr = cfg.feature_resolution();
    const double gap =
        cfg.clip_length > 1
            ? static_cast<double>(t1 >= t2 ? t1 - t2 : t2 - t1) / (cfg.clip_length - 1)
            : 0.0;
    return Tensor::full({1, 1, fr, fr}, gap);
}

Var score_motion(Tape& tape, const BoundParams& p, const DiscriminatorConfig& cfg, Var frame1,
                 Var frame2, Var delta_plane, Var fused1, Var fused2) {
    const int fr = cfg.feature_resolution();
    Var f1 = ad::avg_pool(ad::reshape(frame1, {1, 3, cfg.resolution, cfg.resolution}), 4);
    Var f2 = ad::avg_pool(ad::reshape(frame2, {1, 3, cfg.resolution, cfg.resolution}), 4);
    // Channel order is fixed: [dt | frame1 RGB | frame2 RGB] = 7 base channels.
    Var x = ad::concat({delta_plane, f1, f2,
                        ad::reshape(fused1, {1, cfg.fused_channels(), fr, fr}),
                        ad::reshape(fused2, {1, cfg.fused_channels(), fr, fr})},
                       1);
    return classifier_head(tape, p, x, "dm");
}

Var aggregate(Tape&, Var d_image1, Var d_image2, Var d_motion) {
    return ad::add(ad::scale(ad::add(d_image1, d_image2), 0.25), ad::scale(d_motion, 0.5));
}

Var discriminate(Tape& tape, const BoundParams& p, const DiscriminatorConfig& cfg, Var frame1,
                 Var frame2, const FrameLayout& layout1, const FrameLayout& layout2, int t1,
                 int t2, ConditioningMode mode) {
    if (t1 < 0 || t2 < 0 || t1 >= cfg.clip_length || t2 >= cfg.clip_length)
        throw InputError("frame indices (" + std::to_string(t1) + ", " + std::to_string(t2) +
                         ") outside clip of length " + std::to_string(cfg.clip_length));
    Var fused1 = fuse_layout(tape, p, cfg, frame1, layout1, mode);
    Var fused2 = fuse_layout(tape, p, cfg, frame2, layout2, mode);
    Var d1 = score_image(tape, p, cfg, frame1, fused1);
    Var d2 = score_image(tape, p, cfg, frame2, fused2);
    Var delta = tape.constant(delta_plane_tensor(cfg, t1, t2));
    Var dm = score_motion(tape, p, cfg, frame1, frame2, delta, fused1, fused2);
    return aggregate(tape, d1, d2, dm);
}

DiscriminatorState DiscriminatorState::init(const DiscriminatorConfig& config, uint64_t seed) {
    config.validate();
    Rng rng(derive_seed(seed, 0x646973));
    DiscriminatorState state;
    state.config = config;
    NamedParams& p = state.params;

    p.add("label_table", rng.normal_tensor({config.categories, config.embed_dim}));
    p.add("label_proj.w", rng.normal_tensor({config.categories, config.label_channels}));

    p.add("glob.0.w", rng.normal_tensor({config.global_channels, config.embed_dim, 3, 3}));
    p.add("glob.0.b", Tensor({config.global_channels}));
    p.add("glob.1.w",
          rng.normal_tensor({config.global_channels, config.global_channels, 3, 3}));
    p.add("glob.1.b", Tensor({config.global_channels}));

    p.add("loc.0.w", rng.normal_tensor({config.local_channels, 3, 3, 3}));
    p.add("loc.0.b", Tensor({config.local_channels}));
    p.add("loc.1.w", rng.normal_tensor({config.local_channels, config.local_channels, 3, 3}));
    p.add("loc.1.b", Tensor({config.local_channels}));

    const int di_in = 3 + config.fused_channels();
    p.add("di.0.w", rng.normal_tensor({config.head_channels, di_in, 3, 3}));
    p.add("di.0.b", Tensor({config.head_channels}));
    p.add("di.1.w", rng.normal_tensor({config.head_channels, config.head_channels, 3, 3}));
    p.add("di.1.b", Tensor({config.head_channels}));
    p.add("di.out.w", rng.normal_tensor({config.head_channels, 1}));
    p.add("di.out.b", Tensor({1}));

    const int dm_in = 7 + 2 * config.fused_channels();
    p.add("dm.0.w", rng.normal_tensor({config.head_channels, dm_in, 3, 3}));
    p.add("dm.0.b", Tensor({config.head_channels}));
    p.add("dm.1.w", rng.normal_tensor({config.head_channels, config.head_channels, 3, 3}));
    p.add("dm.1.b", Tensor({config.head_channels}));
    p.add("dm.out.w", rng.normal_tensor({config.head_channels, 1}));
    p.add("dm.out.b", Tensor({1}));
    return state;
}

Tensor fuse_layout(const DiscriminatorState& state, const Tensor& frame,
                   const FrameLayout& layout, ConditioningMode mode) {
    Tape tape;
    BoundParams p = bind(tape, state.effective_params(), false);
    return fuse_layout(tape, p, state.config, tape.constant(frame), layout, mode).value();
}

double score_image(const DiscriminatorState& state, const Tensor& frame, const Tensor& fused) {
    Tape tape;
    BoundParams p = bind(tape, state.effective_params(), false);
    return score_image(tape, p, state.config, tape.constant(frame), tape.constant(fused))
        .value()[0];
}

double score_motion(const DiscriminatorState& state, const FramePairSample& pair,
                    const Tensor& fused1, const Tensor& fused2) {
    Tape tape;
    BoundParams p = bind(tape, state.effective_params(), false);
    Var delta = tape.constant(delta_plane_tensor(state.config, pair.t1, pair.t2));
    return score_motion(tape, p, state.config, tape.constant(pair.frame1),
                        tape.constant(pair.frame2), delta, tape.constant(fused1),
                        tape.constant(fused2))
        .value()[0];
}

double aggregate(double d_image1, double d_image2, double d_motion) {
    return 0.25 * (d_image1 + d_image2) + 0.5 * d_motion;
}

double discriminate(const DiscriminatorState& state, const Tensor& clip,
                    const std::vector<FrameLayout>& layouts, int t1, int t2,
                    ConditioningMode mode) {
    if (clip.rank() != 4 || clip.dim(1) != 3)
        throw InputError("discriminate expects a [T, 3, H, W] clip");
    const int frames = clip.dim(0);
    if (t1 < 0 || t2 < 0 || t1 >= frames || t2 >= frames)
        throw InputError("frame pair (" + std::to_string(t1) + ", " + std::to_string(t2) +
                         ") outside clip of length " + std::to_string(frames));
    if (static_cast<int>(layouts.size()) != frames)
        throw InputError("need one layout per frame");

    auto frame_at = [&](int t) {
        Tensor f({3, clip.dim(2), clip.dim(3)});
        for (int c = 0; c < 3; ++c)
            for (int i = 0; i < clip.dim(2); ++i)
                for (int j = 0; j < clip.dim(3); ++j) f.at(c, i, j) = clip.at(t, c, i, j);
        return f;
    };
    Tape tape;
    BoundParams p = bind(tape, state.effective_params(), false);
    Var f1 = tape.constant(frame_at(t1));
    Var f2 = tape.constant(frame_at(t2));
    return discriminate(tape, p, state.config, f1, f2, layouts[static_cast<size_t>(t1)],
                        layouts[static_cast<size_t>(t2)], t1, t2, mode)
        .value()[0];
}

}  // namespace movgan
