#include "movgan/generator.hpp"

#include <cmath>

#include "movgan/errors.hpp"
#include "movgan/rng.hpp"

namespace movgan {

const char* conditioning_mode_name(ConditioningMode mode) {
    switch (mode) {
        case ConditioningMode::kActionLabel: return "action_label";
        case ConditioningMode::kObjectLabels: return "multi_class_object_label";
        case ConditioningMode::kObjectLabelsCrop: return "multi_class_object_label+center_crop";
        case ConditioningMode::kLayout: return "multi_object_layout";
        case ConditioningMode::kLayoutIdentity: return "multi_object_layout+identification";
    }
    return "multi_object_layout+identification";
}

ConditioningMode conditioning_mode_from_name(const std::string& name) {
    for (ConditioningMode m :
         {ConditioningMode::kActionLabel, ConditioningMode::kObjectLabels,
          ConditioningMode::kObjectLabelsCrop, ConditioningMode::kLayout,
          ConditioningMode::kLayoutIdentity})
        if (name == conditioning_mode_name(m)) return m;
    throw ConfigError("unknown conditioning_mode \"" + name + "\"");
}

void FrequencyConfig::validate() const {
    if (!(sigma_x > 0.0 && sigma_y > 0.0 && sigma_t > 0.0))
        throw ConfigError("coordinate frequencies must be positive");
}

int GeneratorConfig::upsample_stages() const {
    int stages = 0;
    int r = base_resolution;
    while (r < resolution) {
        r *= 2;
        ++stages;
    }
    return stages;
}

void GeneratorConfig::validate() const {
    frequencies.validate();
    if (categories < 1 || embed_dim < 1 || z_content_dim < 1 || z_motion_dim < 1 ||
        id_embed_dim < 1 || style_hidden < 1 || local_channels < 1 || local_seed < 1 ||
        global_channels < 1 || decoder_channels < 1 || synth_hidden < 1 || motion_dim < 1 ||
        max_instances < 1 || clip_length < 1)
        throw ConfigError("generator dimensions must be positive");
    if (style_layers < 1) throw ConfigError("style_layers must be >= 1");
    if (base_resolution < 2) throw ConfigError("base_resolution must be >= 2");
    int r = base_resolution;
    while (r < resolution) r *= 2;
    if (r != resolution)
        throw ConfigError("resolution must be base_resolution * 2^k, got " +
                          std::to_string(resolution));
}

CoordinateGrid CoordinateGrid::uniform(int frames, int height, int width) {
    if (frames < 1 || height < 1 || width < 1)
        throw InputError("grid dimensions must be positive");
    CoordinateGrid g;
    for (int k = 0; k < frames; ++k) g.ts.push_back(static_cast<double>(k) / frames);
    for (int i = 0; i < height; ++i) g.ys.push_back((i + 0.5) / height);
    for (int j = 0; j < width; ++j) g.xs.push_back((j + 0.5) / width);
    return g;
}

void CoordinateGrid::validate() const {
    if (ts.empty() || ys.empty() || xs.empty()) throw InputError("empty coordinate grid");
    auto strictly_increasing = [](const std::vector<double>& v) {
        for (size_t i = 1; i < v.size(); ++i)
            if (!(v[i] > v[i - 1])) return false;
        return true;
    };
    if (!strictly_increasing(ts) || !strictly_increasing(ys) || !strictly_increasing(xs))
        throw InputError("coordinate grids must be strictly increasing");
}

void NamedParams::add(const std::string& name, Tensor t) {
    for (auto& [n, _] : items)
        if (n == name) throw ConfigError("duplicate parameter \"" + name + "\"");
    items.emplace_back(name, std::move(t));
}

Tensor& NamedParams::get(const std::string& name) {
    for (auto& [n, t] : items)
        if (n == name) return t;
    throw ConfigError("missing parameter \"" + name + "\"");
}

const Tensor& NamedParams::get(const std::string& name) const {
    for (auto& [n, t] : items)
        if (n == name) return t;
    throw ConfigError("missing parameter \"" + name + "\"");
}

bool NamedParams::has(const std::string& name) const {
    for (auto& [n, _] : items)
        if (n == name) return true;
    return false;
}

Var BoundParams::operator[](const std::string& name) const {
    auto it = vars.find(name);
    if (it == vars.end()) throw ConfigError("parameter \"" + name + "\" not bound");
    return it->second;
}

BoundParams bind(Tape& tape, const NamedParams& params, bool requires_grad) {
    BoundParams bound;
    for (const auto& [name, tensor] : params.items)
        bound.vars.emplace(name, tape.leaf(tensor, requires_grad));
    return bound;
}

namespace {

// Runtime weight scaling (equalized learning rate): parameters are stored
// unit-normal and multiplied by 1/sqrt(fan_in) at use, which keeps Adam's
// per-parameter step size meaningful at lr 5e-3.
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

// [P, C] rows -> [C, h, w] image (P = h * w).
Var rows_to_chw(Tape& tape, Var rows, int h, int w) {
    const Tensor& rv = rows.value();
    if (rv.rank() != 2 || rv.dim(0) != h * w) throw ConfigError("rows_to_chw shape mismatch");
    const int c = rv.dim(1);
    Tensor out({c, h, w});
    for (int i = 0; i < h; ++i)
        for (int j = 0; j < w; ++j)
            for (int k = 0; k < c; ++k) out.at(k, i, j) = rv.at(i * w + j, k);
    int rid = rows.id;
    int oid = static_cast<int>(tape.node_count());
    return tape.make_node(std::move(out), {rid}, [rid, oid, h, w, c](Tape& tp) {
        const Tensor& g = tp.grad_buffer(oid);
        if (!tp.requires_grad(Var{&tp, rid})) return;
        Tensor& gr = tp.grad_buffer(rid);
        for (int i = 0; i < h; ++i)
            for (int j = 0; j < w; ++j)
                for (int k = 0; k < c; ++k) gr.at(i * w + j, k) += g.at(k, i, j);
    });
}

// [C, h, w] image -> [P, C] rows.
Var chw_to_rows(Tape& tape, Var x) {
    const Tensor& xv = x.value();
    if (xv.rank() != 3) throw ConfigError("chw_to_rows expects [C,h,w]");
    const int c = xv.dim(0), h = xv.dim(1), w = xv.dim(2);
    Tensor out({h * w, c});
    for (int i = 0; i < h; ++i)
        for (int j = 0; j < w; ++j)
            for (int k = 0; k < c; ++k) out.at(i * w + j, k) = xv.at(k, i, j);
    int xid = x.id;
    int oid = static_cast<int>(tape.node_count());
    return tape.make_node(std::move(out), {xid}, [xid, oid, h, w, c](Tape& tp) {
        const Tensor& g = tp.grad_buffer(oid);
        if (!tp.requires_grad(Var{&tp, xid})) return;
        Tensor& gx = tp.grad_buffer(xid);
        for (int i = 0; i < h; ++i)
            for (int j = 0; j < w; ++j)
                for (int k = 0; k < c; ++k) gx.at(k, i, j) += g.at(i * w + j, k);
    });
}

// Time-independent slice of the first layer over the spatial grid:
// rows[i*W+j, k] = sigma_x*wx[k]*x_j + sigma_y*wy[k]*y_i + b[k].
Var static_coords(Tape& tape, Var wx, Var wy, Var bias, const FrequencyConfig& freq,
                  const std::vector<double>& xs, const std::vector<double>& ys) {
    const int hidden = wx.value().dim(0);
    const int w = static_cast<int>(xs.size()), h = static_cast<int>(ys.size());
    Tensor out({h * w, hidden});
    for (int i = 0; i < h; ++i)
        for (int j = 0; j < w; ++j)
            for (int k = 0; k < hidden; ++k)
                out.at(i * w + j, k) = freq.sigma_x * wx.value().at(k) * xs[j] +
                                       freq.sigma_y * wy.value().at(k) * ys[i] +
                                       bias.value().at(k);
    int wxid = wx.id, wyid = wy.id, bid = bias.id;
    const double sx = freq.sigma_x, sy = freq.sigma_y;
    std::vector<double> xs_c = xs, ys_c = ys;
    int oid = static_cast<int>(tape.node_count());
    return tape.make_node(
        std::move(out), {wxid, wyid, bid}, [=](Tape& tp) {
            const Tensor& g = tp.grad_buffer(oid);
            const int wn = static_cast<int>(xs_c.size()), hn = static_cast<int>(ys_c.size());
            if (tp.requires_grad(Var{&tp, wxid})) {
                Tensor& gwx = tp.grad_buffer(wxid);
                for (int i = 0; i < hn; ++i)
                    for (int j = 0; j < wn; ++j)
                        for (int k = 0; k < hidden; ++k)
                            gwx.at(k) += sx * xs_c[j] * g.at(i * wn + j, k);
            }
            if (tp.requires_grad(Var{&tp, wyid})) {
                Tensor& gwy = tp.grad_buffer(wyid);
                for (int i = 0; i < hn; ++i)
                    for (int j = 0; j < wn; ++j)
                        for (int k = 0; k < hidden; ++k)
                            gwy.at(k) += sy * ys_c[i] * g.at(i * wn + j, k);
            }
            if (tp.requires_grad(Var{&tp, bid})) {
                Tensor& gb = tp.grad_buffer(bid);
                for (int i = 0; i < hn; ++i)
                    for (int j = 0; j < wn; ++j)
                        for (int k = 0; k < hidden; ++k) gb.at(k) += g.at(i * wn + j, k);
            }
        });
}

// [d] vector -> [1, d, h, w] constant plane per channel.
Var vec_to_plane(Tape& tape, Var v, int h, int w) {
    const int d = v.value().dim(0);
    Var rows = ad::broadcast_rows(v, h * w);
    Var chw = rows_to_chw(tape, rows, h, w);
    return ad::reshape(chw, {1, d, h, w});
}

}  // namespace

bool mode_uses_boxes(ConditioningMode mode) {
    return mode == ConditioningMode::kLayout || mode == ConditioningMode::kLayoutIdentity;
}

bool mode_uses_label_vector(ConditioningMode mode) {
    return mode == ConditioningMode::kObjectLabels || mode == ConditioningMode::kObjectLabelsCrop;
}

Var encode_global(Tape& tape, const BoundParams& p, const GeneratorConfig& cfg, Var z_content,
                  const FrameLayout& layout, ConditioningMode mode) {
    layout.validate(cfg.categories, cfg.max_instances);
    // Label-only and unconditional modes rasterize an empty layout: geometry
    // is hidden and the canvas is exactly zero.
    FrameLayout raster_layout = mode_uses_boxes(mode) ? layout : FrameLayout{};
    Var raster = ad::rasterize(p["label_table"], raster_layout, cfg.resolution, cfg.resolution);
    Var x = ad::reshape(raster, {1, cfg.embed_dim, cfg.resolution, cfg.resolution});
    const int stages = cfg.upsample_stages();
    for (int s = 0; s < stages; ++s)
        x = ad::leaky_relu(conv(tape, x, p, "enc." + std::to_string(s), 2, 1));

    Var z_row = ad::reshape(z_content, {1, cfg.z_content_dim});
    if (mode_uses_label_vector(mode)) {
        Tensor multihot({1, cfg.categories});
        for (const auto& inst : layout.instances) multihot.at(0, inst.category_id) = 1.0;
        Var code = ad::matmul(tape.constant(multihot),
                              ad::scale(p["label_proj.w"],
                                        1.0 / std::sqrt(static_cast<double>(cfg.categories))));
        z_row = ad::add(z_row, code);
    }
    Var z_plane = vec_to_plane(tape, ad::reshape(z_row, {cfg.z_content_dim}),
                               cfg.base_resolution, cfg.base_resolution);
    return ad::concat({x, z_plane}, 1);
}

Var encode_local(Tape& tape, const BoundParams& p, const GeneratorConfig& cfg,
                 const FrameLayout& layout, ConditioningMode mode) {
    layout.validate(cfg.categories, cfg.max_instances);
    const int h0 = cfg.base_resolution;
    if (!mode_uses_boxes(mode) || layout.instances.empty())
        return tape.constant(Tensor({1, cfg.local_channels, h0, h0}));

    std::vector<Var> placed;
    for (int idx : canonical_order(layout)) {
        const LayoutInstance& inst = layout.instances[idx];
        Var id_row = mode == ConditioningMode::kLayoutIdentity
                         ? ad::select_rows(p["id_table"], {inst.category_id})
                         : ad::reshape(p["generic_id"], {1, cfg.id_embed_dim});
        Var h = id_row;
        for (int l = 0; l < cfg.style_layers; ++l)
            h = ad::leaky_relu(linear(tape, h, p, "style." + std::to_string(l)));
        Var seed = linear(tape, h, p, "local.proj");
        Var feat = ad::reshape(seed, {cfg.local_channels, cfg.local_seed, cfg.local_seed});
        placed.push_back(ad::stn_place(feat, inst.box, h0, h0));
    }
    Var summed = placed.size() == 1 ? placed[0] : ad::add_many(placed);
    return ad::reshape(summed, {1, cfg.local_channels, h0, h0});
}

Var motion_features(Tape& tape, const BoundParams& p, const GeneratorConfig& cfg, Var z_motion) {
    Var h = ad::reshape(z_motion, {1, cfg.z_motion_dim});
    h = ad::leaky_relu(linear(tape, h, p, "motion.0"));
    h = linear(tape, h, p, "motion.1");
    return ad::reshape(h, {cfg.motion_dim});
}

Var first_layer(Tape& tape, const BoundParams& p, const GeneratorConfig& cfg,
                const CoordinateGrid& grid) {
    grid.validate();
    const int h = static_cast<int>(grid.ys.size()), w = static_cast<int>(grid.xs.size());
    Var statics = static_coords(tape, p["inr.wx"], p["inr.wy"], p["inr.b"], cfg.frequencies,
                                grid.xs, grid.ys);
    std::vector<Var> per_frame;
    for (double t : grid.ts) {
        Var time_term =
            ad::broadcast_rows(ad::scale(p["inr.wt"], cfg.frequencies.sigma_t * t), h * w);
        per_frame.push_back(ad::add(statics, time_term));
    }
    Var stacked = ad::stack0(per_frame);  // [T, H*W, hidden]
    return ad::reshape(stacked, {static_cast<int>(grid.ts.size()), h, w, cfg.synth_hidden});
}

Var generate_frames(Tape& tape, const BoundParams& p, const GeneratorConfig& cfg, Var z_content,
                    Var z_motion, const FrameLayout& layout, const CoordinateGrid& grid,
                    ConditioningMode mode) {
    grid.validate();
    const int h = static_cast<int>(grid.ys.size()), w = static_cast<int>(grid.xs.size());
    if (h != cfg.resolution || w != cfg.resolution)
        throw ConfigError("grid resolution " + std::to_string(h) + "x" + std::to_string(w) +
                          " does not match generator resolution " +
                          std::to_string(cfg.resolution));

    Var global_feat = encode_global(tape, p, cfg, z_content, layout, mode);
    Var local_feat = encode_local(tape, p, cfg, layout, mode);
    Var x = ad::concat({global_feat, local_feat}, 1);
    const int stages = cfg.upsample_stages();
    for (int s = 0; s < stages; ++s) {
        // Skip-connection block, no normalization.
        Var up = ad::upsample2x(x);
        Var main = ad::leaky_relu(conv(tape, up, p, "dec." + std::to_string(s) + ".conv", 1, 1));
        Var skip = conv(tape, up, p, "dec." + std::to_string(s) + ".skip", 1, 0);
        x = ad::add(main, skip);
    }
    Var content_rows =
        chw_to_rows(tape, ad::reshape(x, {cfg.decoder_channels, cfg.resolution, cfg.resolution}));

    Var statics = static_coords(tape, p["inr.wx"], p["inr.wy"], p["inr.b"], cfg.frequencies,
                                grid.xs, grid.ys);

    // Motion modulation touches only the time-dependent activation, so the
    // t = 0 frame is a pure function of (z_I, L).
    Var fm = motion_features(tape, p, cfg, z_motion);
    Var fm_row = ad::reshape(fm, {1, cfg.motion_dim});
    Var mod = ad::reshape(ad::matmul(fm_row, p["motion.scale"]), {cfg.synth_hidden});
    Var vel = ad::reshape(ad::matmul(fm_row, p["motion.vel"]), {cfg.synth_hidden});
    Var slope = ad::add(
        ad::mul(ad::scale(p["inr.wt"], cfg.frequencies.sigma_t), ad::add_scalar(mod, 1.0)), vel);

    std::vector<Var> frames;
    for (double t : grid.ts) {
        Var rows = ad::add(statics, ad::broadcast_rows(ad::scale(slope, t), h * w));
        Var x_in = ad::concat({content_rows, rows}, 1);
        Var h1 = ad::sin_act(linear(tape, x_in, p, "synth.0"));
        Var h2 = ad::sin_act(linear(tape, h1, p, "synth.1"));
        Var rgb = ad::tanh_act(linear(tape, h2, p, "synth.out"));
        frames.push_back(rows_to_chw(tape, rgb, h, w));
    }
    return ad::stack0(frames);  // [T, 3, H, W]
}

GeneratorState GeneratorState::init(const GeneratorConfig& config, uint64_t seed) {
    config.validate();
    Rng rng(derive_seed(seed, 0x67656e));
    GeneratorState state;
    state.config = config;
    NamedParams& p = state.params;

    p.add("label_table", rng.normal_tensor({config.categories, config.embed_dim}));
    p.add("id_table", rng.normal_tensor({config.categories, config.id_embed_dim}));
    p.add("generic_id", rng.normal_tensor({config.id_embed_dim}));
    p.add("label_proj.w", rng.normal_tensor({config.categories, config.z_content_dim}));

    const int stages = config.upsample_stages();
    for (int s = 0; s < stages; ++s) {
        const int in_ch = s == 0 ? config.embed_dim : config.global_channels;
        p.add("enc." + std::to_string(s) + ".w",
              rng.normal_tensor({config.global_channels, in_ch, 3, 3}));
        p.add("enc." + std::to_string(s) + ".b", Tensor({config.global_channels}));
    }

    for (int l = 0; l < config.style_layers; ++l) {
        const int in_dim = l == 0 ? config.id_embed_dim : config.style_hidden;
        p.add("style." + std::to_string(l) + ".w",
              rng.normal_tensor({in_dim, config.style_hidden}));
        p.add("style." + std::to_string(l) + ".b", Tensor({config.style_hidden}));
    }
    const int seed_len = config.local_channels * config.local_seed * config.local_seed;
    p.add("local.proj.w", rng.normal_tensor({config.style_hidden, seed_len}));
    p.add("local.proj.b", Tensor({seed_len}));

    const int dec_in0 = config.global_channels + config.z_content_dim + config.local_channels;
    for (int s = 0; s < stages; ++s) {
        const int in_ch = s == 0 ? dec_in0 : config.decoder_channels;
        p.add("dec." + std::to_string(s) + ".conv.w",
              rng.normal_tensor({config.decoder_channels, in_ch, 3, 3}));
        p.add("dec." + std::to_string(s) + ".conv.b", Tensor({config.decoder_channels}));
        p.add("dec." + std::to_string(s) + ".skip.w",
              rng.normal_tensor({config.decoder_channels, in_ch, 1, 1}));
        p.add("dec." + std::to_string(s) + ".skip.b", Tensor({config.decoder_channels}));
    }

    p.add("inr.wx", rng.normal_tensor({config.synth_hidden}));
    p.add("inr.wy", rng.normal_tensor({config.synth_hidden}));
    p.add("inr.wt", rng.normal_tensor({config.synth_hidden}));
    p.add("inr.b",
          rng.uniform_tensor({config.synth_hidden}, -3.14159265358979, 3.14159265358979));

    p.add("motion.0.w", rng.normal_tensor({config.z_motion_dim, config.style_hidden}));
    p.add("motion.0.b", Tensor({config.style_hidden}));
    p.add("motion.1.w", rng.normal_tensor({config.style_hidden, config.motion_dim}));
    p.add("motion.1.b", Tensor({config.motion_dim}));
    // Small but nonzero so motion gradients flow from the first step.
    p.add("motion.scale", rng.normal_tensor({config.motion_dim, config.synth_hidden}, 0.05));
    p.add("motion.vel", rng.normal_tensor({config.motion_dim, config.synth_hidden}, 0.05));

    p.add("synth.0.w",
          rng.normal_tensor({config.decoder_channels + config.synth_hidden, config.synth_hidden}));
    p.add("synth.0.b", Tensor({config.synth_hidden}));
    p.add("synth.1.w", rng.normal_tensor({config.synth_hidden, config.synth_hidden}));
    p.add("synth.1.b", Tensor({config.synth_hidden}));
    p.add("synth.out.w", rng.normal_tensor({config.synth_hidden, 3}));
    p.add("synth.out.b", Tensor({3}));
    return state;
}

Tensor encode_global(const GeneratorState& state, const Tensor& z_content,
                     const FrameLayout& layout, ConditioningMode mode) {
    Tape tape;
    BoundParams p = bind(tape, state.params, false);
    Var z = tape.constant(z_content);
    return encode_global(tape, p, state.config, z, layout, mode).value();
}

Tensor encode_local(const GeneratorState& state, const FrameLayout& layout,
                    ConditioningMode mode) {
    Tape tape;
    BoundParams p = bind(tape, state.params, false);
    return encode_local(tape, p, state.config, layout, mode).value();
}

Tensor motion_features(const GeneratorState& state, const Tensor& z_motion) {
    Tape tape;
    BoundParams p = bind(tape, state.params, false);
    return motion_features(tape, p, state.config, tape.constant(z_motion)).value();
}

Tensor first_layer(const GeneratorState& state, const CoordinateGrid& grid) {
    Tape tape;
    BoundParams p = bind(tape, state.params, false);
    return first_layer(tape, p, state.config, grid).value();
}

Tensor generate_video(const GeneratorState& state, const LatentPair& z, const FrameLayout& layout,
                      const CoordinateGrid& grid, ConditioningMode mode) {
    if (!z.z_content.all_finite() || !z.z_motion.all_finite())
        throw InputError("latents must be finite");
    Tape tape;
    BoundParams p = bind(tape, state.params, false);
    Var zc = tape.constant(z.z_content);
    Var zm = tape.constant(z.z_motion);
    return generate_frames(tape, p, state.config, zc, zm, layout, grid, mode).value();
}

LatentPair sample_latents(const GeneratorConfig& cfg, uint64_t seed) {
    Rng rng(derive_seed(seed, 0x7a6c6174));
    LatentPair z;
    z.z_content = rng.normal_tensor({cfg.z_content_dim});
    z.z_motion = rng.normal_tensor({cfg.z_motion_dim});
    return z;
}

}  // namespace movgan
