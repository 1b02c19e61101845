#pragma once

#include <vector>

#include "movgan/generator.hpp"
#include "movgan/layout.hpp"
#include "movgan/tensor.hpp"

namespace movgan {

struct DiscriminatorConfig {
    int categories = 36;
    int embed_dim = 8;        // raster embedding width (discriminator's table)
    int resolution = 64;
    int clip_length = 16;     // used to normalize the time-gap plane
    int max_instances = 11;

    int global_channels = 16;  // layout-fusion global branch output
    int local_channels = 16;   // layout-fusion local branch output
    int label_channels = 4;    // label-vector plane (label-only modes)
    int crop_size = 8;         // local branch crop resolution
    int head_channels = 32;    // conv classifier width
    bool half_precision = false;

    // Layout features live at a single fixed resolution, H/4 x W/4.
    int feature_resolution() const { return resolution / 4; }
    int fused_channels() const { return global_channels + local_channels + label_channels; }

    void validate() const;
};

struct DiscriminatorState {
    DiscriminatorConfig config;
    NamedParams params;

    static DiscriminatorState init(const DiscriminatorConfig& config, uint64_t seed);

    // Parameters as seen by the forward pass: a float16 round-trip of the
    // master copy when the half-precision flag is set.
    NamedParams effective_params() const;
};

// Two frames of the same clip plus their time gap.
struct FramePairSample {
    Tensor frame1, frame2;  // [3, H, W] in [-1, 1]
    int t1 = 0, t2 = 0;

    int delta_t() const { return t1 >= t2 ? t1 - t2 : t2 - t1; }
};

// ---- Tape-level pieces ----

// f_t = D_layout(i_t, L_t): global raster encoding plus per-instance
// crop-encode-scatter, concatenated at feature resolution.
// Returns [fused_channels, R/4, R/4].
Var fuse_layout(Tape& tape, const BoundParams& p, const DiscriminatorConfig& cfg, Var frame,
                const FrameLayout& layout, ConditioningMode mode);

// Per-frame head D_I. Returns a scalar logit.
Var score_image(Tape& tape, const BoundParams& p, const DiscriminatorConfig& cfg, Var frame,
                Var fused);

// Frame-pair head D_M over the 7-channel stem [dt plane | frame1 | frame2]
// concatenated with both frames' layout features. Returns a scalar logit.
Var score_motion(Tape& tape, const BoundParams& p, const DiscriminatorConfig& cfg, Var frame1,
                 Var frame2, Var delta_plane, Var fused1, Var fused2);

// D(v, L) = 1/4 (d_i1 + d_i2) + 1/2 d_m.
Var aggregate(Tape& tape, Var d_image1, Var d_image2, Var d_motion);

// Constant time-gap plane, |t1 - t2| / (T - 1), at feature resolution.
Tensor delta_plane_tensor(const DiscriminatorConfig& cfg, int t1, int t2);

// Full pipeline over a clip: fuses layouts at t1 and t2, scores both frames
// and the pair, aggregates. Frames enter as tape leaves via `frame_at`.
Var discriminate(Tape& tape, const BoundParams& p, const DiscriminatorConfig& cfg, Var frame1,
                 Var frame2, const FrameLayout& layout1, const FrameLayout& layout2, int t1,
                 int t2, ConditioningMode mode);

// ---- Value-level wrappers ----

Tensor fuse_layout(const DiscriminatorState& state, const Tensor& frame,
                   const FrameLayout& layout,
                   ConditioningMode mode = ConditioningMode::kLayoutIdentity);
double score_image(const DiscriminatorState& state, const Tensor& frame, const Tensor& fused);
double score_motion(const DiscriminatorState& state, const FramePairSample& pair,
                    const Tensor& fused1, const Tensor& fused2);
double aggregate(double d_image1, double d_image2, double d_motion);
double discriminate(const DiscriminatorState& state, const Tensor& clip,
                    const std::vector<FrameLayout>& layouts, int t1, int t2,
                    ConditioningMode mode = ConditioningMode::kLayoutIdentity);

// IEEE binary16 round trip used by the half-precision option.
double quantize_f16(double v);
Tensor quantize_f16(const Tensor& t);

}  // namespace movgan
