#pragma once

#include <cstdint>
#include <string>
#include <unordered_map>
#include <vector>

#include "movgan/autodiff.hpp"
#include "movgan/layout.hpp"
#include "movgan/tensor.hpp"

namespace movgan {

// Ablation ladder of conditioning signals, ordered by information content.
enum class ConditioningMode {
    kActionLabel,      // baseline: no layout information at all
    kObjectLabels,     // category multi-hot, no geometry
    kObjectLabelsCrop, // labels + center-cropped training clips
    kLayout,           // boxes + categories, identity-free local pathway
    kLayoutIdentity,   // full model with per-category identity embeddings
};

const char* conditioning_mode_name(ConditioningMode mode);
ConditioningMode conditioning_mode_from_name(const std::string& name);

// Which conditioning signals a mode carries.
bool mode_uses_boxes(ConditioningMode mode);
bool mode_uses_label_vector(ConditioningMode mode);

// Coordinate frequencies of the synthesis first layer; all must be > 0.
struct FrequencyConfig {
    double sigma_x = 8.0;
    double sigma_y = 8.0;
    double sigma_t = 2.0;  // slow temporal frequency, sigma_x / 4

    void validate() const;
};

struct GeneratorConfig {
    int categories = 36;
    int embed_dim = 8;          // raster label embedding width
    int z_content_dim = 32;     // content latent (z_I)
    int z_motion_dim = 16;      // motion latent (z_M)
    int base_resolution = 4;    // h0 = w0
    int resolution = 64;        // output H = W; power-of-two multiple of base
    int clip_length = 16;       // default T
    int max_instances = 11;

    int id_embed_dim = 24;      // identity embedding width (local pathway)
    int style_hidden = 32;      // style layer width
    int style_layers = 4;       // linear style layers
    int local_channels = 16;    // local feature channels F_l
    int local_seed = 4;         // per-instance seed map is local_seed^2
    int global_channels = 32;   // encoder output channels before z concat
    int decoder_channels = 32;  // decoder output width
    int synth_hidden = 32;      // first-layer weight length and MLP width
    int motion_dim = 16;        // motion code width

    FrequencyConfig frequencies;

    int upsample_stages() const;
    void validate() const;
};

// z := (z_I, z_M); one content latent per clip, one motion latent per clip.
struct LatentPair {
    Tensor z_content;  // [z_content_dim]
    Tensor z_motion;   // [z_motion_dim]
};

// Evaluation grid of the implicit video function. Frame index k of a
// T-frame clip maps to t = k / T; x and y grids are pixel centers.
struct CoordinateGrid {
    std::vector<double> ts, ys, xs;

    static CoordinateGrid uniform(int frames, int height, int width);
    void validate() const;
};

// Ordered named parameter tree; the unit shared by Adam, checkpoints and
// both network states.
struct NamedParams {
    std::vector<std::pair<std::string, Tensor>> items;

    void add(const std::string& name, Tensor t);
    Tensor& get(const std::string& name);
    const Tensor& get(const std::string& name) const;
    bool has(const std::string& name) const;
};

// All parameters bound onto one tape, keyed by name.
struct BoundParams {
    std::unordered_map<std::string, Var> vars;

    Var operator[](const std::string& name) const;
};

BoundParams bind(Tape& tape, const NamedParams& params, bool requires_grad);

struct GeneratorState {
    GeneratorConfig config;
    NamedParams params;

    static GeneratorState init(const GeneratorConfig& config, uint64_t seed);
};

// ---- Tape-level forward pieces (training path) ----

// Global pathway: rasterized layout -> strided conv encoder -> concat
// broadcast content latent. Returns [1, global_channels + z_dim, h0, w0].
Var encode_global(Tape& tape, const BoundParams& p, const GeneratorConfig& cfg, Var z_content,
                  const FrameLayout& layout, ConditioningMode mode);

// Local pathway: per-instance identity embedding -> style layers -> seed
// feature map -> placement at the instance box; summed in canonical order.
// Returns [1, local_channels, h0, w0].
Var encode_local(Tape& tape, const BoundParams& p, const GeneratorConfig& cfg,
                 const FrameLayout& layout, ConditioningMode mode);

// Motion code f_m from the motion latent. Returns [motion_dim].
Var motion_features(Tape& tape, const BoundParams& p, const GeneratorConfig& cfg, Var z_motion);

// First synthesis layer over an explicit grid, exactly
//   f = sigma_x * w_x * x + sigma_y * w_y * y + sigma_t * w_t * t + b.
// Returns [T, H, W, synth_hidden].
Var first_layer(Tape& tape, const BoundParams& p, const GeneratorConfig& cfg,
                const CoordinateGrid& grid);

// Full clip: frames at the grid's t values. Returns [T, 3, H, W] in [-1,1].
Var generate_frames(Tape& tape, const BoundParams& p, const GeneratorConfig& cfg, Var z_content,
                    Var z_motion, const FrameLayout& layout, const CoordinateGrid& grid,
                    ConditioningMode mode);

// ---- Value-level wrappers (inference / tests) ----

Tensor encode_global(const GeneratorState& state, const Tensor& z_content,
                     const FrameLayout& layout,
                     ConditioningMode mode = ConditioningMode::kLayoutIdentity);
Tensor encode_local(const GeneratorState& state, const FrameLayout& layout,
                    ConditioningMode mode = ConditioningMode::kLayoutIdentity);
Tensor motion_features(const GeneratorState& state, const Tensor& z_motion);
Tensor first_layer(const GeneratorState& state, const CoordinateGrid& grid);
Tensor generate_video(const GeneratorState& state, const LatentPair& z, const FrameLayout& layout,
                      const CoordinateGrid& grid,
                      ConditioningMode mode = ConditioningMode::kLayoutIdentity);

// Latents drawn from the standard normal prior, deterministic per seed.
LatentPair sample_latents(const GeneratorConfig& cfg, uint64_t seed);

}  // namespace movgan
