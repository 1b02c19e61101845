#pragma once

#include <string>
#include <vector>

#include "movgan/data.hpp"
#include "movgan/generator.hpp"
#include "movgan/layout.hpp"
#include "movgan/tensor.hpp"

namespace movgan {

// Streaming Gaussian fit: Welford mean plus co-moment matrix, mergeable so
// accumulation can be split across workers.
class FeatureStats {
  public:
    FeatureStats() = default;
    explicit FeatureStats(int dim);

    void accumulate(const std::vector<double>& x);
    static FeatureStats merge(const FeatureStats& a, const FeatureStats& b);

    int64_t count() const { return n_; }
    int dim() const { return dim_; }
    const Tensor& mean() const { return mean_; }
    bool covariance_valid() const { return n_ >= 2; }
    Tensor covariance() const;  // unbiased, n-1 divisor

  private:
    int dim_ = 0;
    int64_t n_ = 0;
    Tensor mean_;      // [D]
    Tensor comoment_;  // [D, D]
};

FeatureStats accumulate_stats(const std::vector<std::vector<double>>& features);

// ||mu_a - mu_b||^2 + Tr(Sa + Sb - 2 (Sa Sb)^{1/2}); the matrix square root
// goes through the eigendecomposition of Sa^{1/2} Sb Sa^{1/2} with negative
// eigenvalues clipped to zero.
double frechet_distance(const FeatureStats& a, const FeatureStats& b);

// Fixed-seed random convolutional feature stack; a documented non-canonical
// surrogate for the pretrained networks used by the canonical metrics.
enum class ExtractorMode { kImage, kVideo };

class FeatureExtractor {
  public:
    FeatureExtractor(ExtractorMode mode, int output_dim, uint64_t seed);

    ExtractorMode mode() const { return mode_; }
    int output_dim() const { return output_dim_; }
    const std::string& identity() const { return identity_; }

    std::vector<double> extract_image(const Tensor& frame) const;  // [3, H, W]
    std::vector<double> extract_clip(const Tensor& clip) const;    // [T, 3, H, W]

  private:
    ExtractorMode mode_;
    int output_dim_;
    std::string identity_;
    // 2D stack (image mode and the spatial part of video mode)
    Tensor conv1_, conv2_, conv3_;        // [Co, Ci, k, k]
    // 3D stack (video mode)
    Tensor vconv1_, vconv2_;              // [Co, Ci, kt, k, k]
    Tensor vproj_;                        // [C, D]
};

struct EvalResult {
    double score = 0.0;
    int real_samples = 0;
    int fake_samples = 0;
    std::string extractor_id;
};

// Generates clips conditioned on dataset first-frame layouts and compares
// feature Gaussians against the real clips. Image mode scores per-frame
// features (FID-style), video mode whole-clip features (FVD-style).
EvalResult evaluate(const GeneratorState& generator, const std::vector<ClipRecord>& dataset,
                    const FeatureExtractor& extractor, int n_samples, uint64_t seed,
                    ConditioningMode mode = ConditioningMode::kLayoutIdentity);

// Fraction of category-color-matched pixel mass inside the requested boxes
// on frame 1, averaged over instances and clips. Uses the toy palette.
double layout_adherence(const std::vector<Tensor>& clips,
                        const std::vector<FrameLayout>& layouts);

// Mean box-area fraction of the layouts: the chance level for adherence.
double mean_box_area_fraction(const std::vector<FrameLayout>& layouts);

// ---- Layout editing (value semantics; inputs are never mutated) ----

FrameLayout add_instance(const FrameLayout& layout, const LayoutInstance& instance,
                         int max_instances);
FrameLayout remove_instance(const FrameLayout& layout, int instance_id);
FrameLayout resize_instance(const FrameLayout& layout, int instance_id, const BoundingBox& box);

// Edit script, one edit per line:
//   add <instance_id> <category_id> <x0> <y0> <x1> <y1>
//   remove <instance_id>
//   resize <instance_id> <x0> <y0> <x1> <y1>
FrameLayout apply_edit_script(const FrameLayout& layout, const std::string& script,
                              int max_instances);

}  // namespace movgan
