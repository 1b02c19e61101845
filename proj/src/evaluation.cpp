#include "movgan/evaluation.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <sstream>

#include "movgan/errors.hpp"

namespace movgan {

using Eigen::MatrixXd;
using Eigen::VectorXd;

FeatureStats::FeatureStats(int dim) : dim_(dim), mean_({dim}), comoment_({dim, dim}) {
    if (dim < 1) throw InputError("feature dimension must be positive");
}

void FeatureStats::accumulate(const std::vector<double>& x) {
    if (dim_ == 0) {
        dim_ = static_cast<int>(x.size());
        mean_ = Tensor({dim_});
        comoment_ = Tensor({dim_, dim_});
    }
    if (static_cast<int>(x.size()) != dim_)
        throw InputError("feature vector dimension " + std::to_string(x.size()) +
                         " does not match accumulator dimension " + std::to_string(dim_));
    ++n_;
    std::vector<double> delta(static_cast<size_t>(dim_));
    for (int i = 0; i < dim_; ++i) delta[static_cast<size_t>(i)] = x[static_cast<size_t>(i)] - mean_.at(i);
    for (int i = 0; i < dim_; ++i) mean_.at(i) += delta[static_cast<size_t>(i)] / static_cast<double>(n_);
    for (int i = 0; i < dim_; ++i) {
        const double d2 = x[static_cast<size_t>(i)] - mean_.at(i);
        for (int j = 0; j < dim_; ++j)
            comoment_.at(i, j) += delta[static_cast<size_t>(j)] * d2;
    }
}

FeatureStats FeatureStats::merge(const FeatureStats& a, const FeatureStats& b) {
    if (a.n_ == 0) return b;
    if (b.n_ == 0) return a;
    if (a.dim_ != b.dim_) throw InputError("cannot merge stats of different dimensions");
    FeatureStats out(a.dim_);
    out.n_ = a.n_ + b.n_;
    const double wa = static_cast<double>(a.n_) / static_cast<double>(out.n_);
    const double wb = static_cast<double>(b.n_) / static_cast<double>(out.n_);
    std::vector<double> delta(static_cast<size_t>(a.dim_));
    for (int i = 0; i < a.dim_; ++i) {
        delta[static_cast<size_t>(i)] = b.mean_.at(i) - a.mean_.at(i);
        out.mean_.at(i) = wa * a.mean_.at(i) + wb * b.mean_.at(i);
    }
    const double cross = static_cast<double>(a.n_) * static_cast<double>(b.n_) /
                         static_cast<double>(out.n_);
    for (int i = 0; i < a.dim_; ++i)
        for (int j = 0; j < a.dim_; ++j)
            out.comoment_.at(i, j) = a.comoment_.at(i, j) + b.comoment_.at(i, j) +
                                     cross * delta[static_cast<size_t>(i)] *
                                         delta[static_cast<size_t>(j)];
    return out;
}

Tensor FeatureStats::covariance() const {
    if (!covariance_valid())
        throw InputError("covariance needs at least 2 samples, have " + std::to_string(n_));
    Tensor cov = comoment_;
    const double inv = 1.0 / static_cast<double>(n_ - 1);
    for (int64_t i = 0; i < cov.size(); ++i) cov[i] *= inv;
    return cov;
}

FeatureStats accumulate_stats(const std::vector<std::vector<double>>& features) {
    FeatureStats stats;
    for (const auto& f : features) stats.accumulate(f);
    return stats;
}

namespace {

MatrixXd to_eigen(const Tensor& t) {
    MatrixXd m(t.dim(0), t.dim(1));
    for (int i = 0; i < t.dim(0); ++i)
        for (int j = 0; j < t.dim(1); ++j) m(i, j) = t.at(i, j);
    return m;
}

// Symmetric PSD square root with negative-eigenvalue clipping.
MatrixXd psd_sqrt(const MatrixXd& s) {
    Eigen::SelfAdjointEigenSolver<MatrixXd> es(0.5 * (s + s.transpose()));
    VectorXd lam = es.eigenvalues();
    for (int i = 0; i < lam.size(); ++i) lam(i) = std::sqrt(std::max(0.0, lam(i)));
    return es.eigenvectors() * lam.asDiagonal() * es.eigenvectors().transpose();
}

}  // namespace

double frechet_distance(const FeatureStats& a, const FeatureStats& b) {
    if (a.dim() != b.dim())
        throw InputError("feature dimensions differ: " + std::to_string(a.dim()) + " vs " +
                         std::to_string(b.dim()));
    if (!a.covariance_valid() || !b.covariance_valid())
        throw InputError("both sides need at least 2 samples");

    MatrixXd sa = to_eigen(a.covariance());
    MatrixXd sb = to_eigen(b.covariance());
    double mean_term = 0.0;
    for (int i = 0; i < a.dim(); ++i) {
        const double d = a.mean().at(i) - b.mean().at(i);
        mean_term += d * d;
    }
    // Tr((Sa Sb)^{1/2}) via the symmetrized product Sa^{1/2} Sb Sa^{1/2}.
    MatrixXd root_a = psd_sqrt(sa);
    MatrixXd inner = root_a * sb * root_a;
    Eigen::SelfAdjointEigenSolver<MatrixXd> es(0.5 * (inner + inner.transpose()));
    double trace_sqrt = 0.0;
    for (int i = 0; i < es.eigenvalues().size(); ++i)
        trace_sqrt += std::sqrt(std::max(0.0, es.eigenvalues()(i)));

    const double value = mean_term + sa.trace() + sb.trace() - 2.0 * trace_sqrt;
    return std::max(0.0, value);
}

namespace {

// conv over [C, H, W], stride s, pad k/2, lrelu; plain loops, no gradients.
Tensor conv2d_plain(const Tensor& x, const Tensor& w, int stride) {
    const int ci = x.dim(0), h = x.dim(1), wd = x.dim(2);
    const int co = w.dim(0), k = w.dim(2), pad = k / 2;
    const int ho = (h + 2 * pad - k) / stride + 1, wo = (wd + 2 * pad - k) / stride + 1;
    Tensor y({co, ho, wo});
    for (int oc = 0; oc < co; ++oc)
        for (int i = 0; i < ho; ++i)
            for (int j = 0; j < wo; ++j) {
                double acc = 0.0;
                for (int ic = 0; ic < ci; ++ic)
                    for (int di = 0; di < k; ++di) {
                        const int si = i * stride - pad + di;
                        if (si < 0 || si >= h) continue;
                        for (int dj = 0; dj < k; ++dj) {
                            const int sj = j * stride - pad + dj;
                            if (sj < 0 || sj >= wd) continue;
                            acc += w.at(oc, ic, di, dj) * x.at(ic, si, sj);
                        }
                    }
                y.at(oc, i, j) = acc >= 0.0 ? acc : 0.2 * acc;
            }
    return y;
}

// conv over [C, T, H, W] with a [Co, Ci, kt, k, k] kernel; stride (st, s, s).
Tensor conv3d_plain(const Tensor& x, const Tensor& w, int stride_t, int stride_s) {
    const int ci = x.dim(0), tn = x.dim(1), h = x.dim(2), wd = x.dim(3);
    const int co = w.dim(0), kt = w.dim(2), k = w.dim(3);
    const int pt = kt / 2, ps = k / 2;
    const int to = (tn + 2 * pt - kt) / stride_t + 1;
    const int ho = (h + 2 * ps - k) / stride_s + 1;
    const int wo = (wd + 2 * ps - k) / stride_s + 1;
    Tensor y({co, to, ho, wo});
    for (int oc = 0; oc < co; ++oc)
        for (int ti = 0; ti < to; ++ti)
            for (int i = 0; i < ho; ++i)
                for (int j = 0; j < wo; ++j) {
                    double acc = 0.0;
                    for (int ic = 0; ic < ci; ++ic)
                        for (int dt = 0; dt < kt; ++dt) {
                            const int st = ti * stride_t - pt + dt;
                            if (st < 0 || st >= tn) continue;
                            for (int di = 0; di < k; ++di) {
                                const int si = i * stride_s - ps + di;
                                if (si < 0 || si >= h) continue;
                                for (int dj = 0; dj < k; ++dj) {
                                    const int sj = j * stride_s - ps + dj;
                                    if (sj < 0 || sj >= wd) continue;
                                    acc += w.at(oc, ic, dt, di, dj) * x.at(ic, st, si, sj);
                                }
                            }
                        }
                    y.at(oc, ti, i, j) = acc >= 0.0 ? acc : 0.2 * acc;
                }
    return y;
}

Tensor he_tensor(Rng& rng, std::vector<int> shape) {
    int64_t fan_in = 1;
    for (size_t i = 1; i < shape.size(); ++i) fan_in *= shape[i];
    return rng.normal_tensor(std::move(shape), 1.0 / std::sqrt(static_cast<double>(fan_in)));
}

}  // namespace

FeatureExtractor::FeatureExtractor(ExtractorMode mode, int output_dim, uint64_t seed)
    : mode_(mode), output_dim_(output_dim) {
    if (output_dim < 1) throw InputError("extractor output dimension must be positive");
    Rng rng(derive_seed(seed, 0x65787472));
    conv1_ = he_tensor(rng, {8, 3, 3, 3});
    conv2_ = he_tensor(rng, {16, 8, 3, 3});
    conv3_ = he_tensor(rng, {output_dim, 16, 3, 3});
    vconv1_ = he_tensor(rng, {8, 3, 3, 3, 3});
    vconv2_ = he_tensor(rng, {16, 8, 3, 3, 3});
    vproj_ = he_tensor(rng, {16, output_dim});
    std::ostringstream id;
    id << "surrogate-" << (mode == ExtractorMode::kImage ? "image" : "video") << "-d"
       << output_dim << "-seed" << seed;
    identity_ = id.str();
}

std::vector<double> FeatureExtractor::extract_image(const Tensor& frame) const {
    if (frame.rank() != 3 || frame.dim(0) != 3)
        throw InputError("extract_image expects [3, H, W]");
    Tensor h = conv2d_plain(frame, conv1_, 2);
    h = conv2d_plain(h, conv2_, 2);
    h = conv2d_plain(h, conv3_, 2);
    std::vector<double> out(static_cast<size_t>(output_dim_), 0.0);
    const double inv = 1.0 / (h.dim(1) * h.dim(2));
    for (int c = 0; c < output_dim_; ++c) {
        double s = 0.0;
        for (int i = 0; i < h.dim(1); ++i)
            for (int j = 0; j < h.dim(2); ++j) s += h.at(c, i, j);
        out[static_cast<size_t>(c)] = s * inv;
    }
    return out;
}

std::vector<double> FeatureExtractor::extract_clip(const Tensor& clip) const {
    if (clip.rank() != 4 || clip.dim(1) != 3)
        throw InputError("extract_clip expects [T, 3, H, W]");
    const int frames = clip.dim(0), h = clip.dim(2), w = clip.dim(3);
    // [T,3,H,W] -> [3,T,H,W]
    Tensor x({3, frames, h, w});
    for (int t = 0; t < frames; ++t)
        for (int c = 0; c < 3; ++c)
            for (int i = 0; i < h; ++i)
                for (int j = 0; j < w; ++j) x.at(c, t, i, j) = clip.at(t, c, i, j);
    Tensor f = conv3d_plain(x, vconv1_, 1, 2);
    f = conv3d_plain(f, vconv2_, 2, 2);
    // global pool over (t, h, w) then a fixed random projection
    std::vector<double> pooled(16, 0.0);
    const double inv = 1.0 / (static_cast<double>(f.dim(1)) * f.dim(2) * f.dim(3));
    for (int c = 0; c < 16; ++c) {
        double s = 0.0;
        for (int t = 0; t < f.dim(1); ++t)
            for (int i = 0; i < f.dim(2); ++i)
                for (int j = 0; j < f.dim(3); ++j) s += f.at(c, t, i, j);
        pooled[static_cast<size_t>(c)] = s * inv;
    }
    std::vector<double> out(static_cast<size_t>(output_dim_), 0.0);
    for (int d = 0; d < output_dim_; ++d) {
        double s = 0.0;
        for (int c = 0; c < 16; ++c) s += pooled[static_cast<size_t>(c)] * vproj_.at(c, d);
        out[static_cast<size_t>(d)] = s;
    }
    return out;
}

EvalResult evaluate(const GeneratorState& generator, const std::vector<ClipRecord>& dataset,
                    const FeatureExtractor& extractor, int n_samples, uint64_t seed,
                    ConditioningMode mode) {
    if (n_samples < 2) throw InputError("evaluation needs at least 2 samples");
    if (dataset.empty()) throw InputError("evaluation dataset is empty");
    const bool image_mode = extractor.mode() == ExtractorMode::kImage;
    const int clip_len = dataset.front().frames.dim(0);
    const int res = generator.config.resolution;

    FeatureStats real_stats, fake_stats;
    int real_count = 0;
    for (const ClipRecord& clip : dataset) {
        if (image_mode) {
            for (int t = 0; t < clip.frames.dim(0) && real_count < n_samples; ++t) {
                Tensor frame({3, clip.frames.dim(2), clip.frames.dim(3)});
                for (int c = 0; c < 3; ++c)
                    for (int i = 0; i < clip.frames.dim(2); ++i)
                        for (int j = 0; j < clip.frames.dim(3); ++j)
                            frame.at(c, i, j) = clip.frames.at(t, c, i, j);
                real_stats.accumulate(extractor.extract_image(frame));
                ++real_count;
            }
        } else if (real_count < n_samples) {
            real_stats.accumulate(extractor.extract_clip(clip.frames));
            ++real_count;
        }
        if (real_count >= n_samples) break;
    }

    CoordinateGrid grid = CoordinateGrid::uniform(clip_len, res, res);
    int fake_count = 0, clip_index = 0;
    while (fake_count < n_samples) {
        const ClipRecord& cond = dataset[static_cast<size_t>(clip_index % static_cast<int>(dataset.size()))];
        LatentPair z = sample_latents(generator.config,
                                      derive_seed(seed, 0x6576616c, static_cast<uint64_t>(clip_index)));
        Tensor clip = generate_video(generator, z, cond.layouts[0], grid, mode);
        if (image_mode) {
            for (int t = 0; t < clip.dim(0) && fake_count < n_samples; ++t) {
                Tensor frame({3, res, res});
                for (int c = 0; c < 3; ++c)
                    for (int i = 0; i < res; ++i)
                        for (int j = 0; j < res; ++j) frame.at(c, i, j) = clip.at(t, c, i, j);
                fake_stats.accumulate(extractor.extract_image(frame));
                ++fake_count;
            }
        } else {
            fake_stats.accumulate(extractor.extract_clip(clip));
            ++fake_count;
        }
        ++clip_index;
    }

    EvalResult result;
    result.score = frechet_distance(real_stats, fake_stats);
    result.real_samples = real_count;
    result.fake_samples = fake_count;
    result.extractor_id = extractor.identity();
    return result;
}

double layout_adherence(const std::vector<Tensor>& clips,
                        const std::vector<FrameLayout>& layouts) {
    if (clips.size() != layouts.size())
        throw InputError("clips and layouts must pair up");
    if (clips.empty()) throw InputError("layout_adherence needs at least one clip");
    const double match_radius = 0.75;  // below half the minimum palette distance

    double total = 0.0;
    int64_t counted = 0;
    for (size_t n = 0; n < clips.size(); ++n) {
        const Tensor& clip = clips[n];
        if (clip.rank() != 4 || clip.dim(1) != 3)
            throw InputError("layout_adherence expects [T, 3, H, W] clips");
        const int h = clip.dim(2), w = clip.dim(3);
        for (const LayoutInstance& inst : layouts[n].instances) {
            const auto color = toy_color(inst.category_id);
            double inside = 0.0, everywhere = 0.0;
            for (int i = 0; i < h; ++i)
                for (int j = 0; j < w; ++j) {
                    double d2 = 0.0;
                    for (int c = 0; c < 3; ++c) {
                        const double d = clip.at(0, c, i, j) - color[static_cast<size_t>(c)];
                        d2 += d * d;
                    }
                    if (d2 > match_radius * match_radius) continue;
                    everywhere += 1.0;
                    if (pixel_center_in(inst.box.x0, inst.box.x1, j, w) &&
                        pixel_center_in(inst.box.y0, inst.box.y1, i, h))
                        inside += 1.0;
                }
            if (everywhere > 0.0) {
                total += inside / everywhere;
                ++counted;
            }
        }
    }
    if (counted == 0) return 0.0;
    return total / static_cast<double>(counted);
}

double mean_box_area_fraction(const std::vector<FrameLayout>& layouts) {
    double total = 0.0;
    int64_t counted = 0;
    for (const FrameLayout& layout : layouts)
        for (const LayoutInstance& inst : layout.instances) {
            total += inst.box.area();
            ++counted;
        }
    return counted == 0 ? 0.0 : total / static_cast<double>(counted);
}

FrameLayout add_instance(const FrameLayout& layout, const LayoutInstance& instance,
                         int max_instances) {
    if (max_instances > 0 && static_cast<int>(layout.instances.size()) >= max_instances)
        throw InputError("layout already holds the maximum of " + std::to_string(max_instances) +
                         " instances");
    for (const LayoutInstance& inst : layout.instances)
        if (inst.instance_id == instance.instance_id)
            throw InputError("instance_id " + std::to_string(instance.instance_id) +
                             " already present");
    FrameLayout out = layout;
    out.instances.push_back(instance);
    return out;
}

FrameLayout remove_instance(const FrameLayout& layout, int instance_id) {
    FrameLayout out = layout;
    auto it = std::find_if(out.instances.begin(), out.instances.end(),
                           [&](const LayoutInstance& i) { return i.instance_id == instance_id; });
    if (it == out.instances.end())
        throw InputError("no instance with id " + std::to_string(instance_id));
    out.instances.erase(it);
    return out;
}

FrameLayout resize_instance(const FrameLayout& layout, int instance_id, const BoundingBox& box) {
    FrameLayout out = layout;
    for (LayoutInstance& inst : out.instances)
        if (inst.instance_id == instance_id) {
            inst.box = box;
            return out;
        }
    throw InputError("no instance with id " + std::to_string(instance_id));
}

FrameLayout apply_edit_script(const FrameLayout& layout, const std::string& script,
                              int max_instances) {
    FrameLayout current = layout;
    std::istringstream lines(script);
    std::string line;
    int line_no = 0;
    while (std::getline(lines, line)) {
        ++line_no;
        std::istringstream ls(line);
        std::string op;
        if (!(ls >> op)) continue;  // blank line
        if (op == "add") {
            int id, cat;
            double x0, y0, x1, y1;
            if (!(ls >> id >> cat >> x0 >> y0 >> x1 >> y1))
                throw ParseError("edit line " + std::to_string(line_no) +
                                 ": expected add <id> <category> <x0> <y0> <x1> <y1>");
            current = add_instance(current, {cat, id, BoundingBox(x0, y0, x1, y1)}, max_instances);
        } else if (op == "remove") {
            int id;
            if (!(ls >> id))
                throw ParseError("edit line " + std::to_string(line_no) +
                                 ": expected remove <id>");
            current = remove_instance(current, id);
        } else if (op == "resize") {
            int id;
            double x0, y0, x1, y1;
            if (!(ls >> id >> x0 >> y0 >> x1 >> y1))
                throw ParseError("edit line " + std::to_string(line_no) +
                                 ": expected resize <id> <x0> <y0> <x1> <y1>");
            current = resize_instance(current, id, BoundingBox(x0, y0, x1, y1));
        } else {
            throw ParseError("edit line " + std::to_string(line_no) + ": unknown op \"" + op +
                             "\"");
        }
    }
    return current;
}

}  // namespace movgan
