#pragma once

#include <array>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "movgan/layout.hpp"
#include "movgan/rng.hpp"
#include "movgan/tensor.hpp"

namespace movgan {

// One annotated video: object table plus per-frame trajectories with boxes
// normalized to [0, 1]. Frames live as numbered PPM images under
// frames_dir/video_id/.
struct AnnotationRecord {
    std::string video_id;
    int frame_count = 0;
    int width = 0, height = 0;
    std::map<int, int> objects;  // instance_id -> category_id
    std::vector<std::vector<std::pair<int, BoundingBox>>> trajectories;  // per frame
    std::string frames_dir;

    bool frame_valid(int index) const {
        return !trajectories[static_cast<size_t>(index)].empty();
    }
};

struct AnnotationSet {
    std::vector<AnnotationRecord> records;
    std::vector<std::string> category_names;  // index = category_id
    int clamped_boxes = 0;                    // out-of-bounds boxes fixed up during parse
};

// One training example: clip pixels plus aligned per-frame layouts.
struct ClipRecord {
    Tensor frames;                     // [T, 3, H, W] in [-1, 1]
    std::vector<FrameLayout> layouts;  // length T
    std::string source_video;
    int source_start = 0;

    void validate(int max_instances) const;
};

// Table-3 style summary: videos / categories / valid frames / max instance.
struct DatasetStats {
    int videos = 0;
    int categories = 0;
    int64_t valid_frames = 0;
    int max_instance = 0;

    bool operator==(const DatasetStats&) const = default;
};

// Reads every *.json annotation in `dir`. Category ids are assigned by
// sorted category name, deterministically. Frame images are expected under
// `frames_dir/<video_id>/NNNNNN.ppm` (not touched here).
AnnotationSet parse_annotations(const std::string& dir, const std::string& frames_dir = "");

DatasetStats compute_stats(const std::vector<AnnotationRecord>& records);

// Refinement passes: frames without objects are invalid (excluded from the
// valid pool and the stats), videos whose per-frame instance count exceeds
// max_instances are dropped, and with balance=true per-object-count strata
// are downsampled to the median stratum size (seeded, deterministic).
std::pair<std::vector<AnnotationRecord>, DatasetStats> refine(
    std::vector<AnnotationRecord> records, int max_instances, bool balance, uint64_t seed = 0);

// Cuts a window of `frames` consecutive valid frames, loads and resizes the
// images, and aligns layouts. Returns nullopt (and bumps skip_counter) when
// no such window exists.
std::optional<ClipRecord> sample_clip(const AnnotationRecord& record, int frames, int resolution,
                                      Rng& rng, bool center_crop = false,
                                      int* skip_counter = nullptr);

// Center-crop ablation: keeps the central `fraction` of the frame and remaps
// layouts; instances pushed fully outside are dropped.
ClipRecord center_crop_clip(const ClipRecord& clip, double fraction = 0.75);

// ---- Synthetic moving-shapes dataset ----

int toy_category_count();
std::array<double, 3> toy_color(int category_id);
std::array<double, 3> toy_background();

// Colored shapes moving with constant velocity and elastic wall bounces;
// per-frame boxes exactly bound each shape. Categories are distinct within
// a clip so color identifies the instance.
std::vector<ClipRecord> make_toy_dataset(int n_clips, int frames, int height, int width,
                                         int max_objects, uint64_t seed);

// ---- Binary clip cache ----

void save_clip_cache(const std::string& path, const std::vector<ClipRecord>& clips);
std::vector<ClipRecord> load_clip_cache(const std::string& path);

}  // namespace movgan
