#include "movgan/data.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <set>

#include "json.hpp"
#include "movgan/errors.hpp"
#include "movgan/image_io.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace movgan {

void ClipRecord::validate(int max_instances) const {
    if (frames.rank() != 4 || frames.dim(1) != 3)
        throw ValidationError("clip frames must be [T, 3, H, W]");
    if (static_cast<int>(layouts.size()) != frames.dim(0))
        throw ValidationError("clip has " + std::to_string(layouts.size()) + " layouts for " +
                              std::to_string(frames.dim(0)) + " frames");
    for (const FrameLayout& l : layouts) l.validate(0, max_instances);
}

namespace {

std::string frame_image_path(const AnnotationRecord& record, int frame) {
    char name[16];
    std::snprintf(name, sizeof(name), "%06d.ppm", frame);
    return (fs::path(record.frames_dir) / record.video_id / name).string();
}

BoundingBox clamp_pixel_box(double xmin, double ymin, double xmax, double ymax, int w, int h,
                            const std::string& context, int* clamped) {
    double x0 = xmin / w, x1 = xmax / w, y0 = ymin / h, y1 = ymax / h;
    if (x0 < 0.0 || y0 < 0.0 || x1 > 1.0 || y1 > 1.0) {
        x0 = std::max(x0, 0.0);
        y0 = std::max(y0, 0.0);
        x1 = std::min(x1, 1.0);
        y1 = std::min(y1, 1.0);
        if (clamped) ++*clamped;
    }
    if (!(x0 < x1 && y0 < y1))
        throw ValidationError(context + ": box degenerates after clamping");
    return BoundingBox(x0, y0, x1, y1);
}

}  // namespace

AnnotationSet parse_annotations(const std::string& dir, const std::string& frames_dir) {
    AnnotationSet set;
    if (!fs::exists(dir)) return set;

    std::vector<fs::path> files;
    for (const auto& entry : fs::directory_iterator(dir))
        if (entry.is_regular_file() && entry.path().extension() == ".json")
            files.push_back(entry.path());
    std::sort(files.begin(), files.end());

    // First pass collects category names so ids are assigned by sorted name,
    // independent of file order.
    std::set<std::string> names;
    std::vector<json> parsed;
    for (const fs::path& file : files) {
        std::ifstream in(file);
        json j;
        try {
            in >> j;
        } catch (const json::exception& e) {
            throw ParseError(file.filename().string() + ": invalid JSON (" + e.what() + ")");
        }
        if (!j.contains("video_id"))
            throw ParseError(file.filename().string() + ": missing field video_id");
        for (const auto& obj : j.value("objects", json::array())) {
            if (!obj.contains("category"))
                throw ParseError(j["video_id"].get<std::string>() +
                                 ": object missing field category");
            names.insert(obj["category"].get<std::string>());
        }
        parsed.push_back(std::move(j));
    }
    set.category_names.assign(names.begin(), names.end());
    std::map<std::string, int> category_ids;
    for (size_t i = 0; i < set.category_names.size(); ++i)
        category_ids[set.category_names[i]] = static_cast<int>(i);

    for (const json& j : parsed) {
        AnnotationRecord rec;
        rec.video_id = j["video_id"].get<std::string>();
        const std::string ctx = "video " + rec.video_id;
        auto require = [&](const char* field) {
            if (!j.contains(field)) throw ParseError(ctx + ": missing field " + field);
        };
        require("frame_count");
        require("width");
        require("height");
        require("trajectories");
        rec.frame_count = j["frame_count"].get<int>();
        rec.width = j["width"].get<int>();
        rec.height = j["height"].get<int>();
        rec.frames_dir = frames_dir;
        if (rec.frame_count < 0 || rec.width <= 0 || rec.height <= 0)
            throw ParseError(ctx + ": non-positive frame_count/width/height");

        for (const auto& obj : j.value("objects", json::array())) {
            if (!obj.contains("tid")) throw ParseError(ctx + ": object missing field tid");
            int tid = obj["tid"].get<int>();
            if (rec.objects.count(tid))
                throw ParseError(ctx + ": duplicate object tid " + std::to_string(tid));
            rec.objects[tid] = category_ids.at(obj["category"].get<std::string>());
        }

        const auto& trajs = j["trajectories"];
        if (static_cast<int>(trajs.size()) != rec.frame_count)
            throw ParseError(ctx + ": trajectories length " + std::to_string(trajs.size()) +
                             " != frame_count " + std::to_string(rec.frame_count));
        rec.trajectories.resize(trajs.size());
        for (size_t f = 0; f < trajs.size(); ++f) {
            for (const auto& det : trajs[f]) {
                if (!det.contains("tid") || !det.contains("bbox"))
                    throw ParseError(ctx + ": trajectory entry missing tid/bbox at frame " +
                                     std::to_string(f));
                int tid = det["tid"].get<int>();
                if (!rec.objects.count(tid))
                    throw ParseError(ctx + ": frame " + std::to_string(f) +
                                     " references undeclared tid " + std::to_string(tid));
                const auto& bb = det["bbox"];
                for (const char* k : {"xmin", "ymin", "xmax", "ymax"})
                    if (!bb.contains(k))
                        throw ParseError(ctx + ": bbox missing field " + std::string(k));
                BoundingBox box = clamp_pixel_box(
                    bb["xmin"].get<double>(), bb["ymin"].get<double>(), bb["xmax"].get<double>(),
                    bb["ymax"].get<double>(), rec.width, rec.height,
                    ctx + " frame " + std::to_string(f), &set.clamped_boxes);
                rec.trajectories[f].emplace_back(tid, box);
            }
        }
        set.records.push_back(std::move(rec));
    }
    return set;
}

DatasetStats compute_stats(const std::vector<AnnotationRecord>& records) {
    DatasetStats stats;
    stats.videos = static_cast<int>(records.size());
    std::set<int> categories;
    for (const AnnotationRecord& rec : records) {
        for (int f = 0; f < rec.frame_count; ++f) {
            const auto& dets = rec.trajectories[static_cast<size_t>(f)];
            if (dets.empty()) continue;
            ++stats.valid_frames;
            stats.max_instance = std::max(stats.max_instance, static_cast<int>(dets.size()));
            for (const auto& [tid, _] : dets) categories.insert(rec.objects.at(tid));
        }
    }
    stats.categories = static_cast<int>(categories.size());
    return stats;
}

std::pair<std::vector<AnnotationRecord>, DatasetStats> refine(
    std::vector<AnnotationRecord> records, int max_instances, bool balance, uint64_t seed) {
    // Frames with no objects are invalid by definition: they are excluded
    // from stats and can never enter a sampled clip. Videos whose per-frame
    // instance count exceeds the cap are dropped entirely.
    std::vector<AnnotationRecord> kept;
    for (AnnotationRecord& rec : records) {
        int peak = 0;
        for (const auto& dets : rec.trajectories)
            peak = std::max(peak, static_cast<int>(dets.size()));
        if (peak <= max_instances) kept.push_back(std::move(rec));
    }

    if (balance && !kept.empty()) {
        // Stratum key: number of distinct objects seen in valid frames.
        auto stratum_key = [](const AnnotationRecord& rec) {
            std::set<int> tids;
            for (const auto& dets : rec.trajectories)
                for (const auto& [tid, _] : dets) tids.insert(tid);
            return static_cast<int>(tids.size());
        };
        std::map<int, std::vector<size_t>> strata;
        for (size_t i = 0; i < kept.size(); ++i) strata[stratum_key(kept[i])].push_back(i);

        std::vector<size_t> sizes;
        for (const auto& [_, members] : strata) sizes.push_back(members.size());
        std::sort(sizes.begin(), sizes.end());
        const size_t median = sizes[(sizes.size() - 1) / 2];

        std::set<size_t> dropped;
        for (auto& [key, members] : strata) {
            if (members.size() <= median) continue;
            std::mt19937_64 shuffle_rng(derive_seed(seed, 0x62616c, static_cast<uint64_t>(key)));
            std::shuffle(members.begin(), members.end(), shuffle_rng);
            for (size_t i = median; i < members.size(); ++i) dropped.insert(members[i]);
        }
        std::vector<AnnotationRecord> balanced;
        for (size_t i = 0; i < kept.size(); ++i)
            if (!dropped.count(i)) balanced.push_back(std::move(kept[i]));
        kept = std::move(balanced);
    }

    DatasetStats stats = compute_stats(kept);
    return {std::move(kept), stats};
}

std::optional<ClipRecord> sample_clip(const AnnotationRecord& record, int frames, int resolution,
                                      Rng& rng, bool center_crop, int* skip_counter) {
    if (frames < 1) throw InputError("clip length must be >= 1");
    std::vector<int> starts;
    for (int s = 0; s + frames <= record.frame_count; ++s) {
        bool ok = true;
        for (int k = 0; k < frames && ok; ++k) ok = record.frame_valid(s + k);
        if (ok) starts.push_back(s);
    }
    if (starts.empty()) {
        if (skip_counter) ++*skip_counter;
        return std::nullopt;
    }
    const int start =
        starts[static_cast<size_t>(rng.uniform_int(0, static_cast<int>(starts.size()) - 1))];

    ClipRecord clip;
    clip.source_video = record.video_id;
    clip.source_start = start;
    clip.frames = Tensor({frames, 3, resolution, resolution});
    const BoundingBox whole(0, 0, 1, 1);
    for (int k = 0; k < frames; ++k) {
        Tensor image = read_ppm(frame_image_path(record, start + k));
        Tensor resized = stn_crop(image, whole, resolution, resolution);
        for (int c = 0; c < 3; ++c)
            for (int i = 0; i < resolution; ++i)
                for (int j = 0; j < resolution; ++j)
                    clip.frames.at(k, c, i, j) = resized.at(c, i, j);

        FrameLayout layout;
        layout.frame_index = k;
        for (const auto& [tid, box] : record.trajectories[static_cast<size_t>(start + k)])
            layout.instances.push_back({record.objects.at(tid), tid, box});
        clip.layouts.push_back(std::move(layout));
    }
    if (center_crop) clip = center_crop_clip(clip);
    return clip;
}

ClipRecord center_crop_clip(const ClipRecord& clip, double fraction) {
    if (!(fraction > 0.0 && fraction <= 1.0)) throw InputError("crop fraction must be in (0, 1]");
    const int frames = clip.frames.dim(0), h = clip.frames.dim(2), w = clip.frames.dim(3);
    const double lo = (1.0 - fraction) / 2.0, hi = (1.0 + fraction) / 2.0;
    const BoundingBox window(lo, lo, hi, hi);

    ClipRecord out;
    out.source_video = clip.source_video;
    out.source_start = clip.source_start;
    out.frames = Tensor({frames, 3, h, w});
    for (int k = 0; k < frames; ++k) {
        Tensor frame({3, h, w});
        for (int c = 0; c < 3; ++c)
            for (int i = 0; i < h; ++i)
                for (int j = 0; j < w; ++j) frame.at(c, i, j) = clip.frames.at(k, c, i, j);
        Tensor cropped = stn_crop(frame, window, h, w);
        for (int c = 0; c < 3; ++c)
            for (int i = 0; i < h; ++i)
                for (int j = 0; j < w; ++j) out.frames.at(k, c, i, j) = cropped.at(c, i, j);

        FrameLayout layout;
        layout.frame_index = clip.layouts[static_cast<size_t>(k)].frame_index;
        for (const LayoutInstance& inst : clip.layouts[static_cast<size_t>(k)].instances) {
            double x0 = (inst.box.x0 - lo) / fraction, x1 = (inst.box.x1 - lo) / fraction;
            double y0 = (inst.box.y0 - lo) / fraction, y1 = (inst.box.y1 - lo) / fraction;
            x0 = std::max(0.0, x0);
            y0 = std::max(0.0, y0);
            x1 = std::min(1.0, x1);
            y1 = std::min(1.0, y1);
            if (x0 < x1 && y0 < y1)
                layout.instances.push_back(
                    {inst.category_id, inst.instance_id, BoundingBox(x0, y0, x1, y1)});
        }
        out.layouts.push_back(std::move(layout));
    }
    return out;
}

int toy_category_count() { return 6; }

std::array<double, 3> toy_color(int category_id) {
    static const std::array<std::array<double, 3>, 6> palette = {{
        {1.0, -1.0, -1.0},  // red square
        {-1.0, 1.0, -1.0},  // green disc
        {-1.0, -1.0, 1.0},  // blue triangle
        {1.0, 1.0, -1.0},   // yellow square
        {1.0, -1.0, 1.0},   // magenta disc
        {-1.0, 1.0, 1.0},   // cyan triangle
    }};
    if (category_id < 0 || category_id >= toy_category_count())
        throw InputError("toy category " + std::to_string(category_id) + " out of range");
    return palette[static_cast<size_t>(category_id)];
}

std::array<double, 3> toy_background() { return {-0.9, -0.9, -0.9}; }

namespace {

struct ToyObject {
    int category = 0;
    int instance = 0;
    double cx = 0, cy = 0;  // center
    double hx = 0, hy = 0;  // half extents
    double vx = 0, vy = 0;  // velocity per frame
};

// Reflects p into [lo, hi] (elastic bounce), flipping velocity as needed.
void bounce(double& p, double& v, double lo, double hi) {
    if (hi <= lo) {
        p = lo;
        return;
    }
    while (p < lo || p > hi) {
        if (p < lo) {
            p = 2.0 * lo - p;
            v = -v;
        }
        if (p > hi) {
            p = 2.0 * hi - p;
            v = -v;
        }
    }
}

bool inside_shape(const ToyObject& o, double u, double v) {
    // Margin keeps every rendered pixel center strictly inside the box.
    const double eps = 1e-9;
    const double rx = o.hx - eps, ry = o.hy - eps;
    const double dx = u - o.cx, dy = v - o.cy;
    switch (o.category % 3) {
        case 0:  // square
            return std::abs(dx) <= rx && std::abs(dy) <= ry;
        case 1:  // disc
            return (dx / rx) * (dx / rx) + (dy / ry) * (dy / ry) <= 1.0;
        default: {  // triangle: apex up, base at the bottom of the box
            if (std::abs(dy) > ry) return false;
            const double span = rx * (dy + ry) / (2.0 * ry);
            return std::abs(dx) <= span;
        }
    }
}

}  // namespace

std::vector<ClipRecord> make_toy_dataset(int n_clips, int frames, int height, int width,
                                         int max_objects, uint64_t seed) {
    if (n_clips < 1 || frames < 1 || height < 4 || width < 4)
        throw InputError("toy dataset parameters must be positive (canvas >= 4)");
    if (max_objects < 1 || max_objects > toy_category_count())
        throw InputError("max_objects must be in [1, " + std::to_string(toy_category_count()) +
                         "] so colors identify instances");

    std::vector<ClipRecord> clips;
    clips.reserve(static_cast<size_t>(n_clips));
    const auto bg = toy_background();

    for (int ci = 0; ci < n_clips; ++ci) {
        Rng rng(derive_seed(seed, 0x746f79, static_cast<uint64_t>(ci)));
        const int n_obj = rng.uniform_int(1, max_objects);

        // Distinct categories per clip.
        std::vector<int> cats(static_cast<size_t>(toy_category_count()));
        std::iota(cats.begin(), cats.end(), 0);
        std::shuffle(cats.begin(), cats.end(), rng.engine());

        std::vector<ToyObject> objects;
        for (int k = 0; k < n_obj; ++k) {
            ToyObject o;
            o.category = cats[static_cast<size_t>(k)];
            o.instance = k;
            o.hx = rng.uniform(0.12, 0.22);
            o.hy = rng.uniform(0.12, 0.22);
            o.cx = rng.uniform(o.hx, 1.0 - o.hx);
            o.cy = rng.uniform(o.hy, 1.0 - o.hy);
            const double speed = rng.uniform(0.2, 0.8) / frames;
            const double angle = rng.uniform(0.0, 6.28318530717959);
            o.vx = speed * std::cos(angle);
            o.vy = speed * std::sin(angle);
            objects.push_back(o);
        }

        ClipRecord clip;
        clip.source_video = "toy" + std::to_string(ci);
        clip.source_start = 0;
        clip.frames = Tensor({frames, 3, height, width});
        for (int t = 0; t < frames; ++t) {
            FrameLayout layout;
            layout.frame_index = t;
            for (int c = 0; c < 3; ++c)
                for (int i = 0; i < height; ++i)
                    for (int j = 0; j < width; ++j) clip.frames.at(t, c, i, j) = bg[c];

            for (ToyObject& o : objects) {
                const auto color = toy_color(o.category);
                auto [c0, c1] = coverage_range(o.cx - o.hx, o.cx + o.hx, width);
                auto [r0, r1] = coverage_range(o.cy - o.hy, o.cy + o.hy, height);
                for (int r = r0; r < r1; ++r)
                    for (int cc = c0; cc < c1; ++cc) {
                        const double u = (cc + 0.5) / width, v = (r + 0.5) / height;
                        if (!inside_shape(o, u, v)) continue;
                        for (int ch = 0; ch < 3; ++ch) clip.frames.at(t, ch, r, cc) = color[ch];
                    }
                layout.instances.push_back(
                    {o.category, o.instance,
                     BoundingBox(o.cx - o.hx, o.cy - o.hy, o.cx + o.hx, o.cy + o.hy)});

                o.cx += o.vx;
                o.cy += o.vy;
                bounce(o.cx, o.vx, o.hx, 1.0 - o.hx);
                bounce(o.cy, o.vy, o.hy, 1.0 - o.hy);
            }
            clip.layouts.push_back(std::move(layout));
        }
        clips.push_back(std::move(clip));
    }
    return clips;
}

namespace {

constexpr uint32_t kCacheMagic = 0x4d564453;  // "MVDS"
constexpr uint32_t kCacheVersion = 1;

template <typename T>
void write_raw(std::ofstream& out, const T& v) {
    out.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T read_raw(std::ifstream& in, const std::string& path) {
    T v{};
    in.read(reinterpret_cast<char*>(&v), sizeof(T));
    if (!in) throw ParseError(path + ": truncated clip cache");
    return v;
}

void write_string(std::ofstream& out, const std::string& s) {
    write_raw(out, static_cast<uint32_t>(s.size()));
    out.write(s.data(), static_cast<std::streamsize>(s.size()));
}

std::string read_string(std::ifstream& in, const std::string& path) {
    uint32_t n = read_raw<uint32_t>(in, path);
    std::string s(n, '\0');
    in.read(s.data(), n);
    if (!in) throw ParseError(path + ": truncated clip cache");
    return s;
}

}  // namespace

void save_clip_cache(const std::string& path, const std::vector<ClipRecord>& clips) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw InputError("cannot open " + path + " for writing");
    write_raw(out, kCacheMagic);
    write_raw(out, kCacheVersion);
    write_raw(out, static_cast<uint64_t>(clips.size()));
    for (const ClipRecord& clip : clips) {
        write_string(out, clip.source_video);
        write_raw(out, static_cast<int32_t>(clip.source_start));
        for (int d = 0; d < 4; ++d) write_raw(out, static_cast<int32_t>(clip.frames.dim(d)));
        for (int64_t i = 0; i < clip.frames.size(); ++i)
            write_raw(out, static_cast<float>(clip.frames[i]));
        for (const FrameLayout& layout : clip.layouts) {
            write_raw(out, static_cast<int32_t>(layout.frame_index));
            write_raw(out, static_cast<uint32_t>(layout.instances.size()));
            for (const LayoutInstance& inst : layout.instances) {
                write_raw(out, static_cast<int32_t>(inst.category_id));
                write_raw(out, static_cast<int32_t>(inst.instance_id));
                write_raw(out, inst.box.x0);
                write_raw(out, inst.box.y0);
                write_raw(out, inst.box.x1);
                write_raw(out, inst.box.y1);
            }
        }
    }
    if (!out) throw InputError("short write to " + path);
}

std::vector<ClipRecord> load_clip_cache(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw InputError("cannot open clip cache " + path);
    if (read_raw<uint32_t>(in, path) != kCacheMagic)
        throw ParseError(path + ": not a clip cache file");
    const uint32_t version = read_raw<uint32_t>(in, path);
    if (version != kCacheVersion)
        throw ParseError(path + ": unsupported cache version " + std::to_string(version));
    const uint64_t count = read_raw<uint64_t>(in, path);
    std::vector<ClipRecord> clips;
    clips.reserve(count);
    for (uint64_t ci = 0; ci < count; ++ci) {
        ClipRecord clip;
        clip.source_video = read_string(in, path);
        clip.source_start = read_raw<int32_t>(in, path);
        int dims[4];
        for (int& d : dims) d = read_raw<int32_t>(in, path);
        clip.frames = Tensor({dims[0], dims[1], dims[2], dims[3]});
        for (int64_t i = 0; i < clip.frames.size(); ++i)
            clip.frames[i] = static_cast<double>(read_raw<float>(in, path));
        for (int t = 0; t < dims[0]; ++t) {
            FrameLayout layout;
            layout.frame_index = read_raw<int32_t>(in, path);
            const uint32_t n = read_raw<uint32_t>(in, path);
            for (uint32_t k = 0; k < n; ++k) {
                LayoutInstance inst;
                inst.category_id = read_raw<int32_t>(in, path);
                inst.instance_id = read_raw<int32_t>(in, path);
                double x0 = read_raw<double>(in, path);
                double y0 = read_raw<double>(in, path);
                double x1 = read_raw<double>(in, path);
                double y1 = read_raw<double>(in, path);
                inst.box = BoundingBox(x0, y0, x1, y1);
                layout.instances.push_back(inst);
            }
            clip.layouts.push_back(std::move(layout));
        }
        clips.push_back(std::move(clip));
    }
    return clips;
}

}  // namespace movgan
