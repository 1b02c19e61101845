#include "movgan/training.hpp"

#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>

#include "json.hpp"
#include "movgan/errors.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace movgan {

int TrainConfig::steps_per_epoch() const {
    return std::max(1, frames_per_epoch / (batch_size * 2));
}

TrainConfig TrainConfig::resolved() const {
    TrainConfig c = *this;
    c.generator.resolution = c.resolution;
    c.generator.clip_length = c.clip_length;
    c.discriminator.resolution = c.resolution;
    c.discriminator.clip_length = c.clip_length;
    c.discriminator.categories = c.generator.categories;
    c.discriminator.max_instances = c.generator.max_instances;
    c.discriminator.half_precision = c.discriminator_half_precision;
    return c;
}

void TrainConfig::validate() const {
    if (batch_size < 1) throw ConfigError("batch_size must be >= 1");
    if (!(learning_rate > 0.0)) throw ConfigError("learning_rate must be > 0");
    if (clip_length < 2) throw ConfigError("clip_length must be >= 2 for frame pairs");
    if (epochs < 1 || frames_per_epoch < batch_size * 2)
        throw ConfigError("epochs >= 1 and frames_per_epoch >= 2 * batch_size required");
    if (telemetry_interval < 1) throw ConfigError("telemetry_interval must be >= 1");
    if (r1_enabled && r1_interval < 1) throw ConfigError("r1_interval must be >= 1");
    TrainConfig r = resolved();
    r.generator.validate();
    r.discriminator.validate();
}

std::string train_config_to_json(const TrainConfig& cfg) {
    json j{{"batch_size", cfg.batch_size},
           {"learning_rate", cfg.learning_rate},
           {"frames_per_epoch", cfg.frames_per_epoch},
           {"clip_length", cfg.clip_length},
           {"resolution", cfg.resolution},
           {"conditioning_mode", conditioning_mode_name(cfg.conditioning_mode)},
           {"discriminator_half_precision", cfg.discriminator_half_precision},
           {"seed", cfg.seed},
           {"optimizer",
            {{"beta1", cfg.optimizer.beta1},
             {"beta2", cfg.optimizer.beta2},
             {"epsilon", cfg.optimizer.epsilon}}},
           {"epochs", cfg.epochs},
           {"telemetry_interval", cfg.telemetry_interval},
           {"r1", {{"enabled", cfg.r1_enabled}, {"weight", cfg.r1_weight}, {"interval", cfg.r1_interval}}},
           {"freeze_generator", cfg.freeze_generator},
           {"generator", json::parse(generator_config_to_json(cfg.generator))},
           {"discriminator", json::parse(discriminator_config_to_json(cfg.discriminator))}};
    return j.dump(2);
}

TrainConfig train_config_from_json(const std::string& text) {
    json j;
    try {
        j = json::parse(text);
    } catch (const json::exception& e) {
        throw ParseError(std::string("train config: invalid JSON (") + e.what() + ")");
    }
    TrainConfig cfg;
    cfg.batch_size = j.value("batch_size", cfg.batch_size);
    cfg.learning_rate = j.value("learning_rate", cfg.learning_rate);
    cfg.frames_per_epoch = j.value("frames_per_epoch", cfg.frames_per_epoch);
    cfg.clip_length = j.value("clip_length", cfg.clip_length);
    cfg.resolution = j.value("resolution", cfg.resolution);
    if (j.contains("conditioning_mode"))
        cfg.conditioning_mode =
            conditioning_mode_from_name(j["conditioning_mode"].get<std::string>());
    cfg.discriminator_half_precision =
        j.value("discriminator_half_precision", cfg.discriminator_half_precision);
    cfg.seed = j.value("seed", cfg.seed);
    if (j.contains("optimizer")) {
        const auto& o = j["optimizer"];
        cfg.optimizer.beta1 = o.value("beta1", cfg.optimizer.beta1);
        cfg.optimizer.beta2 = o.value("beta2", cfg.optimizer.beta2);
        cfg.optimizer.epsilon = o.value("epsilon", cfg.optimizer.epsilon);
    }
    cfg.epochs = j.value("epochs", cfg.epochs);
    cfg.telemetry_interval = j.value("telemetry_interval", cfg.telemetry_interval);
    if (j.contains("r1")) {
        const auto& r = j["r1"];
        cfg.r1_enabled = r.value("enabled", cfg.r1_enabled);
        cfg.r1_weight = r.value("weight", cfg.r1_weight);
        cfg.r1_interval = r.value("interval", cfg.r1_interval);
    }
    cfg.freeze_generator = j.value("freeze_generator", cfg.freeze_generator);
    if (j.contains("generator"))
        cfg.generator = generator_config_from_json(j["generator"].dump());
    if (j.contains("discriminator"))
        cfg.discriminator = discriminator_config_from_json(j["discriminator"].dump());
    return cfg;
}

TrainConfig load_train_config(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw InputError("cannot open config " + path);
    std::string text((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    return train_config_from_json(text);
}

std::string telemetry_to_json(const TrainTelemetry& t) {
    json j{{"step", t.step},
           {"g_loss", t.generator_loss},
           {"d_loss", t.discriminator_loss},
           {"logit_gap_mean", t.logit_gap_mean},
           {"logit_gap_std", t.logit_gap_std},
           {"r1_penalty", t.r1_penalty},
           {"wall_seconds", t.wall_seconds}};
    return j.dump();
}

TrainTelemetry telemetry_from_json(const std::string& line) {
    json j;
    try {
        j = json::parse(line);
    } catch (const json::exception& e) {
        throw ParseError(std::string("telemetry: invalid JSON (") + e.what() + ")");
    }
    TrainTelemetry t;
    t.step = j.value("step", int64_t{0});
    t.generator_loss = j.value("g_loss", 0.0);
    t.discriminator_loss = j.value("d_loss", 0.0);
    t.logit_gap_mean = j.value("logit_gap_mean", 0.0);
    t.logit_gap_std = j.value("logit_gap_std", 0.0);
    t.r1_penalty = j.value("r1_penalty", 0.0);
    t.wall_seconds = j.value("wall_seconds", 0.0);
    return t;
}

namespace {

double softplus_value(double x) {
    return std::max(x, 0.0) + std::log1p(std::exp(-std::abs(x)));
}

double log_sigmoid(double x) {
    return x >= 0.0 ? -std::log1p(std::exp(-x)) : x - std::log1p(std::exp(x));
}

}  // namespace

std::pair<double, double> gan_losses(double real_score, double fake_score) {
    const double d_loss = softplus_value(-real_score) + softplus_value(fake_score);
    const double g_loss = softplus_value(-fake_score);
    return {d_loss, g_loss};
}

std::tuple<int, int, int> sample_frame_pair(int clip_length, Rng& rng) {
    if (clip_length < 2) throw InputError("frame pairs need clip_length >= 2");
    const int t1 = rng.uniform_int(0, clip_length - 1);
    int t2 = rng.uniform_int(0, clip_length - 2);
    if (t2 >= t1) ++t2;
    return {t1, t2, t1 >= t2 ? t1 - t2 : t2 - t1};
}

void AdamState::step(NamedParams& params, const std::map<std::string, Tensor>& grads, double lr,
                     const OptimizerConfig& cfg) {
    ++t;
    const double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(t));
    const double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(t));
    for (const auto& [name, g] : grads) {
        Tensor& p = params.get(name);
        auto mi = m.find(name);
        if (mi == m.end()) {
            mi = m.emplace(name, Tensor(p.shape())).first;
            v.emplace(name, Tensor(p.shape()));
        }
        Tensor& mm = mi->second;
        Tensor& vv = v.at(name);
        for (int64_t i = 0; i < p.size(); ++i) {
            mm[i] = cfg.beta1 * mm[i] + (1.0 - cfg.beta1) * g[i];
            vv[i] = cfg.beta2 * vv[i] + (1.0 - cfg.beta2) * g[i] * g[i];
            const double mhat = mm[i] / bc1;
            const double vhat = vv[i] / bc2;
            p[i] -= lr * mhat / (std::sqrt(vhat) + cfg.epsilon);
        }
    }
}

TrainerState TrainerState::init(const TrainConfig& cfg0) {
    TrainConfig cfg = cfg0.resolved();
    cfg.validate();
    TrainerState state;
    state.generator = GeneratorState::init(cfg.generator, derive_seed(cfg.seed, 0x69676e));
    state.discriminator =
        DiscriminatorState::init(cfg.discriminator, derive_seed(cfg.seed, 0x69646e));
    return state;
}

namespace {

Tensor frame_of(const Tensor& clip, int t) {
    Tensor f({clip.dim(1), clip.dim(2), clip.dim(3)});
    const int64_t block = f.size();
    std::copy(clip.data() + t * block, clip.data() + (t + 1) * block, f.data());
    return f;
}

// Grid holding exactly the two sampled frame times (sorted, as the grid
// must be strictly increasing); returns the slice index of each frame.
struct PairGrid {
    CoordinateGrid grid;
    int slot1 = 0, slot2 = 1;
};

PairGrid pair_grid(int clip_length, int resolution, int t1, int t2) {
    PairGrid pg;
    pg.grid = CoordinateGrid::uniform(clip_length, resolution, resolution);
    const int lo = std::min(t1, t2), hi = std::max(t1, t2);
    pg.grid.ts = {static_cast<double>(lo) / clip_length, static_cast<double>(hi) / clip_length};
    pg.slot1 = t1 <= t2 ? 0 : 1;
    pg.slot2 = t1 <= t2 ? 1 : 0;
    return pg;
}

struct BatchItem {
    ClipRecord clip;  // after mode-dependent preprocessing
    int t1 = 0, t2 = 0;
    LatentPair z;
};

std::vector<BatchItem> assemble_batch(const std::vector<ClipRecord>& dataset,
                                      const TrainConfig& cfg, Rng& rng) {
    std::vector<BatchItem> batch;
    for (int b = 0; b < cfg.batch_size; ++b) {
        BatchItem item;
        const int idx = rng.uniform_int(0, static_cast<int>(dataset.size()) - 1);
        const ClipRecord& src = dataset[static_cast<size_t>(idx)];
        if (src.frames.dim(0) != cfg.clip_length || src.frames.dim(2) != cfg.resolution ||
            src.frames.dim(3) != cfg.resolution)
            throw ConfigError("dataset clip " + src.frames.shape_string() +
                              " does not match configured T/resolution");
        item.clip = cfg.conditioning_mode == ConditioningMode::kObjectLabelsCrop
                        ? center_crop_clip(src)
                        : src;
        auto [t1, t2, dt] = sample_frame_pair(cfg.clip_length, rng);
        (void)dt;
        item.t1 = t1;
        item.t2 = t2;
        item.z.z_content = rng.normal_tensor({cfg.generator.z_content_dim});
        item.z.z_motion = rng.normal_tensor({cfg.generator.z_motion_dim});
        batch.push_back(std::move(item));
    }
    return batch;
}

std::map<std::string, Tensor> harvest_grads(Tape& tape, const BoundParams& bound) {
    std::map<std::string, Tensor> grads;
    for (const auto& [name, var] : bound.vars) grads.emplace(name, tape.grad(var));
    return grads;
}

void check_finite(double value, const char* which, int64_t step, uint64_t batch_seed) {
    if (std::isfinite(value)) return;
    char buf[160];
    std::snprintf(buf, sizeof(buf), "step %lld: %s is non-finite (batch seed %llu)",
                  static_cast<long long>(step), which, static_cast<unsigned long long>(batch_seed));
    throw Error(ErrorCategory::kRuntime, buf);
}

}  // namespace

TrainTelemetry train_step(const std::vector<ClipRecord>& dataset, TrainerState& state,
                          const TrainConfig& cfg0) {
    const auto t_start = std::chrono::steady_clock::now();
    TrainConfig cfg = cfg0.resolved();
    if (dataset.empty()) throw InputError("training dataset is empty");

    const uint64_t batch_seed = derive_seed(cfg.seed, 0x73746570, static_cast<uint64_t>(state.step));
    Rng rng(batch_seed);
    std::vector<BatchItem> batch = assemble_batch(dataset, cfg, rng);

    const GeneratorConfig& gcfg = state.generator.config;
    const DiscriminatorConfig& dcfg = state.discriminator.config;
    const ConditioningMode mode = cfg.conditioning_mode;
    const double inv_batch = 1.0 / cfg.batch_size;

    // ---- Discriminator update ----
    Tape tape;
    BoundParams dp = bind(tape, state.discriminator.effective_params(), true);
    BoundParams gp = bind(tape, state.generator.params, false);

    std::vector<Var> real_logits, fake_logits, real_leaves;
    std::vector<Var> loss_terms;
    for (const BatchItem& item : batch) {
        const auto& lay1 = item.clip.layouts[static_cast<size_t>(item.t1)];
        const auto& lay2 = item.clip.layouts[static_cast<size_t>(item.t2)];

        Var rf1 = tape.leaf(frame_of(item.clip.frames, item.t1), true);
        Var rf2 = tape.leaf(frame_of(item.clip.frames, item.t2), true);
        real_leaves.push_back(rf1);
        real_leaves.push_back(rf2);
        Var real = discriminate(tape, dp, dcfg, rf1, rf2, lay1, lay2, item.t1, item.t2, mode);

        PairGrid pg = pair_grid(cfg.clip_length, cfg.resolution, item.t1, item.t2);
        Var zc = tape.constant(item.z.z_content);
        Var zm = tape.constant(item.z.z_motion);
        Var fake_pair =
            generate_frames(tape, gp, gcfg, zc, zm, item.clip.layouts[0], pg.grid, mode);
        Var ff1 = ad::slice0(fake_pair, pg.slot1);
        Var ff2 = ad::slice0(fake_pair, pg.slot2);
        Var fake = discriminate(tape, dp, dcfg, ff1, ff2, lay1, lay2, item.t1, item.t2, mode);

        real_logits.push_back(real);
        fake_logits.push_back(fake);
        loss_terms.push_back(ad::add(ad::softplus(ad::scale(real, -1.0)), ad::softplus(fake)));
    }
    Var d_loss = ad::scale(ad::add_many(loss_terms), inv_batch);

    // Lazy R1 penalty on real samples. The penalty value is exact; its
    // parameter gradient is a central-difference Hessian-vector product,
    // two extra passes at perturbed real inputs.
    double r1_value = 0.0;
    std::map<std::string, Tensor> r1_grads;
    const bool r1_now =
        cfg.r1_enabled && cfg.r1_weight > 0.0 && state.step % cfg.r1_interval == 0;
    if (r1_now) {
        Var real_sum = ad::add_many(real_logits);
        tape.backward(real_sum);
        std::vector<Tensor> directions;
        double max_norm = 0.0;
        for (Var leaf : real_leaves) {
            Tensor g = tape.grad(leaf);
            double norm = 0.0;
            for (int64_t i = 0; i < g.size(); ++i) norm += g[i] * g[i];
            max_norm = std::max(max_norm, std::sqrt(norm));
            directions.push_back(std::move(g));
        }
        for (size_t n = 0; n < batch.size(); ++n) {
            double sq = 0.0;
            for (int k = 0; k < 2; ++k) {
                const Tensor& g = directions[2 * n + k];
                for (int64_t i = 0; i < g.size(); ++i) sq += g[i] * g[i];
            }
            r1_value += sq * inv_batch;
        }
        tape.zero_grad();

        const double eps = 1e-4 / (max_norm + 1e-12);
        auto perturbed_pass = [&](double sign) {
            Tape side;
            BoundParams dps = bind(side, state.discriminator.effective_params(), true);
            std::vector<Var> logits;
            for (size_t n = 0; n < batch.size(); ++n) {
                const BatchItem& item = batch[n];
                auto shift = [&](int t, const Tensor& dir) {
                    Tensor f = frame_of(item.clip.frames, t);
                    for (int64_t i = 0; i < f.size(); ++i) f[i] += sign * eps * dir[i];
                    return f;
                };
                Var f1 = side.constant(shift(item.t1, directions[2 * n]));
                Var f2 = side.constant(shift(item.t2, directions[2 * n + 1]));
                logits.push_back(discriminate(side, dps, dcfg, f1, f2,
                                              item.clip.layouts[static_cast<size_t>(item.t1)],
                                              item.clip.layouts[static_cast<size_t>(item.t2)],
                                              item.t1, item.t2, mode));
            }
            side.backward(ad::add_many(logits));
            return harvest_grads(side, dps);
        };
        auto plus = perturbed_pass(1.0);
        auto minus = perturbed_pass(-1.0);
        const double coeff = cfg.r1_weight * inv_batch / (2.0 * eps);
        for (auto& [name, gp_] : plus) {
            Tensor g = gp_;
            const Tensor& gm = minus.at(name);
            for (int64_t i = 0; i < g.size(); ++i) g[i] = coeff * (g[i] - gm[i]);
            r1_grads.emplace(name, std::move(g));
        }
    }

    tape.backward(d_loss);
    const double d_loss_value = d_loss.value()[0] + 0.5 * cfg.r1_weight * (r1_now ? r1_value : 0.0);
    check_finite(d_loss_value, "discriminator loss", state.step, batch_seed);

    std::map<std::string, Tensor> d_grads = harvest_grads(tape, dp);
    for (const auto& [name, extra] : r1_grads) {
        Tensor& g = d_grads.at(name);
        for (int64_t i = 0; i < g.size(); ++i) g[i] += extra[i];
    }
    state.opt_d.step(state.discriminator.params, d_grads, cfg.learning_rate, cfg.optimizer);

    // Telemetry uses the pre-update logits of this batch.
    std::vector<double> gaps;
    for (size_t n = 0; n < batch.size(); ++n)
        gaps.push_back(log_sigmoid(real_logits[n].value()[0]) -
                       log_sigmoid(fake_logits[n].value()[0]));
    double gap_mean = 0.0;
    for (double g : gaps) gap_mean += g;
    gap_mean /= static_cast<double>(gaps.size());
    double gap_var = 0.0;
    for (double g : gaps) gap_var += (g - gap_mean) * (g - gap_mean);
    const double gap_std = std::sqrt(gap_var / static_cast<double>(gaps.size()));

    // ---- Generator update (against the updated discriminator) ----
    double g_loss_value = 0.0;
    if (!cfg.freeze_generator) {
        Tape tg;
        BoundParams gp2 = bind(tg, state.generator.params, true);
        BoundParams dp2 = bind(tg, state.discriminator.effective_params(), false);
        std::vector<Var> g_terms;
        for (const BatchItem& item : batch) {
            PairGrid pg = pair_grid(cfg.clip_length, cfg.resolution, item.t1, item.t2);
            Var zc = tg.constant(item.z.z_content);
            Var zm = tg.constant(item.z.z_motion);
            Var fake_pair =
                generate_frames(tg, gp2, gcfg, zc, zm, item.clip.layouts[0], pg.grid, mode);
            Var ff1 = ad::slice0(fake_pair, pg.slot1);
            Var ff2 = ad::slice0(fake_pair, pg.slot2);
            Var fake = discriminate(tg, dp2, dcfg, ff1, ff2,
                                    item.clip.layouts[static_cast<size_t>(item.t1)],
                                    item.clip.layouts[static_cast<size_t>(item.t2)], item.t1,
                                    item.t2, mode);
            g_terms.push_back(ad::softplus(ad::scale(fake, -1.0)));
        }
        Var g_loss = ad::scale(ad::add_many(g_terms), inv_batch);
        g_loss_value = g_loss.value()[0];
        check_finite(g_loss_value, "generator loss", state.step, batch_seed);
        tg.backward(g_loss);
        std::map<std::string, Tensor> g_grads = harvest_grads(tg, gp2);
        state.opt_g.step(state.generator.params, g_grads, cfg.learning_rate, cfg.optimizer);
    } else {
        for (size_t n = 0; n < batch.size(); ++n)
            g_loss_value += softplus_value(-fake_logits[n].value()[0]) * inv_batch;
    }

    state.step += 1;
    TrainTelemetry telemetry;
    telemetry.step = state.step;
    telemetry.generator_loss = g_loss_value;
    telemetry.discriminator_loss = d_loss_value;
    telemetry.logit_gap_mean = gap_mean;
    telemetry.logit_gap_std = gap_std;
    telemetry.r1_penalty = r1_now ? r1_value : 0.0;
    telemetry.wall_seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t_start).count();
    return telemetry;
}

void save_trainer(const std::string& path, const TrainerState& state, const TrainConfig& cfg) {
    ModelCheckpoint ckpt;
    ckpt.generator = state.generator;
    ckpt.discriminator = state.discriminator;
    for (const auto& [name, t] : state.opt_g.m) ckpt.extra.add("opt.g.m." + name, t);
    for (const auto& [name, t] : state.opt_g.v) ckpt.extra.add("opt.g.v." + name, t);
    for (const auto& [name, t] : state.opt_d.m) ckpt.extra.add("opt.d.m." + name, t);
    for (const auto& [name, t] : state.opt_d.v) ckpt.extra.add("opt.d.v." + name, t);
    ckpt.meta["step"] = std::to_string(state.step);
    ckpt.meta["adam_g_t"] = std::to_string(state.opt_g.t);
    ckpt.meta["adam_d_t"] = std::to_string(state.opt_d.t);
    ckpt.meta["seed"] = std::to_string(cfg.seed);
    ckpt.meta["train_config"] = train_config_to_json(cfg);
    save_model(path, ckpt);
}

TrainerState load_trainer(const std::string& path, const TrainConfig& cfg0) {
    TrainConfig cfg = cfg0.resolved();
    ModelCheckpoint ckpt = load_model(path);
    if (ckpt.generator.config.resolution != cfg.resolution ||
        ckpt.generator.config.clip_length != cfg.clip_length)
        throw ConfigError("checkpoint was trained with a different resolution/clip length");

    TrainerState state;
    state.generator = std::move(ckpt.generator);
    state.discriminator = std::move(ckpt.discriminator);
    if (ckpt.meta.count("step")) state.step = std::stoll(ckpt.meta.at("step"));
    if (ckpt.meta.count("adam_g_t")) state.opt_g.t = std::stoll(ckpt.meta.at("adam_g_t"));
    if (ckpt.meta.count("adam_d_t")) state.opt_d.t = std::stoll(ckpt.meta.at("adam_d_t"));
    for (const auto& [name, t] : ckpt.extra.items) {
        if (name.rfind("opt.g.m.", 0) == 0)
            state.opt_g.m[name.substr(8)] = t;
        else if (name.rfind("opt.g.v.", 0) == 0)
            state.opt_g.v[name.substr(8)] = t;
        else if (name.rfind("opt.d.m.", 0) == 0)
            state.opt_d.m[name.substr(8)] = t;
        else if (name.rfind("opt.d.v.", 0) == 0)
            state.opt_d.v[name.substr(8)] = t;
    }
    return state;
}

TrainResult train_loop(const std::vector<ClipRecord>& dataset, const TrainConfig& cfg0,
                       const std::string& out_dir, bool resume) {
    TrainConfig cfg = cfg0.resolved();
    cfg.validate();
    if (dataset.empty()) throw InputError("training dataset is empty");
    fs::create_directories(out_dir);
    const std::string ckpt_path = (fs::path(out_dir) / "checkpoint.bin").string();

    TrainerState state;
    if (resume) {
        if (!fs::exists(ckpt_path))
            throw InputError("resume requested but no checkpoint at " + ckpt_path);
        state = load_trainer(ckpt_path, cfg);
    } else {
        state = TrainerState::init(cfg);
    }

    std::ofstream telemetry_out((fs::path(out_dir) / "telemetry.jsonl").string(),
                                std::ios::app);
    if (!telemetry_out) throw InputError("cannot open telemetry log in " + out_dir);

    const int64_t total = cfg.total_steps();
    const int64_t per_epoch = cfg.steps_per_epoch();
    TrainResult result;
    result.checkpoint_path = ckpt_path;
    while (state.step < total) {
        TrainTelemetry t = train_step(dataset, state, cfg);
        if (t.step % cfg.telemetry_interval == 0 || t.step == total) {
            telemetry_out << telemetry_to_json(t) << "\n";
            telemetry_out.flush();
            result.recorded.push_back(t);
        }
        if (t.step % per_epoch == 0 || t.step == total) save_trainer(ckpt_path, state, cfg);
    }
    return result;
}

}  // namespace movgan
