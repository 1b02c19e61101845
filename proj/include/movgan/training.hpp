#pragma once

#include <map>
#include <string>
#include <tuple>
#include <vector>

#include "movgan/checkpoint.hpp"
#include "movgan/data.hpp"
#include "movgan/discriminator.hpp"
#include "movgan/generator.hpp"

namespace movgan {

struct OptimizerConfig {
    double beta1 = 0.5;
    double beta2 = 0.99;
    double epsilon = 1e-8;
};

struct TrainConfig {
    int batch_size = 8;
    double learning_rate = 5e-3;
    int frames_per_epoch = 25000;
    int clip_length = 16;
    int resolution = 64;
    ConditioningMode conditioning_mode = ConditioningMode::kLayoutIdentity;
    bool discriminator_half_precision = false;
    uint64_t seed = 1;
    OptimizerConfig optimizer;

    int epochs = 1;
    int telemetry_interval = 500;
    bool r1_enabled = true;
    double r1_weight = 1.0;
    int r1_interval = 16;
    bool freeze_generator = false;  // diagnostic: discriminator-only updates

    // Network sizing; resolution/clip_length/half_precision above override
    // the matching sub-config fields via resolved().
    GeneratorConfig generator;
    DiscriminatorConfig discriminator;

    // Each sampled clip contributes one frame pair per step.
    int steps_per_epoch() const;
    int total_steps() const { return epochs * steps_per_epoch(); }
    TrainConfig resolved() const;
    void validate() const;
};

std::string train_config_to_json(const TrainConfig& cfg);
TrainConfig train_config_from_json(const std::string& text);
TrainConfig load_train_config(const std::string& path);

struct TrainTelemetry {
    int64_t step = 0;
    double generator_loss = 0.0;
    double discriminator_loss = 0.0;
    double logit_gap_mean = 0.0;  // mean over batch of log sig(D_real) - log sig(D_fake)
    double logit_gap_std = 0.0;
    double r1_penalty = 0.0;  // 0 on steps without the lazy penalty
    double wall_seconds = 0.0;
};

std::string telemetry_to_json(const TrainTelemetry& t);
TrainTelemetry telemetry_from_json(const std::string& line);

// Non-saturating surrogate of the minimax objective:
//   d_loss = softplus(-real) + softplus(fake),  g_loss = softplus(-fake).
std::pair<double, double> gan_losses(double real_score, double fake_score);

// t1 != t2 drawn uniformly without replacement from {0..clip_length-1}.
std::tuple<int, int, int> sample_frame_pair(int clip_length, Rng& rng);

// Adam with moments kept per parameter name; serializable for resume.
struct AdamState {
    std::map<std::string, Tensor> m, v;
    int64_t t = 0;

    void step(NamedParams& params, const std::map<std::string, Tensor>& grads, double lr,
              const OptimizerConfig& cfg);
};

struct TrainerState {
    GeneratorState generator;
    DiscriminatorState discriminator;
    AdamState opt_g, opt_d;
    int64_t step = 0;

    static TrainerState init(const TrainConfig& cfg);
};

// One discriminator update followed by one generator update on a freshly
// sampled batch. Deterministic given (config.seed, state.step, dataset).
TrainTelemetry train_step(const std::vector<ClipRecord>& dataset, TrainerState& state,
                          const TrainConfig& cfg);

struct TrainResult {
    std::vector<TrainTelemetry> recorded;  // every telemetry_interval steps + final
    std::string checkpoint_path;
};

// Runs to total_steps(), appending line-delimited telemetry and writing the
// checkpoint under out_dir. With resume=true, continues from the checkpoint
// in out_dir; the continuation is bitwise identical to an uninterrupted run.
TrainResult train_loop(const std::vector<ClipRecord>& dataset, const TrainConfig& cfg,
                       const std::string& out_dir, bool resume = false);

// Checkpoint plumbing shared by train_loop and the CLI.
void save_trainer(const std::string& path, const TrainerState& state, const TrainConfig& cfg);
TrainerState load_trainer(const std::string& path, const TrainConfig& cfg);

}  // namespace movgan
