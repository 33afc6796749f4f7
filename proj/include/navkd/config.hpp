#pragma once

// Experiment configuration: JSON in, validated struct out.

#include <cstdint>
#include <string>
#include <vector>

#include "navkd/distill.hpp"
#include "navkd/model.hpp"

namespace navkd {

struct WorldConfig {
    std::uint64_t seed = 7;
    int n_nodes = 40;
    double degree = 3.0;
    int min_hops = 4;
    int max_hops = 7;
    int train_worlds = 8;     // shared by the student pool and val-seen
    int teacher_worlds = 64;  // extra worlds only the teacher trains on
    int unseen_worlds = 8;
};

struct DataConfig {
    int student_pool = 96;       // fixed episode pool for student training
    int val_seen_episodes = 100;
    int val_unseen_episodes = 200;
};

struct TrainConfig {
    int teacher_pretrain_iters = 2400;
    int teacher_finetune_iters = 300;
    int student_pretrain_iters = 800;
    int student_finetune_iters = 300;
    int batch_size = 8;
    double teacher_lr = 1e-3;
    double student_lr = 1e-3;
    int max_steps = 15;
    double oracle_weight = 1.0;  // teacher-forced term added during fine-tuning
};

struct EvalConfig {
    std::vector<std::uint64_t> seeds = {1, 2, 3, 4, 5};
    int bench_episodes = 50;
    int bench_repeats = 1;
};

struct ExperimentConfig {
    std::uint64_t seed = 1;  // student seed for single runs
    WorldConfig world;
    DataConfig data;
    // Same depths as the model defaults at a quarter of the width, so a full
    // experiment fits on one core.
    ModelConfig teacher = [] {
        ModelConfig c = ModelConfig::teacher_default();
        c.hidden_dim = 32;
        c.ffn_dim = 64;
        return c;
    }();
    ModelConfig student = [] {
        ModelConfig c = ModelConfig::student_default();
        c.hidden_dim = 16;
        c.ffn_dim = 32;
        return c;
    }();
    TrainConfig train;
    DistillPlan pretrain_plan = [] {
        DistillPlan p;
        p.stage = Stage::Pretrain;
        return p;
    }();
    DistillPlan finetune_plan = [] {
        DistillPlan p;
        p.stage = Stage::Finetune;
        return p;
    }();
    EvalConfig eval;
    std::string out_dir = "runs/default";

    // Throws ConfigError.
    void validate() const;
};

std::string config_to_json(const ExperimentConfig& cfg);
// Missing keys keep their defaults; unknown keys and bad types raise
// ConfigError. Validates the result.
ExperimentConfig config_from_json(const std::string& text);
ExperimentConfig load_config(const std::string& path);

// Digest of everything that determines the shared world and teacher.
std::uint64_t upstream_digest(const ExperimentConfig& cfg);

}  // namespace navkd
