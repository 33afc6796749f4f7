#pragma once

// Experiment orchestration: datasets, the five pipeline phases, ablation
// arms, sweeps and metrics export.
//
// Run directory layout:
//   config.json            resolved configuration
//   state.json             completed phases and the config digest
//   data/dataset.json      worlds and episode splits
//   checkpoints/*.ckpt     teacher, student_pretrain, student
//   logs/<phase>.csv       rows in the metrics schema, one file per phase
//   metrics.csv            concatenation of logs in phase order
//   results.csv            run_id, split, seed, SR, SPL, RGS, RGSPL, median_ms, params
//   latency.csv            per-model latency (kept out of metrics.csv, which
//                          must be byte-reproducible)
//   summary.json

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "navkd/config.hpp"
#include "navkd/metrics.hpp"

namespace navkd {

struct SplitItem {
    int world = 0;
    Episode episode;
};

struct Dataset {
    std::vector<WorldGraph> train_worlds;
    std::vector<WorldGraph> teacher_worlds;
    std::vector<WorldGraph> unseen_worlds;
    std::vector<SplitItem> pool;        // on train_worlds
    std::vector<SplitItem> val_seen;    // on train_worlds
    std::vector<SplitItem> val_unseen;  // on unseen_worlds

    // Every world the teacher trains on: train worlds, then teacher worlds.
    std::vector<const WorldGraph*> teacher_world_list() const;
};

Dataset build_dataset(const ExperimentConfig& cfg);
void save_dataset(const Dataset& data, const std::filesystem::path& path);
Dataset load_dataset(const std::filesystem::path& path);

enum class Phase { GenWorld, TrainTeacher, DistillPretrain, DistillFinetune, Eval };
const std::vector<Phase>& all_phases();
std::string phase_name(Phase p);
// Throws ConfigError.
Phase phase_from_name(const std::string& name);

struct MetricsRow {
    std::string phase;
    int iter = 0;
    std::uint64_t seed = 0;
    std::optional<double> loss_total, loss_task, loss_kd;
    std::optional<double> sr, spl, rgs, rgspl, median_ms;
    std::optional<std::size_t> params;
};

extern const char* const kMetricsHeader;
std::string format_metrics(const std::vector<MetricsRow>& rows);
std::vector<MetricsRow> parse_metrics(const std::string& text);

// Teacher: oracle-path pre-training then on-policy fine-tuning, both without
// distillation, on fresh episodes drawn from every teacher world.
std::vector<MetricsRow> train_teacher(const ExperimentConfig& cfg, const Dataset& data, DuetModel& teacher);

// Student stages on the fixed episode pool. `teacher` may be null when the
// plan disables every KD objective.
std::vector<MetricsRow> train_student_pretrain(const ExperimentConfig& cfg, const Dataset& data, const DuetModel* teacher,
                                               DuetModel& student, const DistillPlan& plan, std::uint64_t seed);
std::vector<MetricsRow> train_student_finetune(const ExperimentConfig& cfg, const Dataset& data, const DuetModel* teacher,
                                               DuetModel& student, const DistillPlan& plan, std::uint64_t seed);

enum class Split { ValSeen, ValUnseen };
std::string split_name(Split s);
MetricSummary evaluate(const DuetModel& model, const Dataset& data, Split split, int max_steps);
LatencyReport benchmark(const DuetModel& model, const Dataset& data, const ExperimentConfig& cfg);

struct SplitMetrics {
    std::string model;
    Split split = Split::ValUnseen;
    MetricSummary metrics;
};

struct RunSummary {
    std::vector<SplitMetrics> splits;
    std::optional<LatencyReport> student_latency, teacher_latency;
    std::size_t student_params = 0, teacher_params = 0;
};

class Pipeline {
   public:
    // Writes config.json. With resume=false any previous state is discarded;
    // with resume=true completed phases are skipped, provided the stored
    // config digest matches. Throws ConfigError on a digest mismatch.
    Pipeline(ExperimentConfig cfg, bool resume);

    void run(Phase p);
    // Every phase in order, then export.
    RunSummary run_all();
    bool completed(Phase p) const;

    const ExperimentConfig& config() const { return cfg_; }
    const std::filesystem::path& dir() const { return dir_; }
    std::filesystem::path checkpoint(const std::string& name) const;

   private:
    void mark_done(Phase p);
    void save_state() const;
    const Dataset& dataset();
    DuetModel load_teacher() const;

    ExperimentConfig cfg_;
    std::filesystem::path dir_;
    std::vector<std::string> done_;
    std::optional<Dataset> data_;
};

// Merges logs/<phase>.csv into metrics.csv and writes summary.json from
// metrics.csv, results.csv and latency.csv. Idempotent.
void export_metrics(const std::filesystem::path& run_dir);

enum class Arm { Both, PretrainOnly, FinetuneOnly, None };
std::string arm_name(Arm a);
Arm arm_from_name(const std::string& name);

struct ArmResult {
    Arm arm = Arm::None;
    std::uint64_t seed = 0;
    MetricSummary val_seen, val_unseen;
};

struct ArmStats {
    Arm arm = Arm::None;
    double sr_mean = 0, sr_std = 0, spl_mean = 0, spl_std = 0, rgs_mean = 0, rgs_std = 0, rgspl_mean = 0, rgspl_std = 0;
};

struct AblationReport {
    std::vector<ArmResult> runs;
    std::vector<ArmStats> table;  // val-unseen statistics per arm
    std::uint64_t teacher_digest = 0;
};

// Shared world and teacher (built in cfg.out_dir if missing), then every
// requested arm for every seed in cfg.eval.seeds. Writes
// ablation/<arm>/seed-<s>/metrics.csv, ablation.csv and ablation_table.csv.
AblationReport run_ablation(const ExperimentConfig& cfg, const std::vector<Arm>& arms);

struct SweepRow {
    std::string name;
    DistillPlan plan;
    MetricSummary val_seen, val_unseen;
    std::uint64_t pretrain_digest = 0;
};

// One fine-tuning-distillation run per plan, all from the same
// pretrain-distilled checkpoint. Writes sweep/<tag>-<name>/metrics.csv and
// sweep_<tag>.csv.
std::vector<SweepRow> run_sweep(const ExperimentConfig& cfg, const std::string& tag,
                                const std::vector<std::pair<std::string, DistillPlan>>& plans);
std::vector<std::pair<std::string, DistillPlan>> kd_weight_plans(const DistillPlan& base,
                                                                 const std::vector<double>& weights);
// all, no-txt, no-pano, no-fuse, fuse-only.
std::vector<std::pair<std::string, DistillPlan>> objective_plans(const DistillPlan& base);

double mean_of(const std::vector<double>& v);
double stddev_of(const std::vector<double>& v);  // sample standard deviation

}  // namespace navkd
