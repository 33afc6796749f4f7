#pragma once

// Teacher-to-student distillation: the layer map, the learnable width
// projections, every intermediate and output-level loss, and the two
// training stages (oracle-path pre-training, on-policy fine-tuning).

#include <array>
#include <string>
#include <vector>

#include "navkd/agent.hpp"
#include "navkd/model.hpp"
#include "navkd/optim.hpp"

namespace navkd {

enum class EncoderKind { Language, Panorama, CrossCoarse, CrossFine };

std::string to_string(EncoderKind kind);

struct LayerMap {
    EncoderKind kind = EncoderKind::Language;
    std::vector<int> entries;  // entries[m-1] = h(m), 1-based teacher block

    // Throws OutOfRange.
    int operator()(int m) const;
};

// Student block m learns from teacher block m * (N_teacher / N_student).
// Throws ConfigError when the teacher depth is not a multiple of the student's.
LayerMap make_layer_map(EncoderKind kind, const ModelConfig& student, const ModelConfig& teacher);
// Uses the default student and teacher configurations. Throws OutOfRange.
int layer_map(EncoderKind kind, int m);

// Learnable maps from student width to teacher width, trained with the
// student. Names: proj.emb, proj.lang.<m>, proj.pano.<m>, proj.coarse.<m>,
// proj.fine.<m>, proj.txt, proj.pano_out (m is 1-based).
class Projections {
   public:
    Projections(const ModelConfig& student, const ModelConfig& teacher, Rng& rng);

    // Sets every projection to the identity. Throws ShapeError unless the
    // widths match.
    void set_identity();

    const Tensor& embedding() const { return params_.at("proj.emb"); }
    const Tensor& block(EncoderKind kind, int m) const;
    const Tensor& text() const { return params_.at("proj.txt"); }
    const Tensor& panorama() const { return params_.at("proj.pano_out"); }

    ParameterSet& parameters() { return params_; }
    const ParameterSet& parameters() const { return params_; }

   private:
    ParameterSet params_;
};

enum class Stage { Pretrain, Finetune };

struct DistillPlan {
    Stage stage = Stage::Pretrain;
    double kd_weight = 0.1;
    double temperature = 1.0;
    bool emb = true, attn = true, hidn = true;  // pre-training objectives
    bool txt = true, pano = true, fuse = true;  // fine-tuning objectives

    bool any_pretrain_kd() const { return emb || attn || hidn; }
    bool any_finetune_kd() const { return txt || pano || fuse; }
    static DistillPlan disabled(Stage stage);
    // Throws ConfigError.
    void validate() const;
};

// MSE(E_tea, E_stu W_e). Teacher inputs are always treated as constants.
Tensor embed_distill_loss(const Tensor& e_teacher, const Tensor& e_student, const Tensor& w_e);
// Mean over heads of the per-head MSE between stacked score matrices.
Tensor attn_distill_loss(const Tensor& a_teacher, std::size_t teacher_heads, const Tensor& a_student,
                         std::size_t student_heads);
Tensor hidden_distill_loss(const Tensor& h_teacher, const Tensor& h_student, const Tensor& w_h);

struct BlockLossParts {
    Tensor attention;
    Tensor hidden;
    Tensor total;
};
BlockLossParts block_distill_loss(const BlockCapture& teacher, const BlockCapture& student, const Tensor& w_h,
                                  bool use_attention = true, bool use_hidden = true);

// Sum of the block losses of one encoder under its layer map.
Tensor encoder_distill_loss(const LayerMap& map, const std::vector<BlockCapture>& teacher,
                            const std::vector<BlockCapture>& student, const Projections& proj, const DistillPlan& plan);

// Intermediate-layer losses of one decision step (panorama, coarse and fine
// encoders).
Tensor step_distill_loss(const AgentStep& teacher, const AgentStep& student, const Projections& proj,
                         const std::array<LayerMap, 3>& maps, const DistillPlan& plan);

struct EpisodePass {
    const LanguageOutput* language = nullptr;
    const std::vector<AgentStep>* steps = nullptr;
};

// L_emb + language block losses + the per-step encoder losses averaged over
// the steps of the episode.
Tensor pretrain_kd_loss(const EpisodePass& teacher, const EpisodePass& student, const Projections& proj,
                        const std::array<LayerMap, 4>& maps, const DistillPlan& plan);

struct FinetuneKdParts {
    Tensor txt, pano, fuse, total;
};
// L_txt + L_pano + L_fuse for one step. Throws CandidateSetMismatch or
// NonPositiveTemperature.
FinetuneKdParts finetune_kd_loss(const LanguageOutput& teacher_lang, const AgentStep& teacher,
                                 const LanguageOutput& student_lang, const AgentStep& student,
                                 const Projections& proj, const DistillPlan& plan);

// A world plus the episodes drawn on it.
struct EpisodeRef {
    const WorldGraph* world = nullptr;
    const Episode* episode = nullptr;
};

struct LossReport {
    double total = 0.0;
    double task = 0.0;
    double kd = 0.0;
    std::size_t steps = 0;
};

struct TrainerOptions {
    AdamConfig adam{};
    int max_steps = 15;
    RenderParams render{};
    // Fine-tuning also adds this weight times the teacher-forced
    // oracle-path loss. Sampled rollouts alone rarely reach the goal, so
    // STOP is almost never a target and the policy unlearns stopping.
    double oracle_weight = 0.0;
};

// Holds a student, its projections and optimiser state; the teacher is
// borrowed read-only and never receives gradients.
class DistillTrainer {
   public:
    // `teacher` and `proj` may be null for runs without distillation.
    DistillTrainer(DuetModel& student, const DuetModel* teacher, Projections* proj, TrainerOptions options);

    // Teacher-forced oracle-path step: next-action prediction, instruction
    // matching, object grounding and (per plan) the pre-training KD loss.
    LossReport pretrain_step(std::span<const EpisodeRef> batch, const DistillPlan& plan);

    // The student samples its own trajectory; each step adds CE against the
    // oracle candidate plus kd_weight times the fine-tuning KD loss, with the
    // teacher replaying the student's trajectory. See oracle_weight.
    LossReport finetune_step(std::span<const EpisodeRef> batch, const DistillPlan& plan, Rng& rng);

    const AdamState& optimizer() const { return adam_; }
    AdamState& optimizer() { return adam_; }

   private:
    void apply(const Tensor& loss);

    DuetModel* student_;
    const DuetModel* teacher_;
    Projections* proj_;
    TrainerOptions options_;
    std::vector<Tensor*> trainable_;
    AdamState adam_;
    std::array<LayerMap, 4> maps_;
};

}  // namespace navkd
