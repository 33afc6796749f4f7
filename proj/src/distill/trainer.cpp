#include <optional>

#include "navkd/distill.hpp"
#include "navkd/errors.hpp"
#include "navkd/ops.hpp"

namespace navkd {
namespace {

Tensor scalar_of(const Tensor& t) { return t.rank() == 1 ? t : reshape(t, {1}); }

std::size_t index_of(std::span<const int> values, int v) {
    for (std::size_t i = 0; i < values.size(); ++i)
        if (values[i] == v) return i;
    throw OutOfRange("object " + std::to_string(v) + " is not present at the goal");
}

// Object grounding loss at the goal node.
Tensor grounding_loss(const DuetModel& model, const WorldGraph& world, const Episode& ep, const FineOutput& fine) {
    const std::vector<int>& objects = world.node(ep.goal).objects;
    const Tensor scores = model.object_scores(fine, objects);
    return scalar_of(cross_entropy(reshape(scores, {scores.numel()}), index_of(objects, ep.target_object)));
}

// Mean next-action cross-entropy along the oracle path, teacher forced.
Tensor oracle_path_loss(EpisodeAgent& agent, const Episode& ep, EpisodeAgent* mentor) {
    Tensor sap = Tensor::scalar(0.0);
    const auto& path = ep.oracle_path;
    for (std::size_t i = 0; i < path.size(); ++i) {
        const AgentStep& step = agent.enter(path[i]);
        const NodeId target = i + 1 < path.size() ? path[i + 1] : kStop;
        sap = add(sap, scalar_of(cross_entropy(step.logits.logits, candidate_index(step.logits, target))));
        if (mentor) {
            NoGradGuard frozen;
            mentor->enter(path[i]);
        }
    }
    return scale(sap, 1.0 / static_cast<double>(path.size()));
}

}  // namespace

DistillTrainer::DistillTrainer(DuetModel& student, const DuetModel* teacher, Projections* proj, TrainerOptions options)
    : student_(&student), teacher_(teacher), proj_(proj), options_(options) {
    trainable_ = parameter_pointers(student.parameters());
    if (proj_)
        for (Tensor* t : parameter_pointers(proj_->parameters())) trainable_.push_back(t);
    adam_ = make_adam_state(trainable_, options_.adam);
    if (teacher_) {
        const ModelConfig& s = student.config();
        const ModelConfig& t = teacher_->config();
        maps_ = {make_layer_map(EncoderKind::Language, s, t), make_layer_map(EncoderKind::Panorama, s, t),
                 make_layer_map(EncoderKind::CrossCoarse, s, t), make_layer_map(EncoderKind::CrossFine, s, t)};
    }
}

void DistillTrainer::apply(const Tensor& loss) {
    for (Tensor* t : trainable_) t->zero_grad();
    loss.backward();
    adam_step(trainable_, adam_);
}

LossReport DistillTrainer::pretrain_step(std::span<const EpisodeRef> batch, const DistillPlan& plan) {
    if (batch.empty()) throw std::invalid_argument("empty batch");
    plan.validate();
    const bool kd = plan.any_pretrain_kd();
    if (kd && (!teacher_ || !proj_)) throw PhaseError("pre-training distillation needs a teacher and projections");

    LossReport report;
    Tensor total = Tensor::scalar(0.0);
    for (std::size_t b = 0; b < batch.size(); ++b) {
        const WorldGraph& world = *batch[b].world;
        const Episode& ep = *batch[b].episode;
        EpisodeAgent agent(*student_, world, ep, student_->encode_instruction(ep.instruction), options_.render);
        std::optional<EpisodeAgent> mentor;
        if (kd) {
            NoGradGuard frozen;
            mentor.emplace(*teacher_, world, ep, teacher_->encode_instruction(ep.instruction), options_.render);
        }

        Tensor task = oracle_path_loss(agent, ep, mentor ? &*mentor : nullptr);
        task = add(task, grounding_loss(*student_, world, ep, agent.last().fine));

        // Instruction-trajectory matching against the next episode's instruction.
        const Episode& other = *batch[(b + 1) % batch.size()].episode;
        if (batch.size() > 1 && other.instruction != ep.instruction) {
            const Tensor pos = bce_with_logits(student_->itm_logit(agent.last().coarse), 1.0);
            const LanguageOutput neg_lang = student_->encode_instruction(other.instruction);
            const Tensor neg = bce_with_logits(student_->itm_logit(student_->coarse_forward(neg_lang.feature, agent.map())), 0.0);
            task = add(task, scale(add(scalar_of(pos), scalar_of(neg)), 0.5));
        }

        Tensor episode_loss = task;
        if (kd) {
            const Tensor k = pretrain_kd_loss({&mentor->language(), &mentor->steps()}, {&agent.language(), &agent.steps()},
                                              *proj_, maps_, plan);
            report.kd += k.item();
            episode_loss = add(episode_loss, k);
        }
        report.task += task.item();
        report.steps += ep.oracle_path.size();
        total = add(total, episode_loss);
    }
    const double inv = 1.0 / static_cast<double>(batch.size());
    total = scale(total, inv);
    apply(total);
    report.total = total.item();
    report.task *= inv;
    report.kd *= inv;
    return report;
}

LossReport DistillTrainer::finetune_step(std::span<const EpisodeRef> batch, const DistillPlan& plan, Rng& rng) {
    if (batch.empty()) throw std::invalid_argument("empty batch");
    plan.validate();
    const bool kd = plan.kd_weight > 0.0 && plan.any_finetune_kd();
    if (kd && (!teacher_ || !proj_)) throw PhaseError("fine-tuning distillation needs a teacher and projections");

    LossReport report;
    Tensor total = Tensor::scalar(0.0);
    for (const EpisodeRef& ref : batch) {
        const WorldGraph& world = *ref.world;
        const Episode& ep = *ref.episode;
        EpisodeAgent agent(*student_, world, ep, student_->encode_instruction(ep.instruction), options_.render);
        std::optional<EpisodeAgent> mentor;
        if (kd) {
            NoGradGuard frozen;
            mentor.emplace(*teacher_, world, ep, teacher_->encode_instruction(ep.instruction), options_.render);
        }

        Tensor task = Tensor::scalar(0.0);
        Tensor distill = Tensor::scalar(0.0);
        NodeId node = ep.start;
        int steps = 0;
        for (int t = 0; t < options_.max_steps; ++t) {
            const AgentStep& step = agent.enter(node);
            ++steps;
            const NodeId target = oracle_candidate(world, agent.map(), ep.goal);
            task = add(task, scalar_of(cross_entropy(step.logits.logits, candidate_index(step.logits, target))));
            if (node == ep.goal) task = add(task, grounding_loss(*student_, world, ep, step.fine));
            if (mentor) {
                const AgentStep* replay = nullptr;
                {
                    NoGradGuard frozen;
                    replay = &mentor->enter(node);
                }
                distill = add(distill, finetune_kd_loss(mentor->language(), *replay, agent.language(), step, *proj_, plan).total);
            }
            const NodeId action = sample_action(step.logits, rng);
            if (action == kStop) break;
            node = action;
        }
        const double inv_steps = 1.0 / static_cast<double>(steps);
        task = scale(task, inv_steps);
        distill = scale(distill, inv_steps);
        if (options_.oracle_weight > 0.0) {
            EpisodeAgent forced(*student_, world, ep, agent.language(), options_.render);
            task = add(task, scale(oracle_path_loss(forced, ep, nullptr), options_.oracle_weight));
        }
        report.task += task.item();
        report.kd += distill.item();
        report.steps += static_cast<std::size_t>(steps);
        total = add(total, add(task, scale(distill, plan.kd_weight)));
    }
    const double inv = 1.0 / static_cast<double>(batch.size());
    total = scale(total, inv);
    apply(total);
    report.total = total.item();
    report.task *= inv;
    report.kd *= inv;
    return report;
}

}  // namespace navkd
