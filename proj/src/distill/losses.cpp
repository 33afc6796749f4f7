#include <stdexcept>

#include "navkd/distill.hpp"
#include "navkd/errors.hpp"
#include "navkd/ops.hpp"

namespace navkd {
namespace {

int block_count(EncoderKind kind, const ModelConfig& c) {
    switch (kind) {
        case EncoderKind::Language: return c.n_lang_blocks;
        case EncoderKind::Panorama: return c.n_pano_blocks;
        case EncoderKind::CrossCoarse:
        case EncoderKind::CrossFine: return c.n_cross_blocks;
    }
    throw std::logic_error("unknown encoder kind");
}

const char* block_prefix(EncoderKind kind) {
    switch (kind) {
        case EncoderKind::Language: return "proj.lang.";
        case EncoderKind::Panorama: return "proj.pano.";
        case EncoderKind::CrossCoarse: return "proj.coarse.";
        case EncoderKind::CrossFine: return "proj.fine.";
    }
    throw std::logic_error("unknown encoder kind");
}

constexpr std::array<EncoderKind, 4> kKinds = {EncoderKind::Language, EncoderKind::Panorama,
                                               EncoderKind::CrossCoarse, EncoderKind::CrossFine};

Tensor zero_loss() { return Tensor::scalar(0.0); }

Tensor as_scalar(const Tensor& t) { return t.rank() == 1 && t.numel() == 1 ? t : reshape(t, {1}); }

}  // namespace

std::string to_string(EncoderKind kind) {
    switch (kind) {
        case EncoderKind::Language: return "language";
        case EncoderKind::Panorama: return "panorama";
        case EncoderKind::CrossCoarse: return "cross-coarse";
        case EncoderKind::CrossFine: return "cross-fine";
    }
    return "unknown";
}

int LayerMap::operator()(int m) const {
    if (m < 1 || m > static_cast<int>(entries.size()))
        throw OutOfRange(to_string(kind) + " student block " + std::to_string(m) + " outside [1, " +
                         std::to_string(entries.size()) + "]");
    return entries[static_cast<std::size_t>(m - 1)];
}

LayerMap make_layer_map(EncoderKind kind, const ModelConfig& student, const ModelConfig& teacher) {
    const int ns = block_count(kind, student), nt = block_count(kind, teacher);
    if (ns < 1 || nt % ns != 0)
        throw ConfigError(to_string(kind) + ": teacher depth " + std::to_string(nt) +
                          " is not a multiple of student depth " + std::to_string(ns));
    LayerMap map{kind, {}};
    for (int m = 1; m <= ns; ++m) map.entries.push_back(m * (nt / ns));
    return map;
}

int layer_map(EncoderKind kind, int m) {
    return make_layer_map(kind, ModelConfig::student_default(), ModelConfig::teacher_default())(m);
}

Projections::Projections(const ModelConfig& student, const ModelConfig& teacher, Rng& rng) {
    const std::size_t ds = student.hidden_dim, dt = teacher.hidden_dim;
    params_.add_xavier("proj.emb", ds, dt, rng);
    for (EncoderKind kind : kKinds)
        for (int m = 1; m <= block_count(kind, student); ++m)
            params_.add_xavier(block_prefix(kind) + std::to_string(m), ds, dt, rng);
    params_.add_xavier("proj.txt", ds, dt, rng);
    params_.add_xavier("proj.pano_out", ds, dt, rng);
}

void Projections::set_identity() {
    for (auto& p : params_.items()) {
        Tensor& w = p.tensor;
        if (w.rows() != w.cols())
            throw ShapeError("identity projection needs equal widths, " + p.name + " is " + to_string(w.shape()));
        const Tensor eye = Tensor::identity(w.rows());
        std::copy(eye.values().begin(), eye.values().end(), w.mutable_values().begin());
    }
}

const Tensor& Projections::block(EncoderKind kind, int m) const {
    const std::string name = block_prefix(kind) + std::to_string(m);
    if (!params_.contains(name)) throw OutOfRange("no projection " + name);
    return params_.at(name);
}

DistillPlan DistillPlan::disabled(Stage stage) {
    DistillPlan p;
    p.stage = stage;
    p.kd_weight = 0.0;
    p.emb = p.attn = p.hidn = false;
    p.txt = p.pano = p.fuse = false;
    return p;
}

void DistillPlan::validate() const {
    if (!(temperature > 0.0)) throw ConfigError("distillation temperature must be positive");
    if (!(kd_weight >= 0.0)) throw ConfigError("kd_weight must be non-negative");
}

Tensor embed_distill_loss(const Tensor& e_teacher, const Tensor& e_student, const Tensor& w_e) {
    if (e_teacher.rows() != e_student.rows())
        throw ShapeError("embedding distillation: teacher has " + std::to_string(e_teacher.rows()) +
                         " tokens, student " + std::to_string(e_student.rows()));
    return mse(e_teacher.detach(), matmul(e_student, w_e));
}

Tensor attn_distill_loss(const Tensor& a_teacher, std::size_t teacher_heads, const Tensor& a_student,
                         std::size_t student_heads) {
    if (teacher_heads != student_heads)
        throw ShapeError("attention distillation: " + std::to_string(teacher_heads) + " teacher heads vs " +
                         std::to_string(student_heads) + " student heads");
    if (a_teacher.shape() != a_student.shape())
        throw ShapeError("attention distillation: " + to_string(a_teacher.shape()) + " vs " +
                         to_string(a_student.shape()));
    // Heads are equal-sized row blocks, so the mean of per-head MSEs is the
    // MSE over the whole stack.
    return mse(a_teacher.detach(), a_student);
}

Tensor hidden_distill_loss(const Tensor& h_teacher, const Tensor& h_student, const Tensor& w_h) {
    if (h_teacher.rows() != h_student.rows())
        throw ShapeError("hidden distillation: sequence lengths " + std::to_string(h_teacher.rows()) + " and " +
                         std::to_string(h_student.rows()) + " differ");
    return mse(h_teacher.detach(), matmul(h_student, w_h));
}

BlockLossParts block_distill_loss(const BlockCapture& teacher, const BlockCapture& student, const Tensor& w_h,
                                  bool use_attention, bool use_hidden) {
    BlockLossParts out;
    out.attention = use_attention ? attn_distill_loss(teacher.attention, teacher.heads, student.attention, student.heads)
                                  : zero_loss();
    out.hidden = use_hidden ? hidden_distill_loss(teacher.hidden, student.hidden, w_h) : zero_loss();
    out.total = add(as_scalar(out.attention), as_scalar(out.hidden));
    return out;
}

Tensor encoder_distill_loss(const LayerMap& map, const std::vector<BlockCapture>& teacher,
                            const std::vector<BlockCapture>& student, const Projections& proj, const DistillPlan& plan) {
    if (student.size() != map.entries.size())
        throw ShapeError(to_string(map.kind) + ": " + std::to_string(student.size()) +
                         " student blocks captured, layer map has " + std::to_string(map.entries.size()));
    Tensor total = zero_loss();
    if (!plan.attn && !plan.hidn) return total;
    for (int m = 1; m <= static_cast<int>(student.size()); ++m) {
        const int h = map(m);
        if (h > static_cast<int>(teacher.size()))
            throw OutOfRange(to_string(map.kind) + ": teacher block " + std::to_string(h) + " not captured");
        const auto parts = block_distill_loss(teacher[h - 1], student[m - 1], proj.block(map.kind, m), plan.attn, plan.hidn);
        total = add(total, parts.total);
    }
    return total;
}

Tensor step_distill_loss(const AgentStep& teacher, const AgentStep& student, const Projections& proj,
                         const std::array<LayerMap, 3>& maps, const DistillPlan& plan) {
    Tensor total = encoder_distill_loss(maps[0], teacher.pano.blocks, student.pano.blocks, proj, plan);
    total = add(total, encoder_distill_loss(maps[1], teacher.coarse.blocks, student.coarse.blocks, proj, plan));
    total = add(total, encoder_distill_loss(maps[2], teacher.fine.blocks, student.fine.blocks, proj, plan));
    return total;
}

Tensor pretrain_kd_loss(const EpisodePass& teacher, const EpisodePass& student, const Projections& proj,
                        const std::array<LayerMap, 4>& maps, const DistillPlan& plan) {
    Tensor total = zero_loss();
    if (plan.emb)
        total = add(total, as_scalar(embed_distill_loss(teacher.language->embedding, student.language->embedding,
                                                        proj.embedding())));
    total = add(total, encoder_distill_loss(maps[0], teacher.language->blocks, student.language->blocks, proj, plan));

    const auto& ts = *teacher.steps;
    const auto& ss = *student.steps;
    if (ts.size() != ss.size())
        throw CandidateSetMismatch("teacher took " + std::to_string(ts.size()) + " steps, student " +
                                   std::to_string(ss.size()));
    if (ss.empty() || (!plan.attn && !plan.hidn)) return total;
    const std::array<LayerMap, 3> step_maps = {maps[1], maps[2], maps[3]};
    Tensor steps = zero_loss();
    for (std::size_t i = 0; i < ss.size(); ++i) steps = add(steps, step_distill_loss(ts[i], ss[i], proj, step_maps, plan));
    return add(total, scale(steps, 1.0 / static_cast<double>(ss.size())));
}

FinetuneKdParts finetune_kd_loss(const LanguageOutput& teacher_lang, const AgentStep& teacher,
                                 const LanguageOutput& student_lang, const AgentStep& student,
                                 const Projections& proj, const DistillPlan& plan) {
    if (!(plan.temperature > 0.0)) throw NonPositiveTemperature("temperature must be positive");
    if (teacher.logits.candidates != student.logits.candidates)
        throw CandidateSetMismatch("teacher and student scored different candidate sets");
    FinetuneKdParts out;
    out.txt = plan.txt ? as_scalar(mse(teacher_lang.feature.detach(), matmul(student_lang.feature, proj.text())))
                       : zero_loss();
    out.pano = plan.pano ? as_scalar(mse(teacher.pano.feature.detach(), matmul(student.pano.feature, proj.panorama())))
                         : zero_loss();
    out.fuse = plan.fuse ? as_scalar(soft_cross_entropy(teacher.logits.logits.detach(), student.logits.logits,
                                                        plan.temperature))
                         : zero_loss();
    out.total = add(add(out.txt, out.pano), out.fuse);
    return out;
}

}  // namespace navkd
