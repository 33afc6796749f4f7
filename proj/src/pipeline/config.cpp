#include "navkd/config.hpp"

#include <algorithm>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "navkd/errors.hpp"

namespace navkd {
namespace {

using json = nlohmann::ordered_json;

json model_json(const ModelConfig& m) {
    return {{"n_lang_blocks", m.n_lang_blocks},   {"n_pano_blocks", m.n_pano_blocks},
            {"n_cross_blocks", m.n_cross_blocks}, {"hidden_dim", m.hidden_dim},
            {"n_heads", m.n_heads},               {"ffn_dim", m.ffn_dim},
            {"vocab_size", m.vocab_size},         {"max_instruction_len", m.max_instruction_len},
            {"view_feature_dim", m.view_feature_dim}, {"n_views", m.n_views},
            {"n_objects", m.n_objects}};
}

json plan_json(const DistillPlan& p) {
    return {{"kd_weight", p.kd_weight}, {"temperature", p.temperature}, {"emb", p.emb},   {"attn", p.attn},
            {"hidn", p.hidn},           {"txt", p.txt},                 {"pano", p.pano}, {"fuse", p.fuse}};
}

// Reads the keys of `j` into fields, rejecting unknown keys.
class Section {
   public:
    Section(const json& j, std::string where) : j_(j), where_(std::move(where)) {
        if (!j_.is_object()) throw ConfigError(where_ + " must be an object");
    }
    template <typename T>
    Section& field(const char* key, T& out) {
        seen_.push_back(key);
        if (!j_.contains(key)) return *this;
        try {
            out = j_.at(key).get<T>();
        } catch (const json::exception& e) {
            throw ConfigError(where_ + "." + key + ": " + e.what());
        }
        return *this;
    }
    Section& known(const char* key) {
        seen_.push_back(key);
        return *this;
    }
    void done() const {
        for (const auto& [k, v] : j_.items())
            if (std::find(seen_.begin(), seen_.end(), k) == seen_.end()) throw ConfigError("unknown key " + where_ + "." + k);
    }

   private:
    const json& j_;
    std::string where_;
    std::vector<std::string> seen_;
};

void read_model(const json& j, const std::string& where, ModelConfig& m) {
    Section(j, where)
        .field("n_lang_blocks", m.n_lang_blocks)
        .field("n_pano_blocks", m.n_pano_blocks)
        .field("n_cross_blocks", m.n_cross_blocks)
        .field("hidden_dim", m.hidden_dim)
        .field("n_heads", m.n_heads)
        .field("ffn_dim", m.ffn_dim)
        .field("vocab_size", m.vocab_size)
        .field("max_instruction_len", m.max_instruction_len)
        .field("view_feature_dim", m.view_feature_dim)
        .field("n_views", m.n_views)
        .field("n_objects", m.n_objects)
        .done();
}

void read_plan(const json& j, const std::string& where, DistillPlan& p) {
    Section(j, where)
        .field("kd_weight", p.kd_weight)
        .field("temperature", p.temperature)
        .field("emb", p.emb)
        .field("attn", p.attn)
        .field("hidn", p.hidn)
        .field("txt", p.txt)
        .field("pano", p.pano)
        .field("fuse", p.fuse)
        .done();
}

std::uint64_t fnv1a(std::string_view s) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char c : s) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    return h;
}

}  // namespace

void ExperimentConfig::validate() const {
    auto need = [](bool ok, const std::string& what) {
        if (!ok) throw ConfigError(what);
    };
    teacher.validate();
    student.validate();
    need(teacher.vocab_size == student.vocab_size && teacher.n_views == student.n_views &&
             teacher.view_feature_dim == student.view_feature_dim && teacher.n_objects == student.n_objects &&
             teacher.max_instruction_len == student.max_instruction_len,
         "teacher and student must agree on vocabulary, views and objects");
    need(teacher.n_heads == student.n_heads, "attention distillation needs equal head counts");
    for (auto [t, s] : {std::pair{teacher.n_lang_blocks, student.n_lang_blocks},
                        std::pair{teacher.n_pano_blocks, student.n_pano_blocks},
                        std::pair{teacher.n_cross_blocks, student.n_cross_blocks}})
        need(t % s == 0, "teacher depth " + std::to_string(t) + " is not a multiple of student depth " + std::to_string(s));
    need(world.n_nodes >= 2, "world.n_nodes must be at least 2");
    need(world.degree >= 1.0, "world.degree must be at least 1");
    need(world.min_hops >= 1 && world.max_hops >= world.min_hops, "world hop range is empty");
    need(world.train_worlds >= 1 && world.unseen_worlds >= 1 && world.teacher_worlds >= 0, "world counts");
    need(data.student_pool >= 1 && data.val_seen_episodes >= 1 && data.val_unseen_episodes >= 1, "episode counts");
    need(train.teacher_pretrain_iters >= 0 && train.teacher_finetune_iters >= 0 && train.student_pretrain_iters >= 0 &&
             train.student_finetune_iters >= 0,
         "iteration counts must be non-negative");
    need(train.batch_size >= 1, "train.batch_size must be at least 1");
    need(train.teacher_lr > 0.0 && train.student_lr > 0.0, "learning rates must be positive");
    need(train.max_steps >= 1, "train.max_steps must be at least 1");
    need(train.oracle_weight >= 0.0, "train.oracle_weight must be non-negative");
    pretrain_plan.validate();
    finetune_plan.validate();
    need(!eval.seeds.empty(), "eval.seeds must list at least one seed");
    need(eval.bench_episodes >= 1 && eval.bench_repeats >= 1, "benchmark sizes must be positive");
    need(!out_dir.empty(), "out_dir must be set");
}

std::string config_to_json(const ExperimentConfig& c) {
    json j;
    j["seed"] = c.seed;
    j["world"] = {{"seed", c.world.seed},
                  {"n_nodes", c.world.n_nodes},
                  {"degree", c.world.degree},
                  {"min_hops", c.world.min_hops},
                  {"max_hops", c.world.max_hops},
                  {"train_worlds", c.world.train_worlds},
                  {"teacher_worlds", c.world.teacher_worlds},
                  {"unseen_worlds", c.world.unseen_worlds}};
    j["data"] = {{"student_pool", c.data.student_pool},
                 {"val_seen_episodes", c.data.val_seen_episodes},
                 {"val_unseen_episodes", c.data.val_unseen_episodes}};
    j["teacher"] = model_json(c.teacher);
    j["student"] = model_json(c.student);
    j["train"] = {{"teacher_pretrain_iters", c.train.teacher_pretrain_iters},
                  {"teacher_finetune_iters", c.train.teacher_finetune_iters},
                  {"student_pretrain_iters", c.train.student_pretrain_iters},
                  {"student_finetune_iters", c.train.student_finetune_iters},
                  {"batch_size", c.train.batch_size},
                  {"teacher_lr", c.train.teacher_lr},
                  {"student_lr", c.train.student_lr},
                  {"max_steps", c.train.max_steps},
                  {"oracle_weight", c.train.oracle_weight}};
    j["pretrain_plan"] = plan_json(c.pretrain_plan);
    j["finetune_plan"] = plan_json(c.finetune_plan);
    j["eval"] = {{"seeds", c.eval.seeds}, {"bench_episodes", c.eval.bench_episodes}, {"bench_repeats", c.eval.bench_repeats}};
    j["out_dir"] = c.out_dir;
    return j.dump(2) + "\n";
}

ExperimentConfig config_from_json(const std::string& text) {
    json j;
    try {
        j = json::parse(text);
    } catch (const json::exception& e) {
        throw ConfigError(std::string("config is not valid JSON: ") + e.what());
    }
    ExperimentConfig c;
    Section root(j, "config");
    root.field("seed", c.seed).field("out_dir", c.out_dir);
    for (const char* key : {"world", "data", "teacher", "student", "train", "pretrain_plan", "finetune_plan", "eval"})
        root.known(key);
    root.done();
    if (j.contains("world"))
        Section(j["world"], "world")
            .field("seed", c.world.seed)
            .field("n_nodes", c.world.n_nodes)
            .field("degree", c.world.degree)
            .field("min_hops", c.world.min_hops)
            .field("max_hops", c.world.max_hops)
            .field("train_worlds", c.world.train_worlds)
            .field("teacher_worlds", c.world.teacher_worlds)
            .field("unseen_worlds", c.world.unseen_worlds)
            .done();
    if (j.contains("data"))
        Section(j["data"], "data")
            .field("student_pool", c.data.student_pool)
            .field("val_seen_episodes", c.data.val_seen_episodes)
            .field("val_unseen_episodes", c.data.val_unseen_episodes)
            .done();
    if (j.contains("teacher")) read_model(j["teacher"], "teacher", c.teacher);
    if (j.contains("student")) read_model(j["student"], "student", c.student);
    if (j.contains("train"))
        Section(j["train"], "train")
            .field("teacher_pretrain_iters", c.train.teacher_pretrain_iters)
            .field("teacher_finetune_iters", c.train.teacher_finetune_iters)
            .field("student_pretrain_iters", c.train.student_pretrain_iters)
            .field("student_finetune_iters", c.train.student_finetune_iters)
            .field("batch_size", c.train.batch_size)
            .field("teacher_lr", c.train.teacher_lr)
            .field("student_lr", c.train.student_lr)
            .field("max_steps", c.train.max_steps)
            .field("oracle_weight", c.train.oracle_weight)
            .done();
    if (j.contains("pretrain_plan")) read_plan(j["pretrain_plan"], "pretrain_plan", c.pretrain_plan);
    if (j.contains("finetune_plan")) read_plan(j["finetune_plan"], "finetune_plan", c.finetune_plan);
    if (j.contains("eval"))
        Section(j["eval"], "eval")
            .field("seeds", c.eval.seeds)
            .field("bench_episodes", c.eval.bench_episodes)
            .field("bench_repeats", c.eval.bench_repeats)
            .done();
    c.pretrain_plan.stage = Stage::Pretrain;
    c.finetune_plan.stage = Stage::Finetune;
    c.validate();
    return c;
}

ExperimentConfig load_config(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot read config " + path);
    std::stringstream ss;
    ss << in.rdbuf();
    return config_from_json(ss.str());
}

std::uint64_t upstream_digest(const ExperimentConfig& c) {
    json j = json::parse(config_to_json(c));
    json up;
    for (const char* key : {"world", "data", "teacher"}) up[key] = j[key];
    up["teacher_train"] = {j["train"]["teacher_pretrain_iters"], j["train"]["teacher_finetune_iters"],
                           j["train"]["batch_size"], j["train"]["teacher_lr"], j["train"]["max_steps"],
                           j["train"]["oracle_weight"]};
    return fnv1a(up.dump());
}

}  // namespace navkd
