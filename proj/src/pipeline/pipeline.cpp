#include "navkd/pipeline.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <sstream>

#include <json.hpp>

#include "navkd/checkpoint.hpp"
#include "navkd/errors.hpp"

namespace navkd {
namespace fs = std::filesystem;
using json = nlohmann::ordered_json;

namespace {

// Seed streams derived from the experiment seeds.
enum : std::uint64_t {
    kTrainWorldStream = 100,
    kTeacherWorldStream = 10000,
    kUnseenWorldStream = 20000,
    kPoolStream = 30000,
    kSeenStream = 40000,
    kUnseenStream = 50000,
    kTeacherInit = 0x7e0,
    kTeacherBatches = 0x7e1,
    kTeacherRollouts = 0x7e2,
    kStudentInit = 0x5e0,
    kPretrainProj = 0x5e1,
    kPretrainBatches = 0x5e2,
    kFinetuneProj = 0x5e3,
    kFinetuneBatches = 0x5e4,
};

std::string read_text(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    if (!in) throw std::runtime_error("cannot read " + p.string());
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

void write_text(const fs::path& p, const std::string& text) {
    if (p.has_parent_path()) fs::create_directories(p.parent_path());
    const fs::path tmp = p.string() + ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        out << text;
        if (!out) throw std::runtime_error("cannot write " + p.string());
    }
    fs::rename(tmp, p);
}

std::string num(double v, int precision = 10) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.*g", precision, v);
    return buf;
}

std::string opt_num(const std::optional<double>& v) { return v ? num(*v) : std::string(); }

std::uint64_t fnv1a(std::string_view s) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char c : s) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    return h;
}

std::string hex(std::uint64_t v) {
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
    return buf;
}

EpisodeParams episode_params(const ExperimentConfig& cfg) {
    EpisodeParams p;
    p.min_hops = cfg.world.min_hops;
    p.max_hops = cfg.world.max_hops;
    return p;
}

std::vector<SplitItem> make_split(const std::vector<WorldGraph>& worlds, int count, std::uint64_t base,
                                  std::uint64_t stream, const EpisodeParams& params) {
    std::vector<SplitItem> out;
    for (int k = 0; k < count; ++k) {
        SplitItem item;
        item.world = k % static_cast<int>(worlds.size());
        item.episode = generate_episode(worlds[static_cast<std::size_t>(item.world)],
                                        mix_seed(base, stream + static_cast<std::uint64_t>(k)), params);
        item.episode.id = k;
        out.push_back(std::move(item));
    }
    return out;
}

json split_json(const std::vector<SplitItem>& items) {
    std::vector<Episode> eps;
    json worlds = json::array();
    for (const auto& it : items) {
        eps.push_back(it.episode);
        worlds.push_back(it.world);
    }
    return {{"worlds", worlds}, {"episodes", json::parse(episodes_to_json(eps))}};
}

std::vector<SplitItem> split_from_json(const json& j) {
    const auto eps = episodes_from_json(j.at("episodes").dump());
    const auto& worlds = j.at("worlds");
    if (worlds.size() != eps.size()) throw FormatError("dataset split has mismatched world indices");
    std::vector<SplitItem> out;
    for (std::size_t i = 0; i < eps.size(); ++i) out.push_back({worlds[i].get<int>(), eps[i]});
    return out;
}

json worlds_json(const std::vector<WorldGraph>& worlds) {
    json arr = json::array();
    for (const auto& w : worlds) arr.push_back(json::parse(world_to_json(w)));
    return arr;
}

std::vector<WorldGraph> worlds_from_json(const json& arr) {
    std::vector<WorldGraph> out;
    for (const auto& w : arr) out.push_back(world_from_json(w.dump()));
    return out;
}

std::vector<EpisodeRef> refs_of(const std::vector<WorldGraph>& worlds, const std::vector<SplitItem>& items) {
    std::vector<EpisodeRef> out;
    for (const auto& it : items) out.push_back({&worlds[static_cast<std::size_t>(it.world)], &it.episode});
    return out;
}

MetricsRow loss_row(const std::string& phase, int iter, std::uint64_t seed, const LossReport& r) {
    MetricsRow row;
    row.phase = phase;
    row.iter = iter;
    row.seed = seed;
    row.loss_total = r.total;
    row.loss_task = r.task;
    row.loss_kd = r.kd;
    return row;
}

MetricsRow eval_row(const std::string& phase, std::uint64_t seed, const MetricSummary& m, std::size_t params) {
    MetricsRow row;
    row.phase = phase;
    row.seed = seed;
    row.sr = m.sr;
    row.spl = m.spl;
    row.rgs = m.rgs;
    row.rgspl = m.rgspl;
    row.params = params;
    return row;
}

TrainerOptions trainer_options(double lr, const TrainConfig& train) {
    TrainerOptions o;
    o.adam.lr = lr;
    o.max_steps = train.max_steps;
    o.oracle_weight = train.oracle_weight;
    return o;
}

std::vector<EpisodeRef> sample_pool(const std::vector<EpisodeRef>& pool, int batch, Rng& rng) {
    std::uniform_int_distribution<std::size_t> pick(0, pool.size() - 1);
    std::vector<EpisodeRef> out;
    for (int b = 0; b < batch; ++b) out.push_back(pool[pick(rng)]);
    return out;
}

bool needs_teacher(const DistillPlan& plan) {
    return plan.stage == Stage::Pretrain ? plan.any_pretrain_kd() : plan.kd_weight > 0.0 && plan.any_finetune_kd();
}

void write_rows(const fs::path& p, const std::vector<MetricsRow>& rows) { write_text(p, format_metrics(rows)); }

std::string config_digest_hex(const ExperimentConfig& cfg) { return hex(fnv1a(config_to_json(cfg))); }

}  // namespace

std::vector<const WorldGraph*> Dataset::teacher_world_list() const {
    std::vector<const WorldGraph*> out;
    for (const auto& w : train_worlds) out.push_back(&w);
    for (const auto& w : teacher_worlds) out.push_back(&w);
    return out;
}

Dataset build_dataset(const ExperimentConfig& cfg) {
    cfg.validate();
    const WorldConfig& wc = cfg.world;
    auto make_worlds = [&](int n, std::uint64_t stream) {
        std::vector<WorldGraph> out;
        for (int i = 0; i < n; ++i)
            out.push_back(generate_world(mix_seed(wc.seed, stream + static_cast<std::uint64_t>(i)), wc.n_nodes, wc.degree));
        return out;
    };
    Dataset d;
    d.train_worlds = make_worlds(wc.train_worlds, kTrainWorldStream);
    d.teacher_worlds = make_worlds(wc.teacher_worlds, kTeacherWorldStream);
    d.unseen_worlds = make_worlds(wc.unseen_worlds, kUnseenWorldStream);
    const EpisodeParams params = episode_params(cfg);
    d.pool = make_split(d.train_worlds, cfg.data.student_pool, wc.seed, kPoolStream, params);
    d.val_seen = make_split(d.train_worlds, cfg.data.val_seen_episodes, wc.seed, kSeenStream, params);
    d.val_unseen = make_split(d.unseen_worlds, cfg.data.val_unseen_episodes, wc.seed, kUnseenStream, params);
    return d;
}

void save_dataset(const Dataset& d, const fs::path& path) {
    json j;
    j["format"] = "navkd-dataset";
    j["version"] = 1;
    j["train_worlds"] = worlds_json(d.train_worlds);
    j["teacher_worlds"] = worlds_json(d.teacher_worlds);
    j["unseen_worlds"] = worlds_json(d.unseen_worlds);
    j["pool"] = split_json(d.pool);
    j["val_seen"] = split_json(d.val_seen);
    j["val_unseen"] = split_json(d.val_unseen);
    write_text(path, j.dump() + "\n");
}

Dataset load_dataset(const fs::path& path) {
    const json j = json::parse(read_text(path));
    if (j.value("format", "") != "navkd-dataset" || j.value("version", 0) != 1)
        throw FormatError(path.string() + " is not a version 1 dataset");
    Dataset d;
    d.train_worlds = worlds_from_json(j.at("train_worlds"));
    d.teacher_worlds = worlds_from_json(j.at("teacher_worlds"));
    d.unseen_worlds = worlds_from_json(j.at("unseen_worlds"));
    d.pool = split_from_json(j.at("pool"));
    d.val_seen = split_from_json(j.at("val_seen"));
    d.val_unseen = split_from_json(j.at("val_unseen"));
    return d;
}

const std::vector<Phase>& all_phases() {
    static const std::vector<Phase> phases = {Phase::GenWorld, Phase::TrainTeacher, Phase::DistillPretrain,
                                              Phase::DistillFinetune, Phase::Eval};
    return phases;
}

std::string phase_name(Phase p) {
    switch (p) {
        case Phase::GenWorld: return "gen-world";
        case Phase::TrainTeacher: return "train-teacher";
        case Phase::DistillPretrain: return "distill-pretrain";
        case Phase::DistillFinetune: return "distill-finetune";
        case Phase::Eval: return "eval";
    }
    return "unknown";
}

Phase phase_from_name(const std::string& name) {
    for (Phase p : all_phases())
        if (phase_name(p) == name) return p;
    throw ConfigError("unknown phase " + name);
}

const char* const kMetricsHeader = "phase,iter,seed,loss_total,loss_task,loss_kd,sr,spl,rgs,rgspl,median_ms,params";

std::string format_metrics(const std::vector<MetricsRow>& rows) {
    std::string out = std::string(kMetricsHeader) + "\n";
    for (const auto& r : rows) {
        out += r.phase + "," + std::to_string(r.iter) + "," + std::to_string(r.seed) + "," + opt_num(r.loss_total) +
               "," + opt_num(r.loss_task) + "," + opt_num(r.loss_kd) + "," + opt_num(r.sr) + "," + opt_num(r.spl) +
               "," + opt_num(r.rgs) + "," + opt_num(r.rgspl) + "," + opt_num(r.median_ms) + "," +
               (r.params ? std::to_string(*r.params) : std::string()) + "\n";
    }
    return out;
}

std::vector<MetricsRow> parse_metrics(const std::string& text) {
    std::istringstream in(text);
    std::string line;
    if (!std::getline(in, line) || line != kMetricsHeader) throw FormatError("metrics file has an unexpected header");
    std::vector<MetricsRow> rows;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        std::vector<std::string> f;
        std::stringstream ls(line);
        std::string cell;
        while (std::getline(ls, cell, ',')) f.push_back(cell);
        if (!line.empty() && line.back() == ',') f.emplace_back();
        if (f.size() != 12) throw FormatError("metrics row has " + std::to_string(f.size()) + " fields: " + line);
        auto d = [](const std::string& s) -> std::optional<double> {
            if (s.empty()) return std::nullopt;
            return std::stod(s);
        };
        MetricsRow r;
        r.phase = f[0];
        r.iter = std::stoi(f[1]);
        r.seed = std::stoull(f[2]);
        r.loss_total = d(f[3]);
        r.loss_task = d(f[4]);
        r.loss_kd = d(f[5]);
        r.sr = d(f[6]);
        r.spl = d(f[7]);
        r.rgs = d(f[8]);
        r.rgspl = d(f[9]);
        r.median_ms = d(f[10]);
        if (!f[11].empty()) r.params = std::stoull(f[11]);
        rows.push_back(std::move(r));
    }
    return rows;
}

std::vector<MetricsRow> train_teacher(const ExperimentConfig& cfg, const Dataset& data, DuetModel& teacher) {
    const auto worlds = data.teacher_world_list();
    const EpisodeParams params = episode_params(cfg);
    const std::uint64_t base = cfg.world.seed;
    const int batch_size = cfg.train.batch_size;
    std::vector<MetricsRow> rows;

    std::vector<Episode> episodes(static_cast<std::size_t>(batch_size));
    auto draw = [&](int stage, int iter) {
        std::vector<EpisodeRef> batch;
        for (int b = 0; b < batch_size; ++b) {
            const std::uint64_t s =
                mix_seed(mix_seed(base, kTeacherBatches + static_cast<std::uint64_t>(stage)),
                         static_cast<std::uint64_t>(iter) * static_cast<std::uint64_t>(batch_size) + static_cast<std::uint64_t>(b));
            const WorldGraph* w = worlds[s % worlds.size()];
            episodes[static_cast<std::size_t>(b)] = generate_episode(*w, s, params);
            batch.push_back({w, &episodes[static_cast<std::size_t>(b)]});
        }
        return batch;
    };

    {
        DistillTrainer trainer(teacher, nullptr, nullptr, trainer_options(cfg.train.teacher_lr, cfg.train));
        const DistillPlan plan = DistillPlan::disabled(Stage::Pretrain);
        for (int it = 0; it < cfg.train.teacher_pretrain_iters; ++it)
            rows.push_back(loss_row("teacher-pretrain", it, base, trainer.pretrain_step(draw(0, it), plan)));
    }
    {
        DistillTrainer trainer(teacher, nullptr, nullptr, trainer_options(cfg.train.teacher_lr, cfg.train));
        const DistillPlan plan = DistillPlan::disabled(Stage::Finetune);
        Rng rng(mix_seed(base, kTeacherRollouts));
        for (int it = 0; it < cfg.train.teacher_finetune_iters; ++it)
            rows.push_back(loss_row("teacher-finetune", it, base, trainer.finetune_step(draw(1, it), plan, rng)));
    }
    return rows;
}

std::vector<MetricsRow> train_student_pretrain(const ExperimentConfig& cfg, const Dataset& data, const DuetModel* teacher,
                                               DuetModel& student, const DistillPlan& plan, std::uint64_t seed) {
    const bool kd = needs_teacher(plan);
    if (kd && !teacher) throw PhaseError("pre-training distillation needs a teacher checkpoint");
    std::optional<Projections> proj;
    if (kd) {
        Rng init(mix_seed(seed, kPretrainProj));
        proj.emplace(student.config(), teacher->config(), init);
    }
    DistillTrainer trainer(student, kd ? teacher : nullptr, proj ? &*proj : nullptr,
                           trainer_options(cfg.train.student_lr, cfg.train));
    const auto pool = refs_of(data.train_worlds, data.pool);
    Rng rng(mix_seed(seed, kPretrainBatches));
    std::vector<MetricsRow> rows;
    for (int it = 0; it < cfg.train.student_pretrain_iters; ++it)
        rows.push_back(loss_row("distill-pretrain", it, seed,
                                trainer.pretrain_step(sample_pool(pool, cfg.train.batch_size, rng), plan)));
    return rows;
}

std::vector<MetricsRow> train_student_finetune(const ExperimentConfig& cfg, const Dataset& data, const DuetModel* teacher,
                                               DuetModel& student, const DistillPlan& plan, std::uint64_t seed) {
    const bool kd = needs_teacher(plan);
    if (kd && !teacher) throw PhaseError("fine-tuning distillation needs a teacher checkpoint");
    std::optional<Projections> proj;
    if (kd) {
        Rng init(mix_seed(seed, kFinetuneProj));
        proj.emplace(student.config(), teacher->config(), init);
    }
    DistillTrainer trainer(student, kd ? teacher : nullptr, proj ? &*proj : nullptr,
                           trainer_options(cfg.train.student_lr, cfg.train));
    const auto pool = refs_of(data.train_worlds, data.pool);
    Rng rng(mix_seed(seed, kFinetuneBatches));
    std::vector<MetricsRow> rows;
    for (int it = 0; it < cfg.train.student_finetune_iters; ++it) {
        const auto batch = sample_pool(pool, cfg.train.batch_size, rng);
        rows.push_back(loss_row("distill-finetune", it, seed, trainer.finetune_step(batch, plan, rng)));
    }
    return rows;
}

std::string split_name(Split s) { return s == Split::ValSeen ? "val_seen" : "val_unseen"; }

MetricSummary evaluate(const DuetModel& model, const Dataset& data, Split split, int max_steps) {
    const auto& worlds = split == Split::ValSeen ? data.train_worlds : data.unseen_worlds;
    const auto& items = split == Split::ValSeen ? data.val_seen : data.val_unseen;
    std::vector<EpisodeResult> results;
    for (const auto& it : items) results.push_back(rollout(model, worlds[static_cast<std::size_t>(it.world)], it.episode, max_steps));
    return summarize(results);
}

LatencyReport benchmark(const DuetModel& model, const Dataset& data, const ExperimentConfig& cfg) {
    std::vector<std::pair<const WorldGraph*, const Episode*>> eps;
    for (int k = 0; k < cfg.eval.bench_episodes; ++k) {
        const auto& it = data.val_unseen[static_cast<std::size_t>(k) % data.val_unseen.size()];
        eps.emplace_back(&data.unseen_worlds[static_cast<std::size_t>(it.world)], &it.episode);
    }
    return bench_latency(model, eps, cfg.eval.bench_repeats, BenchMode::OracleReplay, cfg.train.max_steps);
}

// ---------------------------------------------------------------------------
// Pipeline

Pipeline::Pipeline(ExperimentConfig cfg, bool resume) : cfg_(std::move(cfg)), dir_(cfg_.out_dir) {
    cfg_.validate();
    fs::create_directories(dir_);
    const fs::path state = dir_ / "state.json";
    const std::string full = config_digest_hex(cfg_);
    const std::string upstream = hex(upstream_digest(cfg_));
    if (resume && fs::exists(state)) {
        const json j = json::parse(read_text(state));
        if (j.at("upstream_digest").get<std::string>() != upstream)
            throw ConfigError("cannot resume " + dir_.string() + ": world or teacher settings changed");
        const bool same = j.at("config_digest").get<std::string>() == full;
        for (const auto& name : j.at("completed")) {
            const std::string n = name.get<std::string>();
            const Phase p = phase_from_name(n);
            if (same || p == Phase::GenWorld || p == Phase::TrainTeacher) done_.push_back(n);
        }
    }
    write_text(dir_ / "config.json", config_to_json(cfg_));
    save_state();
}

void Pipeline::save_state() const {
    json j;
    j["config_digest"] = config_digest_hex(cfg_);
    j["upstream_digest"] = hex(upstream_digest(cfg_));
    j["completed"] = done_;
    write_text(dir_ / "state.json", j.dump(2) + "\n");
}

bool Pipeline::completed(Phase p) const {
    return std::find(done_.begin(), done_.end(), phase_name(p)) != done_.end();
}

void Pipeline::mark_done(Phase p) {
    if (!completed(p)) done_.push_back(phase_name(p));
    save_state();
}

fs::path Pipeline::checkpoint(const std::string& name) const { return dir_ / "checkpoints" / (name + ".ckpt"); }

const Dataset& Pipeline::dataset() {
    if (!data_) {
        const fs::path p = dir_ / "data" / "dataset.json";
        if (!fs::exists(p)) throw PhaseError("no dataset in " + dir_.string() + "; run gen-world first");
        data_ = load_dataset(p);
    }
    return *data_;
}

DuetModel Pipeline::load_teacher() const {
    const fs::path p = checkpoint("teacher");
    if (!fs::exists(p)) throw PhaseError("no teacher checkpoint in " + dir_.string() + "; run train-teacher first");
    return load_checkpoint(cfg_.teacher, p);
}

void Pipeline::run(Phase p) {
    const fs::path logs = dir_ / "logs";
    switch (p) {
        case Phase::GenWorld: {
            data_ = build_dataset(cfg_);
            save_dataset(*data_, dir_ / "data" / "dataset.json");
            break;
        }
        case Phase::TrainTeacher: {
            const Dataset& data = dataset();
            DuetModel teacher(cfg_.teacher, mix_seed(cfg_.world.seed, kTeacherInit));
            write_rows(logs / "train-teacher.csv", train_teacher(cfg_, data, teacher));
            save_checkpoint(teacher, checkpoint("teacher"));
            break;
        }
        case Phase::DistillPretrain: {
            const Dataset& data = dataset();
            std::optional<DuetModel> teacher;
            if (needs_teacher(cfg_.pretrain_plan)) teacher.emplace(load_teacher());
            DuetModel student(cfg_.student, mix_seed(cfg_.seed, kStudentInit));
            write_rows(logs / "distill-pretrain.csv",
                       train_student_pretrain(cfg_, data, teacher ? &*teacher : nullptr, student, cfg_.pretrain_plan, cfg_.seed));
            save_checkpoint(student, checkpoint("student_pretrain"));
            break;
        }
        case Phase::DistillFinetune: {
            const fs::path init = checkpoint("student_pretrain");
            if (!fs::exists(init))
                throw PhaseError("distill-finetune needs " + init.string() + "; run distill-pretrain first");
            const Dataset& data = dataset();
            std::optional<DuetModel> teacher;
            if (needs_teacher(cfg_.finetune_plan)) teacher.emplace(load_teacher());
            DuetModel student = load_checkpoint(cfg_.student, init);
            write_rows(logs / "distill-finetune.csv",
                       train_student_finetune(cfg_, data, teacher ? &*teacher : nullptr, student, cfg_.finetune_plan, cfg_.seed));
            save_checkpoint(student, checkpoint("student"));
            break;
        }
        case Phase::Eval: {
            const fs::path sp = checkpoint("student");
            if (!fs::exists(sp)) throw PhaseError("eval needs " + sp.string() + "; run distill-finetune first");
            const Dataset& data = dataset();
            const DuetModel student = load_checkpoint(cfg_.student, sp);
            const DuetModel teacher = load_teacher();
            std::vector<MetricsRow> rows;
            std::string results = "run_id,split,seed,SR,SPL,RGS,RGSPL,median_ms,params\n";
            std::string latency = "model,median_ms,p90_ms,episodes,params\n";
            std::map<std::string, double> medians;
            for (const auto& [name, model, seed] :
                 {std::tuple{std::string("student"), &student, cfg_.seed}, std::tuple{std::string("teacher"), &teacher, cfg_.world.seed}}) {
                const LatencyReport lat = benchmark(*model, data, cfg_);
                medians[name] = lat.median_ms;
                latency += name + "," + num(lat.median_ms) + "," + num(lat.p90_ms) + "," +
                           std::to_string(lat.per_episode_ms.size()) + "," + std::to_string(lat.params) + "\n";
                for (Split s : {Split::ValSeen, Split::ValUnseen}) {
                    const MetricSummary m = evaluate(*model, data, s, cfg_.train.max_steps);
                    rows.push_back(eval_row("eval/" + name + "/" + split_name(s), seed, m, model->parameter_count()));
                    results += name + "," + split_name(s) + "," + std::to_string(seed) + "," + num(m.sr) + "," +
                               num(m.spl) + "," + num(m.rgs) + "," + num(m.rgspl) + "," + num(lat.median_ms) + "," +
                               std::to_string(model->parameter_count()) + "\n";
                }
            }
            write_rows(logs / "eval.csv", rows);
            write_text(dir_ / "results.csv", results);
            write_text(dir_ / "latency.csv", latency);
            break;
        }
    }
    mark_done(p);
}

namespace {

// latency.csv rows: model, median_ms, p90_ms, episodes, params. Per-episode
// samples are not stored; the vector only carries the count.
std::map<std::string, LatencyReport> read_latency(const fs::path& run_dir) {
    std::map<std::string, LatencyReport> out;
    const fs::path path = run_dir / "latency.csv";
    if (!fs::exists(path)) return out;
    std::istringstream in(read_text(path));
    std::string line;
    std::getline(in, line);
    while (std::getline(in, line)) {
        std::stringstream ls(line);
        std::string name, med, p90, n, pc;
        std::getline(ls, name, ',');
        std::getline(ls, med, ',');
        std::getline(ls, p90, ',');
        std::getline(ls, n, ',');
        std::getline(ls, pc, ',');
        LatencyReport r;
        r.median_ms = std::stod(med);
        r.p90_ms = std::stod(p90);
        r.per_episode_ms.assign(std::stoul(n), 0.0);
        r.params = std::stoul(pc);
        out[name] = r;
    }
    return out;
}

}  // namespace

RunSummary Pipeline::run_all() {
    for (Phase p : all_phases())
        if (!completed(p)) run(p);
    export_metrics(dir_);

    RunSummary s;
    for (const auto& row : parse_metrics(read_text(dir_ / "metrics.csv"))) {
        if (row.phase.rfind("eval/", 0) != 0) continue;
        SplitMetrics m;
        const auto second = row.phase.find('/', 5);
        m.model = row.phase.substr(5, second - 5);
        m.split = row.phase.substr(second + 1) == "val_seen" ? Split::ValSeen : Split::ValUnseen;
        m.metrics = {*row.sr, *row.spl, *row.rgs, *row.rgspl, 0};
        s.splits.push_back(m);
    }
    s.student_params = param_count(cfg_.student);
    s.teacher_params = param_count(cfg_.teacher);
    const auto latency = read_latency(dir_);
    if (latency.count("student")) s.student_latency = latency.at("student");
    if (latency.count("teacher")) s.teacher_latency = latency.at("teacher");
    return s;
}

void export_metrics(const fs::path& run_dir) {
    std::vector<MetricsRow> rows;
    for (Phase p : all_phases()) {
        const fs::path log = run_dir / "logs" / (phase_name(p) + ".csv");
        if (!fs::exists(log)) continue;
        const auto part = parse_metrics(read_text(log));
        rows.insert(rows.end(), part.begin(), part.end());
    }
    write_text(run_dir / "metrics.csv", format_metrics(rows));

    json summary;
    summary["schema_version"] = 1;
    summary["metrics_columns"] = kMetricsHeader;
    json evals = json::object();
    std::map<std::string, std::size_t> params;
    std::map<std::string, MetricsRow> last_loss;
    for (const auto& r : rows) {
        if (r.phase.rfind("eval/", 0) == 0) {
            const auto second = r.phase.find('/', 5);
            const std::string model = r.phase.substr(5, second - 5);
            evals[model][r.phase.substr(second + 1)] = {{"sr", *r.sr}, {"spl", *r.spl}, {"rgs", *r.rgs}, {"rgspl", *r.rgspl}};
            if (r.params) params[model] = *r.params;
        } else {
            last_loss[r.phase] = r;
        }
    }
    summary["eval"] = evals;
    json losses = json::object();
    for (const auto& [phase, r] : last_loss)
        losses[phase] = {{"iter", r.iter}, {"loss_total", *r.loss_total}, {"loss_task", *r.loss_task}, {"loss_kd", *r.loss_kd}};
    summary["final_losses"] = losses;
    if (params.count("student") && params.count("teacher")) {
        summary["params"] = {{"student", params["student"]},
                             {"teacher", params["teacher"]},
                             {"ratio", static_cast<double>(params["student"]) / static_cast<double>(params["teacher"])}};
    }
    const auto latency = read_latency(run_dir);
    if (!latency.empty()) {
        json l = json::object();
        for (const auto& [name, rep] : latency)
            l[name] = {{"median_ms", rep.median_ms}, {"p90_ms", rep.p90_ms}, {"episodes", rep.per_episode_ms.size()}};
        if (latency.count("student") && latency.count("teacher"))
            l["student_to_teacher_ratio"] = latency.at("student").median_ms / latency.at("teacher").median_ms;
        summary["latency"] = l;
    }
    write_text(run_dir / "summary.json", summary.dump(2) + "\n");
}

// ---------------------------------------------------------------------------
// Ablation and sweeps

std::string arm_name(Arm a) {
    switch (a) {
        case Arm::Both: return "both";
        case Arm::PretrainOnly: return "pretrain_only";
        case Arm::FinetuneOnly: return "finetune_only";
        case Arm::None: return "none";
    }
    return "unknown";
}

Arm arm_from_name(const std::string& name) {
    for (Arm a : {Arm::Both, Arm::PretrainOnly, Arm::FinetuneOnly, Arm::None})
        if (arm_name(a) == name) return a;
    throw ConfigError("unknown ablation arm " + name);
}

double mean_of(const std::vector<double>& v) {
    if (v.empty()) return 0.0;
    double s = 0.0;
    for (double x : v) s += x;
    return s / static_cast<double>(v.size());
}

double stddev_of(const std::vector<double>& v) {
    if (v.size() < 2) return 0.0;
    const double m = mean_of(v);
    double s = 0.0;
    for (double x : v) s += (x - m) * (x - m);
    return std::sqrt(s / static_cast<double>(v.size() - 1));
}

namespace {

// World and teacher shared by every arm, built on first use.
struct Shared {
    Pipeline pipeline;
    Dataset data;
    DuetModel teacher;
    std::uint64_t teacher_digest;
};

Shared prepare_shared(const ExperimentConfig& cfg) {
    Pipeline p(cfg, true);
    if (!p.completed(Phase::GenWorld)) p.run(Phase::GenWorld);
    if (!p.completed(Phase::TrainTeacher)) p.run(Phase::TrainTeacher);
    Dataset data = load_dataset(p.dir() / "data" / "dataset.json");
    DuetModel teacher = load_checkpoint(cfg.teacher, p.checkpoint("teacher"));
    const std::uint64_t digest = file_digest(p.checkpoint("teacher"));
    return Shared{std::move(p), std::move(data), std::move(teacher), digest};
}

std::vector<MetricsRow> eval_rows(const DuetModel& model, const Dataset& data, const ExperimentConfig& cfg,
                                  std::uint64_t seed, MetricSummary& seen, MetricSummary& unseen) {
    seen = evaluate(model, data, Split::ValSeen, cfg.train.max_steps);
    unseen = evaluate(model, data, Split::ValUnseen, cfg.train.max_steps);
    return {eval_row("eval/student/val_seen", seed, seen, model.parameter_count()),
            eval_row("eval/student/val_unseen", seed, unseen, model.parameter_count())};
}

// Key for cached ablation work: everything that shapes a student run
// except the output location and the seed list, plus the teacher weights.
std::string run_key(const ExperimentConfig& cfg, std::uint64_t teacher_digest) {
    ExperimentConfig c = cfg;
    c.out_dir.clear();
    c.eval.seeds = {0};
    return hex(fnv1a(config_to_json(c) + hex(teacher_digest)));
}

json summary_json(const MetricSummary& m) {
    return {{"sr", m.sr}, {"spl", m.spl}, {"rgs", m.rgs}, {"rgspl", m.rgspl}, {"episodes", m.episodes}};
}

MetricSummary summary_from_json(const json& j) {
    return {j.at("sr").get<double>(), j.at("spl").get<double>(), j.at("rgs").get<double>(),
            j.at("rgspl").get<double>(), j.at("episodes").get<std::size_t>()};
}

bool key_matches(const fs::path& key_file, const std::string& key) {
    return fs::exists(key_file) && read_text(key_file) == key + "\n";
}

}  // namespace

AblationReport run_ablation(const ExperimentConfig& cfg, const std::vector<Arm>& arms) {
    Shared shared = prepare_shared(cfg);
    const fs::path root = shared.pipeline.dir() / "ablation";
    AblationReport report;
    report.teacher_digest = shared.teacher_digest;
    const std::string key = run_key(cfg, shared.teacher_digest);

    const DistillPlan plain_pre = DistillPlan::disabled(Stage::Pretrain);
    const DistillPlan plain_fine = DistillPlan::disabled(Stage::Finetune);
    for (std::uint64_t seed : cfg.eval.seeds) {
        // Pre-training is shared between the arms that agree on it and cached
        // across calls with the same key.
        auto pretrain = [&](bool kd) {
            const fs::path base = root / "checkpoints" / ((kd ? "pretrain-kd-seed-" : "pretrain-plain-seed-") + std::to_string(seed));
            const fs::path ckpt = base.string() + ".ckpt", log = base.string() + ".csv", key_file = base.string() + ".key";
            if (!key_matches(key_file, key) || !fs::exists(ckpt) || !fs::exists(log)) {
                DuetModel student(cfg.student, mix_seed(seed, kStudentInit));
                write_rows(log, train_student_pretrain(cfg, shared.data, &shared.teacher, student, kd ? cfg.pretrain_plan : plain_pre, seed));
                save_checkpoint(student, ckpt);
                write_text(key_file, key + "\n");
            }
            return std::pair{ckpt, parse_metrics(read_text(log))};
        };
        for (Arm arm : arms) {
            const fs::path dir = root / arm_name(arm) / ("seed-" + std::to_string(seed));
            ArmResult r;
            r.arm = arm;
            r.seed = seed;
            if (key_matches(dir / "key.txt", key) && fs::exists(dir / "result.json") && fs::exists(dir / "metrics.csv")) {
                const json j = json::parse(read_text(dir / "result.json"));
                r.val_seen = summary_from_json(j.at("val_seen"));
                r.val_unseen = summary_from_json(j.at("val_unseen"));
                report.runs.push_back(r);
                continue;
            }
            const bool kd_pre = arm == Arm::Both || arm == Arm::PretrainOnly;
            const bool kd_fine = arm == Arm::Both || arm == Arm::FinetuneOnly;
            const auto [ckpt, pre_rows] = pretrain(kd_pre);
            DuetModel student = load_checkpoint(cfg.student, ckpt);
            std::vector<MetricsRow> rows = pre_rows;
            auto fine_rows = train_student_finetune(cfg, shared.data, &shared.teacher, student,
                                                    kd_fine ? cfg.finetune_plan : plain_fine, seed);
            rows.insert(rows.end(), fine_rows.begin(), fine_rows.end());
            auto ev = eval_rows(student, shared.data, cfg, seed, r.val_seen, r.val_unseen);
            rows.insert(rows.end(), ev.begin(), ev.end());
            write_rows(dir / "metrics.csv", rows);
            json result = {{"val_seen", summary_json(r.val_seen)}, {"val_unseen", summary_json(r.val_unseen)}};
            write_text(dir / "result.json", result.dump(2) + "\n");
            write_text(dir / "key.txt", key + "\n");
            report.runs.push_back(r);
        }
    }

    std::string runs_csv = "arm,seed,split,SR,SPL,RGS,RGSPL\n";
    for (const auto& r : report.runs)
        for (const auto& [split, m] : {std::pair{std::string("val_seen"), r.val_seen}, std::pair{std::string("val_unseen"), r.val_unseen}})
            runs_csv += arm_name(r.arm) + "," + std::to_string(r.seed) + "," + split + "," + num(m.sr) + "," + num(m.spl) +
                        "," + num(m.rgs) + "," + num(m.rgspl) + "\n";
    std::string table_csv = "arm,seeds,sr_mean,sr_std,spl_mean,spl_std,rgs_mean,rgs_std,rgspl_mean,rgspl_std\n";
    for (Arm arm : arms) {
        std::vector<double> sr, sp, rg, rp;
        for (const auto& r : report.runs)
            if (r.arm == arm) {
                sr.push_back(r.val_unseen.sr);
                sp.push_back(r.val_unseen.spl);
                rg.push_back(r.val_unseen.rgs);
                rp.push_back(r.val_unseen.rgspl);
            }
        ArmStats s{arm, mean_of(sr), stddev_of(sr), mean_of(sp), stddev_of(sp), mean_of(rg), stddev_of(rg), mean_of(rp), stddev_of(rp)};
        report.table.push_back(s);
        table_csv += arm_name(arm) + "," + std::to_string(sr.size()) + "," + num(s.sr_mean) + "," + num(s.sr_std) + "," +
                     num(s.spl_mean) + "," + num(s.spl_std) + "," + num(s.rgs_mean) + "," + num(s.rgs_std) + "," +
                     num(s.rgspl_mean) + "," + num(s.rgspl_std) + "\n";
    }
    write_text(shared.pipeline.dir() / "ablation.csv", runs_csv);
    write_text(shared.pipeline.dir() / "ablation_table.csv", table_csv);
    write_text(shared.pipeline.dir() / "ablation_teacher.txt", hex(report.teacher_digest) + "\n");
    return report;
}

std::vector<std::pair<std::string, DistillPlan>> kd_weight_plans(const DistillPlan& base, const std::vector<double>& weights) {
    std::vector<std::pair<std::string, DistillPlan>> out;
    for (double w : weights) {
        DistillPlan p = base;
        p.stage = Stage::Finetune;
        p.kd_weight = w;
        out.emplace_back("kd" + num(w, 6), p);
    }
    return out;
}

std::vector<std::pair<std::string, DistillPlan>> objective_plans(const DistillPlan& base) {
    DistillPlan all = base;
    all.stage = Stage::Finetune;
    all.txt = all.pano = all.fuse = true;
    DistillPlan no_txt = all, no_pano = all, no_fuse = all, fuse_only = all;
    no_txt.txt = false;
    no_pano.pano = false;
    no_fuse.fuse = false;
    fuse_only.txt = fuse_only.pano = false;
    return {{"all", all}, {"no_txt", no_txt}, {"no_pano", no_pano}, {"no_fuse", no_fuse}, {"fuse_only", fuse_only}};
}

std::vector<SweepRow> run_sweep(const ExperimentConfig& cfg, const std::string& tag,
                                const std::vector<std::pair<std::string, DistillPlan>>& plans) {
    Shared shared = prepare_shared(cfg);
    const fs::path root = shared.pipeline.dir() / "sweep";
    const fs::path pre_ckpt = root / ("pretrain-seed-" + std::to_string(cfg.seed) + ".ckpt");
    const fs::path pre_log = root / ("pretrain-seed-" + std::to_string(cfg.seed) + ".csv");
    const fs::path pre_key = root / ("pretrain-seed-" + std::to_string(cfg.seed) + ".key");
    const std::string key = run_key(cfg, shared.teacher_digest);
    if (!key_matches(pre_key, key) || !fs::exists(pre_ckpt) || !fs::exists(pre_log)) {
        DuetModel student(cfg.student, mix_seed(cfg.seed, kStudentInit));
        write_rows(pre_log, train_student_pretrain(cfg, shared.data, &shared.teacher, student, cfg.pretrain_plan, cfg.seed));
        save_checkpoint(student, pre_ckpt);
        write_text(pre_key, key + "\n");
    }
    const std::uint64_t pre_digest = file_digest(pre_ckpt);
    const auto pre_rows = parse_metrics(read_text(pre_log));

    std::vector<SweepRow> out;
    std::string csv = "sweep,name,kd_weight,txt,pano,fuse,pretrain_digest,seen_SR,seen_SPL,SR,SPL,RGS,RGSPL\n";
    for (const auto& [name, plan] : plans) {
        DuetModel student = load_checkpoint(cfg.student, pre_ckpt);
        std::vector<MetricsRow> rows = pre_rows;
        auto fine = train_student_finetune(cfg, shared.data, &shared.teacher, student, plan, cfg.seed);
        rows.insert(rows.end(), fine.begin(), fine.end());
        SweepRow r{name, plan, {}, {}, pre_digest};
        auto ev = eval_rows(student, shared.data, cfg, cfg.seed, r.val_seen, r.val_unseen);
        rows.insert(rows.end(), ev.begin(), ev.end());
        write_rows(root / (tag + "-" + name) / "metrics.csv", rows);
        csv += tag + "," + name + "," + num(plan.kd_weight) + "," + std::to_string(plan.txt) + "," + std::to_string(plan.pano) +
               "," + std::to_string(plan.fuse) + "," + hex(pre_digest) + "," + num(r.val_seen.sr) + "," + num(r.val_seen.spl) +
               "," + num(r.val_unseen.sr) + "," + num(r.val_unseen.spl) + "," + num(r.val_unseen.rgs) + "," +
               num(r.val_unseen.rgspl) + "\n";
        out.push_back(std::move(r));
    }
    write_text(shared.pipeline.dir() / ("sweep_" + tag + ".csv"), csv);
    return out;
}

}  // namespace navkd
