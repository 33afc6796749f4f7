#include <doctest.h>

#include <chrono>
#include <filesystem>
#include <fstream>
#include <json.hpp>
#include <sstream>

#include "navkd/checkpoint.hpp"
#include "navkd/config.hpp"
#include "navkd/errors.hpp"
#include "navkd/pipeline.hpp"
#include "support/suites.hpp"

using namespace navkd;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name) {
    const fs::path p = fs::temp_directory_path() / ("navkd-unit-" + name);
    fs::remove_all(p);
    return p;
}

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

ExperimentConfig tiny_experiment(const fs::path& out) {
    ExperimentConfig c;
    c.world.n_nodes = 20;
    c.world.min_hops = 3;
    c.world.max_hops = 5;
    c.world.train_worlds = 2;
    c.world.teacher_worlds = 2;
    c.world.unseen_worlds = 2;
    c.data.student_pool = 6;
    c.data.val_seen_episodes = 4;
    c.data.val_unseen_episodes = 4;
    c.teacher = testing::small_config(8, 2, 2, 2);
    c.student = testing::small_config(4, 1, 1, 1);
    c.train.teacher_pretrain_iters = 3;
    c.train.teacher_finetune_iters = 2;
    c.train.student_pretrain_iters = 3;
    c.train.student_finetune_iters = 2;
    c.train.batch_size = 2;
    c.train.max_steps = 8;
    c.eval.seeds = {1, 2};
    c.eval.bench_episodes = 3;
    c.out_dir = out.string();
    return c;
}

}  // namespace

TEST_CASE("config JSON") {
    const ExperimentConfig c = tiny_experiment("somewhere");
    const std::string text = config_to_json(c);
    CHECK(config_to_json(config_from_json(text)) == text);
    CHECK(config_to_json(config_from_json("{}")) == config_to_json(ExperimentConfig{}));

    CHECK_THROWS_AS(config_from_json(R"({"bogus": 1})"), ConfigError);
    CHECK_THROWS_AS(config_from_json(R"({"world": {"n_nodes": "many"}})"), ConfigError);
    CHECK_THROWS_AS(config_from_json(R"({"teacher": {"hidden_dim": 30, "n_heads": 4}})"), ConfigError);
    CHECK_THROWS_AS(config_from_json("{not json"), ConfigError);
    CHECK_THROWS_AS(config_from_json(R"({"eval": {"seeds": []}})"), ConfigError);
    CHECK_THROWS_AS(load_config("/nonexistent/config.json"), ConfigError);

    auto j = nlohmann::json::parse(text);
    j["finetune_plan"]["kd_weight"] = 1.0;
    const auto changed = config_from_json(j.dump());
    CHECK(upstream_digest(changed) == upstream_digest(c));
    j["teacher"]["hidden_dim"] = 16;
    CHECK(upstream_digest(config_from_json(j.dump())) != upstream_digest(c));
}

TEST_CASE("checkpoints") {
    const fs::path dir = scratch("ckpt");
    fs::create_directories(dir);
    const auto cfg = testing::small_config(8, 2, 1, 2);
    DuetModel m(cfg, 3);
    save_checkpoint(m, dir / "m.ckpt");
    const DuetModel back = load_checkpoint(cfg, dir / "m.ckpt");
    const auto& a = m.parameters().items();
    const auto& b = back.parameters().items();
    REQUIRE(a.size() == b.size());
    for (std::size_t i = 0; i < a.size(); ++i) {
        CHECK(a[i].name == b[i].name);
        CHECK(std::memcmp(a[i].tensor.data(), b[i].tensor.data(), a[i].tensor.numel() * sizeof(double)) == 0);
    }
    CHECK(checkpoint_digest(dir / "m.ckpt") == config_digest(cfg));
    CHECK(slurp(dir / "m.ckpt").substr(0, 4) == "MVLN");

    const std::string bytes = slurp(dir / "m.ckpt");
    std::ofstream(dir / "short.ckpt", std::ios::binary) << bytes.substr(0, bytes.size() / 2);
    CHECK_THROWS_AS(load_checkpoint(cfg, dir / "short.ckpt"), ChecksumError);
    std::string flipped = bytes;
    flipped[bytes.size() / 2] ^= 0x10;
    std::ofstream(dir / "flip.ckpt", std::ios::binary) << flipped;
    CHECK_THROWS_AS(load_checkpoint(cfg, dir / "flip.ckpt"), ChecksumError);

    CHECK_THROWS_AS(load_checkpoint(testing::small_config(4, 1, 1, 1), dir / "m.ckpt"), ConfigDigestMismatch);
    fs::remove_all(dir);
}

TEST_CASE("metrics schema") {
    CHECK(std::string(kMetricsHeader) == "phase,iter,seed,loss_total,loss_task,loss_kd,sr,spl,rgs,rgspl,median_ms,params");
    std::vector<MetricsRow> rows(2);
    rows[0].phase = "distill-pretrain";
    rows[0].iter = 7;
    rows[0].seed = 3;
    rows[0].loss_total = 1.25;
    rows[0].loss_task = 1.0;
    rows[0].loss_kd = 0.25;
    rows[1].phase = "eval";
    rows[1].sr = 0.5;
    rows[1].params = 1234;
    const auto text = format_metrics(rows);
    CHECK(text.rfind(std::string(kMetricsHeader) + "\n", 0) == 0);
    const auto back = parse_metrics(text);
    REQUIRE(back.size() == 2);
    CHECK(back[0].loss_kd == 0.25);
    CHECK_FALSE(back[0].sr.has_value());
    CHECK(back[1].params == std::size_t(1234));
    CHECK(format_metrics(back) == text);
    CHECK_THROWS_AS(parse_metrics("phase,iter\n"), FormatError);
    CHECK(phase_from_name("distill-finetune") == Phase::DistillFinetune);
    CHECK_THROWS_AS(phase_from_name("nope"), ConfigError);
}

TEST_CASE("pipeline end to end, determinism and resume") {
    const fs::path a = scratch("run-a"), b = scratch("run-b");
    const ExperimentConfig ca = tiny_experiment(a);
    RunSummary summary;
    {
        Pipeline p(ca, false);
        CHECK_THROWS_AS(p.run(Phase::DistillFinetune), PhaseError);
        CHECK_THROWS_AS(p.run(Phase::TrainTeacher), PhaseError);
        summary = p.run_all();
    }
    for (const char* f : {"config.json", "state.json", "data/dataset.json", "checkpoints/teacher.ckpt",
                          "checkpoints/student_pretrain.ckpt", "checkpoints/student.ckpt", "metrics.csv", "results.csv",
                          "latency.csv", "summary.json"})
        CHECK_MESSAGE(fs::exists(a / f), f);
    CHECK(summary.splits.size() == 4);
    CHECK(summary.student_latency.has_value());
    CHECK(summary.student_params == param_count(ca.student));

    const auto js = nlohmann::json::parse(slurp(a / "summary.json"));
    CHECK(js["params"]["ratio"].get<double>() ==
          doctest::Approx(double(param_count(ca.student)) / double(param_count(ca.teacher))));

    const std::string metrics = slurp(a / "metrics.csv");
    const std::string summary_text = slurp(a / "summary.json");
    export_metrics(a);
    CHECK(slurp(a / "metrics.csv") == metrics);
    CHECK(slurp(a / "summary.json") == summary_text);

    // Interrupted after the third phase, then resumed.
    ExperimentConfig cb = ca;
    cb.out_dir = b.string();
    {
        Pipeline p(cb, false);
        p.run(Phase::GenWorld);
        p.run(Phase::TrainTeacher);
        p.run(Phase::DistillPretrain);
    }
    Pipeline resumed(cb, true);
    CHECK(resumed.completed(Phase::DistillPretrain));
    CHECK_FALSE(resumed.completed(Phase::DistillFinetune));
    resumed.run_all();
    CHECK(slurp(b / "metrics.csv") == metrics);

    // A changed config cannot silently resume.
    ExperimentConfig changed = cb;
    changed.train.student_finetune_iters = 3;
    Pipeline restarted(changed, true);
    CHECK(restarted.completed(Phase::TrainTeacher));
    CHECK_FALSE(restarted.completed(Phase::DistillFinetune));
    fs::remove_all(a);
    fs::remove_all(b);
}

TEST_CASE("invalid config fails before any compute") {
    const fs::path d = scratch("invalid");
    ExperimentConfig c = tiny_experiment(d);
    c.student.n_heads = 3;
    CHECK_THROWS_AS(Pipeline(c, false), ConfigError);
    CHECK_FALSE(fs::exists(d / "data"));
    fs::remove_all(d);
}

TEST_CASE("ablation arms share one teacher") {
    const fs::path d = scratch("ablate");
    const ExperimentConfig c = tiny_experiment(d);
    const auto rep = run_ablation(c, {Arm::Both, Arm::PretrainOnly, Arm::FinetuneOnly, Arm::None});
    CHECK(rep.runs.size() == 8);
    CHECK(rep.table.size() == 4);
    CHECK(rep.teacher_digest == file_digest(d / "checkpoints" / "teacher.ckpt"));
    CHECK(fs::exists(d / "ablation_table.csv"));
    CHECK(fs::exists(d / "ablation" / "none" / "seed-2" / "metrics.csv"));

    // The no-distillation arm is the plain pipeline with every KD flag off.
    ExperimentConfig plain = c;
    plain.seed = 1;
    plain.out_dir = (d / "plain").string();
    plain.pretrain_plan = DistillPlan::disabled(Stage::Pretrain);
    plain.finetune_plan = DistillPlan::disabled(Stage::Finetune);
    const auto s = Pipeline(plain, false).run_all();
    const ArmResult* none = nullptr;
    for (const auto& r : rep.runs)
        if (r.arm == Arm::None && r.seed == 1) none = &r;
    REQUIRE(none);
    for (const auto& sm : s.splits)
        if (sm.model == "student" && sm.split == Split::ValUnseen) {
            CHECK(sm.metrics.sr == none->val_unseen.sr);
            CHECK(sm.metrics.spl == none->val_unseen.spl);
        }
    fs::remove_all(d);
}

TEST_CASE("ablation reuses cached runs until the config changes") {
    const fs::path d = scratch("ablate-cache");
    ExperimentConfig c = tiny_experiment(d);
    c.eval.seeds = {1};
    const auto first = run_ablation(c, {Arm::None});
    const fs::path log = d / "ablation" / "none" / "seed-1" / "metrics.csv";
    const auto stamp = fs::last_write_time(log);
    fs::last_write_time(log, stamp - std::chrono::hours(1));
    const auto marked = fs::last_write_time(log);

    const auto second = run_ablation(c, {Arm::Both, Arm::None});
    REQUIRE(second.runs.size() == 2);
    CHECK(fs::last_write_time(log) == marked);
    CHECK(second.runs[1].val_unseen.sr == first.runs[0].val_unseen.sr);
    CHECK(second.runs[1].val_unseen.spl == first.runs[0].val_unseen.spl);

    c.train.student_finetune_iters += 1;
    run_ablation(c, {Arm::None});
    CHECK(fs::last_write_time(log) != marked);
    fs::remove_all(d);
}

TEST_CASE("sweeps share the pretrain checkpoint") {
    const fs::path d = scratch("sweep");
    ExperimentConfig c = tiny_experiment(d);
    c.eval.seeds = {1};
    const auto kd = run_sweep(c, "kd", kd_weight_plans(c.finetune_plan, {0.01, 0.1, 1.0}));
    REQUIRE(kd.size() == 3);
    const auto obj = run_sweep(c, "objective", objective_plans(c.finetune_plan));
    REQUIRE(obj.size() == 5);
    CHECK(obj[4].name == "fuse_only");
    CHECK_FALSE(obj[4].plan.txt);
    CHECK(obj[4].plan.fuse);
    for (const auto& r : obj) CHECK(r.pretrain_digest == kd[0].pretrain_digest);
    for (const auto& r : kd) CHECK(r.pretrain_digest == kd[0].pretrain_digest);
    CHECK(fs::exists(d / "sweep_kd.csv"));
    CHECK(fs::exists(d / "sweep_objective.csv"));
    fs::remove_all(d);
}

TEST_CASE("mean and sample standard deviation") {
    CHECK(mean_of({1, 2, 3}) == 2.0);
    CHECK(stddev_of({1, 2, 3}) == 1.0);
    CHECK(stddev_of({5}) == 0.0);
}
