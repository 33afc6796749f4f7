#include <CLI11.hpp>

#include <cstdio>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "navkd/checkpoint.hpp"
#include "navkd/errors.hpp"
#include "navkd/pipeline.hpp"

namespace {

using namespace navkd;

struct GlobalOptions {
    std::string config;
    std::optional<std::uint64_t> seed;
    std::string out;
    bool resume = false;
};

ExperimentConfig resolve(const GlobalOptions& g) {
    ExperimentConfig cfg = g.config.empty() ? ExperimentConfig{} : load_config(g.config);
    if (g.seed) cfg.seed = *g.seed;
    if (!g.out.empty()) cfg.out_dir = g.out;
    cfg.validate();
    return cfg;
}

void print_summary(const std::string& model, Split split, const MetricSummary& m) {
    std::printf("%-8s %-10s SR %.4f  SPL %.4f  RGS %.4f  RGSPL %.4f\n", model.c_str(), split_name(split).c_str(), m.sr,
                m.spl, m.rgs, m.rgspl);
}

void print_run(const RunSummary& s) {
    for (const auto& row : s.splits) print_summary(row.model, row.split, row.metrics);
    std::printf("params   student %zu  teacher %zu  ratio %.4f\n", s.student_params, s.teacher_params,
                s.teacher_params ? double(s.student_params) / double(s.teacher_params) : 0.0);
    if (s.student_latency && s.teacher_latency)
        std::printf("latency  student %.3f ms  teacher %.3f ms  (median per episode)\n",
                    s.student_latency->median_ms, s.teacher_latency->median_ms);
}

void print_table(const AblationReport& r) {
    std::printf("%-14s %8s %8s %8s %8s %8s %8s %8s %8s\n", "arm", "SR", "sd", "SPL", "sd", "RGS", "sd", "RGSPL",
                "sd");
    for (const auto& a : r.table)
        std::printf("%-14s %8.4f %8.4f %8.4f %8.4f %8.4f %8.4f %8.4f %8.4f\n", arm_name(a.arm).c_str(), a.sr_mean,
                    a.sr_std, a.spl_mean, a.spl_std, a.rgs_mean, a.rgs_std, a.rgspl_mean, a.rgspl_std);
    std::printf("teacher digest %016llx\n", static_cast<unsigned long long>(r.teacher_digest));
}

void print_sweep(const std::vector<SweepRow>& rows) {
    for (const auto& row : rows)
        std::printf("%-12s unseen SR %.4f SPL %.4f  seen SR %.4f  pretrain %016llx\n", row.name.c_str(),
                    row.val_unseen.sr, row.val_unseen.spl, row.val_seen.sr,
                    static_cast<unsigned long long>(row.pretrain_digest));
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Two-stage distillation for graph navigation agents"};
    app.require_subcommand(1);
    GlobalOptions g;
    auto add_globals = [&g](CLI::App* sub) {
        sub->add_option("--config", g.config, "JSON experiment config")->check(CLI::ExistingFile);
        sub->add_option("--seed", g.seed, "override the experiment seed");
        sub->add_option("--out", g.out, "run directory");
        sub->add_flag("--resume", g.resume, "skip phases already completed in the run directory");
    };

    struct PhaseCmd {
        const char* name;
        Phase phase;
        const char* help;
    };
    const std::vector<PhaseCmd> phases = {
        {"gen-world", Phase::GenWorld, "generate worlds and episode splits"},
        {"train-teacher", Phase::TrainTeacher, "pre-train and fine-tune the teacher"},
        {"distill-pretrain", Phase::DistillPretrain, "pre-training distillation of the student"},
        {"distill-finetune", Phase::DistillFinetune, "fine-tuning distillation of the student"},
        {"eval", Phase::Eval, "evaluate student and teacher on both validation splits"},
    };
    std::optional<Phase> chosen_phase;
    for (const auto& p : phases) {
        auto* sub = app.add_subcommand(p.name, p.help);
        add_globals(sub);
        sub->callback([&chosen_phase, phase = p.phase] { chosen_phase = phase; });
    }

    std::string action;
    auto* run = app.add_subcommand("run", "every phase in order, then export");
    add_globals(run);
    run->callback([&] { action = "run"; });

    auto* bench = app.add_subcommand("bench", "single-thread latency of the student and teacher checkpoints");
    add_globals(bench);
    bench->callback([&] { action = "bench"; });

    std::vector<std::string> arm_names = {"both", "pretrain_only", "finetune_only", "none"};
    auto* ablate = app.add_subcommand("ablate", "distillation-stage ablation over the configured seeds");
    add_globals(ablate);
    ablate->add_option("--arm", arm_names, "arms to run")->check(CLI::IsMember({"both", "pretrain_only", "finetune_only", "none"}));
    ablate->callback([&] { action = "ablate"; });

    std::string sweep_kind = "all";
    auto* sweep = app.add_subcommand("sweep", "KD-weight and objective sweeps from a shared pretrain checkpoint");
    add_globals(sweep);
    sweep->add_option("--kind", sweep_kind, "kd-weight, objective or all")
        ->check(CLI::IsMember({"kd-weight", "objective", "all"}));
    sweep->callback([&] { action = "sweep"; });

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        int code = app.exit(e);
        return code == 0 ? 0 : 2;
    }

    try {
        ExperimentConfig cfg = resolve(g);
        if (chosen_phase) {
            Pipeline pipeline(cfg, true);
            pipeline.run(*chosen_phase);
            if (*chosen_phase == Phase::Eval) export_metrics(pipeline.dir());
            std::printf("%s done in %s\n", phase_name(*chosen_phase).c_str(), pipeline.dir().c_str());
        } else if (action == "run") {
            Pipeline pipeline(cfg, g.resume);
            print_run(pipeline.run_all());
        } else if (action == "bench") {
            Pipeline pipeline(cfg, true);
            const Dataset data = load_dataset(pipeline.dir() / "data" / "dataset.json");
            for (const auto& [name, mcfg] : {std::pair{"student", cfg.student}, std::pair{"teacher", cfg.teacher}}) {
                const DuetModel model = load_checkpoint(mcfg, pipeline.checkpoint(name));
                const LatencyReport lat = benchmark(model, data, cfg);
                std::printf("%-8s median %.3f ms  p90 %.3f ms  (%zu episodes)\n", name, lat.median_ms, lat.p90_ms,
                            lat.per_episode_ms.size());
            }
        } else if (action == "ablate") {
            std::vector<Arm> arms;
            for (const auto& n : arm_names) arms.push_back(arm_from_name(n));
            print_table(run_ablation(cfg, arms));
        } else if (action == "sweep") {
            if (sweep_kind != "objective") print_sweep(run_sweep(cfg, "kd", kd_weight_plans(cfg.finetune_plan, {0.01, 0.1, 1.0})));
            if (sweep_kind != "kd-weight") print_sweep(run_sweep(cfg, "objective", objective_plans(cfg.finetune_plan)));
        }
    } catch (const ConfigError& e) {
        std::cerr << "config error: " << e.what() << '\n';
        return 2;
    } catch (const ConfigDigestMismatch& e) {
        std::cerr << "config error: " << e.what() << '\n';
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 3;
    }
    return 0;
}
