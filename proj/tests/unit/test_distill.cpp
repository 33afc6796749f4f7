#include <doctest.h>

#include <cmath>

#include "navkd/distill.hpp"
#include "navkd/errors.hpp"
#include "navkd/ops.hpp"
#include "support/suites.hpp"

using namespace navkd;
using namespace navkd::testing;

TEST_CASE("layer maps") {
    const int lang[] = {3, 6, 9};
    for (int m = 1; m <= 3; ++m) CHECK(layer_map(EncoderKind::Language, m) == lang[m - 1]);
    CHECK(layer_map(EncoderKind::Panorama, 1) == 2);
    for (auto k : {EncoderKind::CrossCoarse, EncoderKind::CrossFine}) {
        CHECK(layer_map(k, 1) == 2);
        CHECK(layer_map(k, 2) == 4);
        CHECK_THROWS_AS(layer_map(k, 3), OutOfRange);
        CHECK_THROWS_AS(layer_map(k, 0), OutOfRange);
    }
    CHECK_THROWS_AS(layer_map(EncoderKind::Panorama, 2), OutOfRange);
    auto s = ModelConfig::student_default();
    s.n_lang_blocks = 2;
    CHECK_THROWS_AS(make_layer_map(EncoderKind::Language, s, ModelConfig::teacher_default()), ConfigError);
    for (auto k : {EncoderKind::Language, EncoderKind::Panorama, EncoderKind::CrossCoarse, EncoderKind::CrossFine}) {
        const auto map = make_layer_map(k, ModelConfig::student_default(), ModelConfig::teacher_default());
        for (std::size_t i = 1; i < map.entries.size(); ++i) CHECK(map.entries[i] > map.entries[i - 1]);
    }
}

TEST_CASE("embedding loss") {
    const auto e = Tensor::from({2, 2}, {1, 2, 3, 4});
    CHECK(embed_distill_loss(e, e, Tensor::identity(2)).item() == 0.0);
    // E_tea = 0: mean of squared entries of E_stu W_e.
    const auto w = Tensor::from({2, 2}, {1, 1, 0, 2});
    // E_stu W_e = [[1,5],[3,11]]
    CHECK(embed_distill_loss(Tensor::zeros({2, 2}), e, w).item() == doctest::Approx((1 + 25 + 9 + 121) / 4.0));
    CHECK_THROWS_AS(embed_distill_loss(Tensor::zeros({3, 2}), e, w), ShapeError);
}

TEST_CASE("attention loss") {
    const auto a = Tensor::from({2, 2}, {1, 2, 3, 4});
    CHECK(attn_distill_loss(a, 2, a, 2).item() == 0.0);
    // Head 0 rows differ by sqrt(0.4) everywhere (MSE 0.4), head 1 by sqrt(0.8) (MSE 0.8) with S=1, T=2.
    const double p = std::sqrt(0.4), q = std::sqrt(0.8);
    const auto b = Tensor::from({2, 2}, {1 + p, 2 - p, 3 + q, 4 + q});
    CHECK(attn_distill_loss(a, 2, b, 2).item() == doctest::Approx(0.6).epsilon(1e-12));
    const auto c = Tensor::from({2, 2}, {1 + std::sqrt(0.2), 2 + std::sqrt(0.2), 3 + std::sqrt(0.4), 4 - std::sqrt(0.4)});
    CHECK(attn_distill_loss(a, 2, c, 2).item() == doctest::Approx(0.3).epsilon(1e-12));
    CHECK_THROWS_AS(attn_distill_loss(a, 2, a, 1), ShapeError);
    CHECK_THROWS_AS(attn_distill_loss(a, 2, Tensor::zeros({2, 3}), 2), ShapeError);
}

TEST_CASE("hidden and block losses") {
    const auto h = Tensor::from({2, 3}, {1, -1, 2, 0, 3, 1});
    CHECK(hidden_distill_loss(h, h, Tensor::identity(3)).item() == 0.0);
    CHECK_THROWS_AS(hidden_distill_loss(h, Tensor::zeros({3, 3}), Tensor::identity(3)), ShapeError);

    // attention part 0.3, hidden part 0.1
    const auto a = Tensor::from({2, 2}, {1, 2, 3, 4});
    const auto c = Tensor::from({2, 2}, {1 + std::sqrt(0.2), 2 + std::sqrt(0.2), 3 + std::sqrt(0.4), 4 - std::sqrt(0.4)});
    const auto hs = Tensor::from({1, 2}, {std::sqrt(0.2), 0});
    const BlockCapture t{a, Tensor(), 2, Tensor::zeros({1, 2})};
    const BlockCapture s{c, Tensor(), 2, hs};
    const auto parts = block_distill_loss(t, s, Tensor::identity(2));
    CHECK(parts.attention.item() == doctest::Approx(0.3).epsilon(1e-12));
    CHECK(parts.hidden.item() == doctest::Approx(0.1).epsilon(1e-12));
    CHECK(parts.total.item() == doctest::Approx(0.4).epsilon(1e-12));
    CHECK(block_distill_loss(t, t, Tensor::identity(2)).total.item() == 0.0);
}

TEST_CASE("gradient suite on small instances") {
    for (const auto& [name, err] : gradient_suite(3, 17)) {
        INFO(name);
        CHECK(err <= 1e-4);
    }
}

TEST_CASE("fixed point") {
    const auto rep = fixed_point_suite(small_config(8, 2, 1, 2), 2, 5);
    for (const auto& [name, v] : rep.mse_losses) {
        INFO(name);
        CHECK(v <= 1e-12);
    }
    CHECK(rep.fuse_entropy_gap <= 1e-9);
    CHECK(rep.steps_checked > 0);
}

TEST_CASE("fine-tuning KD loss contracts") {
    const auto cfg = small_config(8, 1, 1, 1);
    DuetModel t(cfg, 1), s(cfg, 2);
    Rng rng(1);
    Projections proj(cfg, cfg, rng);
    const auto g = generate_world(1, 20, 3);
    const auto ep = generate_episode(g, 2, 3, 5);
    const auto r = paired_run(t, s, g, ep, 2);
    DistillPlan plan;
    plan.temperature = 0.0;
    CHECK_THROWS_AS(finetune_kd_loss(r.teacher_lang, r.teacher_steps[1], r.student_lang, r.student_steps[1], proj, plan),
                    NonPositiveTemperature);
    plan.temperature = 1.0;
    CHECK_THROWS_AS(finetune_kd_loss(r.teacher_lang, r.teacher_steps[0], r.student_lang, r.student_steps[1], proj, plan),
                    CandidateSetMismatch);

    // Zero logits on both sides: ln(#candidates).
    FusedLogits zt = r.teacher_steps[1].logits, zs = r.student_steps[1].logits;
    const std::size_t n = zt.candidates.size();
    CHECK(std::abs(soft_cross_entropy(Tensor::zeros({n}), Tensor::zeros({n}), 1.0).item() - std::log(double(n))) < 1e-12);
    CHECK(std::abs(soft_cross_entropy(Tensor::zeros({2}), Tensor::zeros({2}), 1.0).item() - std::log(2.0)) < 1e-15);

    // Shifting both logit vectors leaves L_fuse unchanged.
    std::vector<double> a(zt.logits.values().begin(), zt.logits.values().end());
    std::vector<double> b(zs.logits.values().begin(), zs.logits.values().end());
    const double base = soft_cross_entropy(Tensor::from({n}, a), Tensor::from({n}, b), 1.0).item();
    for (auto& v : a) v += 5.5;
    for (auto& v : b) v -= 3.25;
    CHECK(std::abs(soft_cross_entropy(Tensor::from({n}, a), Tensor::from({n}, b), 1.0).item() - base) <= 1e-9);
}

TEST_CASE("KD losses send no gradient to the teacher") {
    const auto tc = small_config(8, 2, 2, 2), sc = small_config(4, 1, 1, 1);
    DuetModel t(tc, 3), s(sc, 4);
    Rng rng(2);
    Projections proj(sc, tc, rng);
    const auto g = generate_world(2, 20, 3);
    const auto ep = generate_episode(g, 3, 3, 5);
    const auto r = paired_run(t, s, g, ep, 3);
    t.parameters().zero_grad();
    s.parameters().zero_grad();
    DistillPlan plan;
    const auto maps = layer_maps(sc, tc);
    add(pretrain_kd_loss({&r.teacher_lang, &r.teacher_steps}, {&r.student_lang, &r.student_steps}, proj, maps, plan),
        finetune_kd_loss(r.teacher_lang, r.teacher_steps.back(), r.student_lang, r.student_steps.back(), proj, plan).total)
        .backward();
    for (const auto& p : t.parameters().items())
        for (double v : p.tensor.grad()) CHECK(v == 0.0);
    double student_mass = 0;
    for (const auto& p : s.parameters().items())
        for (double v : p.tensor.grad()) student_mass += std::abs(v);
    CHECK(student_mass > 0.0);
}

TEST_CASE("objective flags remove their terms") {
    const auto tc = small_config(8, 2, 2, 2), sc = small_config(4, 1, 1, 1);
    DuetModel t(tc, 3), s(sc, 4);
    Rng rng(2);
    Projections proj(sc, tc, rng);
    const auto g = generate_world(2, 20, 3);
    const auto ep = generate_episode(g, 3, 3, 5);
    const auto r = paired_run(t, s, g, ep, 3);
    const auto maps = layer_maps(sc, tc);
    DistillPlan off = DistillPlan::disabled(Stage::Pretrain);
    CHECK(pretrain_kd_loss({&r.teacher_lang, &r.teacher_steps}, {&r.student_lang, &r.student_steps}, proj, maps, off)
              .item() == 0.0);

    // Perturbing the text projection cannot move the loss when L_txt is off.
    DistillPlan no_txt;
    no_txt.txt = false;
    auto loss = [&] {
        return finetune_kd_loss(r.teacher_lang, r.teacher_steps.back(), r.student_lang, r.student_steps.back(), proj,
                                no_txt)
            .total.item();
    };
    const double before = loss();
    Tensor w = proj.text();
    for (double& v : w.mutable_values()) v += 0.5;
    CHECK(loss() == before);
    DistillPlan no_pano;
    no_pano.pano = false;
    const double p0 = finetune_kd_loss(r.teacher_lang, r.teacher_steps.back(), r.student_lang, r.student_steps.back(),
                                       proj, no_pano)
                          .total.item();
    Tensor wr = proj.panorama();
    for (double& v : wr.mutable_values()) v *= -2.0;
    CHECK(finetune_kd_loss(r.teacher_lang, r.teacher_steps.back(), r.student_lang, r.student_steps.back(), proj, no_pano)
              .total.item() == p0);

    DistillPlan bad;
    bad.temperature = 0;
    CHECK_THROWS_AS(bad.validate(), ConfigError);
    bad = DistillPlan{};
    bad.kd_weight = -1;
    CHECK_THROWS_AS(bad.validate(), ConfigError);
}

TEST_CASE("default configs contribute eight block losses") {
    const auto s = ModelConfig::student_default();
    int blocks = 0;
    for (auto k : {EncoderKind::Language, EncoderKind::Panorama, EncoderKind::CrossCoarse, EncoderKind::CrossFine})
        blocks += int(make_layer_map(k, s, ModelConfig::teacher_default()).entries.size());
    CHECK(blocks == 8);
    Rng rng(1);
    Projections proj(s, ModelConfig::teacher_default(), rng);
    // proj.emb + 8 block projections + proj.txt + proj.pano_out
    CHECK(proj.parameters().size() == 11);
    CHECK(proj.embedding().shape() == Shape{64, 128});
}

TEST_CASE("trainer steps") {
    const auto tc = small_config(8, 2, 2, 2), sc = small_config(4, 1, 1, 1);
    DuetModel teacher(tc, 5), student(sc, 6);
    Rng rng(3);
    Projections proj(sc, tc, rng);
    std::vector<WorldGraph> worlds;
    for (int i = 0; i < 2; ++i) worlds.push_back(generate_world(40 + i, 20, 3));
    std::vector<Episode> eps;
    for (int i = 0; i < 4; ++i) eps.push_back(generate_episode(worlds[i % 2], 70 + i, 3, 5));
    std::vector<EpisodeRef> batch;
    for (int i = 0; i < 4; ++i) batch.push_back({&worlds[i % 2], &eps[i]});

    std::vector<std::vector<double>> teacher_before;
    for (const auto& p : teacher.parameters().items())
        teacher_before.emplace_back(p.tensor.values().begin(), p.tensor.values().end());

    TrainerOptions opt;
    opt.adam.lr = 3e-3;
    DistillTrainer trainer(student, &teacher, &proj, opt);
    DistillPlan plan;
    const auto first = trainer.pretrain_step(batch, plan);
    CHECK(std::isfinite(first.total));
    CHECK(first.kd > 0.0);
    CHECK(trainer.optimizer().step == 1);

    // KD loss falls on a fixed batch with the teacher frozen.
    double kd_prev = first.kd, kd_last = first.kd;
    for (int i = 0; i < 30; ++i) kd_last = trainer.pretrain_step(batch, plan).kd;
    CHECK(kd_last < kd_prev);

    Rng sample(4);
    DistillPlan ft;
    ft.stage = Stage::Finetune;
    const auto rep = trainer.finetune_step(batch, ft, sample);
    CHECK(std::isfinite(rep.total));
    CHECK(rep.steps > 0);

    std::size_t i = 0;
    for (const auto& p : teacher.parameters().items()) {
        CHECK(std::equal(p.tensor.values().begin(), p.tensor.values().end(), teacher_before[i].begin()));
        ++i;
    }

    // Without KD the reported KD term is zero and no teacher is needed.
    DuetModel plain(sc, 6);
    DistillTrainer baseline(plain, nullptr, nullptr, opt);
    const auto b = baseline.pretrain_step(batch, DistillPlan::disabled(Stage::Pretrain));
    CHECK(b.kd == 0.0);
    CHECK(b.total == doctest::Approx(b.task));
    Rng s2(4);
    const auto bf = baseline.finetune_step(batch, DistillPlan::disabled(Stage::Finetune), s2);
    CHECK(bf.kd == 0.0);

    // Same rollouts, plus a positive teacher-forced term.
    DuetModel a(sc, 7), b2(sc, 7);
    TrainerOptions forced = opt;
    forced.oracle_weight = 0.5;
    DistillTrainer ta(a, nullptr, nullptr, opt), tb(b2, nullptr, nullptr, forced);
    Rng ra(9), rb(9);
    const auto ra_rep = ta.finetune_step(batch, DistillPlan::disabled(Stage::Finetune), ra);
    const auto rb_rep = tb.finetune_step(batch, DistillPlan::disabled(Stage::Finetune), rb);
    CHECK(rb_rep.steps == ra_rep.steps);
    CHECK(rb_rep.task > ra_rep.task);
}
