#include <doctest.h>

#include <cmath>
#include <limits>
#include <random>

#include "navkd/errors.hpp"
#include "navkd/kernels.hpp"
#include "navkd/ops.hpp"
#include "navkd/optim.hpp"
#include "support/gradcheck.hpp"

using namespace navkd;
using navkd::testing::grad_check;
using navkd::testing::random_tensor;

TEST_CASE("matmul") {
    const Tensor x = Tensor::from({2, 2}, {1, 2, 3, 4});
    const Tensor y = matmul(Tensor::identity(2), x);
    for (std::size_t i = 0; i < 4; ++i) CHECK(y.at(i) == x.at(i));

    const Tensor r = matmul(x, Tensor::from({2, 1}, {1, 1}));
    CHECK(r.shape() == Shape{2, 1});
    CHECK(r.at(0) == 3.0);
    CHECK(r.at(1) == 7.0);

    CHECK_THROWS_AS(matmul(Tensor::zeros({2, 3}), Tensor::zeros({2, 3})), ShapeError);
    try {
        matmul(Tensor::zeros({2, 3}), Tensor::zeros({2, 3}));
    } catch (const ShapeError& e) {
        CHECK(std::string(e.what()).find("[2x3]") != std::string::npos);
    }
}

TEST_CASE("softmax_rows") {
    auto s = softmax_rows(Tensor::from({1, 2}, {1, 1}));
    CHECK(s.at(0) == doctest::Approx(0.5).epsilon(1e-15));
    s = softmax_rows(Tensor::from({1, 2}, {0, std::log(3.0)}));
    CHECK(std::abs(s.at(0) - 0.25) < 1e-15);
    CHECK(std::abs(s.at(1) - 0.75) < 1e-15);
    s = softmax_rows(Tensor::from({1, 2}, {1000, 999}));
    // exp(1)/(1+exp(1)) after the max shift, computed independently
    const long double e = std::exp(1.0L);
    CHECK(std::abs(s.at(0) - double(e / (1 + e))) < 1e-15);
    CHECK(std::abs(s.at(0) + s.at(1) - 1.0) < 1e-12);
}

TEST_CASE("softmax rows sum to one and ignore row shifts") {
    std::mt19937_64 rng(3);
    for (int trial = 0; trial < 50; ++trial) {
        auto x = random_tensor({4, 7}, rng, 5.0, false);
        auto shifted = Tensor::from(x.shape(), std::vector<double>(x.values().begin(), x.values().end()));
        for (std::size_t r = 0; r < 4; ++r)
            for (std::size_t c = 0; c < 7; ++c) shifted.mutable_values()[r * 7 + c] += 10.0 * double(r + 1);
        auto a = softmax_rows(x), b = softmax_rows(shifted);
        for (std::size_t r = 0; r < 4; ++r) {
            double sum = 0;
            for (std::size_t c = 0; c < 7; ++c) {
                sum += a.at(r, c);
                CHECK(a.at(r, c) >= 0.0);
                CHECK(std::abs(a.at(r, c) - b.at(r, c)) < 1e-12);
            }
            CHECK(std::abs(sum - 1.0) < 1e-12);
        }
    }
}

TEST_CASE("layer_norm") {
    const Tensor ones = Tensor::full({2}, 1.0), zeros = Tensor::zeros({2});
    auto y = layer_norm(Tensor::from({1, 2}, {4, 4}), ones, zeros);
    CHECK(y.at(0) == 0.0);
    CHECK(y.at(1) == 0.0);
    y = layer_norm(Tensor::from({1, 2}, {1, 3}), ones, zeros, 1e-14);
    CHECK(std::abs(y.at(0) + 1.0) < 1e-12);
    CHECK(std::abs(y.at(1) - 1.0) < 1e-12);
    y = layer_norm(Tensor::from({1, 2}, {1, 3}), Tensor::zeros({2}), Tensor::from({2}, {0.25, -2}));
    CHECK(y.at(0) == 0.25);
    CHECK(y.at(1) == -2.0);
}

TEST_CASE("mse") {
    std::mt19937_64 rng(5);
    auto a = random_tensor({3, 4}, rng), b = random_tensor({3, 4}, rng);
    CHECK(mse(a, a).item() == 0.0);
    CHECK(mse(a, b).item() == mse(b, a).item());
    CHECK(mse(Tensor::zeros({2}), Tensor::full({2}, 1.0)).item() == 1.0);
    CHECK_THROWS_AS(mse(Tensor::zeros({2, 3}), Tensor::zeros({3, 2})), ShapeError);
}

TEST_CASE("soft_cross_entropy") {
    CHECK(std::abs(soft_cross_entropy(Tensor::zeros({2}), Tensor::zeros({2}), 1.0).item() - std::log(2.0)) < 1e-15);
    CHECK_THROWS_AS(soft_cross_entropy(Tensor::zeros({2}), Tensor::zeros({2}), 0.0), NonPositiveTemperature);
    CHECK_THROWS_AS(soft_cross_entropy(Tensor::zeros({2}), Tensor::zeros({2}), -1.0), NonPositiveTemperature);
    CHECK_THROWS_AS(soft_cross_entropy(Tensor::zeros({2}), Tensor::zeros({3}), 1.0), ShapeError);

    std::mt19937_64 rng(9);
    for (int trial = 0; trial < 100; ++trial) {
        const double t = 0.5 + trial % 4;
        auto p = random_tensor({6}, rng, 3.0, false), q = random_tensor({6}, rng, 3.0, false);
        const double h = entropy(softmax(p.values(), t));
        CHECK(soft_cross_entropy(p, p, t).item() == doctest::Approx(h).epsilon(1e-12));
        CHECK(soft_cross_entropy(p, q, t).item() >= h - 1e-12);
    }
}

TEST_CASE("backward") {
    std::mt19937_64 rng(1);
    auto x = random_tensor({3, 3}, rng);
    sum(mul(x, x)).backward();
    const auto g = x.grad();
    for (std::size_t i = 0; i < 9; ++i) CHECK(std::abs(g[i] - 2 * x.at(i)) < 1e-14);

    // Repeated calls accumulate.
    sum(mul(x, x)).backward();
    for (std::size_t i = 0; i < 9; ++i) CHECK(std::abs(x.grad()[i] - 4 * x.at(i)) < 1e-14);

    auto y = random_tensor({2}, rng);
    auto c = add(sum(scale(y, 0.0)), Tensor::scalar(3.0));
    sum(c).backward();
    for (double v : y.grad()) CHECK(v == 0.0);

    CHECK_THROWS_AS(mul(x, x).backward(), NonScalarLoss);
}

TEST_CASE("no-grad mode records no tape") {
    auto x = Tensor::full({2}, 1.0, true);
    {
        NoGradGuard g;
        CHECK_FALSE(grad_enabled());
        auto y = mul(x, x);
        CHECK_FALSE(y.requires_grad());
    }
    CHECK(grad_enabled());
    CHECK(mul(x, x).requires_grad());
}

TEST_CASE("gradient checks for every primitive") {
    std::mt19937_64 rng(2024);
    std::uniform_int_distribution<int> dim(1, 8);
    for (int trial = 0; trial < 10; ++trial) {
        const std::size_t m = dim(rng), k = dim(rng), n = dim(rng);
        auto a = random_tensor({m, k}, rng), b = random_tensor({k, n}, rng), bt = random_tensor({n, k}, rng);
        auto bias = random_tensor({n}, rng), w = random_tensor({m, n}, rng);
        auto c = random_tensor({m, k}, rng);
        auto row = random_tensor({k}, rng);
        auto gamma = random_tensor({k}, rng), beta = random_tensor({k}, rng);

        auto weighted = [&](const Tensor& t) { return sum(mul(t, Tensor::from(t.shape(), std::vector<double>(w.values().begin(), w.values().begin() + t.numel())))); };
        CHECK(grad_check([&] { return weighted(matmul(a, b)); }, {a, b}).max_rel_error <= 1e-6);
        CHECK(grad_check([&] { return weighted(matmul_nt(a, bt)); }, {a, bt}).max_rel_error <= 1e-6);
        CHECK(grad_check([&] { return weighted(linear(a, b, bias)); }, {a, b, bias}).max_rel_error <= 1e-6);
        CHECK(grad_check([&] { return sum(mul(add(a, c), sub(a, c))); }, {a, c}).max_rel_error <= 1e-6);
        CHECK(grad_check([&] { return sum(mul(scale(a, 1.7), add_row(c, row))); }, {a, c, row}).max_rel_error <= 1e-6);
        CHECK(grad_check([&] { return sum(mul(gelu(a), c)); }, {a}).max_rel_error <= 1e-6);
        CHECK(grad_check([&] { return sum(mul(sigmoid(a), c)); }, {a}).max_rel_error <= 1e-6);
        CHECK(grad_check([&] { return sum(mul(softmax_rows(a), c)); }, {a}).max_rel_error <= 1e-6);
        if (k > 1)
            CHECK(grad_check([&] { return sum(mul(layer_norm(a, gamma, beta), c)); }, {a, gamma, beta}).max_rel_error <=
                  1e-5);
        CHECK(grad_check([&] { return sum(mul(reshape(a, {k, m}), reshape(c, {k, m}))); }, {a, c}).max_rel_error <= 1e-6);
        CHECK(grad_check([&] { return sum(mul(concat_rows({a, c}), concat_rows({c, a}))); }, {a, c}).max_rel_error <=
              1e-6);
        CHECK(grad_check([&] { return sum(mul(concat_cols(a, c), concat_cols(c, c))); }, {a, c}).max_rel_error <= 1e-6);
        const std::size_t idx[] = {m - 1, 0, m - 1};
        CHECK(grad_check([&] { return sum(mul(gather_rows(a, idx), gather_rows(c, idx))); }, {a}).max_rel_error <=
              1e-6);
        CHECK(grad_check([&] { return sum(mul(slice_rows(a, m / 2, m - m / 2), slice_rows(c, 0, m - m / 2))); }, {a})
                  .max_rel_error <= 1e-6);
        CHECK(grad_check([&] { return sum(mul(mean_rows(a), mean_rows(c))); }, {a}).max_rel_error <= 1e-6);
        CHECK(grad_check([&] { return mul(mean(a), sum(c)); }, {a, c}).max_rel_error <= 1e-6);
        CHECK(grad_check([&] { return mse(a, c); }, {a, c}).max_rel_error <= 1e-6);
        CHECK(grad_check([&] { return soft_cross_entropy(c, a, 0.5 + trial); }, {a}).max_rel_error <= 1e-6);
        CHECK(grad_check([&] { return cross_entropy(reshape(a, {1, m * k}), (m * k) / 2); }, {a}).max_rel_error <= 1e-6);
        CHECK(grad_check([&] { return add(bce_with_logits(slice_rows(reshape(a, {m * k, 1}), 0, 1), 1.0),
                                          bce_with_logits(slice_rows(reshape(c, {m * k, 1}), 0, 1), 0.0)); },
                         {a, c})
                  .max_rel_error <= 1e-6);

        const std::size_t heads = 1 + trial % 3, d = heads * 2, s_len = dim(rng), t_len = dim(rng);
        auto q = random_tensor({s_len, d}, rng), kk = random_tensor({t_len, d}, rng), v = random_tensor({t_len, d}, rng);
        auto ws = random_tensor({heads * s_len, t_len}, rng), wo = random_tensor({s_len, d}, rng);
        CHECK(grad_check([&] { return sum(mul(mha_scores(q, kk, heads), ws)); }, {q, kk}).max_rel_error <= 1e-6);
        CHECK(grad_check([&] { return sum(mul(mha_apply(softmax_rows(ws), v, heads), wo)); }, {ws, v}).max_rel_error <=
              1e-6);

        auto lam = random_tensor({1}, rng), za = random_tensor({n}, rng), zb = random_tensor({n}, rng);
        std::vector<bool> use(n);
        for (std::size_t i = 0; i < n; ++i) use[i] = (i + trial) % 2 == 0;
        auto wn = random_tensor({n}, rng);
        CHECK(grad_check([&] { return sum(mul(gated_mix(sigmoid(lam), za, zb, use), wn)); }, {lam, za, zb})
                  .max_rel_error <= 1e-6);
    }
}

TEST_CASE("mha_scores uses the per-head scale") {
    // One head of width 4 vs two heads of width 2.
    auto q = Tensor::from({1, 4}, {1, 1, 1, 1});
    auto k = Tensor::from({1, 4}, {1, 1, 1, 1});
    CHECK(std::abs(mha_scores(q, k, 1).item() - 4.0 / 2.0) < 1e-15);
    auto two = mha_scores(q, k, 2);
    CHECK(two.shape() == Shape{2, 1});
    CHECK(std::abs(two.at(0) - 2.0 / std::sqrt(2.0)) < 1e-15);
}

TEST_CASE("ops are finite on extreme but finite inputs") {
    auto x = Tensor::from({1, 3}, {-800, 0, 800}, true);
    auto loss = add(sum(softmax_rows(x)), add(cross_entropy(x, 0), bce_with_logits(slice_rows(reshape(x, {3, 1}), 0, 1), 1.0)));
    loss.backward();
    CHECK(std::isfinite(loss.item()));
    for (double g : x.grad()) CHECK(std::isfinite(g));
}

TEST_CASE("adam") {
    auto p = Tensor::scalar(1.0, true);
    std::vector<Tensor*> ps = {&p};
    auto st = make_adam_state(ps, {0.1, 0.9, 0.999, 1e-8});
    p.mutable_grad()[0] = 1.0;
    adam_step(ps, st);
    // m_hat = 1, v_hat = 1, update = 0.1 * 1 / (1 + 1e-8)
    CHECK(std::abs(p.item() - (1.0 - 0.1 / (1.0 + 1e-8))) < 1e-15);
    CHECK(st.step == 1);

    auto z = Tensor::from({2}, {0.3, -0.4}, true);
    std::vector<Tensor*> zs = {&z};
    auto zst = make_adam_state(zs);
    z.zero_grad();
    adam_step(zs, zst);
    CHECK(z.at(0) == 0.3);
    CHECK(z.at(1) == -0.4);
    CHECK(zst.step == 1);

    auto wrong = Tensor::zeros({3}, true);
    std::vector<Tensor*> ws = {&wrong};
    CHECK_THROWS_AS(adam_step(ws, zst), ShapeError);
}

TEST_CASE("adam replicas stay bit-identical") {
    std::mt19937_64 r1(77), r2(77);
    auto a = random_tensor({4, 4}, r1), b = random_tensor({4, 4}, r2);
    std::vector<Tensor*> pa = {&a}, pb = {&b};
    auto sa = make_adam_state(pa), sb = make_adam_state(pb);
    for (int i = 0; i < 20; ++i) {
        for (auto* t : {&a, &b}) {
            t->zero_grad();
            sum(mul(gelu(*t), *t)).backward();
        }
        adam_step(pa, sa);
        adam_step(pb, sb);
    }
    for (std::size_t i = 0; i < 16; ++i) CHECK(a.at(i) == b.at(i));
}

TEST_CASE("parameter set") {
    ParameterSet set;
    Rng rng(4);
    set.add_xavier("w", 3, 5, rng);
    set.add_zeros("b", {5});
    CHECK_THROWS_AS(set.add_zeros("b", {5}), std::invalid_argument);
    CHECK(set.scalar_count() == 20);
    const double limit = std::sqrt(6.0 / 8.0);
    for (double v : set.at("w").values()) CHECK(std::abs(v) <= limit);
    for (double v : set.at("b").values()) CHECK(v == 0.0);
    CHECK(set.at("w").requires_grad());
}

TEST_CASE("results agree across kernel tables") {
    if (!kernels::supported(kernels::Isa::Avx2)) return;
    std::mt19937_64 rng(8);
    auto a = random_tensor({7, 13}, rng), b = random_tensor({13, 5}, rng);
    const auto before = kernels::active_isa();
    kernels::select(kernels::Isa::Scalar);
    auto s = matmul(a, b);
    kernels::select(kernels::Isa::Avx2);
    auto v = matmul(a, b);
    kernels::select(before);
    for (std::size_t i = 0; i < s.numel(); ++i) CHECK(std::abs(s.at(i) - v.at(i)) < 1e-12);
}
