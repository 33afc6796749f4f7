#include <doctest.h>

#include <cmath>
#include <random>
#include <stdexcept>
#include <vector>

#include "navkd/kernels.hpp"

using namespace navkd::kernels;

namespace {

std::vector<double> randv(std::size_t n, std::mt19937_64& rng) {
    std::uniform_real_distribution<double> d(-1.0, 1.0);
    std::vector<double> v(n);
    for (auto& x : v) x = d(rng);
    return v;
}

double max_diff(const std::vector<double>& a, const std::vector<double>& b) {
    double m = 0;
    for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
    return m;
}

}  // namespace

TEST_CASE("scalar kernels on hand-computed inputs") {
    const auto& s = scalar_table();
    const double a[] = {1, 2, 3};
    const double b[] = {4, 5, 6};
    CHECK(s.dot(a, b, 3) == 32.0);
    CHECK(s.sum_sq_diff(a, b, 3) == 27.0);
    double y[] = {1, 1, 1};
    s.axpy(2.0, a, y, 3);
    CHECK(y[2] == 7.0);

    // [[1,2],[3,4]] * [[1],[1]] = [[3],[7]]
    const double m[] = {1, 2, 3, 4};
    const double ones[] = {1, 1};
    double c[2] = {0, 0};
    s.gemm_nn(2, 1, 2, 1.0, m, 2, ones, 1, c, 1);
    CHECK(c[0] == 3.0);
    CHECK(c[1] == 7.0);
}

TEST_CASE("avx2 kernels agree with the scalar reference") {
    if (!supported(Isa::Avx2)) return;
    const auto& s = scalar_table();
    const auto& v = table(Isa::Avx2);
    std::mt19937_64 rng(11);
    for (std::size_t n : {0u, 1u, 3u, 4u, 5u, 8u, 15u, 16u, 17u, 63u, 130u}) {
        auto a = randv(n, rng), b = randv(n, rng);
        CHECK(std::abs(s.dot(a.data(), b.data(), n) - v.dot(a.data(), b.data(), n)) < 1e-12);
        CHECK(std::abs(s.sum_sq_diff(a.data(), b.data(), n) - v.sum_sq_diff(a.data(), b.data(), n)) < 1e-12);
        auto y1 = randv(n, rng);
        auto y2 = y1;
        s.axpy(0.7, a.data(), y1.data(), n);
        v.axpy(0.7, a.data(), y2.data(), n);
        CHECK(max_diff(y1, y2) < 1e-14);
    }
    const std::size_t dims[][3] = {{1, 1, 1}, {3, 5, 7}, {4, 4, 4}, {8, 9, 13}, {17, 6, 33}, {2, 70, 5}};
    for (const auto& d : dims) {
        const std::size_t m = d[0], n = d[1], k = d[2];
        auto a = randv(m * k, rng), b = randv(k * n, rng), bt = randv(n * k, rng), at = randv(k * m, rng);
        auto c0 = randv(m * n, rng);
        auto c1 = c0, c2 = c0;
        s.gemm_nn(m, n, k, 0.5, a.data(), k, b.data(), n, c1.data(), n);
        v.gemm_nn(m, n, k, 0.5, a.data(), k, b.data(), n, c2.data(), n);
        CHECK(max_diff(c1, c2) < 1e-12);
        c1 = c0, c2 = c0;
        s.gemm_nt(m, n, k, -1.0, a.data(), k, bt.data(), k, c1.data(), n);
        v.gemm_nt(m, n, k, -1.0, a.data(), k, bt.data(), k, c2.data(), n);
        CHECK(max_diff(c1, c2) < 1e-12);
        c1 = c0, c2 = c0;
        s.gemm_tn(m, n, k, 2.0, at.data(), m, b.data(), n, c1.data(), n);
        v.gemm_tn(m, n, k, 2.0, at.data(), m, b.data(), n, c2.data(), n);
        CHECK(max_diff(c1, c2) < 1e-12);
    }
}

TEST_CASE("kernel selection round trips") {
    const Isa before = active_isa();
    select(Isa::Scalar);
    CHECK(active_isa() == Isa::Scalar);
    CHECK(name(Isa::Scalar) == "scalar");
    if (!supported(Isa::Avx2)) CHECK_THROWS_AS(select(Isa::Avx2), std::invalid_argument);
    select(before);
    CHECK(active_isa() == before);
}
