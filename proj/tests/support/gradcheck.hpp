#pragma once

// Central finite-difference gradient checking for scalar-valued tape
// functions of a set of leaf tensors.

#include <algorithm>
#include <cmath>
#include <functional>
#include <random>
#include <vector>

#include "navkd/tensor.hpp"

namespace navkd::testing {

struct GradCheckResult {
    double max_rel_error = 0.0;  // worst tensor
    double max_abs_error = 0.0;
};

// Relative error per tensor is ||analytic - numeric|| / max(||analytic||,
// ||numeric||, floor); the floor keeps all-zero gradients well defined.
inline GradCheckResult grad_check(const std::function<Tensor()>& f, const std::vector<Tensor>& leaves,
                                  double h = 1e-5, double floor = 1e-8) {
    for (auto t : leaves) t.zero_grad();
    f().backward();
    GradCheckResult out;
    for (auto t : leaves) {
        const std::vector<double> analytic = t.grad();
        auto values = t.mutable_values();
        double diff2 = 0, a2 = 0, n2 = 0;
        for (std::size_t i = 0; i < values.size(); ++i) {
            const double saved = values[i];
            values[i] = saved + h;
            double plus;
            double minus;
            {
                NoGradGuard guard;
                plus = f().item();
                values[i] = saved - h;
                minus = f().item();
            }
            values[i] = saved;
            const double numeric = (plus - minus) / (2 * h);
            diff2 += (analytic[i] - numeric) * (analytic[i] - numeric);
            a2 += analytic[i] * analytic[i];
            n2 += numeric * numeric;
            out.max_abs_error = std::max(out.max_abs_error, std::abs(analytic[i] - numeric));
        }
        const double denom = std::max({std::sqrt(a2), std::sqrt(n2), floor});
        out.max_rel_error = std::max(out.max_rel_error, std::sqrt(diff2) / denom);
    }
    return out;
}

inline Tensor random_tensor(Shape shape, std::mt19937_64& rng, double scale = 1.0, bool requires_grad = true) {
    std::normal_distribution<double> dist(0.0, scale);
    std::vector<double> v(numel_of(shape));
    for (auto& x : v) x = dist(rng);
    return Tensor::from(std::move(shape), std::move(v), requires_grad);
}

}  // namespace navkd::testing
