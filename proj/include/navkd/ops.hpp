#pragma once

// Differentiable primitives. Matrices are rank-2; rank-1 tensors are read as
// a single row. Shape violations throw ShapeError naming the operands.

#include <cstddef>
#include <span>
#include <vector>

#include "navkd/tensor.hpp"

namespace navkd {

Tensor matmul(const Tensor& a, const Tensor& b);     // [M x K] * [K x N]
Tensor matmul_nt(const Tensor& a, const Tensor& b);  // [M x K] * [N x K]^T
Tensor linear(const Tensor& x, const Tensor& w, const Tensor& b);  // x*w + b, b broadcast over rows

Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double s);
Tensor add_row(const Tensor& x, const Tensor& row);  // row broadcast over every row of x

Tensor gelu(const Tensor& x);  // tanh approximation
Tensor sigmoid(const Tensor& x);
Tensor softmax_rows(const Tensor& x);
Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, double eps = 1e-5);

Tensor reshape(const Tensor& x, Shape shape);
Tensor concat_rows(const std::vector<Tensor>& parts);
Tensor concat_cols(const Tensor& a, const Tensor& b);
Tensor slice_rows(const Tensor& x, std::size_t begin, std::size_t count);
Tensor gather_rows(const Tensor& x, std::span<const std::size_t> rows);
Tensor mean_rows(const Tensor& x);  // [M x N] -> [1 x N]
Tensor sum(const Tensor& x);
Tensor mean(const Tensor& x);

// Per-head scaled scores of q[S x D] against k[T x D], heads stacked along
// rows: result[(h*S + s), t] = <q_h[s], k_h[t]> / sqrt(D / heads).
Tensor mha_scores(const Tensor& q, const Tensor& k, std::size_t heads);
// Per-head weighted sum: p[(h*S) x T] applied to v[T x D] -> [S x D].
Tensor mha_apply(const Tensor& p, const Tensor& v, std::size_t heads);

// z[i] = lambda*a[i] + (1 - lambda)*b[i] where use_b[i], else lambda*a[i].
Tensor gated_mix(const Tensor& lambda, const Tensor& a, const Tensor& b, const std::vector<bool>& use_b);

// Losses (scalar results).
Tensor mse(const Tensor& a, const Tensor& b);
// -sum_i p_i log q_i with p = softmax(teacher/t) held constant and
// q = softmax(student/t). Only the student receives a gradient.
Tensor soft_cross_entropy(const Tensor& teacher_logits, const Tensor& student_logits, double t);
Tensor cross_entropy(const Tensor& logits, std::size_t target);
Tensor bce_with_logits(const Tensor& logit, double label);

// Plain helpers on values (no tape).
std::vector<double> softmax(std::span<const double> logits, double t = 1.0);
double entropy(std::span<const double> probs);

}  // namespace navkd
