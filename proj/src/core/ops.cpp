#include "navkd/ops.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "navkd/errors.hpp"
#include "navkd/kernels.hpp"

namespace navkd {
namespace {

// Gradient buffer of parent i, or null when that parent is a constant.
double* parent_grad(TensorImpl& self, std::size_t i) {
    TensorImpl& p = *self.parents[i];
    if (!p.requires_grad) return nullptr;
    p.ensure_grad();
    return p.grad.data();
}

const double* parent_value(const TensorImpl& self, std::size_t i) { return self.parents[i]->value.data(); }

void require_same_shape(const char* op, const Tensor& a, const Tensor& b) {
    if (a.shape() != b.shape())
        throw ShapeError(std::string(op) + ": shapes " + to_string(a.shape()) + " and " + to_string(b.shape()) +
                         " differ");
}

void require_matrix(const char* op, const Tensor& t) {
    if (t.rank() > 2) throw ShapeError(std::string(op) + ": expected a matrix, got " + to_string(t.shape()));
}

double gelu_value(double x) {
    constexpr double c = 0.7978845608028654;  // sqrt(2/pi)
    return 0.5 * x * (1.0 + std::tanh(c * (x + 0.044715 * x * x * x)));
}

double gelu_slope(double x) {
    constexpr double c = 0.7978845608028654;
    const double u = c * (x + 0.044715 * x * x * x);
    const double th = std::tanh(u);
    return 0.5 * (1.0 + th) + 0.5 * x * (1.0 - th * th) * c * (1.0 + 3.0 * 0.044715 * x * x);
}

void softmax_inplace(double* row, std::size_t n, double t) {
    double mx = -std::numeric_limits<double>::infinity();
    for (std::size_t j = 0; j < n; ++j) mx = std::max(mx, row[j] / t);
    double z = 0.0;
    for (std::size_t j = 0; j < n; ++j) {
        row[j] = std::exp(row[j] / t - mx);
        z += row[j];
    }
    for (std::size_t j = 0; j < n; ++j) row[j] /= z;
}

}  // namespace

Tensor matmul(const Tensor& a, const Tensor& b) {
    require_matrix("matmul", a);
    require_matrix("matmul", b);
    const std::size_t m = a.rows(), k = a.cols(), n = b.cols();
    if (b.rows() != k)
        throw ShapeError("matmul: inner dimensions of " + to_string(a.shape()) + " and " + to_string(b.shape()) +
                         " disagree");
    std::vector<double> out(m * n, 0.0);
    kernels::gemm_nn(m, n, k, 1.0, a.data(), k, b.data(), n, out.data(), n);
    return detail::make_result({m, n}, std::move(out), {a, b}, [m, n, k](TensorImpl& self) {
        const double* g = self.grad.data();
        if (double* da = parent_grad(self, 0)) kernels::gemm_nt(m, k, n, 1.0, g, n, parent_value(self, 1), n, da, k);
        if (double* db = parent_grad(self, 1)) kernels::gemm_tn(k, n, m, 1.0, parent_value(self, 0), k, g, n, db, n);
    });
}

Tensor matmul_nt(const Tensor& a, const Tensor& b) {
    require_matrix("matmul_nt", a);
    require_matrix("matmul_nt", b);
    const std::size_t m = a.rows(), k = a.cols(), n = b.rows();
    if (b.cols() != k)
        throw ShapeError("matmul_nt: " + to_string(a.shape()) + " and " + to_string(b.shape()) +
                         " have different row widths");
    std::vector<double> out(m * n, 0.0);
    kernels::gemm_nt(m, n, k, 1.0, a.data(), k, b.data(), k, out.data(), n);
    return detail::make_result({m, n}, std::move(out), {a, b}, [m, n, k](TensorImpl& self) {
        const double* g = self.grad.data();
        if (double* da = parent_grad(self, 0)) kernels::gemm_nn(m, k, n, 1.0, g, n, parent_value(self, 1), k, da, k);
        if (double* db = parent_grad(self, 1)) kernels::gemm_tn(n, k, m, 1.0, g, n, parent_value(self, 0), k, db, k);
    });
}

Tensor linear(const Tensor& x, const Tensor& w, const Tensor& b) {
    require_matrix("linear", x);
    require_matrix("linear", w);
    const std::size_t m = x.rows(), k = x.cols(), n = w.cols();
    if (w.rows() != k)
        throw ShapeError("linear: input " + to_string(x.shape()) + " does not fit weight " + to_string(w.shape()));
    if (b.numel() != n) throw ShapeError("linear: bias " + to_string(b.shape()) + " does not fit weight " + to_string(w.shape()));
    std::vector<double> out(m * n);
    for (std::size_t i = 0; i < m; ++i) std::copy(b.data(), b.data() + n, out.begin() + i * n);
    kernels::gemm_nn(m, n, k, 1.0, x.data(), k, w.data(), n, out.data(), n);
    return detail::make_result({m, n}, std::move(out), {x, w, b}, [m, n, k](TensorImpl& self) {
        const double* g = self.grad.data();
        if (double* dx = parent_grad(self, 0)) kernels::gemm_nt(m, k, n, 1.0, g, n, parent_value(self, 1), n, dx, k);
        if (double* dw = parent_grad(self, 1)) kernels::gemm_tn(k, n, m, 1.0, parent_value(self, 0), k, g, n, dw, n);
        if (double* db = parent_grad(self, 2))
            for (std::size_t i = 0; i < m; ++i) kernels::axpy(1.0, g + i * n, db, n);
    });
}

Tensor add(const Tensor& a, const Tensor& b) {
    require_same_shape("add", a, b);
    std::vector<double> out(a.numel());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.at(i) + b.at(i);
    return detail::make_result(a.shape(), std::move(out), {a, b}, [](TensorImpl& self) {
        const std::size_t n = self.grad.size();
        if (double* da = parent_grad(self, 0)) kernels::axpy(1.0, self.grad.data(), da, n);
        if (double* db = parent_grad(self, 1)) kernels::axpy(1.0, self.grad.data(), db, n);
    });
}

Tensor sub(const Tensor& a, const Tensor& b) {
    require_same_shape("sub", a, b);
    std::vector<double> out(a.numel());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.at(i) - b.at(i);
    return detail::make_result(a.shape(), std::move(out), {a, b}, [](TensorImpl& self) {
        const std::size_t n = self.grad.size();
        if (double* da = parent_grad(self, 0)) kernels::axpy(1.0, self.grad.data(), da, n);
        if (double* db = parent_grad(self, 1)) kernels::axpy(-1.0, self.grad.data(), db, n);
    });
}

Tensor mul(const Tensor& a, const Tensor& b) {
    require_same_shape("mul", a, b);
    std::vector<double> out(a.numel());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.at(i) * b.at(i);
    return detail::make_result(a.shape(), std::move(out), {a, b}, [](TensorImpl& self) {
        const double* g = self.grad.data();
        const double* av = parent_value(self, 0);
        const double* bv = parent_value(self, 1);
        if (double* da = parent_grad(self, 0))
            for (std::size_t i = 0; i < self.grad.size(); ++i) da[i] += g[i] * bv[i];
        if (double* db = parent_grad(self, 1))
            for (std::size_t i = 0; i < self.grad.size(); ++i) db[i] += g[i] * av[i];
    });
}

Tensor scale(const Tensor& a, double s) {
    std::vector<double> out(a.values().begin(), a.values().end());
    for (double& v : out) v *= s;
    return detail::make_result(a.shape(), std::move(out), {a}, [s](TensorImpl& self) {
        if (double* da = parent_grad(self, 0)) kernels::axpy(s, self.grad.data(), da, self.grad.size());
    });
}

Tensor add_row(const Tensor& x, const Tensor& row) {
    require_matrix("add_row", x);
    const std::size_t m = x.rows(), n = x.cols();
    if (row.numel() != n)
        throw ShapeError("add_row: row " + to_string(row.shape()) + " does not fit " + to_string(x.shape()));
    std::vector<double> out(x.values().begin(), x.values().end());
    for (std::size_t i = 0; i < m; ++i) kernels::axpy(1.0, row.data(), out.data() + i * n, n);
    return detail::make_result(x.shape(), std::move(out), {x, row}, [m, n](TensorImpl& self) {
        const double* g = self.grad.data();
        if (double* dx = parent_grad(self, 0)) kernels::axpy(1.0, g, dx, m * n);
        if (double* dr = parent_grad(self, 1))
            for (std::size_t i = 0; i < m; ++i) kernels::axpy(1.0, g + i * n, dr, n);
    });
}

Tensor gelu(const Tensor& x) {
    std::vector<double> out(x.numel());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = gelu_value(x.at(i));
    return detail::make_result(x.shape(), std::move(out), {x}, [](TensorImpl& self) {
        if (double* dx = parent_grad(self, 0)) {
            const double* xv = parent_value(self, 0);
            for (std::size_t i = 0; i < self.grad.size(); ++i) dx[i] += self.grad[i] * gelu_slope(xv[i]);
        }
    });
}

Tensor sigmoid(const Tensor& x) {
    std::vector<double> out(x.numel());
    for (std::size_t i = 0; i < out.size(); ++i) {
        const double v = x.at(i);
        out[i] = v >= 0 ? 1.0 / (1.0 + std::exp(-v)) : std::exp(v) / (1.0 + std::exp(v));
    }
    return detail::make_result(x.shape(), std::move(out), {x}, [](TensorImpl& self) {
        if (double* dx = parent_grad(self, 0))
            for (std::size_t i = 0; i < self.grad.size(); ++i)
                dx[i] += self.grad[i] * self.value[i] * (1.0 - self.value[i]);
    });
}

Tensor softmax_rows(const Tensor& x) {
    require_matrix("softmax_rows", x);
    const std::size_t m = x.rows(), n = x.cols();
    std::vector<double> out(x.values().begin(), x.values().end());
    for (std::size_t i = 0; i < m; ++i) softmax_inplace(out.data() + i * n, n, 1.0);
    return detail::make_result(x.shape(), std::move(out), {x}, [m, n](TensorImpl& self) {
        double* dx = parent_grad(self, 0);
        if (!dx) return;
        for (std::size_t i = 0; i < m; ++i) {
            const double* y = self.value.data() + i * n;
            const double* g = self.grad.data() + i * n;
            const double s = kernels::dot(g, y, n);
            for (std::size_t j = 0; j < n; ++j) dx[i * n + j] += y[j] * (g[j] - s);
        }
    });
}

Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, double eps) {
    require_matrix("layer_norm", x);
    const std::size_t m = x.rows(), d = x.cols();
    if (gamma.numel() != d || beta.numel() != d)
        throw ShapeError("layer_norm: gamma/beta " + to_string(gamma.shape()) + "/" + to_string(beta.shape()) +
                         " do not fit " + to_string(x.shape()));
    std::vector<double> out(m * d);
    std::vector<double> xhat(m * d);
    std::vector<double> inv_std(m);
    for (std::size_t i = 0; i < m; ++i) {
        const double* row = x.data() + i * d;
        double mu = 0.0;
        for (std::size_t j = 0; j < d; ++j) mu += row[j];
        mu /= static_cast<double>(d);
        double var = 0.0;
        for (std::size_t j = 0; j < d; ++j) var += (row[j] - mu) * (row[j] - mu);
        var /= static_cast<double>(d);
        inv_std[i] = 1.0 / std::sqrt(var + eps);
        for (std::size_t j = 0; j < d; ++j) {
            xhat[i * d + j] = (row[j] - mu) * inv_std[i];
            out[i * d + j] = gamma.at(j) * xhat[i * d + j] + beta.at(j);
        }
    }
    return detail::make_result(
        x.shape(), std::move(out), {x, gamma, beta},
        [m, d, xhat = std::move(xhat), inv_std = std::move(inv_std)](TensorImpl& self) {
            const double* g = self.grad.data();
            const double* gam = parent_value(self, 1);
            double* dx = parent_grad(self, 0);
            double* dgamma = parent_grad(self, 1);
            double* dbeta = parent_grad(self, 2);
            std::vector<double> gx(d);
            for (std::size_t i = 0; i < m; ++i) {
                const double* gi = g + i * d;
                const double* xh = xhat.data() + i * d;
                if (dgamma)
                    for (std::size_t j = 0; j < d; ++j) dgamma[j] += gi[j] * xh[j];
                if (dbeta) kernels::axpy(1.0, gi, dbeta, d);
                if (!dx) continue;
                double mean_gx = 0.0, mean_gx_xh = 0.0;
                for (std::size_t j = 0; j < d; ++j) {
                    gx[j] = gi[j] * gam[j];
                    mean_gx += gx[j];
                    mean_gx_xh += gx[j] * xh[j];
                }
                mean_gx /= static_cast<double>(d);
                mean_gx_xh /= static_cast<double>(d);
                for (std::size_t j = 0; j < d; ++j)
                    dx[i * d + j] += inv_std[i] * (gx[j] - mean_gx - xh[j] * mean_gx_xh);
            }
        });
}

Tensor reshape(const Tensor& x, Shape shape) {
    if (numel_of(shape) != x.numel())
        throw ShapeError("reshape: cannot view " + to_string(x.shape()) + " as " + to_string(shape));
    std::vector<double> out(x.values().begin(), x.values().end());
    return detail::make_result(std::move(shape), std::move(out), {x}, [](TensorImpl& self) {
        if (double* dx = parent_grad(self, 0)) kernels::axpy(1.0, self.grad.data(), dx, self.grad.size());
    });
}

Tensor concat_rows(const std::vector<Tensor>& parts) {
    if (parts.empty()) throw ShapeError("concat_rows: no inputs");
    const std::size_t n = parts.front().cols();
    std::size_t m = 0;
    for (const Tensor& p : parts) {
        require_matrix("concat_rows", p);
        if (p.cols() != n)
            throw ShapeError("concat_rows: " + to_string(p.shape()) + " does not match width " + std::to_string(n));
        m += p.rows();
    }
    std::vector<double> out;
    out.reserve(m * n);
    std::vector<std::size_t> offsets;
    for (const Tensor& p : parts) {
        offsets.push_back(out.size());
        out.insert(out.end(), p.values().begin(), p.values().end());
    }
    return detail::make_result({m, n}, std::move(out), parts, [offsets = std::move(offsets)](TensorImpl& self) {
        for (std::size_t i = 0; i < self.parents.size(); ++i)
            if (double* dp = parent_grad(self, i))
                kernels::axpy(1.0, self.grad.data() + offsets[i], dp, self.parents[i]->value.size());
    });
}

Tensor concat_cols(const Tensor& a, const Tensor& b) {
    require_matrix("concat_cols", a);
    require_matrix("concat_cols", b);
    const std::size_t m = a.rows(), na = a.cols(), nb = b.cols();
    if (b.rows() != m)
        throw ShapeError("concat_cols: " + to_string(a.shape()) + " and " + to_string(b.shape()) + " differ in rows");
    std::vector<double> out(m * (na + nb));
    for (std::size_t i = 0; i < m; ++i) {
        std::copy(a.data() + i * na, a.data() + (i + 1) * na, out.begin() + i * (na + nb));
        std::copy(b.data() + i * nb, b.data() + (i + 1) * nb, out.begin() + i * (na + nb) + na);
    }
    return detail::make_result({m, na + nb}, std::move(out), {a, b}, [m, na, nb](TensorImpl& self) {
        const double* g = self.grad.data();
        double* da = parent_grad(self, 0);
        double* db = parent_grad(self, 1);
        for (std::size_t i = 0; i < m; ++i) {
            if (da) kernels::axpy(1.0, g + i * (na + nb), da + i * na, na);
            if (db) kernels::axpy(1.0, g + i * (na + nb) + na, db + i * nb, nb);
        }
    });
}

Tensor slice_rows(const Tensor& x, std::size_t begin, std::size_t count) {
    require_matrix("slice_rows", x);
    const std::size_t n = x.cols();
    if (count == 0 || begin + count > x.rows())
        throw ShapeError("slice_rows: rows [" + std::to_string(begin) + ", " + std::to_string(begin + count) +
                         ") out of " + to_string(x.shape()));
    std::vector<double> out(x.data() + begin * n, x.data() + (begin + count) * n);
    return detail::make_result({count, n}, std::move(out), {x}, [begin, n](TensorImpl& self) {
        if (double* dx = parent_grad(self, 0)) kernels::axpy(1.0, self.grad.data(), dx + begin * n, self.grad.size());
    });
}

Tensor gather_rows(const Tensor& x, std::span<const std::size_t> rows) {
    require_matrix("gather_rows", x);
    const std::size_t n = x.cols();
    if (rows.empty()) throw ShapeError("gather_rows: empty index list");
    std::vector<double> out(rows.size() * n);
    for (std::size_t i = 0; i < rows.size(); ++i) {
        if (rows[i] >= x.rows())
            throw ShapeError("gather_rows: row " + std::to_string(rows[i]) + " out of " + to_string(x.shape()));
        std::copy(x.data() + rows[i] * n, x.data() + (rows[i] + 1) * n, out.begin() + i * n);
    }
    std::vector<std::size_t> idx(rows.begin(), rows.end());
    return detail::make_result({rows.size(), n}, std::move(out), {x}, [n, idx = std::move(idx)](TensorImpl& self) {
        if (double* dx = parent_grad(self, 0))
            for (std::size_t i = 0; i < idx.size(); ++i) kernels::axpy(1.0, self.grad.data() + i * n, dx + idx[i] * n, n);
    });
}

Tensor mean_rows(const Tensor& x) {
    require_matrix("mean_rows", x);
    const std::size_t m = x.rows(), n = x.cols();
    std::vector<double> out(n, 0.0);
    const double inv = 1.0 / static_cast<double>(m);
    for (std::size_t i = 0; i < m; ++i) kernels::axpy(inv, x.data() + i * n, out.data(), n);
    return detail::make_result({1, n}, std::move(out), {x}, [m, n, inv](TensorImpl& self) {
        if (double* dx = parent_grad(self, 0))
            for (std::size_t i = 0; i < m; ++i) kernels::axpy(inv, self.grad.data(), dx + i * n, n);
    });
}

Tensor sum(const Tensor& x) {
    const double s = std::accumulate(x.values().begin(), x.values().end(), 0.0);
    return detail::make_result({1}, {s}, {x}, [](TensorImpl& self) {
        if (double* dx = parent_grad(self, 0)) {
            const double g = self.grad[0];
            for (std::size_t i = 0; i < self.parents[0]->value.size(); ++i) dx[i] += g;
        }
    });
}

Tensor mean(const Tensor& x) { return scale(sum(x), 1.0 / static_cast<double>(x.numel())); }

Tensor mha_scores(const Tensor& q, const Tensor& k, std::size_t heads) {
    require_matrix("mha_scores", q);
    require_matrix("mha_scores", k);
    const std::size_t s = q.rows(), t = k.rows(), d = q.cols();
    if (k.cols() != d)
        throw ShapeError("mha_scores: query " + to_string(q.shape()) + " and key " + to_string(k.shape()) +
                         " widths differ");
    if (heads == 0 || d % heads != 0)
        throw ShapeError("mha_scores: width " + std::to_string(d) + " not divisible into " + std::to_string(heads) +
                         " heads");
    const std::size_t dh = d / heads;
    const double sc = 1.0 / std::sqrt(static_cast<double>(dh));
    std::vector<double> out(heads * s * t, 0.0);
    for (std::size_t h = 0; h < heads; ++h)
        kernels::gemm_nt(s, t, dh, sc, q.data() + h * dh, d, k.data() + h * dh, d, out.data() + h * s * t, t);
    return detail::make_result({heads * s, t}, std::move(out), {q, k}, [=](TensorImpl& self) {
        double* dq = parent_grad(self, 0);
        double* dk = parent_grad(self, 1);
        const double* qv = parent_value(self, 0);
        const double* kv = parent_value(self, 1);
        for (std::size_t h = 0; h < heads; ++h) {
            const double* gh = self.grad.data() + h * s * t;
            if (dq) kernels::gemm_nn(s, dh, t, sc, gh, t, kv + h * dh, d, dq + h * dh, d);
            if (dk) kernels::gemm_tn(t, dh, s, sc, gh, t, qv + h * dh, d, dk + h * dh, d);
        }
    });
}

Tensor mha_apply(const Tensor& p, const Tensor& v, std::size_t heads) {
    require_matrix("mha_apply", p);
    require_matrix("mha_apply", v);
    const std::size_t t = v.rows(), d = v.cols();
    if (heads == 0 || d % heads != 0 || p.rows() % heads != 0 || p.cols() != t)
        throw ShapeError("mha_apply: weights " + to_string(p.shape()) + " do not fit values " + to_string(v.shape()) +
                         " with " + std::to_string(heads) + " heads");
    const std::size_t s = p.rows() / heads, dh = d / heads;
    std::vector<double> out(s * d, 0.0);
    for (std::size_t h = 0; h < heads; ++h)
        kernels::gemm_nn(s, dh, t, 1.0, p.data() + h * s * t, t, v.data() + h * dh, d, out.data() + h * dh, d);
    return detail::make_result({s, d}, std::move(out), {p, v}, [=](TensorImpl& self) {
        double* dp = parent_grad(self, 0);
        double* dv = parent_grad(self, 1);
        const double* pv = parent_value(self, 0);
        const double* vv = parent_value(self, 1);
        const double* g = self.grad.data();
        for (std::size_t h = 0; h < heads; ++h) {
            if (dp) kernels::gemm_nt(s, t, dh, 1.0, g + h * dh, d, vv + h * dh, d, dp + h * s * t, t);
            if (dv) kernels::gemm_tn(t, dh, s, 1.0, pv + h * s * t, t, g + h * dh, d, dv + h * dh, d);
        }
    });
}

Tensor gated_mix(const Tensor& lambda, const Tensor& a, const Tensor& b, const std::vector<bool>& use_b) {
    if (lambda.numel() != 1) throw ShapeError("gated_mix: gate must be a scalar, got " + to_string(lambda.shape()));
    require_same_shape("gated_mix", a, b);
    if (use_b.size() != a.numel())
        throw ShapeError("gated_mix: mask of length " + std::to_string(use_b.size()) + " for " + to_string(a.shape()));
    const double lam = lambda.item();
    std::vector<double> out(a.numel());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = lam * a.at(i) + (use_b[i] ? (1.0 - lam) * b.at(i) : 0.0);
    return detail::make_result(a.shape(), std::move(out), {lambda, a, b}, [use_b](TensorImpl& self) {
        const double lam = self.parents[0]->value[0];
        const double* av = parent_value(self, 1);
        const double* bv = parent_value(self, 2);
        const double* g = self.grad.data();
        double* dl = parent_grad(self, 0);
        double* da = parent_grad(self, 1);
        double* db = parent_grad(self, 2);
        for (std::size_t i = 0; i < self.grad.size(); ++i) {
            if (dl) *dl += g[i] * (av[i] - (use_b[i] ? bv[i] : 0.0));
            if (da) da[i] += g[i] * lam;
            if (db && use_b[i]) db[i] += g[i] * (1.0 - lam);
        }
    });
}

Tensor mse(const Tensor& a, const Tensor& b) {
    require_same_shape("mse", a, b);
    const std::size_t n = a.numel();
    const double loss = kernels::sum_sq_diff(a.data(), b.data(), n) / static_cast<double>(n);
    return detail::make_result({1}, {loss}, {a, b}, [n](TensorImpl& self) {
        const double c = 2.0 * self.grad[0] / static_cast<double>(n);
        const double* av = parent_value(self, 0);
        const double* bv = parent_value(self, 1);
        double* da = parent_grad(self, 0);
        double* db = parent_grad(self, 1);
        for (std::size_t i = 0; i < n; ++i) {
            const double diff = c * (av[i] - bv[i]);
            if (da) da[i] += diff;
            if (db) db[i] -= diff;
        }
    });
}

std::vector<double> softmax(std::span<const double> logits, double t) {
    std::vector<double> p(logits.begin(), logits.end());
    softmax_inplace(p.data(), p.size(), t);
    return p;
}

double entropy(std::span<const double> probs) {
    double h = 0.0;
    for (double p : probs)
        if (p > 0.0) h -= p * std::log(p);
    return h;
}

Tensor soft_cross_entropy(const Tensor& teacher_logits, const Tensor& student_logits, double t) {
    if (!(t > 0.0)) throw NonPositiveTemperature("temperature must be positive, got " + std::to_string(t));
    if (teacher_logits.numel() != student_logits.numel() || student_logits.numel() == 0)
        throw ShapeError("soft_cross_entropy: teacher " + to_string(teacher_logits.shape()) + " vs student " +
                         to_string(student_logits.shape()));
    const std::size_t n = student_logits.numel();
    std::vector<double> p = softmax(teacher_logits.values(), t);
    std::vector<double> q = softmax(student_logits.values(), t);
    // log q_i = s_i/t - logsumexp(s/t)
    double mx = -std::numeric_limits<double>::infinity();
    for (double v : student_logits.values()) mx = std::max(mx, v / t);
    double z = 0.0;
    for (double v : student_logits.values()) z += std::exp(v / t - mx);
    const double lse = mx + std::log(z);
    double loss = 0.0;
    for (std::size_t i = 0; i < n; ++i) loss -= p[i] * (student_logits.at(i) / t - lse);
    return detail::make_result({1}, {loss}, {student_logits},
                               [p = std::move(p), q = std::move(q), t](TensorImpl& self) {
                                   if (double* ds = parent_grad(self, 0)) {
                                       const double g = self.grad[0] / t;
                                       for (std::size_t i = 0; i < p.size(); ++i) ds[i] += g * (q[i] - p[i]);
                                   }
                               });
}

Tensor cross_entropy(const Tensor& logits, std::size_t target) {
    const std::size_t n = logits.numel();
    if (target >= n)
        throw ShapeError("cross_entropy: target " + std::to_string(target) + " out of " + to_string(logits.shape()));
    std::vector<double> q = softmax(logits.values());
    const double loss = -std::log(std::max(q[target], std::numeric_limits<double>::min()));
    return detail::make_result({1}, {loss}, {logits}, [q = std::move(q), target](TensorImpl& self) {
        if (double* dl = parent_grad(self, 0)) {
            const double g = self.grad[0];
            for (std::size_t i = 0; i < q.size(); ++i) dl[i] += g * (q[i] - (i == target ? 1.0 : 0.0));
        }
    });
}

Tensor bce_with_logits(const Tensor& logit, double label) {
    if (logit.numel() != 1) throw ShapeError("bce_with_logits: expected a scalar logit, got " + to_string(logit.shape()));
    const double x = logit.item();
    const double loss = std::max(x, 0.0) - x * label + std::log1p(std::exp(-std::abs(x)));
    return detail::make_result({1}, {loss}, {logit}, [label](TensorImpl& self) {
        if (double* dx = parent_grad(self, 0)) {
            const double x = self.parents[0]->value[0];
            const double sg = x >= 0 ? 1.0 / (1.0 + std::exp(-x)) : std::exp(x) / (1.0 + std::exp(x));
            dx[0] += self.grad[0] * (sg - label);
        }
    });
}

}  // namespace navkd
