#include "navkd/tensor.hpp"

#include <algorithm>
#include <sstream>
#include <unordered_set>
#include <utility>

#include "navkd/errors.hpp"

namespace navkd {
namespace {

thread_local bool g_grad_enabled = true;

}  // namespace

std::size_t numel_of(const Shape& shape) {
    std::size_t n = 1;
    for (std::size_t d : shape) n *= d;
    return n;
}

std::string to_string(const Shape& shape) {
    std::ostringstream os;
    os << '[';
    for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "x" : "") << shape[i];
    os << ']';
    return os.str();
}

Tensor Tensor::zeros(Shape shape, bool requires_grad) { return full(std::move(shape), 0.0, requires_grad); }

Tensor Tensor::full(Shape shape, double v, bool requires_grad) {
    const std::size_t n = numel_of(shape);
    return from(std::move(shape), std::vector<double>(n, v), requires_grad);
}

Tensor Tensor::from(Shape shape, std::vector<double> values, bool requires_grad) {
    if (shape.empty()) shape = {1};
    for (std::size_t d : shape)
        if (d == 0) throw ShapeError("tensor dimensions must be positive, got " + to_string(shape));
    if (numel_of(shape) != values.size())
        throw ShapeError("shape " + to_string(shape) + " does not match " + std::to_string(values.size()) +
                         " values");
    auto impl = std::make_shared<TensorImpl>();
    impl->shape = std::move(shape);
    impl->value = std::move(values);
    impl->requires_grad = requires_grad;
    return Tensor(std::move(impl));
}

Tensor Tensor::scalar(double v, bool requires_grad) { return from({1}, {v}, requires_grad); }

Tensor Tensor::identity(std::size_t n, bool requires_grad) {
    std::vector<double> v(n * n, 0.0);
    for (std::size_t i = 0; i < n; ++i) v[i * n + i] = 1.0;
    return from({n, n}, std::move(v), requires_grad);
}

std::size_t Tensor::rows() const {
    const auto& s = impl_->shape;
    if (s.size() == 1) return 1;
    if (s.size() == 2) return s[0];
    throw ShapeError("expected rank 1 or 2, got " + to_string(s));
}

std::size_t Tensor::cols() const {
    const auto& s = impl_->shape;
    if (s.size() == 1) return s[0];
    if (s.size() == 2) return s[1];
    throw ShapeError("expected rank 1 or 2, got " + to_string(s));
}

double Tensor::item() const {
    if (numel() != 1) throw ShapeError("item() on tensor of shape " + to_string(shape()));
    return impl_->value[0];
}

std::vector<double> Tensor::grad() const {
    if (!has_grad()) return std::vector<double>(numel(), 0.0);
    return impl_->grad;
}

std::span<double> Tensor::mutable_grad() {
    impl_->ensure_grad();
    return impl_->grad;
}

void Tensor::zero_grad() {
    if (has_grad()) std::fill(impl_->grad.begin(), impl_->grad.end(), 0.0);
}

Tensor Tensor::detach() const { return from(shape(), impl_->value, false); }

Tensor Tensor::clone(bool requires_grad) const { return from(shape(), impl_->value, requires_grad); }

void Tensor::backward() const {
    if (numel() != 1) throw NonScalarLoss("backward() needs a scalar loss, got shape " + to_string(shape()));
    if (!impl_->requires_grad) return;

    // Iterative post-order DFS: the tape can be thousands of nodes deep.
    std::vector<TensorImpl*> order;
    std::unordered_set<TensorImpl*> seen;
    std::vector<std::pair<TensorImpl*, std::size_t>> stack;
    stack.emplace_back(impl_.get(), 0);
    seen.insert(impl_.get());
    while (!stack.empty()) {
        auto& [node, next] = stack.back();
        if (next < node->parents.size()) {
            TensorImpl* p = node->parents[next++].get();
            if (p->requires_grad && seen.insert(p).second) stack.emplace_back(p, 0);
        } else {
            order.push_back(node);
            stack.pop_back();
        }
    }

    // Interior gradients are per-call scratch; leaf gradients accumulate.
    for (TensorImpl* n : order) {
        if (n->backward_fn) n->grad.assign(n->value.size(), 0.0);
    }
    impl_->ensure_grad();
    impl_->grad[0] += 1.0;
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        TensorImpl* n = *it;
        if (n->backward_fn) n->backward_fn(*n);
    }
}

bool grad_enabled() { return g_grad_enabled; }

NoGradGuard::NoGradGuard() : previous_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = previous_; }

namespace detail {

Tensor make_result(Shape shape, std::vector<double> value, const std::vector<Tensor>& parents,
                   std::function<void(TensorImpl&)> backward_fn) {
    auto impl = std::make_shared<TensorImpl>();
    impl->shape = std::move(shape);
    impl->value = std::move(value);
    if (g_grad_enabled) {
        const bool any = std::any_of(parents.begin(), parents.end(),
                                     [](const Tensor& t) { return t.defined() && t.requires_grad(); });
        if (any) {
            impl->requires_grad = true;
            impl->parents.reserve(parents.size());
            for (const Tensor& t : parents) impl->parents.push_back(t.shared());
            impl->backward_fn = std::move(backward_fn);
        }
    }
    return Tensor(std::move(impl));
}

Tensor make_result(Shape shape, std::vector<double> value, std::initializer_list<Tensor> parents,
                   std::function<void(TensorImpl&)> backward_fn) {
    return make_result(std::move(shape), std::move(value), std::vector<Tensor>(parents), std::move(backward_fn));
}

}  // namespace detail

}  // namespace navkd
