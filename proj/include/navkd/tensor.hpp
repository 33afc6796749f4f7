#pragma once

// Dense row-major tensors of doubles with a reverse-mode gradient tape.
//
// A Tensor is a cheap handle to shared storage. Operations (see ops.hpp)
// record their inputs and a backward closure whenever grad mode is on and
// some input requires a gradient, so the tape is rebuilt by every forward
// pass and released when the last handle goes away.

#include <cstddef>
#include <functional>
#include <initializer_list>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace navkd {

using Shape = std::vector<std::size_t>;

std::size_t numel_of(const Shape& shape);
std::string to_string(const Shape& shape);

struct TensorImpl {
    Shape shape;
    std::vector<double> value;
    std::vector<double> grad;  // empty until first written
    bool requires_grad = false;
    std::vector<std::shared_ptr<TensorImpl>> parents;
    std::function<void(TensorImpl&)> backward_fn;

    void ensure_grad() {
        if (grad.size() != value.size()) grad.assign(value.size(), 0.0);
    }
};

class Tensor {
   public:
    Tensor() = default;
    explicit Tensor(std::shared_ptr<TensorImpl> impl) : impl_(std::move(impl)) {}

    static Tensor zeros(Shape shape, bool requires_grad = false);
    static Tensor full(Shape shape, double v, bool requires_grad = false);
    static Tensor from(Shape shape, std::vector<double> values, bool requires_grad = false);
    static Tensor scalar(double v, bool requires_grad = false);
    static Tensor identity(std::size_t n, bool requires_grad = false);

    bool defined() const { return impl_ != nullptr; }
    const Shape& shape() const { return impl_->shape; }
    std::size_t rank() const { return impl_->shape.size(); }
    std::size_t numel() const { return impl_->value.size(); }
    // Rank-1 tensors behave as a single row.
    std::size_t rows() const;
    std::size_t cols() const;

    std::span<const double> values() const { return impl_->value; }
    std::span<double> mutable_values() { return impl_->value; }
    const double* data() const { return impl_->value.data(); }
    double at(std::size_t i) const { return impl_->value[i]; }
    double at(std::size_t r, std::size_t c) const { return impl_->value[r * cols() + c]; }
    double item() const;

    bool requires_grad() const { return impl_->requires_grad; }
    void set_requires_grad(bool on) { impl_->requires_grad = on; }
    bool has_grad() const { return impl_->grad.size() == impl_->value.size(); }
    // Zeros when no gradient has been written yet.
    std::vector<double> grad() const;
    std::span<double> mutable_grad();
    void zero_grad();

    // Leaf copy sharing nothing with the tape.
    Tensor detach() const;
    Tensor clone(bool requires_grad) const;

    // Accumulates d(this)/d(leaf) into every reachable leaf that requires a
    // gradient. Throws NonScalarLoss unless numel() == 1.
    void backward() const;

    TensorImpl* impl() const { return impl_.get(); }
    const std::shared_ptr<TensorImpl>& shared() const { return impl_; }

   private:
    std::shared_ptr<TensorImpl> impl_;
};

bool grad_enabled();

// Disables tape recording for the current thread while alive.
class NoGradGuard {
   public:
    NoGradGuard();
    ~NoGradGuard();
    NoGradGuard(const NoGradGuard&) = delete;
    NoGradGuard& operator=(const NoGradGuard&) = delete;

   private:
    bool previous_;
};

namespace detail {
// Builds an op result. Records parents and the closure only when the tape is
// live and at least one parent requires a gradient.
Tensor make_result(Shape shape, std::vector<double> value, std::initializer_list<Tensor> parents,
                   std::function<void(TensorImpl&)> backward_fn);
Tensor make_result(Shape shape, std::vector<double> value, const std::vector<Tensor>& parents,
                   std::function<void(TensorImpl&)> backward_fn);
}  // namespace detail

}  // namespace navkd
