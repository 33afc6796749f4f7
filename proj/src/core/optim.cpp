#include "navkd/optim.hpp"

#include <cmath>
#include <stdexcept>

#include "navkd/errors.hpp"

namespace navkd {

Tensor& ParameterSet::add(std::string name, Tensor tensor) {
    if (index_.count(name)) throw std::invalid_argument("duplicate parameter name: " + name);
    tensor.set_requires_grad(true);
    index_.emplace(name, params_.size());
    params_.push_back({std::move(name), std::move(tensor)});
    return params_.back().tensor;
}

Tensor& ParameterSet::add_xavier(std::string name, std::size_t fan_in, std::size_t fan_out, Rng& rng) {
    const double limit = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
    std::uniform_real_distribution<double> dist(-limit, limit);
    std::vector<double> v(fan_in * fan_out);
    for (double& x : v) x = dist(rng);
    return add(std::move(name), Tensor::from({fan_in, fan_out}, std::move(v)));
}

Tensor& ParameterSet::add_zeros(std::string name, Shape shape) {
    return add(std::move(name), Tensor::zeros(std::move(shape)));
}

Tensor& ParameterSet::add_constant(std::string name, Shape shape, double v) {
    return add(std::move(name), Tensor::full(std::move(shape), v));
}

Tensor& ParameterSet::add_normal(std::string name, Shape shape, double stddev, Rng& rng) {
    std::normal_distribution<double> dist(0.0, stddev);
    std::vector<double> v(numel_of(shape));
    for (double& x : v) x = dist(rng);
    return add(std::move(name), Tensor::from(std::move(shape), std::move(v)));
}

std::size_t ParameterSet::scalar_count() const {
    std::size_t n = 0;
    for (const auto& p : params_) n += p.tensor.numel();
    return n;
}

Tensor& ParameterSet::at(const std::string& name) {
    auto it = index_.find(name);
    if (it == index_.end()) throw std::out_of_range("unknown parameter: " + name);
    return params_[it->second].tensor;
}

const Tensor& ParameterSet::at(const std::string& name) const {
    auto it = index_.find(name);
    if (it == index_.end()) throw std::out_of_range("unknown parameter: " + name);
    return params_[it->second].tensor;
}

void ParameterSet::zero_grad() {
    for (auto& p : params_) p.tensor.zero_grad();
}

void ParameterSet::copy_values_from(const ParameterSet& other) {
    for (auto& p : params_) {
        const Tensor& src = other.at(p.name);
        if (src.shape() != p.tensor.shape())
            throw ShapeError("parameter " + p.name + ": " + to_string(src.shape()) + " vs " + to_string(p.tensor.shape()));
        std::copy(src.values().begin(), src.values().end(), p.tensor.mutable_values().begin());
    }
}

std::vector<Tensor*> parameter_pointers(ParameterSet& set) {
    std::vector<Tensor*> out;
    out.reserve(set.size());
    for (auto& p : set.items()) out.push_back(&p.tensor);
    return out;
}

AdamState make_adam_state(const std::vector<Tensor*>& params, AdamConfig config) {
    AdamState s;
    s.config = config;
    for (const Tensor* p : params) {
        s.m.emplace_back(p->numel(), 0.0);
        s.v.emplace_back(p->numel(), 0.0);
    }
    return s;
}

void adam_step(const std::vector<Tensor*>& params, AdamState& state) {
    if (state.m.size() != params.size() || state.v.size() != params.size())
        throw ShapeError("adam_step: state tracks " + std::to_string(state.m.size()) + " tensors, got " +
                         std::to_string(params.size()));
    for (std::size_t i = 0; i < params.size(); ++i)
        if (state.m[i].size() != params[i]->numel() || state.v[i].size() != params[i]->numel())
            throw ShapeError("adam_step: moment buffer " + std::to_string(i) + " does not match parameter shape " +
                             to_string(params[i]->shape()));

    state.step += 1;
    const auto& c = state.config;
    const double bc1 = 1.0 - std::pow(c.beta1, static_cast<double>(state.step));
    const double bc2 = 1.0 - std::pow(c.beta2, static_cast<double>(state.step));
    for (std::size_t i = 0; i < params.size(); ++i) {
        Tensor& p = *params[i];
        auto w = p.mutable_values();
        const double* g = p.has_grad() ? p.mutable_grad().data() : nullptr;
        auto& m = state.m[i];
        auto& v = state.v[i];
        for (std::size_t j = 0; j < w.size(); ++j) {
            const double gj = g ? g[j] : 0.0;
            m[j] = c.beta1 * m[j] + (1.0 - c.beta1) * gj;
            v[j] = c.beta2 * v[j] + (1.0 - c.beta2) * gj * gj;
            const double mhat = m[j] / bc1;
            const double vhat = v[j] / bc2;
            w[j] -= c.lr * mhat / (std::sqrt(vhat) + c.eps);
        }
    }
}

}  // namespace navkd
