#pragma once

#include <cstddef>
#include <cstdint>
#include <random>
#include <string>
#include <unordered_map>
#include <vector>

#include "navkd/tensor.hpp"

namespace navkd {

using Rng = std::mt19937_64;

struct Parameter {
    std::string name;  // "module.block.i.tensor"
    Tensor tensor;
};

// Ordered, name-unique table of trainable tensors.
class ParameterSet {
   public:
    // Throws std::invalid_argument on a duplicate name.
    Tensor& add(std::string name, Tensor tensor);
    Tensor& add_xavier(std::string name, std::size_t fan_in, std::size_t fan_out, Rng& rng);
    Tensor& add_zeros(std::string name, Shape shape);
    Tensor& add_constant(std::string name, Shape shape, double v);
    Tensor& add_normal(std::string name, Shape shape, double stddev, Rng& rng);

    std::size_t size() const { return params_.size(); }
    std::size_t scalar_count() const;
    bool contains(const std::string& name) const { return index_.count(name) != 0; }
    Tensor& at(const std::string& name);
    const Tensor& at(const std::string& name) const;

    std::vector<Parameter>& items() { return params_; }
    const std::vector<Parameter>& items() const { return params_; }

    void zero_grad();
    // Copies values by name; shapes must match.
    void copy_values_from(const ParameterSet& other);

   private:
    std::vector<Parameter> params_;
    std::unordered_map<std::string, std::size_t> index_;
};

struct AdamConfig {
    double lr = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
};

struct AdamState {
    AdamConfig config;
    std::uint64_t step = 0;
    std::vector<std::vector<double>> m;
    std::vector<std::vector<double>> v;
};

// Moment buffers sized to the given parameters.
AdamState make_adam_state(const std::vector<Tensor*>& params, AdamConfig config = {});

// One bias-corrected Adam update from each parameter's accumulated gradient.
// Parameters without a gradient are treated as having a zero gradient.
// Throws ShapeError if the state does not match the parameters.
void adam_step(const std::vector<Tensor*>& params, AdamState& state);

std::vector<Tensor*> parameter_pointers(ParameterSet& set);

}  // namespace navkd
