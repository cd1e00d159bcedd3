#pragma once

#include <functional>
#include <map>
#include <string>
#include <vector>

#include "haht/tensor.hpp"

namespace haht {

// Named parameters with a parallel gradient per entry. Iteration is always
// name-sorted (std::map), which keeps optimizer updates and checkpoint bytes
// deterministic.
class ParameterStore {
public:
    void add(const std::string& name, Tensor init);

    bool has(const std::string& name) const { return values_.count(name) > 0; }
    Tensor& value(const std::string& name);
    const Tensor& value(const std::string& name) const;
    Tensor& grad(const std::string& name);
    const Tensor& grad(const std::string& name) const;

    void zero_grads();
    std::size_t total_size() const;

    std::vector<std::string> names() const;

    const std::map<std::string, Tensor>& values() const { return values_; }
    std::map<std::string, Tensor>& mutable_values() { return values_; }
    std::map<std::string, Tensor>& mutable_grads() { return grads_; }

private:
    std::map<std::string, Tensor> values_;
    std::map<std::string, Tensor> grads_;
};

// Adamax state: first moment m and infinity-norm accumulator u per parameter.
struct OptimizerState {
    double lr = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    long t = 0;
    std::map<std::string, Tensor> m;
    std::map<std::string, Tensor> u;

    static OptimizerState init(const ParameterStore& store, double lr, double beta1 = 0.9,
                               double beta2 = 0.999, double eps = 1e-8);
};

// One Adamax update over every parameter; gradients are consumed (zeroed).
// Throws if any gradient entry is non-finite, naming the parameter.
void adamax_step(ParameterStore& store, OptimizerState& state);

struct GradCheckEntry {
    std::string param;
    double max_rel_error = 0.0;
    std::size_t coords_checked = 0;
};

struct GradCheckReport {
    std::vector<GradCheckEntry> entries;
    double max_rel_error = 0.0;
    double tolerance = 0.0;
    bool passed = false;
};

// Compares the gradients currently stored in `store` against central
// differences of `loss_fn`. `loss_fn` must be a pure function of the
// parameter values. `max_coords_per_param` = 0 checks every coordinate;
// otherwise a deterministic sample of that many coordinates per parameter.
GradCheckReport finite_diff_gradcheck(const std::function<double(const ParameterStore&)>& loss_fn,
                                      ParameterStore& store, double h, double tolerance,
                                      std::size_t max_coords_per_param = 0,
                                      std::uint64_t sample_seed = 0);

}  // namespace haht
