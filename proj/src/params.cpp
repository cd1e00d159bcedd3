#include "haht/params.hpp"

#include <cmath>
#include <stdexcept>

#include "haht/rng.hpp"

namespace haht {

void ParameterStore::add(const std::string& name, Tensor init) {
    if (values_.count(name)) throw std::invalid_argument("ParameterStore::add: duplicate " + name);
    grads_.emplace(name, Tensor(init.shape()));
    values_.emplace(name, std::move(init));
}

Tensor& ParameterStore::value(const std::string& name) {
    auto it = values_.find(name);
    if (it == values_.end()) throw std::out_of_range("ParameterStore: unknown parameter " + name);
    return it->second;
}

const Tensor& ParameterStore::value(const std::string& name) const {
    auto it = values_.find(name);
    if (it == values_.end()) throw std::out_of_range("ParameterStore: unknown parameter " + name);
    return it->second;
}

Tensor& ParameterStore::grad(const std::string& name) {
    auto it = grads_.find(name);
    if (it == grads_.end()) throw std::out_of_range("ParameterStore: unknown parameter " + name);
    return it->second;
}

const Tensor& ParameterStore::grad(const std::string& name) const {
    auto it = grads_.find(name);
    if (it == grads_.end()) throw std::out_of_range("ParameterStore: unknown parameter " + name);
    return it->second;
}

void ParameterStore::zero_grads() {
    for (auto& [name, g] : grads_) g.fill(0.0);
}

std::size_t ParameterStore::total_size() const {
    std::size_t n = 0;
    for (const auto& [name, v] : values_) n += v.numel();
    return n;
}

std::vector<std::string> ParameterStore::names() const {
    std::vector<std::string> out;
    out.reserve(values_.size());
    for (const auto& [name, v] : values_) out.push_back(name);
    return out;
}

OptimizerState OptimizerState::init(const ParameterStore& store, double lr, double beta1,
                                    double beta2, double eps) {
    OptimizerState s;
    s.lr = lr;
    s.beta1 = beta1;
    s.beta2 = beta2;
    s.eps = eps;
    s.t = 0;
    for (const auto& [name, v] : store.values()) {
        s.m.emplace(name, Tensor(v.shape()));
        s.u.emplace(name, Tensor(v.shape()));
    }
    return s;
}

void adamax_step(ParameterStore& store, OptimizerState& state) {
    for (const auto& [name, v] : store.values()) {
        if (!store.grad(name).all_finite())
            throw std::runtime_error("adamax_step: non-finite gradient in parameter " + name);
    }
    state.t += 1;
    const double bias = 1.0 - std::pow(state.beta1, static_cast<double>(state.t));
    const double step = state.lr / bias;
    for (auto& [name, theta] : store.mutable_values()) {
        Tensor& g = store.grad(name);
        Tensor& m = state.m.at(name);
        Tensor& u = state.u.at(name);
        for (std::size_t i = 0; i < theta.numel(); ++i) {
            m(i) = state.beta1 * m(i) + (1.0 - state.beta1) * g(i);
            u(i) = std::max(state.beta2 * u(i), std::abs(g(i)));
            theta(i) -= step * m(i) / (u(i) + state.eps);
        }
        g.fill(0.0);
    }
}

GradCheckReport finite_diff_gradcheck(const std::function<double(const ParameterStore&)>& loss_fn,
                                      ParameterStore& store, double h, double tolerance,
                                      std::size_t max_coords_per_param, std::uint64_t sample_seed) {
    GradCheckReport report;
    report.tolerance = tolerance;
    Rng rng(sample_seed);
    for (const auto& name : store.names()) {
        Tensor& theta = store.value(name);
        const Tensor& analytic = store.grad(name);
        std::vector<std::size_t> coords;
        if (max_coords_per_param == 0 || theta.numel() <= max_coords_per_param) {
            coords.resize(theta.numel());
            for (std::size_t i = 0; i < coords.size(); ++i) coords[i] = i;
        } else {
            for (std::size_t k = 0; k < max_coords_per_param; ++k)
                coords.push_back(rng.below(theta.numel()));
        }
        GradCheckEntry entry;
        entry.param = name;
        for (std::size_t i : coords) {
            const double orig = theta(i);
            theta(i) = orig + h;
            const double fp = loss_fn(store);
            theta(i) = orig - h;
            const double fm = loss_fn(store);
            theta(i) = orig;
            const double numeric = (fp - fm) / (2.0 * h);
            const double a = analytic(i);
            const double denom = std::max({std::abs(a), std::abs(numeric), 1e-8});
            const double rel = std::abs(a - numeric) / denom;
            entry.max_rel_error = std::max(entry.max_rel_error, rel);
            entry.coords_checked += 1;
        }
        report.max_rel_error = std::max(report.max_rel_error, entry.max_rel_error);
        report.entries.push_back(std::move(entry));
    }
    report.passed = report.max_rel_error < tolerance;
    return report;
}

}  // namespace haht
