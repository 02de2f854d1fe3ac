#include "separator/optim.hpp"

#include <cmath>
#include <stdexcept>

namespace separator {

ad::Tensor ParamStore::add(const std::string& name, ad::Tensor t) {
    if (find(name)) throw std::runtime_error("ParamStore: duplicate parameter " + name);
    t.node()->requires_grad = true;
    t.node()->op = "param";
    items_.emplace_back(name, t);
    return t;
}

ad::Tensor* ParamStore::find(const std::string& name) {
    for (auto& [n, t] : items_)
        if (n == name) return &t;
    return nullptr;
}

const ad::Tensor* ParamStore::find(const std::string& name) const {
    for (const auto& [n, t] : items_)
        if (n == name) return &t;
    return nullptr;
}

void ParamStore::zero_grads() {
    for (auto& [n, t] : items_) t.node()->zero_grad();
}

void Adam::ensure_slots(const ParamStore& params) {
    if (!slots_.empty()) {
        if (slots_.size() != params.size())
            throw std::runtime_error("Adam: parameter set changed between steps");
        return;
    }
    for (const auto& [name, t] : params.items()) {
        Slot s;
        s.name = name;
        s.m.assign(t.size(), 0.0);
        s.v.assign(t.size(), 0.0);
        slots_.push_back(std::move(s));
    }
}

void Adam::step(ParamStore& params) { step(params, cfg_.lr); }

void Adam::step(ParamStore& params, double lr) {
    ensure_slots(params);
    ++t_;
    const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
    const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
    for (size_t pi = 0; pi < params.size(); ++pi) {
        auto& [name, t] = params.items()[pi];
        auto& node = *t.node();
        node.ensure_grad();
        Slot& s = slots_[pi];
        if (s.name != name)
            throw std::runtime_error("Adam: parameter order changed (" + s.name +
                                     " vs " + name + ")");
        double* w = node.value.data();
        double* g = node.grad.data();
        for (size_t i = 0; i < node.value.size(); ++i) {
            if (!std::isfinite(g[i]))
                throw std::runtime_error("Adam: non-finite gradient in parameter " + name);
            s.m[i] = cfg_.beta1 * s.m[i] + (1.0 - cfg_.beta1) * g[i];
            s.v[i] = cfg_.beta2 * s.v[i] + (1.0 - cfg_.beta2) * g[i] * g[i];
            const double mhat = s.m[i] / bc1;
            const double vhat = s.v[i] / bc2;
            w[i] -= lr * mhat / (std::sqrt(vhat) + cfg_.eps);
        }
        node.zero_grad();
    }
}

void Adam::restore(uint64_t steps, std::vector<Slot> slots) {
    t_ = steps;
    slots_ = std::move(slots);
}

}  // namespace separator
