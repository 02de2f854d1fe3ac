#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "separator/tensor.hpp"

namespace separator {

// Named parameter registry. Iteration order is insertion order and defines
// the order optimizer state is created in.
class ParamStore {
  public:
    // Registers `t` under `name`, marks it trainable, and returns it.
    ad::Tensor add(const std::string& name, ad::Tensor t);
    ad::Tensor* find(const std::string& name);
    const ad::Tensor* find(const std::string& name) const;
    void zero_grads();
    std::vector<std::pair<std::string, ad::Tensor>>& items() { return items_; }
    const std::vector<std::pair<std::string, ad::Tensor>>& items() const { return items_; }
    size_t size() const { return items_.size(); }

  private:
    std::vector<std::pair<std::string, ad::Tensor>> items_;
};

struct AdamConfig {
    double lr = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
};

// Adam with bias correction. step() applies one update from the gradients
// currently stored on the parameters, then zeroes those gradients. A
// non-finite gradient raises std::runtime_error naming the parameter.
class Adam {
  public:
    explicit Adam(AdamConfig cfg) : cfg_(cfg) {}

    void step(ParamStore& params);
    void step(ParamStore& params, double lr);

    uint64_t steps_taken() const { return t_; }
    const AdamConfig& config() const { return cfg_; }

    // Serialization hooks: first/second moments per parameter plus the step
    // counter, in the registry's order.
    struct Slot {
        std::string name;
        std::vector<double> m, v;
    };
    const std::vector<Slot>& slots() const { return slots_; }
    void restore(uint64_t steps, std::vector<Slot> slots);

  private:
    void ensure_slots(const ParamStore& params);

    AdamConfig cfg_;
    uint64_t t_ = 0;
    std::vector<Slot> slots_;
};

}  // namespace separator
