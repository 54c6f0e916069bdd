#pragma once

#include <cstdint>
#include <string>
#include <unordered_map>
#include <vector>

#include "usra/graph.hpp"

namespace usra {

/// Name-prefix -> learning rate table; longest matching prefix wins. Every
/// parameter must match some prefix ("" as a catch-all is allowed).
struct LrMap {
    std::vector<std::pair<std::string, float>> entries;

    static LrMap uniform(float lr) { return {{{"", lr}}}; }
    /// Learning rate for the given name, or an error naming it.
    float resolve(const std::string& name) const;
};

/// Adaptive-moment parameter update. Moment state is keyed by parameter name
/// and persists across calls; set `plain_gradient` for bare p -= lr*g steps.
class Optimizer {
public:
    struct Config {
        float beta1 = 0.9f;
        float beta2 = 0.999f;
        float epsilon = 1e-8f;
        bool plain_gradient = false;
    };

    explicit Optimizer(LrMap lr_map) : lr_map_(std::move(lr_map)) {}
    Optimizer(LrMap lr_map, Config cfg) : lr_map_(std::move(lr_map)), cfg_(cfg) {}

    void step(ParamSet& params);
    const LrMap& lr_map() const { return lr_map_; }

private:
    struct Moments {
        Tensor m, v;
        int64_t t = 0;
    };
    LrMap lr_map_;
    Config cfg_;
    std::unordered_map<std::string, Moments> state_;
};

}  // namespace usra
