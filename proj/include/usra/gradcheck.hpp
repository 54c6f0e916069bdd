#pragma once

#include <functional>
#include <string>
#include <vector>

#include "usra/graph.hpp"

namespace usra {

/// Builds the loss on a fresh tape. The callable must be deterministic:
/// given the same parameter values it returns the same scalar (all noise and
/// augmentation draws fixed inside the capture).
using LossBuilder = std::function<Var(Graph&)>;

struct GradCheckReport {
    struct Entry {
        std::string param;
        float max_rel_err = 0.0f;
        int probes = 0;
    };
    std::string name;
    std::vector<Entry> per_param;
    float max_rel_err = 0.0f;
    bool pass = false;
};

/// Compares analytic gradients against central finite differences at
/// `n_probes` seeded coordinates spread over all parameters. Relative error
/// uses the guarded denominator max(1, |analytic|, |fd|) so near-zero
/// gradients are judged on absolute error.
GradCheckReport grad_check(const std::string& name, ParamSet& params, const LossBuilder& loss_fn, int n_probes,
                           float eps, float tol, uint64_t seed = 17);

/// Set USRA_GRADCHECK_FAULT=1 to corrupt one analytic gradient by +0.1 before
/// comparison; the check must then fail (used to prove the harness can fail).
bool gradcheck_fault_injected();

}  // namespace usra
