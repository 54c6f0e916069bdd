#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace usra {

/// Finite-difference verification of every training objective against the
/// networks it reaches, on small seeded batches of real rendered frames.
struct GradSuiteEntry {
    std::string loss;
    std::string network;
    float max_rel_err = 0.0f;
    bool pass = false;
};

struct GradSuiteReport {
    std::vector<GradSuiteEntry> entries;
    bool pass = false;
};

GradSuiteReport run_grad_suite(uint64_t seed = 42, int probes_per_network = 64, float eps = 1e-3f,
                               float tol = 1e-3f);

}  // namespace usra
