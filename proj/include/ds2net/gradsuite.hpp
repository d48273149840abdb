#pragma once

#include <cstddef>
#include <cstdint>
#include <vector>

#include "ds2net/gradcheck.hpp"

namespace ds2net {

struct GradSuiteOptions {
    std::uint64_t seed = 0;
    std::size_t configurations = 20;
    double op_tolerance = 1e-5;
    double graph_tolerance = 1e-4;
    // Sampled coordinates per parameter tensor for the whole-model check.
    std::size_t model_coordinates = 20;
};

// Finite-difference checks of every differentiable op, the DEM and SEM blocks,
// the weighted total loss and the whole model, each on `configurations`
// randomly drawn small shapes.
std::vector<GradCheckResult> run_gradient_suite(const GradSuiteOptions& options);

} // namespace ds2net
