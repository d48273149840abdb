#pragma once

#include <cstddef>
#include <functional>
#include <string>
#include <vector>

#include "ds2net/autodiff.hpp"

namespace ds2net {

// Builds a scalar loss on `tape` from leaves created for each input, in order.
using LossBuilder = std::function<Var(Tape& tape, const std::vector<Var>& inputs)>;

struct GradCheckOptions {
    double epsilon = 1e-6;
    double tolerance = 1e-5;
    // Gradients smaller than this are compared on an absolute scale of this size.
    double magnitude_floor = 1e-3;
    // 0 checks every coordinate; otherwise this many coordinates per input, drawn with `seed`.
    std::size_t coordinates_per_input = 0;
    unsigned long long seed = 0;
    // With sampled coordinates: when central differences at epsilon and
    // epsilon/2 disagree, the coordinate sits on a ReLU/max kink and another
    // one is drawn (at most this many times per input).
    std::size_t kink_redraws = 0;
};

struct GradCheckResult {
    std::string name;
    std::size_t coordinates = 0;
    double max_relative_error = 0.0;
    std::size_t kinks_skipped = 0;
    bool passed = false;
};

double gradient_relative_error(double analytic, double numeric, double magnitude_floor);

// Compares reverse-mode gradients with central finite differences of the forward pass.
GradCheckResult check_gradients(const std::string& name, const std::vector<Tensor>& inputs, const LossBuilder& build,
                                const GradCheckOptions& options = {});

// Same, but only the inputs flagged in `differentiable` are perturbed and checked.
GradCheckResult check_gradients(const std::string& name, const std::vector<Tensor>& inputs,
                                const std::vector<bool>& differentiable, const LossBuilder& build,
                                const GradCheckOptions& options = {});

} // namespace ds2net
