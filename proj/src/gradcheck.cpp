#include "ds2net/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

namespace ds2net {
namespace {

double evaluate(const std::vector<Tensor>& inputs, const std::vector<bool>& differentiable, const LossBuilder& build) {
    Tape tape;
    std::vector<Var> leaves;
    leaves.reserve(inputs.size());
    for (std::size_t i = 0; i < inputs.size(); ++i) leaves.push_back(tape.leaf(inputs[i], differentiable[i]));
    return build(tape, leaves).value().item();
}

} // namespace

double gradient_relative_error(double analytic, double numeric, double magnitude_floor) {
    const double scale = std::max({std::abs(analytic), std::abs(numeric), magnitude_floor});
    return std::abs(analytic - numeric) / scale;
}

GradCheckResult check_gradients(const std::string& name, const std::vector<Tensor>& inputs, const LossBuilder& build,
                                const GradCheckOptions& options) {
    return check_gradients(name, inputs, std::vector<bool>(inputs.size(), true), build, options);
}

GradCheckResult check_gradients(const std::string& name, const std::vector<Tensor>& inputs,
                                const std::vector<bool>& differentiable, const LossBuilder& build,
                                const GradCheckOptions& options) {
    require(differentiable.size() == inputs.size(), "check_gradients: flag count differs from input count");
    GradCheckResult result{name, 0, 0.0, 0, true};

    Tape tape;
    std::vector<Var> leaves;
    for (std::size_t i = 0; i < inputs.size(); ++i) leaves.push_back(tape.leaf(inputs[i], differentiable[i]));
    tape.backward(build(tape, leaves));

    std::mt19937_64 rng(options.seed);
    std::vector<Tensor> probe = inputs;
    for (std::size_t i = 0; i < inputs.size(); ++i) {
        if (!differentiable[i]) continue;
        const Tensor& analytic = tape.grad(leaves[i]);
        std::vector<std::size_t> coords(inputs[i].numel());
        std::iota(coords.begin(), coords.end(), std::size_t{0});
        std::size_t wanted = coords.size();
        if (options.coordinates_per_input != 0 && options.coordinates_per_input < coords.size()) {
            std::shuffle(coords.begin(), coords.end(), rng);
            wanted = options.coordinates_per_input;
        }
        auto central = [&](std::size_t c, double eps) {
            const double original = probe[i][c];
            probe[i][c] = original + eps;
            const double up = evaluate(probe, differentiable, build);
            probe[i][c] = original - eps;
            const double down = evaluate(probe, differentiable, build);
            probe[i][c] = original;
            return (up - down) / (2.0 * eps);
        };
        const bool guard = options.kink_redraws > 0 && wanted < coords.size();
        std::size_t redraws = 0, checked = 0;
        for (std::size_t k = 0; k < coords.size() && checked < wanted; ++k) {
            const std::size_t c = coords[k];
            const double numeric = central(c, options.epsilon);
            if (guard && redraws < options.kink_redraws) {
                const double half = central(c, options.epsilon / 2);
                if (gradient_relative_error(half, numeric, options.magnitude_floor) > options.tolerance) {
                    ++redraws;
                    ++result.kinks_skipped;
                    continue;
                }
            }
            const double err = gradient_relative_error(analytic[c], numeric, options.magnitude_floor);
            result.max_relative_error = std::max(result.max_relative_error, err);
            ++result.coordinates;
            ++checked;
        }
    }
    result.passed = result.max_relative_error < options.tolerance;
    return result;
}

} // namespace ds2net
