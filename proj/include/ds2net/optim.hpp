#pragma once

#include <cstddef>
#include <vector>

#include "ds2net/model.hpp"

namespace ds2net {

struct AdamWOptions {
    double lr = 1e-4;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    double weight_decay = 1e-4;
};

// AdamW with weight decay applied to the parameter before, and separately
// from, the bias-corrected Adam step.
class AdamW {
public:
    AdamW(const ParameterSet& params, AdamWOptions options);

    void step(ParameterSet& params, const std::vector<Tensor>& grads);

    std::size_t step_count() const noexcept { return step_; }
    const std::vector<Tensor>& first_moments() const noexcept { return m_; }
    const std::vector<Tensor>& second_moments() const noexcept { return v_; }
    const AdamWOptions& options() const noexcept { return options_; }

private:
    AdamWOptions options_;
    std::vector<Tensor> m_;
    std::vector<Tensor> v_;
    std::size_t step_ = 0;
};

} // namespace ds2net
