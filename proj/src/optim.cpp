#include "ds2net/optim.hpp"

#include <cmath>

namespace ds2net {

AdamW::AdamW(const ParameterSet& params, AdamWOptions options) : options_(options) {
    for (const auto& p : params) {
        m_.push_back(Tensor::zeros_like(p.value));
        v_.push_back(Tensor::zeros_like(p.value));
    }
}

void AdamW::step(ParameterSet& params, const std::vector<Tensor>& grads) {
    require(params.size() == m_.size() && grads.size() == m_.size(), "AdamW: parameter/gradient count mismatch");
    ++step_;
    const auto& o = options_;
    const double correction1 = 1.0 - std::pow(o.beta1, static_cast<double>(step_));
    const double correction2 = 1.0 - std::pow(o.beta2, static_cast<double>(step_));
    const double decay = 1.0 - o.lr * o.weight_decay;
    for (std::size_t i = 0; i < params.size(); ++i) {
        Tensor& theta = params[i];
        const Tensor& g = grads[i];
        require(g.shape() == theta.shape(), "AdamW: gradient shape differs for " + params.name(i));
        for (std::size_t j = 0; j < theta.numel(); ++j) {
            theta[j] *= decay;
            m_[i][j] = o.beta1 * m_[i][j] + (1.0 - o.beta1) * g[j];
            v_[i][j] = o.beta2 * v_[i][j] + (1.0 - o.beta2) * g[j] * g[j];
            const double m_hat = m_[i][j] / correction1;
            const double v_hat = v_[i][j] / correction2;
            theta[j] -= o.lr * m_hat / (std::sqrt(v_hat) + o.eps);
        }
    }
}

} // namespace ds2net
