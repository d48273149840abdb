#include "ds2net/supervision.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "ds2net/ops.hpp"

namespace ds2net {

std::string to_string(SupervisionMode m) {
    switch (m) {
    case SupervisionMode::uniform: return "uniform";
    case SupervisionMode::uncertainty_raw: return "uncertainty_raw";
    case SupervisionMode::plus_softmax: return "plus_softmax";
    case SupervisionMode::plus_max_scaling: return "plus_max_scaling";
    }
    return "?";
}

SupervisionMode parse_supervision_mode(const std::string& s) {
    if (s == "uniform") return SupervisionMode::uniform;
    if (s == "uncertainty_raw") return SupervisionMode::uncertainty_raw;
    if (s == "plus_softmax") return SupervisionMode::plus_softmax;
    if (s == "plus_max_scaling") return SupervisionMode::plus_max_scaling;
    throw std::invalid_argument("unknown supervision mode '" + s +
                                "' (uniform|uncertainty_raw|plus_softmax|plus_max_scaling)");
}

double uncertainty(const Tensor& probabilities) {
    double acc = 0.0;
    for (double p : probabilities.data()) {
        if (!(p >= 0.0 && p <= 1.0))
            throw std::invalid_argument("uncertainty: probability " + std::to_string(p) + " outside [0,1]");
        acc += 1.0 - std::abs(p - 0.5) / 0.5;
    }
    return acc / static_cast<double>(probabilities.numel());
}

std::vector<double> normalize_weights(std::span<const double> u) {
    require(!u.empty(), "normalize_weights: empty score vector");
    const double top = *std::max_element(u.begin(), u.end());
    std::vector<double> out(u.size());
    double total = 0.0;
    for (std::size_t i = 0; i < u.size(); ++i) total += out[i] = std::exp(u[i] - top);
    for (double& v : out) v /= total;
    return out;
}

std::vector<double> max_scale(std::span<const double> u_bar) {
    require(!u_bar.empty(), "max_scale: empty weight vector");
    const double top = *std::max_element(u_bar.begin(), u_bar.end());
    require(top > 0.0, "max_scale: maximum weight must be positive");
    std::vector<double> out(u_bar.size());
    for (std::size_t i = 0; i < u_bar.size(); ++i) out[i] = u_bar[i] / top;
    return out;
}

WeightVector supervision_weights(std::span<const double> u, SupervisionMode mode) {
    WeightVector w;
    w.u.assign(u.begin(), u.end());
    w.u_bar = normalize_weights(u);
    switch (mode) {
    case SupervisionMode::uniform: w.lambda.assign(u.size(), 1.0); break;
    case SupervisionMode::uncertainty_raw: w.lambda = w.u; break;
    case SupervisionMode::plus_softmax: w.lambda = w.u_bar; break;
    case SupervisionMode::plus_max_scaling: w.lambda = max_scale(w.u_bar); break;
    }
    return w;
}

Tensor pixel_weight_map(const Tensor& mask) {
    const Dims4 d = dims4(mask, "pixel_weight_map");
    require(d.c == 1, "pixel_weight_map: expected a single-channel mask, got " + shape_string(mask.shape()));
    for (double g : mask.data())
        require(g == 0.0 || g == 1.0, "pixel_weight_map: mask must be binary");
    Tensor w = avg_pool_same(mask, 31);
    for (std::size_t i = 0; i < w.numel(); ++i) w[i] = 1.0 + 5.0 * std::abs(w[i] - mask[i]);
    return w;
}

namespace {

double softplus(double x) { return std::max(x, 0.0) + std::log1p(std::exp(-std::abs(x))); }

void check_loss_inputs(const Tensor& logits, const Tensor& mask, const Tensor& weights, const char* what) {
    dims4(logits, what);
    require(logits.shape() == mask.shape() && logits.shape() == weights.shape(),
            std::string(what) + ": logits " + shape_string(logits.shape()) + ", mask " +
                shape_string(mask.shape()) + " and weights " + shape_string(weights.shape()) + " must match");
}

} // namespace

Var weighted_bce(Var logits, const Tensor& mask, const Tensor& weights) {
    const Tensor& z = logits.value();
    check_loss_inputs(z, mask, weights, "weighted_bce");
    const std::size_t batch = z.dim(0), per = z.numel() / batch;
    std::vector<double> weight_sums(batch, 0.0);
    double total = 0.0;
    for (std::size_t n = 0; n < batch; ++n) {
        double num = 0.0, den = 0.0;
        for (std::size_t i = n * per; i < (n + 1) * per; ++i) {
            num += weights[i] * (mask[i] * softplus(-z[i]) + (1.0 - mask[i]) * softplus(z[i]));
            den += weights[i];
        }
        weight_sums[n] = den;
        total += num / den;
    }
    total /= static_cast<double>(batch);
    return logits.tape->record(
        "weighted_bce", Tensor::scalar(total), {logits},
        [mask, weights, weight_sums, batch, per](BackwardContext& ctx) {
            const Tensor& z = *ctx.inputs[0];
            Tensor& gz = *ctx.input_grads[0];
            const double g = ctx.grad_output[0] / static_cast<double>(batch);
            for (std::size_t n = 0; n < batch; ++n)
                for (std::size_t i = n * per; i < (n + 1) * per; ++i)
                    gz[i] += g * weights[i] * (sigmoid(z[i]) - mask[i]) / weight_sums[n];
        });
}

Var weighted_iou(Var logits, const Tensor& mask, const Tensor& weights) {
    const Tensor& z = logits.value();
    check_loss_inputs(z, mask, weights, "weighted_iou");
    const std::size_t batch = z.dim(0), per = z.numel() / batch;
    std::vector<double> inter(batch, 0.0), uni(batch, 0.0);
    double total = 0.0;
    for (std::size_t n = 0; n < batch; ++n) {
        for (std::size_t i = n * per; i < (n + 1) * per; ++i) {
            const double p = sigmoid(z[i]);
            inter[n] += weights[i] * p * mask[i];
            uni[n] += weights[i] * (p + mask[i] - p * mask[i]);
        }
        total += 1.0 - (inter[n] + 1.0) / (uni[n] + 1.0);
    }
    total /= static_cast<double>(batch);
    return logits.tape->record(
        "weighted_iou", Tensor::scalar(total), {logits},
        [mask, weights, inter, uni, batch, per](BackwardContext& ctx) {
            const Tensor& z = *ctx.inputs[0];
            Tensor& gz = *ctx.input_grads[0];
            const double g = ctx.grad_output[0] / static_cast<double>(batch);
            for (std::size_t n = 0; n < batch; ++n) {
                const double i1 = inter[n] + 1.0, u1 = uni[n] + 1.0;
                for (std::size_t i = n * per; i < (n + 1) * per; ++i) {
                    const double p = sigmoid(z[i]);
                    // d/dp of -(I+1)/(U+1)
                    const double dp = -(weights[i] * mask[i] * u1 - i1 * weights[i] * (1.0 - mask[i])) / (u1 * u1);
                    gz[i] += g * dp * p * (1.0 - p);
                }
            }
        });
}

LossBreakdown total_loss(const SignalSet& signals, const Tensor& mask, const Tensor& weights, SupervisionMode mode) {
    require(signals.size() > 0, "total_loss: no signals");
    std::vector<double> u;
    u.reserve(signals.size());
    for (const Var& l : signals.logits) u.push_back(uncertainty(sigmoid(l.value())));

    LossBreakdown out;
    out.weights = supervision_weights(u, mode);
    Var total{};
    for (std::size_t i = 0; i < signals.size(); ++i) {
        const Var iou = weighted_iou(signals.logits[i], mask, weights);
        const Var bce = weighted_bce(signals.logits[i], mask, weights);
        const double lambda = out.weights.lambda[i];
        out.per_signal.push_back({iou.value().item(), bce.value().item(), lambda});
        const Var term = scale(add(iou, bce), lambda);
        total = i == 0 ? term : add(total, term);
    }
    out.total_var = total;
    out.total = total.value().item();
    return out;
}

} // namespace ds2net
