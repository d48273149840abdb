#pragma once

#include <span>
#include <string>
#include <vector>

#include "ds2net/autodiff.hpp"
#include "ds2net/model.hpp"

namespace ds2net {

// Loss-weighting ladder: equal weights, raw uncertainty, softmax of
// uncertainty, and softmax followed by max-scaling.
enum class SupervisionMode { uniform, uncertainty_raw, plus_softmax, plus_max_scaling };

std::string to_string(SupervisionMode m);
SupervisionMode parse_supervision_mode(const std::string& s);

struct WeightVector {
    std::vector<double> u;       // raw uncertainty per signal, in [0,1]
    std::vector<double> u_bar;   // softmax of u
    std::vector<double> lambda;  // weights actually applied to the per-signal losses
};

// Mean of 1 - |p - 0.5| / 0.5 over every element (batch and pixels together).
double uncertainty(const Tensor& probabilities);

std::vector<double> normalize_weights(std::span<const double> u);
std::vector<double> max_scale(std::span<const double> u_bar);

// u, u_bar and the mode-specific lambda.
WeightVector supervision_weights(std::span<const double> u, SupervisionMode mode);

// w = 1 + 5 |avg_pool_same(G, 31) - G|, per image.
Tensor pixel_weight_map(const Tensor& mask);

// Per-image weighted losses from logits, averaged over the batch.
Var weighted_bce(Var logits, const Tensor& mask, const Tensor& weights);
Var weighted_iou(Var logits, const Tensor& mask, const Tensor& weights);

struct SignalLoss {
    double iou = 0.0;
    double bce = 0.0;
    double lambda = 1.0;
};

struct LossBreakdown {
    std::vector<SignalLoss> per_signal;
    WeightVector weights;
    double total = 0.0;
    Var total_var;  // differentiable total; lambda enters as constants
};

LossBreakdown total_loss(const SignalSet& signals, const Tensor& mask, const Tensor& weights, SupervisionMode mode);

} // namespace ds2net
