#include "ds2net/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace ds2net {
namespace {

struct Overlap {
    double pred = 0, truth = 0, both = 0;
};

Overlap overlap(const Tensor& pred_prob, const Tensor& mask, double threshold) {
    require(pred_prob.numel() == mask.numel(), "metrics: prediction " + shape_string(pred_prob.shape()) +
                                                   " and mask " + shape_string(mask.shape()) + " differ in size");
    Overlap o;
    for (std::size_t i = 0; i < mask.numel(); ++i) {
        const bool p = pred_prob[i] > threshold;
        const bool g = mask[i] > 0.5;
        o.pred += p;
        o.truth += g;
        o.both += p && g;
    }
    return o;
}

} // namespace

double dice(const Tensor& pred_prob, const Tensor& mask, double threshold) {
    const Overlap o = overlap(pred_prob, mask, threshold);
    if (o.pred + o.truth == 0) return 1.0;
    return 2.0 * o.both / (o.pred + o.truth);
}

double iou(const Tensor& pred_prob, const Tensor& mask, double threshold) {
    const Overlap o = overlap(pred_prob, mask, threshold);
    const double uni = o.pred + o.truth - o.both;
    if (uni == 0) return 1.0;
    return o.both / uni;
}

double mae(const Tensor& pred_prob, const Tensor& mask) {
    require(pred_prob.numel() == mask.numel(), "mae: prediction and mask differ in size");
    double s = 0.0;
    for (std::size_t i = 0; i < mask.numel(); ++i) s += std::abs(pred_prob[i] - mask[i]);
    return s / static_cast<double>(mask.numel());
}

ImageMetrics image_metrics(const Tensor& pred_prob, const Tensor& mask, double threshold) {
    return {dice(pred_prob, mask, threshold), iou(pred_prob, mask, threshold), mae(pred_prob, mask)};
}

void EvalRecord::finalize() {
    aggregate = {};
    if (per_image.empty()) return;
    for (const auto& m : per_image) {
        aggregate.dice += m.dice;
        aggregate.iou += m.iou;
        aggregate.mae += m.mae;
    }
    const double n = static_cast<double>(per_image.size());
    aggregate.dice /= n;
    aggregate.iou /= n;
    aggregate.mae /= n;
}

std::vector<std::size_t> ranking_order(std::span<const double> scores) {
    std::vector<std::size_t> order(scores.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });
    return order;
}

std::vector<std::size_t> rank_signals(std::span<const double> scores) {
    const auto order = ranking_order(scores);
    std::vector<std::size_t> ranks(scores.size());
    std::size_t rank = 0;
    for (std::size_t i = 0; i < order.size(); ++i) {
        if (i == 0 || scores[order[i]] != scores[order[i - 1]]) ++rank;
        ranks[order[i]] = rank;
    }
    return ranks;
}

} // namespace ds2net
