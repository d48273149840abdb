#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "ds2net/tensor.hpp"

namespace ds2net {

// Hard masks come from `pred > threshold`; a probability exactly at the
// threshold counts as background. Two empty masks score 1.
double dice(const Tensor& pred_prob, const Tensor& mask, double threshold = 0.5);
double iou(const Tensor& pred_prob, const Tensor& mask, double threshold = 0.5);
// Threshold-free mean absolute error.
double mae(const Tensor& pred_prob, const Tensor& mask);

struct ImageMetrics {
    double dice = 0.0;
    double iou = 0.0;
    double mae = 0.0;
};

ImageMetrics image_metrics(const Tensor& pred_prob, const Tensor& mask, double threshold = 0.5);

struct EvalRecord {
    std::vector<ImageMetrics> per_image;
    ImageMetrics aggregate;  // arithmetic means over images

    void add(const ImageMetrics& m) { per_image.push_back(m); }
    void finalize();
};

// Dense ranks (1 = best) by score descending. Equal scores share a rank.
std::vector<std::size_t> rank_signals(std::span<const double> scores);

// Signal indices ordered best-first; ties keep index order.
std::vector<std::size_t> ranking_order(std::span<const double> scores);

} // namespace ds2net
