#pragma once

#include <cstddef>
#include <filesystem>
#include <string>
#include <vector>

#include "ds2net/supervision.hpp"

namespace ds2net {

// One row of weights.csv.
struct WeightRow {
    std::size_t epoch = 0;
    std::size_t signal = 0;  // 1-based
    std::string provenance;
    double u = 0.0;
    double u_bar = 0.0;
    double lambda = 0.0;
    double mdice = 0.0;
};

// All signals of one epoch, in signal order.
struct WeightEpoch {
    std::size_t epoch = 0;
    std::vector<std::string> provenance;
    WeightVector weights;
    std::vector<double> mdice;
};

std::vector<WeightRow> read_weights_csv(const std::filesystem::path& path);
std::vector<WeightEpoch> group_by_epoch(const std::vector<WeightRow>& rows);

// Recomputes u_bar and lambda from the logged u under `mode` and checks the
// weight invariants. Returns one message per violation.
std::vector<std::string> check_weight_log(const std::vector<WeightEpoch>& epochs, SupervisionMode mode);

// Number of times the mDice ranking differs from the previous epoch's, over
// the first `max_epochs` logged epochs (0 = all). Epochs where every signal
// scores the same carry no ordering and are skipped.
std::size_t ranking_changes(const std::vector<WeightEpoch>& epochs, std::size_t max_epochs = 0);

} // namespace ds2net
