#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <string>

#include "ds2net/data.hpp"
#include "ds2net/model.hpp"
#include "ds2net/supervision.hpp"

namespace ds2net {

struct TrainConfig {
    ModelConfig model;
    double lr = 1e-4;
    double weight_decay = 1e-4;
    std::size_t batch_size = 8;
    std::size_t epochs = 100;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    SupervisionMode supervision_mode = SupervisionMode::plus_max_scaling;
    bool multi_scale = false;
    // Drives parameter init (via model.seed) and batch order.
    std::uint64_t seed = 0;
    SplitSpec data;

    void validate() const;
};

// Applies one `key = value` setting. Unknown keys throw.
void apply_setting(TrainConfig& config, const std::string& key, const std::string& value);

// Plain text, one `key = value` per line, `#` starts a comment.
TrainConfig parse_config(const std::string& text, TrainConfig base = {});
TrainConfig load_config(const std::filesystem::path& path, TrainConfig base = {});
std::string format_config(const TrainConfig& config);

} // namespace ds2net
