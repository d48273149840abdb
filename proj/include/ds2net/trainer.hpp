#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "ds2net/config.hpp"
#include "ds2net/data.hpp"
#include "ds2net/metrics.hpp"
#include "ds2net/model.hpp"
#include "ds2net/supervision.hpp"

namespace ds2net {

struct Batch {
    Tensor images;   // [B,1,H,W]
    Tensor masks;    // [B,1,H,W]
    Tensor weights;  // pixel weight map per image
};

Batch make_batch(std::span<const Sample> samples);

struct Evaluation {
    std::vector<std::string> ids;
    std::vector<Provenance> provenance;
    EvalRecord combined;                // aggregated prediction
    std::vector<EvalRecord> per_signal; // each signal on its own

    std::vector<double> signal_mdice() const;
};

// Forward pass over `samples`, scoring the mean-of-sigmoids prediction and each signal.
Evaluation evaluate(const Model& model, std::span<const Sample> samples);

struct EpochLog {
    std::size_t epoch = 0;
    std::optional<double> train_loss;  // unset for the initial evaluation
    ImageMetrics val;
    WeightVector weights;              // from the epoch-mean uncertainty; empty at epoch 0
    std::vector<double> signal_mdice;
};

struct TrainResult {
    Model best_model;
    Model final_model;
    std::size_t best_epoch = 0;
    std::vector<EpochLog> epochs;
    std::vector<Provenance> provenance;
    Evaluation best_eval;
};

// Optional per-epoch observer, called after each log row is complete.
using EpochCallback = std::function<void(const EpochLog&)>;

// Trains on dataset.train and validates on dataset.test. With `run_dir` set,
// writes log.csv, weights.csv, eval.csv, eval_signals.csv, config.txt and
// checkpoint.bin (best validation mDice) there.
TrainResult train(const TrainConfig& config, const Dataset& dataset,
                  const std::optional<std::filesystem::path>& run_dir = std::nullopt,
                  const EpochCallback& on_epoch = {});

void write_eval_csv(const std::filesystem::path& path, const Evaluation& eval);
void write_signal_eval_csv(const std::filesystem::path& path, const Evaluation& eval);

struct AblationRun {
    DecoderVariant variant = DecoderVariant::full;
    SupervisionMode mode = SupervisionMode::uniform;
    bool mask_source_swap = false;
    std::uint64_t seed = 0;
    ImageMetrics test;
    std::string label() const;
};

struct AblationPlan {
    std::vector<std::uint64_t> seeds{0, 1, 2};
    std::vector<SupervisionMode> modes{SupervisionMode::uniform, SupervisionMode::uncertainty_raw,
                                       SupervisionMode::plus_softmax, SupervisionMode::plus_max_scaling};
    // Component variants, trained with uniform weights.
    std::vector<DecoderVariant> variants{};
    bool include_mask_swap = false;
};

std::vector<AblationRun> run_ablation(const TrainConfig& base, const Dataset& dataset, const AblationPlan& plan,
                                      const std::function<void(const AblationRun&)>& on_run = {});

// Per-run rows plus per-label means, with deltas against full/uniform/no-swap of the same seed.
void write_ablation_csv(const std::filesystem::path& path, const std::vector<AblationRun>& runs);

} // namespace ds2net
