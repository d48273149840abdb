#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include "ds2net/autodiff.hpp"

namespace ds2net {

// Which decoder blocks are present. `full` is the dual-stream network; the
// others are the component ablation variants.
enum class DecoderVariant { full, dem_only, sem_only, baseline };

std::string to_string(DecoderVariant v);
DecoderVariant parse_decoder_variant(const std::string& s);

struct ModelConfig {
    std::size_t in_channels = 1;
    std::array<std::size_t, 4> stage_channels{16, 32, 64, 128};
    std::size_t input_size = 64;
    // Shallowest (stride 4) to deepest (stride 16) DEM.
    std::array<std::size_t, 3> dem_kernel_sizes{7, 5, 3};
    std::size_t ca_kernel = 3;
    bool mask_source_swap = false;
    DecoderVariant variant = DecoderVariant::full;
    std::uint64_t seed = 0;

    void validate() const;
    friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

struct NamedTensor {
    std::string name;
    Tensor value;
};

// Ordered parameter list. The order is part of the checkpoint format.
class ParameterSet {
public:
    void add(std::string name, Tensor value);
    std::size_t size() const noexcept { return params_.size(); }
    std::size_t numel() const noexcept;
    std::size_t index_of(const std::string& name) const;
    Tensor& operator[](std::size_t i) { return params_[i].value; }
    const Tensor& operator[](std::size_t i) const { return params_[i].value; }
    Tensor& get(const std::string& name) { return params_[index_of(name)].value; }
    const Tensor& get(const std::string& name) const { return params_[index_of(name)].value; }
    const std::string& name(std::size_t i) const { return params_[i].name; }
    auto begin() { return params_.begin(); }
    auto end() { return params_.end(); }
    auto begin() const { return params_.begin(); }
    auto end() const { return params_.end(); }

private:
    std::vector<NamedTensor> params_;
};

// ---------------------------------------------------------------------------
// block-level parameter bundles, bound to a tape

struct ConvVars {
    Var weight, bias;
};

struct DemVars {
    ConvVars mask1, mask2;   // k x k, 1 -> 1
    ConvVars reduce;         // 1 x 1, Ch + Cl -> Cl
    ConvVars fuse;           // 3 x 3, Cl -> Cl
};

struct SemVars {
    ConvVars project;        // 1 x 1, Ch -> Cl
    ConvVars spatial;        // 7 x 7, 2 -> 1
    Var channel_kernel;      // [ca_kernel]
};

// Plain skip-fusion block used by the baseline variant.
struct FuseVars {
    ConvVars reduce, fuse;
};

Var detail_mask(Var f_low, const DemVars& p);
Var fuse_features(Var f_low, Var f_high, const ConvVars& reduce, const ConvVars& fuse);
Var dem_forward(Var f_low, Var f_high, const DemVars& p, bool mask_source_swap = false);
Var spatial_attention(Var x, const ConvVars& p);
Var channel_attention(Var x, Var channel_kernel);
Var sem_forward(Var f_low, Var f_high, const SemVars& p, bool mask_source_swap = false);
Var signal_head(Var feature, const ConvVars& p, std::size_t out_h, std::size_t out_w);
Var upsample2x(Var x);
Var conv_same(Var x, const ConvVars& p);

struct FeaturePyramid {
    Var f1, f2, f3, f4;
};

enum class Stream { detail, semantic, plain };
std::string to_string(Stream s);

struct Provenance {
    Stream stream;
    int stage;  // 1 = shallowest
    std::string label() const;
    friend bool operator==(const Provenance&, const Provenance&) = default;
};

struct SignalSet {
    std::vector<Var> logits;  // each [N,1,H_in,W_in], pre-sigmoid
    std::vector<Provenance> provenance;
    std::size_t size() const noexcept { return logits.size(); }
};

// Mean over signals of sigmoid(logit), per pixel.
Tensor aggregate_signals(const std::vector<Tensor>& logits);
Tensor aggregate_signals(const SignalSet& signals);

class Model {
public:
    explicit Model(ModelConfig config);
    Model(ModelConfig config, ParameterSet params);

    const ModelConfig& config() const noexcept { return config_; }
    ParameterSet& parameters() noexcept { return params_; }
    const ParameterSet& parameters() const noexcept { return params_; }

    // Leaves for every parameter, in ParameterSet order.
    std::vector<Var> bind(Tape& tape, bool requires_grad = true) const;

    FeaturePyramid encode(Tape& tape, const std::vector<Var>& bound, Var image) const;
    SignalSet forward(Tape& tape, const std::vector<Var>& bound, Var image) const;

    // Signal provenance in emission order, without running the network.
    std::vector<Provenance> signal_layout() const;

    DemVars dem_vars(const std::vector<Var>& bound, int stage) const;
    SemVars sem_vars(const std::vector<Var>& bound, int stage) const;

private:
    ConvVars conv(const std::vector<Var>& bound, const std::string& prefix) const;

    ModelConfig config_;
    ParameterSet params_;
};

// Seeded uniform(-s, s) weights with s = sqrt(1 / fan_in), zero biases.
ParameterSet init_parameters(const ModelConfig& config);

} // namespace ds2net
