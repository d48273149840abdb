#include "ds2net/model.hpp"

#include <cmath>
#include <stdexcept>

#include "ds2net/ops.hpp"
#include "ds2net/random.hpp"

namespace ds2net {

std::string to_string(DecoderVariant v) {
    switch (v) {
    case DecoderVariant::full: return "full";
    case DecoderVariant::dem_only: return "dem_only";
    case DecoderVariant::sem_only: return "sem_only";
    case DecoderVariant::baseline: return "baseline";
    }
    return "?";
}

DecoderVariant parse_decoder_variant(const std::string& s) {
    if (s == "full") return DecoderVariant::full;
    if (s == "dem_only") return DecoderVariant::dem_only;
    if (s == "sem_only") return DecoderVariant::sem_only;
    if (s == "baseline") return DecoderVariant::baseline;
    throw std::invalid_argument("unknown decoder variant '" + s + "' (full|dem_only|sem_only|baseline)");
}

std::string to_string(Stream s) {
    switch (s) {
    case Stream::detail: return "detail";
    case Stream::semantic: return "semantic";
    case Stream::plain: return "plain";
    }
    return "?";
}

std::string Provenance::label() const { return to_string(stream) + std::to_string(stage); }

void ModelConfig::validate() const {
    require(in_channels >= 1, "model: in_channels must be >= 1");
    require(input_size >= 32 && input_size % 32 == 0,
            "model: input_size must be a positive multiple of 32, got " + std::to_string(input_size));
    for (std::size_t i = 0; i < 4; ++i) {
        require(stage_channels[i] >= 1, "model: stage channels must be >= 1");
        if (i > 0)
            require(stage_channels[i] > stage_channels[i - 1], "model: stage_channels must be strictly increasing");
    }
    for (auto k : dem_kernel_sizes) require(k % 2 == 1, "model: DEM kernel sizes must be odd");
    require(ca_kernel % 2 == 1, "model: ca_kernel must be odd");
}

// ---------------------------------------------------------------------------

void ParameterSet::add(std::string name, Tensor value) {
    for (const auto& p : params_) require(p.name != name, "duplicate parameter name " + name);
    params_.push_back({std::move(name), std::move(value)});
}

std::size_t ParameterSet::numel() const noexcept {
    std::size_t n = 0;
    for (const auto& p : params_) n += p.value.numel();
    return n;
}

std::size_t ParameterSet::index_of(const std::string& name) const {
    for (std::size_t i = 0; i < params_.size(); ++i)
        if (params_[i].name == name) return i;
    throw std::out_of_range("no parameter named " + name);
}

// ---------------------------------------------------------------------------
// blocks

Var conv_same(Var x, const ConvVars& p) {
    const std::size_t k = p.weight.value().dim(2);
    return conv2d(x, p.weight, p.bias, 1, k / 2);
}

Var upsample2x(Var x) {
    const Dims4 d = dims4(x.value(), "upsample2x");
    return upsample_bilinear(x, 2 * d.h, 2 * d.w);
}

Var detail_mask(Var f_low, const DemVars& p) {
    return sigmoid(conv_same(conv_same(channel_max(f_low), p.mask1), p.mask2));
}

Var fuse_features(Var f_low, Var f_high, const ConvVars& reduce, const ConvVars& fuse) {
    const Dims4 lo = dims4(f_low.value(), "fuse_features low");
    const Dims4 hi = dims4(f_high.value(), "fuse_features high");
    require(hi.h * 2 == lo.h && hi.w * 2 == lo.w,
            "fuse_features: high-level map " + shape_string(f_high.value().shape()) +
                " is not half the resolution of " + shape_string(f_low.value().shape()));
    return conv_same(relu(conv_same(concat_channels(upsample2x(f_high), f_low), reduce)), fuse);
}

Var dem_forward(Var f_low, Var f_high, const DemVars& p, bool mask_source_swap) {
    const Var fused = fuse_features(f_low, f_high, p.reduce, p.fuse);
    const Var mask = mask_source_swap ? detail_mask(upsample2x(f_high), p) : detail_mask(f_low, p);
    return add(mul(mask, fused), f_low);
}

Var spatial_attention(Var x, const ConvVars& p) {
    return sigmoid(conv_same(concat_channels(channel_max(x), channel_mean(x)), p));
}

Var channel_attention(Var x, Var channel_kernel) {
    return scale_channels(x, sigmoid(conv1d_channels(global_avg_pool(x), channel_kernel)));
}

Var sem_forward(Var f_low, Var f_high, const SemVars& p, bool mask_source_swap) {
    const Dims4 lo = dims4(f_low.value(), "sem_forward low");
    const Dims4 hi = dims4(f_high.value(), "sem_forward high");
    require(hi.h * 2 == lo.h && hi.w * 2 == lo.w,
            "sem_forward: high-level map " + shape_string(f_high.value().shape()) +
                " is not half the resolution of " + shape_string(f_low.value().shape()));
    const Var projected = conv_same(upsample2x(f_high), p.project);
    const Var mask = spatial_attention(mask_source_swap ? f_low : projected, p.spatial);
    return add(channel_attention(mul(mask, f_low), p.channel_kernel), projected);
}

Var signal_head(Var feature, const ConvVars& p, std::size_t out_h, std::size_t out_w) {
    return upsample_bilinear(conv_same(feature, p), out_h, out_w);
}

Tensor aggregate_signals(const std::vector<Tensor>& logits) {
    require(!logits.empty(), "aggregate_signals: no signals");
    Tensor out(logits.front().shape());
    for (const Tensor& l : logits) {
        require(l.shape() == out.shape(), "aggregate_signals: signal shapes differ");
        for (std::size_t i = 0; i < l.numel(); ++i) out[i] += sigmoid(l[i]);
    }
    const double inv = 1.0 / static_cast<double>(logits.size());
    for (double& v : out.data()) v *= inv;
    return out;
}

Tensor aggregate_signals(const SignalSet& signals) {
    std::vector<Tensor> values;
    values.reserve(signals.size());
    for (const Var& v : signals.logits) values.push_back(v.value());
    return aggregate_signals(values);
}

// ---------------------------------------------------------------------------
// parameters

namespace {

class UniformSource {
public:
    explicit UniformSource(std::uint64_t seed) : rng_(mix_seed(seed)) {}
    double next(double bound) { return rng_.uniform(-bound, bound); }

private:
    Rng rng_;
};

void add_conv(ParameterSet& ps, UniformSource& rng, const std::string& prefix, std::size_t cout, std::size_t cin,
              std::size_t k) {
    Tensor w({cout, cin, k, k});
    const double bound = std::sqrt(1.0 / static_cast<double>(cin * k * k));
    for (double& v : w.data()) v = rng.next(bound);
    ps.add(prefix + ".weight", std::move(w));
    ps.add(prefix + ".bias", Tensor({cout}));
}

bool has_detail(DecoderVariant v) { return v == DecoderVariant::full || v == DecoderVariant::dem_only; }
bool has_semantic(DecoderVariant v) { return v == DecoderVariant::full || v == DecoderVariant::sem_only; }

std::string stage_name(const char* block, int stage) { return block + std::to_string(stage); }

} // namespace

ParameterSet init_parameters(const ModelConfig& config) {
    config.validate();
    UniformSource rng(config.seed);
    ParameterSet ps;
    const auto& c = config.stage_channels;

    add_conv(ps, rng, "encoder.stem", c[0], config.in_channels, 3);
    for (int s = 0; s < 4; ++s) {
        const std::size_t cin = s == 0 ? c[0] : c[s - 1];
        add_conv(ps, rng, "encoder.stage" + std::to_string(s + 1) + ".down", c[s], cin, 3);
        add_conv(ps, rng, "encoder.stage" + std::to_string(s + 1) + ".conv", c[s], c[s], 3);
    }

    for (int stage = 1; stage <= 3; ++stage) {
        const std::size_t low = c[stage - 1], high = c[stage];
        if (has_detail(config.variant)) {
            const std::string p = stage_name("dem", stage);
            const std::size_t k = config.dem_kernel_sizes[stage - 1];
            add_conv(ps, rng, p + ".mask1", 1, 1, k);
            add_conv(ps, rng, p + ".mask2", 1, 1, k);
            add_conv(ps, rng, p + ".reduce", low, high + low, 1);
            add_conv(ps, rng, p + ".fuse", low, low, 3);
            add_conv(ps, rng, "head.detail" + std::to_string(stage), 1, low, 1);
        }
        if (has_semantic(config.variant)) {
            const std::string p = stage_name("sem", stage);
            add_conv(ps, rng, p + ".project", low, high, 1);
            add_conv(ps, rng, p + ".spatial", 1, 2, 7);
            Tensor kernel({config.ca_kernel});
            const double bound = std::sqrt(1.0 / static_cast<double>(config.ca_kernel));
            for (double& v : kernel.data()) v = rng.next(bound);
            ps.add(p + ".channel.weight", std::move(kernel));
            add_conv(ps, rng, "head.semantic" + std::to_string(stage), 1, low, 1);
        }
        if (config.variant == DecoderVariant::baseline) {
            const std::string p = stage_name("plain", stage);
            add_conv(ps, rng, p + ".reduce", low, high + low, 1);
            add_conv(ps, rng, p + ".fuse", low, low, 3);
            add_conv(ps, rng, "head.plain" + std::to_string(stage), 1, low, 1);
        }
    }
    return ps;
}

Model::Model(ModelConfig config) : Model(config, init_parameters(config)) {}

Model::Model(ModelConfig config, ParameterSet params) : config_(std::move(config)), params_(std::move(params)) {
    config_.validate();
    const ParameterSet reference = init_parameters(config_);
    require(reference.size() == params_.size(), "model: parameter count does not match configuration");
    for (std::size_t i = 0; i < reference.size(); ++i)
        require(reference.name(i) == params_.name(i) && reference[i].shape() == params_[i].shape(),
                "model: parameter " + params_.name(i) + " does not match configuration");
}

std::vector<Var> Model::bind(Tape& tape, bool requires_grad) const {
    std::vector<Var> bound;
    bound.reserve(params_.size());
    for (const auto& p : params_) bound.push_back(tape.leaf(p.value, requires_grad));
    return bound;
}

ConvVars Model::conv(const std::vector<Var>& bound, const std::string& prefix) const {
    return {bound.at(params_.index_of(prefix + ".weight")), bound.at(params_.index_of(prefix + ".bias"))};
}

DemVars Model::dem_vars(const std::vector<Var>& bound, int stage) const {
    const std::string p = stage_name("dem", stage);
    return {conv(bound, p + ".mask1"), conv(bound, p + ".mask2"), conv(bound, p + ".reduce"), conv(bound, p + ".fuse")};
}

SemVars Model::sem_vars(const std::vector<Var>& bound, int stage) const {
    const std::string p = stage_name("sem", stage);
    return {conv(bound, p + ".project"), conv(bound, p + ".spatial"),
            bound.at(params_.index_of(p + ".channel.weight"))};
}

FeaturePyramid Model::encode(Tape& tape, const std::vector<Var>& bound, Var image) const {
    (void)tape;
    const Dims4 d = dims4(image.value(), "model input");
    require(d.c == config_.in_channels && d.h == config_.input_size && d.w == config_.input_size,
            "model: expected input [N," + std::to_string(config_.in_channels) + "," +
                std::to_string(config_.input_size) + "," + std::to_string(config_.input_size) + "], got " +
                shape_string(image.value().shape()));
    auto stride2 = [&](Var x, const std::string& prefix) {
        const ConvVars p = conv(bound, prefix);
        return relu(conv2d(x, p.weight, p.bias, 2, 1));
    };
    Var x = stride2(image, "encoder.stem");
    std::array<Var, 4> features;
    for (int s = 0; s < 4; ++s) {
        const std::string prefix = "encoder.stage" + std::to_string(s + 1);
        x = stride2(x, prefix + ".down");
        x = relu(conv_same(x, conv(bound, prefix + ".conv")));
        features[s] = x;
    }
    return {features[0], features[1], features[2], features[3]};
}

std::vector<Provenance> Model::signal_layout() const {
    std::vector<Provenance> layout;
    const auto v = config_.variant;
    if (has_detail(v))
        for (int s = 1; s <= 3; ++s) layout.push_back({Stream::detail, s});
    if (has_semantic(v))
        for (int s = 1; s <= 3; ++s) layout.push_back({Stream::semantic, s});
    if (v == DecoderVariant::baseline)
        for (int s = 1; s <= 3; ++s) layout.push_back({Stream::plain, s});
    return layout;
}

SignalSet Model::forward(Tape& tape, const std::vector<Var>& bound, Var image) const {
    require(bound.size() == params_.size(), "model: bound parameter count mismatch");
    const FeaturePyramid f = encode(tape, bound, image);
    const std::array<Var, 3> lows{f.f1, f.f2, f.f3};
    const std::size_t out = config_.input_size;

    SignalSet signals;
    auto emit = [&](Stream stream, int stage, Var feature, const std::string& head) {
        signals.logits.push_back(signal_head(feature, conv(bound, head), out, out));
        signals.provenance.push_back({stream, stage});
    };
    // Each stream decodes deepest-first; outputs are emitted shallowest-first.
    auto run_stream = [&](Stream stream, auto&& block) {
        std::array<Var, 3> outputs;
        Var high = f.f4;
        for (int stage = 3; stage >= 1; --stage) {
            high = block(lows[stage - 1], high, stage);
            outputs[stage - 1] = high;
        }
        const std::string head = "head." + to_string(stream);
        for (int stage = 1; stage <= 3; ++stage) emit(stream, stage, outputs[stage - 1], head + std::to_string(stage));
    };

    const bool swap = config_.mask_source_swap;
    if (has_detail(config_.variant))
        run_stream(Stream::detail, [&](Var lo, Var hi, int stage) { return dem_forward(lo, hi, dem_vars(bound, stage), swap); });
    if (has_semantic(config_.variant))
        run_stream(Stream::semantic, [&](Var lo, Var hi, int stage) { return sem_forward(lo, hi, sem_vars(bound, stage), swap); });
    if (config_.variant == DecoderVariant::baseline)
        run_stream(Stream::plain, [&](Var lo, Var hi, int stage) {
            const std::string p = stage_name("plain", stage);
            return add(fuse_features(lo, hi, conv(bound, p + ".reduce"), conv(bound, p + ".fuse")), lo);
        });
    return signals;
}

} // namespace ds2net
