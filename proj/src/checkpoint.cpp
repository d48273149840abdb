#include "ds2net/checkpoint.hpp"

#include <algorithm>
#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <stdexcept>

namespace ds2net {
namespace {

template <typename T>
void put(std::ostream& out, T value) {
    static_assert(std::is_trivially_copyable_v<T>);
    unsigned char bytes[sizeof(T)];
    std::memcpy(bytes, &value, sizeof(T));
    if constexpr (std::endian::native == std::endian::big) std::reverse(bytes, bytes + sizeof(T));
    out.write(reinterpret_cast<const char*>(bytes), sizeof(T));
}

template <typename T>
T get(std::istream& in) {
    unsigned char bytes[sizeof(T)];
    in.read(reinterpret_cast<char*>(bytes), sizeof(T));
    if (!in) throw std::runtime_error("checkpoint: unexpected end of file");
    if constexpr (std::endian::native == std::endian::big) std::reverse(bytes, bytes + sizeof(T));
    T value;
    std::memcpy(&value, bytes, sizeof(T));
    return value;
}

} // namespace

void save_checkpoint(const std::filesystem::path& path, const Model& model) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("checkpoint: cannot open " + path.string() + " for writing");
    const ModelConfig& c = model.config();
    out.write(kCheckpointMagic, sizeof kCheckpointMagic);
    put<std::uint32_t>(out, kCheckpointVersion);
    put<std::uint64_t>(out, c.in_channels);
    for (auto v : c.stage_channels) put<std::uint64_t>(out, v);
    put<std::uint64_t>(out, c.input_size);
    for (auto v : c.dem_kernel_sizes) put<std::uint64_t>(out, v);
    put<std::uint64_t>(out, c.ca_kernel);
    put<std::uint8_t>(out, c.mask_source_swap ? 1 : 0);
    put<std::uint8_t>(out, static_cast<std::uint8_t>(c.variant));
    put<std::uint64_t>(out, c.seed);

    const ParameterSet& params = model.parameters();
    put<std::uint64_t>(out, params.size());
    for (const auto& p : params) {
        put<std::uint32_t>(out, static_cast<std::uint32_t>(p.name.size()));
        out.write(p.name.data(), static_cast<std::streamsize>(p.name.size()));
        put<std::uint32_t>(out, static_cast<std::uint32_t>(p.value.rank()));
        for (auto d : p.value.shape()) put<std::uint64_t>(out, d);
        for (double v : p.value.data()) put<double>(out, v);
    }
    if (!out) throw std::runtime_error("checkpoint: write failed for " + path.string());
}

Model load_checkpoint(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("checkpoint: cannot open " + path.string());
    char magic[8];
    in.read(magic, sizeof magic);
    if (!in || std::memcmp(magic, kCheckpointMagic, sizeof magic) != 0)
        throw std::runtime_error("checkpoint: " + path.string() + " is not a checkpoint file");
    const auto version = get<std::uint32_t>(in);
    if (version != kCheckpointVersion)
        throw std::runtime_error("checkpoint: unsupported version " + std::to_string(version));

    ModelConfig c;
    c.in_channels = get<std::uint64_t>(in);
    for (auto& v : c.stage_channels) v = get<std::uint64_t>(in);
    c.input_size = get<std::uint64_t>(in);
    for (auto& v : c.dem_kernel_sizes) v = get<std::uint64_t>(in);
    c.ca_kernel = get<std::uint64_t>(in);
    c.mask_source_swap = get<std::uint8_t>(in) != 0;
    const auto variant = get<std::uint8_t>(in);
    if (variant > static_cast<std::uint8_t>(DecoderVariant::baseline))
        throw std::runtime_error("checkpoint: unknown decoder variant " + std::to_string(variant));
    c.variant = static_cast<DecoderVariant>(variant);
    c.seed = get<std::uint64_t>(in);

    ParameterSet params;
    const auto count = get<std::uint64_t>(in);
    for (std::uint64_t i = 0; i < count; ++i) {
        std::string name(get<std::uint32_t>(in), '\0');
        in.read(name.data(), static_cast<std::streamsize>(name.size()));
        Shape shape(get<std::uint32_t>(in));
        for (auto& d : shape) d = get<std::uint64_t>(in);
        Tensor value(shape);
        for (double& v : value.data()) v = get<double>(in);
        params.add(std::move(name), std::move(value));
    }
    return Model(c, std::move(params));
}

} // namespace ds2net
