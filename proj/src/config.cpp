#include "ds2net/config.hpp"

#include <array>
#include <fstream>
#include <sstream>
#include <stdexcept>

#include "ds2net/format.hpp"

namespace ds2net {

void TrainConfig::validate() const {
    model.validate();
    require(lr > 0.0, "config: lr must be positive");
    require(weight_decay > 0.0, "config: weight_decay must be positive");
    require(batch_size >= 1, "config: batch_size must be >= 1");
    require(beta1 >= 0.0 && beta1 < 1.0 && beta2 >= 0.0 && beta2 < 1.0, "config: betas must lie in [0,1)");
    require(eps > 0.0, "config: eps must be positive");
    require(data.size == model.input_size, "config: data size " + std::to_string(data.size) +
                                               " differs from model input_size " + std::to_string(model.input_size));
}

namespace {

std::string trim(const std::string& s) {
    const auto b = s.find_first_not_of(" \t\r\n");
    if (b == std::string::npos) return "";
    const auto e = s.find_last_not_of(" \t\r\n");
    return s.substr(b, e - b + 1);
}

bool parse_bool(const std::string& key, const std::string& v) {
    if (v == "true" || v == "1" || v == "yes") return true;
    if (v == "false" || v == "0" || v == "no") return false;
    throw std::invalid_argument("config: " + key + " expects a boolean, got '" + v + "'");
}

double parse_double(const std::string& key, const std::string& v) {
    std::size_t used = 0;
    double out = 0.0;
    try {
        out = std::stod(v, &used);
    } catch (const std::exception&) {
        used = 0;
    }
    if (used != v.size() || v.empty()) throw std::invalid_argument("config: " + key + " expects a number, got '" + v + "'");
    return out;
}

std::uint64_t parse_uint(const std::string& key, const std::string& v) {
    std::size_t used = 0;
    std::uint64_t out = 0;
    try {
        if (!v.empty() && v[0] != '-') out = std::stoull(v, &used);
    } catch (const std::exception&) {
        used = 0;
    }
    if (used != v.size() || v.empty())
        throw std::invalid_argument("config: " + key + " expects a non-negative integer, got '" + v + "'");
    return out;
}

template <std::size_t N>
std::array<std::size_t, N> parse_list(const std::string& key, const std::string& v) {
    std::array<std::size_t, N> out{};
    std::stringstream in(v);
    std::string item;
    std::size_t i = 0;
    while (std::getline(in, item, ',')) {
        if (i == N) break;
        out[i++] = parse_uint(key, trim(item));
    }
    if (i != N || std::getline(in, item))
        throw std::invalid_argument("config: " + key + " expects " + std::to_string(N) + " comma-separated integers");
    return out;
}

template <std::size_t N>
std::string join(const std::array<std::size_t, N>& values) {
    std::string out;
    for (std::size_t i = 0; i < N; ++i) out += (i ? "," : "") + std::to_string(values[i]);
    return out;
}

} // namespace

void apply_setting(TrainConfig& c, const std::string& raw_key, const std::string& raw_value) {
    const std::string key = trim(raw_key), v = trim(raw_value);
    if (key == "lr") c.lr = parse_double(key, v);
    else if (key == "weight_decay") c.weight_decay = parse_double(key, v);
    else if (key == "batch_size") c.batch_size = parse_uint(key, v);
    else if (key == "epochs") c.epochs = parse_uint(key, v);
    else if (key == "beta1") c.beta1 = parse_double(key, v);
    else if (key == "beta2") c.beta2 = parse_double(key, v);
    else if (key == "eps") c.eps = parse_double(key, v);
    else if (key == "supervision_mode") c.supervision_mode = parse_supervision_mode(v);
    else if (key == "multi_scale") c.multi_scale = parse_bool(key, v);
    else if (key == "seed") c.seed = c.model.seed = parse_uint(key, v);
    else if (key == "in_channels") c.model.in_channels = parse_uint(key, v);
    else if (key == "stage_channels") c.model.stage_channels = parse_list<4>(key, v);
    else if (key == "input_size") c.model.input_size = c.data.size = parse_uint(key, v);
    else if (key == "dem_kernel_sizes") c.model.dem_kernel_sizes = parse_list<3>(key, v);
    else if (key == "ca_kernel") c.model.ca_kernel = parse_uint(key, v);
    else if (key == "mask_source_swap") c.model.mask_source_swap = parse_bool(key, v);
    else if (key == "variant") c.model.variant = parse_decoder_variant(v);
    else if (key == "data_seed") c.data.seed = parse_uint(key, v);
    else if (key == "train_count") c.data.train_count = parse_uint(key, v);
    else if (key == "test_count") c.data.test_count = parse_uint(key, v);
    else if (key == "difficulty") {
        if (v == "mixed") c.data.difficulty.reset();
        else c.data.difficulty = parse_difficulty(v);
    } else {
        throw std::invalid_argument("config: unknown key '" + key + "'");
    }
}

TrainConfig parse_config(const std::string& text, TrainConfig base) {
    std::stringstream in(text);
    std::string line;
    std::size_t number = 0;
    while (std::getline(in, line)) {
        ++number;
        if (const auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
        if (trim(line).empty()) continue;
        const auto eq = line.find('=');
        if (eq == std::string::npos)
            throw std::invalid_argument("config line " + std::to_string(number) + ": expected key = value");
        apply_setting(base, line.substr(0, eq), line.substr(eq + 1));
    }
    return base;
}

TrainConfig load_config(const std::filesystem::path& path, TrainConfig base) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open config file " + path.string());
    std::stringstream buf;
    buf << in.rdbuf();
    return parse_config(buf.str(), std::move(base));
}

std::string format_config(const TrainConfig& c) {
    std::string out;
    auto line = [&](const std::string& k, const std::string& v) { out += k + " = " + v + "\n"; };
    line("lr", format_double(c.lr));
    line("weight_decay", format_double(c.weight_decay));
    line("batch_size", std::to_string(c.batch_size));
    line("epochs", std::to_string(c.epochs));
    line("beta1", format_double(c.beta1));
    line("beta2", format_double(c.beta2));
    line("eps", format_double(c.eps));
    line("supervision_mode", to_string(c.supervision_mode));
    line("multi_scale", c.multi_scale ? "true" : "false");
    line("seed", std::to_string(c.seed));
    line("in_channels", std::to_string(c.model.in_channels));
    line("stage_channels", join(c.model.stage_channels));
    line("input_size", std::to_string(c.model.input_size));
    line("dem_kernel_sizes", join(c.model.dem_kernel_sizes));
    line("ca_kernel", std::to_string(c.model.ca_kernel));
    line("mask_source_swap", c.model.mask_source_swap ? "true" : "false");
    line("variant", to_string(c.model.variant));
    line("data_seed", std::to_string(c.data.seed));
    line("train_count", std::to_string(c.data.train_count));
    line("test_count", std::to_string(c.data.test_count));
    line("difficulty", c.data.difficulty ? to_string(*c.data.difficulty) : "mixed");
    return out;
}

} // namespace ds2net
