#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "ds2net/tensor.hpp"

namespace ds2net {

// Rendering regimes: high-contrast single object, low-contrast soft edges,
// one small object, several small objects.
enum class Difficulty { easy, blurred, small_object, multi_object };

std::string to_string(Difficulty d);
Difficulty parse_difficulty(const std::string& s);

struct Sample {
    Tensor image;  // [1,1,H,W] in [0,1]
    Tensor mask;   // [1,1,H,W] in {0,1}
    std::string id;
    Difficulty difficulty = Difficulty::easy;
    std::uint64_t seed = 0;
};

// Pure function of (seed, difficulty, size); size must be a multiple of 32.
Sample generate_sample(std::uint64_t seed, Difficulty difficulty, std::size_t size);

// Half-pixel bilinear resize of the image and nearest-neighbour resize of the mask.
Sample rescale(const Sample& sample, std::size_t out_size);

// Rescales by `ratio` (0.75, 1 or 1.25), then centre-pads or crops back to the original size.
Sample multi_scale(const Sample& sample, double ratio);

inline constexpr double kMultiScaleRatios[] = {0.75, 1.0, 1.25};

// 16-bit binary PGM (P5), big-endian, value = round(p * 65535).
void save_pgm(const std::filesystem::path& path, const Tensor& image);
Tensor load_pgm(const std::filesystem::path& path);

struct SplitSpec {
    std::uint64_t seed = 0;
    std::size_t train_count = 200;
    std::size_t test_count = 50;
    std::size_t size = 64;
    // Unset cycles through all difficulties.
    std::optional<Difficulty> difficulty;
};

struct Dataset {
    SplitSpec spec;
    std::vector<Sample> train;
    std::vector<Sample> test;
};

Dataset generate_dataset(const SplitSpec& spec);

// <root>/<split>/<id>.img.pgm, <id>.mask.pgm and <root>/manifest.csv.
void write_dataset(const Dataset& dataset, const std::filesystem::path& root);
Dataset read_dataset(const std::filesystem::path& root);

} // namespace ds2net
