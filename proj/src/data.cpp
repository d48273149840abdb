#include "ds2net/data.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <fstream>
#include <sstream>
#include <stdexcept>

#include "ds2net/random.hpp"

namespace ds2net {

std::string to_string(Difficulty d) {
    switch (d) {
    case Difficulty::easy: return "easy";
    case Difficulty::blurred: return "blurred";
    case Difficulty::small_object: return "small_object";
    case Difficulty::multi_object: return "multi_object";
    }
    return "?";
}

Difficulty parse_difficulty(const std::string& s) {
    if (s == "easy") return Difficulty::easy;
    if (s == "blurred") return Difficulty::blurred;
    if (s == "small_object" || s == "small-object") return Difficulty::small_object;
    if (s == "multi_object" || s == "multi-object") return Difficulty::multi_object;
    throw std::invalid_argument("unknown difficulty '" + s + "' (easy|blurred|small_object|multi_object)");
}

namespace {

struct Ellipse {
    double cx, cy, a, b, angle;

    // Normalised radius; <= 1 inside.
    double radius(double x, double y) const {
        const double dx = x - cx, dy = y - cy;
        const double c = std::cos(angle), s = std::sin(angle);
        const double u = (dx * c + dy * s) / a, v = (-dx * s + dy * c) / b;
        return std::sqrt(u * u + v * v);
    }
};

struct Regime {
    int min_count, max_count;
    double min_axis, max_axis;      // semi-axes at 64 px
    double min_contrast, max_contrast;
    double min_softness, max_softness;  // edge falloff in pixels
    double noise;
    double max_gradient;
    double min_fraction = 0.0, max_fraction = 1.0;  // foreground pixel fraction bounds
};

Regime regime(Difficulty d) {
    switch (d) {
    case Difficulty::easy: return {1, 1, 9.0, 18.0, 0.45, 0.6, 0.5, 0.5, 0.03, 0.1};
    case Difficulty::blurred: return {1, 2, 8.0, 16.0, 0.12, 0.22, 2.5, 4.0, 0.07, 0.2};
    case Difficulty::small_object: return {1, 1, 2.5, 6.5, 0.3, 0.45, 0.7, 0.7, 0.04, 0.1, 0.006, 0.045};
    case Difficulty::multi_object: return {2, 3, 4.0, 9.0, 0.3, 0.5, 0.7, 0.7, 0.04, 0.1};
    }
    return {};
}

std::uint64_t difficulty_tag(Difficulty d) { return static_cast<std::uint64_t>(d) + 1; }

} // namespace

Sample generate_sample(std::uint64_t seed, Difficulty difficulty, std::size_t size) {
    require(size >= 32 && size % 32 == 0, "generate_sample: size must be a multiple of 32, got " + std::to_string(size));
    const Regime r = regime(difficulty);
    const double scale = static_cast<double>(size) / 64.0;
    const double extent = static_cast<double>(size);
    const std::size_t pixels = size * size;
    Rng rng(mix_seed(seed, difficulty_tag(difficulty)));

    std::vector<Ellipse> shapes;
    Tensor mask({1, 1, size, size});
    for (int attempt = 0;; ++attempt) {
        require(attempt < 10000, "generate_sample: could not place objects");
        shapes.clear();
        const int count = r.min_count + static_cast<int>(rng.below(static_cast<std::uint64_t>(r.max_count - r.min_count + 1)));
        for (int i = 0; i < count; ++i) {
            Ellipse e{};
            e.a = rng.uniform(r.min_axis, r.max_axis) * scale;
            e.b = rng.uniform(r.min_axis, r.max_axis) * scale;
            e.angle = rng.uniform(0.0, std::numbers::pi);
            const double margin = std::max(e.a, e.b) + 2.0;
            e.cx = rng.uniform(margin, extent - margin);
            e.cy = rng.uniform(margin, extent - margin);
            shapes.push_back(e);
        }
        std::size_t foreground = 0;
        for (std::size_t y = 0; y < size; ++y)
            for (std::size_t x = 0; x < size; ++x) {
                bool inside = false;
                for (const auto& e : shapes) inside = inside || e.radius(x + 0.5, y + 0.5) <= 1.0;
                mask[y * size + x] = inside ? 1.0 : 0.0;
                foreground += inside;
            }
        const double fraction = static_cast<double>(foreground) / static_cast<double>(pixels);
        if (foreground > 0 && foreground < pixels && fraction >= r.min_fraction && fraction <= r.max_fraction) break;
    }

    const double contrast = rng.uniform(r.min_contrast, r.max_contrast);
    const double softness = rng.uniform(r.min_softness, r.max_softness);
    const double base = rng.uniform(0.15, 0.3);
    const double gradient = rng.uniform(0.0, r.max_gradient);
    const double direction = rng.uniform(0.0, 2.0 * std::numbers::pi);
    const double gx = std::cos(direction), gy = std::sin(direction);

    Tensor image({1, 1, size, size});
    for (std::size_t y = 0; y < size; ++y)
        for (std::size_t x = 0; x < size; ++x) {
            const double px = x + 0.5, py = y + 0.5;
            double membership = 0.0;
            for (const auto& e : shapes) {
                const double distance = (e.radius(px, py) - 1.0) * std::min(e.a, e.b);
                membership = std::max(membership, 1.0 / (1.0 + std::exp(distance / softness)));
            }
            const double ramp = ((px / extent - 0.5) * gx + (py / extent - 0.5) * gy) * gradient;
            const double v = base + ramp + contrast * membership + r.noise * rng.normal();
            image[y * size + x] = std::clamp(v, 0.0, 1.0);
        }

    return {std::move(image), std::move(mask), "", difficulty, seed};
}

// ---------------------------------------------------------------------------

namespace {

Tensor resize_bilinear(const Tensor& src, std::size_t out) {
    const Dims4 d = dims4(src, "resize");
    Tensor dst({d.n, d.c, out, out});
    auto tap = [](std::size_t i, std::size_t in, std::size_t out_len) {
        const double scale = static_cast<double>(in) / static_cast<double>(out_len);
        const double pos = std::clamp((i + 0.5) * scale - 0.5, 0.0, static_cast<double>(in - 1));
        const auto lo = static_cast<std::size_t>(std::floor(pos));
        return std::tuple{lo, std::min(lo + 1, in - 1), pos - static_cast<double>(lo)};
    };
    for (std::size_t nc = 0; nc < d.n * d.c; ++nc)
        for (std::size_t y = 0; y < out; ++y) {
            const auto [y0, y1, fy] = tap(y, d.h, out);
            for (std::size_t x = 0; x < out; ++x) {
                const auto [x0, x1, fx] = tap(x, d.w, out);
                const double* p = src.data().data() + nc * d.plane();
                const double top = (1 - fx) * p[y0 * d.w + x0] + fx * p[y0 * d.w + x1];
                const double bot = (1 - fx) * p[y1 * d.w + x0] + fx * p[y1 * d.w + x1];
                dst[nc * out * out + y * out + x] = (1 - fy) * top + fy * bot;
            }
        }
    return dst;
}

Tensor resize_nearest(const Tensor& src, std::size_t out) {
    const Dims4 d = dims4(src, "resize");
    Tensor dst({d.n, d.c, out, out});
    auto pick = [](std::size_t i, std::size_t in, std::size_t out_len) {
        const auto j = static_cast<std::size_t>(std::floor((i + 0.5) * static_cast<double>(in) / static_cast<double>(out_len)));
        return std::min(j, in - 1);
    };
    for (std::size_t nc = 0; nc < d.n * d.c; ++nc)
        for (std::size_t y = 0; y < out; ++y)
            for (std::size_t x = 0; x < out; ++x)
                dst[nc * out * out + y * out + x] = src[nc * d.plane() + pick(y, d.h, out) * d.w + pick(x, d.w, out)];
    return dst;
}

// Centre crop or pad to `size`; padding uses `fill`.
Tensor fit_centre(const Tensor& src, std::size_t size, double fill) {
    const Dims4 d = dims4(src, "fit");
    Tensor dst({d.n, d.c, size, size}, fill);
    const auto offset = [](std::size_t from, std::size_t to) {
        return static_cast<std::ptrdiff_t>(to / 2) - static_cast<std::ptrdiff_t>(from / 2);
    };
    const std::ptrdiff_t oy = offset(d.h, size), ox = offset(d.w, size);
    for (std::size_t nc = 0; nc < d.n * d.c; ++nc)
        for (std::size_t y = 0; y < d.h; ++y)
            for (std::size_t x = 0; x < d.w; ++x) {
                const std::ptrdiff_t ty = static_cast<std::ptrdiff_t>(y) + oy, tx = static_cast<std::ptrdiff_t>(x) + ox;
                if (ty < 0 || tx < 0 || ty >= static_cast<std::ptrdiff_t>(size) || tx >= static_cast<std::ptrdiff_t>(size)) continue;
                dst[nc * size * size + static_cast<std::size_t>(ty) * size + static_cast<std::size_t>(tx)] =
                    src[nc * d.plane() + y * d.w + x];
            }
    return dst;
}

double border_mean(const Tensor& t) {
    const Dims4 d = dims4(t, "border");
    double s = 0.0;
    std::size_t n = 0;
    for (std::size_t y = 0; y < d.h; ++y)
        for (std::size_t x = 0; x < d.w; ++x)
            if (y == 0 || x == 0 || y + 1 == d.h || x + 1 == d.w) s += t[y * d.w + x], ++n;
    return s / static_cast<double>(n);
}

} // namespace

Sample rescale(const Sample& sample, std::size_t out_size) {
    require(out_size >= 1, "rescale: output size must be positive");
    Sample out = sample;
    out.image = resize_bilinear(sample.image, out_size);
    out.mask = resize_nearest(sample.mask, out_size);
    return out;
}

Sample multi_scale(const Sample& sample, double ratio) {
    require(std::find(std::begin(kMultiScaleRatios), std::end(kMultiScaleRatios), ratio) != std::end(kMultiScaleRatios),
            "multi_scale: ratio must be one of 0.75, 1, 1.25");
    if (ratio == 1.0) return sample;
    const std::size_t size = sample.image.dim(2);
    const auto scaled_size = static_cast<std::size_t>(std::lround(static_cast<double>(size) * ratio));
    Sample scaled = rescale(sample, scaled_size);
    Sample out = sample;
    out.image = fit_centre(scaled.image, size, border_mean(scaled.image));
    out.mask = fit_centre(scaled.mask, size, 0.0);
    return out;
}

// ---------------------------------------------------------------------------
// PGM

void save_pgm(const std::filesystem::path& path, const Tensor& image) {
    const Dims4 d = dims4(image, "save_pgm");
    require(d.n == 1 && d.c == 1, "save_pgm: expected [1,1,H,W], got " + shape_string(image.shape()));
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("save_pgm: cannot open " + path.string());
    out << "P5\n" << d.w << " " << d.h << "\n65535\n";
    for (double v : image.data()) {
        require(v >= 0.0 && v <= 1.0, "save_pgm: pixel value outside [0,1]");
        const auto q = static_cast<std::uint16_t>(std::lround(v * 65535.0));
        const char bytes[2] = {static_cast<char>(q >> 8), static_cast<char>(q & 0xff)};
        out.write(bytes, 2);
    }
    if (!out) throw std::runtime_error("save_pgm: write failed for " + path.string());
}

namespace {

std::string next_token(std::istream& in) {
    std::string token;
    int c;
    while ((c = in.peek()) != EOF) {
        if (c == '#') {
            std::string skipped;
            std::getline(in, skipped);
        } else if (std::isspace(c)) {
            in.get();
        } else {
            break;
        }
    }
    while ((c = in.peek()) != EOF && !std::isspace(c)) token += static_cast<char>(in.get());
    return token;
}

} // namespace

Tensor load_pgm(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("load_pgm: cannot open " + path.string());
    const std::string magic = next_token(in);
    if (magic != "P5")
        throw std::runtime_error("load_pgm: " + path.string() + " has magic '" + magic +
                                 "'; only binary 16-bit PGM (P5) is supported");
    std::size_t w = 0, h = 0, maxval = 0;
    try {
        w = std::stoul(next_token(in));
        h = std::stoul(next_token(in));
        maxval = std::stoul(next_token(in));
    } catch (const std::exception&) {
        throw std::runtime_error("load_pgm: malformed header in " + path.string());
    }
    if (maxval != 65535) throw std::runtime_error("load_pgm: expected maxval 65535, got " + std::to_string(maxval));
    if (w == 0 || h == 0) throw std::runtime_error("load_pgm: empty image in " + path.string());
    in.get();  // single whitespace before the raster
    Tensor image({1, 1, h, w});
    std::vector<unsigned char> raw(2 * w * h);
    in.read(reinterpret_cast<char*>(raw.data()), static_cast<std::streamsize>(raw.size()));
    if (static_cast<std::size_t>(in.gcount()) != raw.size())
        throw std::runtime_error("load_pgm: truncated raster in " + path.string());
    for (std::size_t i = 0; i < w * h; ++i)
        image[i] = static_cast<double>((raw[2 * i] << 8) | raw[2 * i + 1]) / 65535.0;
    return image;
}

// ---------------------------------------------------------------------------
// datasets

namespace {

constexpr std::array kAllDifficulties{Difficulty::easy, Difficulty::blurred, Difficulty::small_object,
                                      Difficulty::multi_object};

std::string sample_id(std::size_t index) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "s%05zu", index);
    return buf;
}

} // namespace

Dataset generate_dataset(const SplitSpec& spec) {
    Dataset ds{spec, {}, {}};
    const std::size_t total = spec.train_count + spec.test_count;
    for (std::size_t i = 0; i < total; ++i) {
        const Difficulty d = spec.difficulty ? *spec.difficulty : kAllDifficulties[i % kAllDifficulties.size()];
        Sample s = generate_sample(mix_seed(spec.seed, i), d, spec.size);
        s.id = sample_id(i);
        (i < spec.train_count ? ds.train : ds.test).push_back(std::move(s));
    }
    return ds;
}

void write_dataset(const Dataset& dataset, const std::filesystem::path& root) {
    std::ofstream manifest;
    std::filesystem::create_directories(root);
    manifest.open(root / "manifest.csv");
    if (!manifest) throw std::runtime_error("write_dataset: cannot create manifest in " + root.string());
    manifest << "id,split,seed,difficulty,size\n";
    auto emit = [&](const std::vector<Sample>& samples, const std::string& split) {
        std::filesystem::create_directories(root / split);
        for (const Sample& s : samples) {
            save_pgm(root / split / (s.id + ".img.pgm"), s.image);
            save_pgm(root / split / (s.id + ".mask.pgm"), s.mask);
            manifest << s.id << ',' << split << ',' << s.seed << ',' << to_string(s.difficulty) << ','
                     << s.image.dim(3) << '\n';
        }
    };
    emit(dataset.train, "train");
    emit(dataset.test, "test");
}

Dataset read_dataset(const std::filesystem::path& root) {
    std::ifstream manifest(root / "manifest.csv");
    if (!manifest) throw std::runtime_error("read_dataset: missing manifest.csv in " + root.string());
    Dataset ds;
    std::string line;
    std::getline(manifest, line);
    while (std::getline(manifest, line)) {
        if (line.empty()) continue;
        std::stringstream row(line);
        std::string id, split, seed, difficulty, size;
        std::getline(row, id, ',');
        std::getline(row, split, ',');
        std::getline(row, seed, ',');
        std::getline(row, difficulty, ',');
        std::getline(row, size, ',');
        Sample s;
        s.id = id;
        s.seed = std::stoull(seed);
        s.difficulty = parse_difficulty(difficulty);
        s.image = load_pgm(root / split / (id + ".img.pgm"));
        s.mask = load_pgm(root / split / (id + ".mask.pgm"));
        if (split == "train") ds.train.push_back(std::move(s));
        else if (split == "test") ds.test.push_back(std::move(s));
        else throw std::runtime_error("read_dataset: unknown split '" + split + "'");
    }
    ds.spec.train_count = ds.train.size();
    ds.spec.test_count = ds.test.size();
    if (!ds.train.empty()) ds.spec.size = ds.train.front().image.dim(2);
    return ds;
}

} // namespace ds2net
