// Acceptance suite. Prints one PASS/FAIL line per criterion and exits 1 if any
// selected criterion fails.
//
//   ds2net_acceptance [--work DIR] [--expect-fail N] [criterion ...]
//
// With no criteria listed, all eight run. Criteria 4 and 5 share one ablation.
// --expect-fail N still runs and reports N but keeps its FAIL out of the exit
// status; used for a known desk-scale failure, see README.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdlib>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "../oracles.hpp"
#include "ds2net/gradsuite.hpp"
#include "ds2net/metrics.hpp"
#include "ds2net/ops.hpp"
#include "ds2net/supervision.hpp"
#include "ds2net/trainer.hpp"
#include "ds2net/weights_log.hpp"

namespace fs = std::filesystem;
using namespace ds2net;

namespace {

// Training protocol for the component and supervision ablations.
constexpr std::size_t kAblationEpochs = 100;
constexpr double kAblationMargin = 0.01;
constexpr double kModeMargin = 0.005;
constexpr double kRunBudgetSeconds = 600.0;

constexpr std::size_t kConvergenceEpochs = 30;
constexpr double kConvergenceTarget = 0.90;

constexpr std::size_t kSignalEpochs = 20;

struct Outcome {
    bool passed = false;
    std::string detail;
};

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) {
    return std::chrono::duration<double>(Clock::now() - t0).count();
}

std::string fmt(const char* f, double v) {
    char buf[64];
    std::snprintf(buf, sizeof buf, f, v);
    return buf;
}

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

fs::path fresh_dir(const fs::path& p) {
    fs::remove_all(p);
    fs::create_directories(p);
    return p;
}

Outcome gradient_suite() {
    const auto t0 = Clock::now();
    const auto results = run_gradient_suite({});
    const double elapsed = seconds_since(t0);

    std::size_t failed = 0;
    double worst_op = 0, worst_graph = 0;
    std::string first_failure;
    for (const auto& r : results) {
        const bool graph = r.name.starts_with("dem_block") || r.name.starts_with("sem_block") ||
                           r.name.starts_with("total_loss") || r.name.starts_with("model");
        (graph ? worst_graph : worst_op) = std::max(graph ? worst_graph : worst_op, r.max_relative_error);
        if (!r.passed && failed++ == 0) first_failure = r.name;
    }
    std::set<std::string> kinds;
    for (const auto& r : results) kinds.insert(r.name.substr(0, r.name.find('#')));

    Outcome o;
    o.passed = failed == 0 && elapsed < 120.0 && !results.empty();
    o.detail = std::to_string(results.size()) + " checks over " + std::to_string(kinds.size()) + " kinds, " +
               std::to_string(failed) + " failed" + (failed ? " (first " + first_failure + ")" : "") +
               ", worst op " + fmt("%.2e", worst_op) + " (< 1e-5), worst graph " + fmt("%.2e", worst_graph) +
               " (< 1e-4), " + fmt("%.1f", elapsed) + " s (< 120 s)";
    return o;
}

Outcome weight_invariants() {
    Rng rng(20240611);
    std::size_t violations = 0;
    std::string first;
    auto fail = [&](const std::string& what) {
        if (violations++ == 0) first = what;
    };

    for (int trial = 0; trial < 1000; ++trial) {
        const std::size_t h = 1 + rng.below(8), w = 1 + rng.below(8);
        const double half = uncertainty(Tensor({1 + rng.below(3), 1, h, w}, 0.5));
        if (half != 1.0) fail("u(0.5) = " + fmt("%.17g", half));
        Tensor binary({1 + rng.below(3), 1, h, w});
        for (double& v : binary.data()) v = rng.uniform() < 0.5 ? 0.0 : 1.0;
        if (const double u = uncertainty(binary); u != 0.0) fail("u(binary) = " + fmt("%.17g", u));

        // Six signals mostly, other lengths now and then; some vectors carry exact ties.
        const std::size_t n = trial % 5 == 0 ? 1 + rng.below(10) : 6;
        std::vector<double> u(n);
        for (double& v : u) v = rng.uniform();
        if (trial % 7 == 0 && n > 1) u[rng.below(n)] = u[0];

        const WeightVector wv = supervision_weights(u, SupervisionMode::plus_max_scaling);
        double sum = 0;
        for (double v : wv.u_bar) sum += v;
        if (std::abs(sum - 1.0) > 1e-12) fail("sum u_bar - 1 = " + fmt("%.3g", sum - 1.0));
        if (*std::max_element(wv.lambda.begin(), wv.lambda.end()) != 1.0) fail("max lambda != 1");
        for (std::size_t i = 0; i < n; ++i)
            for (std::size_t j = 0; j < n; ++j) {
                const bool u_less = u[i] < u[j], l_less = wv.lambda[i] < wv.lambda[j];
                if (u_less != l_less) fail("lambda order differs from u order at trial " + std::to_string(trial));
            }
    }
    return {violations == 0,
            "1000 trials, " + std::to_string(violations) + " violations" + (violations ? " (first: " + first + ")" : "")};
}

Outcome oracle_equivalence() {
    constexpr int kInstances = 100;
    constexpr double kTol = 1e-10;
    Rng rng(7);
    std::map<std::string, double> worst;
    auto note = [&](const std::string& name, double err) { worst[name] = std::max(worst[name], err); };

    for (int i = 0; i < kInstances; ++i) {
        Tape tape;
        const std::size_t n = 1 + rng.below(2), cin = 1 + rng.below(4), cout = 1 + rng.below(4);
        const std::size_t h = 3 + rng.below(10), w = 3 + rng.below(10), k = 1 + rng.below(3);
        const std::size_t stride = 1 + rng.below(2), pad = rng.below(k);
        {
            const Tensor x = oracle::random_tensor({n, cin, h, w}, rng), kw = oracle::random_tensor({cout, cin, k, k}, rng),
                         b = oracle::random_tensor({cout}, rng);
            const Var y = conv2d(tape.leaf(x), tape.leaf(kw), tape.leaf(b), stride, pad);
            note("conv2d", oracle::max_abs_diff(y.value(), oracle::conv2d(x, kw, b, int(stride), int(pad))));
        }
        {
            const Tensor x = oracle::random_tensor({n, 1 + rng.below(6), h, w}, rng);
            note("channel_max", oracle::max_abs_diff(channel_max(tape.leaf(x)).value(), oracle::channel_max(x)));
        }
        {
            const Tensor x = oracle::random_tensor({n, cin, h, w}, rng);
            const std::size_t oh = h + rng.below(24), ow = w + rng.below(24);
            note("upsample", oracle::max_abs_diff(upsample_bilinear(tape.leaf(x), oh, ow).value(),
                                                  oracle::upsample_bilinear(x, int(oh), int(ow))));
        }
        {
            const Tensor x = oracle::random_tensor({n, cin, h, w}, rng);
            const std::size_t window = 2 * rng.below(8) + 1;
            note("avg_pool_same", oracle::max_abs_diff(avg_pool_same(tape.leaf(x), window).value(),
                                                       oracle::avg_pool_same(x, int(window))));
        }
        {
            const Shape s{n, 1, 8 + rng.below(25), 8 + rng.below(25)};
            const Tensor z = oracle::random_tensor(s, rng, -6.0, 6.0), g = oracle::random_mask(s, rng, rng.uniform());
            const Tensor wts = pixel_weight_map(g);
            note("weighted_bce",
                 std::abs(weighted_bce(tape.leaf(z), g, wts).value()[0] - oracle::weighted_bce(z, g, wts)));
            note("weighted_iou",
                 std::abs(weighted_iou(tape.leaf(z), g, wts).value()[0] - oracle::weighted_iou(z, g, wts)));

            Tensor p = oracle::random_tensor(s, rng, 0.0, 1.0);
            if (i % 10 == 0) p.data()[0] = 0.5;  // threshold tie
            note("dice", std::abs(dice(p, g) - oracle::dice(p, g)));
            note("iou", std::abs(iou(p, g) - oracle::iou(p, g)));
            note("mae", std::abs(mae(p, g) - oracle::mae(p, g)));
        }
    }

    bool ok = true;
    std::string detail = std::to_string(kInstances) + " instances each, max error";
    for (const auto& [name, err] : worst) {
        ok = ok && err <= kTol;
        detail += " " + name + "=" + fmt("%.1e", err);
    }
    return {ok, detail + " (<= 1e-10)"};
}

// Criteria 4 and 5 share these runs.
struct AblationSummary {
    std::map<std::string, double> mean;
    std::map<std::string, std::vector<double>> per_seed;
    double slowest_run = 0;
    std::string slowest_label;
};

std::optional<AblationSummary> ablation_cache;

const AblationSummary& ablation(const fs::path& work) {
    if (ablation_cache) return *ablation_cache;
    TrainConfig base;
    base.epochs = kAblationEpochs;
    const Dataset data = generate_dataset(base.data);

    AblationPlan plan;
    plan.variants = {DecoderVariant::dem_only, DecoderVariant::sem_only, DecoderVariant::baseline};

    AblationSummary summary;
    auto t = Clock::now();
    const auto runs = run_ablation(base, data, plan, [&](const AblationRun& r) {
        const double s = seconds_since(t);
        t = Clock::now();
        if (s > summary.slowest_run) {
            summary.slowest_run = s;
            summary.slowest_label = r.label() + " seed " + std::to_string(r.seed);
        }
        std::printf("  %-28s seed %llu  mDice %.4f  (%.0f s)\n", r.label().c_str(), (unsigned long long)r.seed,
                    r.test.dice, s);
        std::fflush(stdout);
    });
    write_ablation_csv(fresh_dir(work / "ablation") / "ablation.csv", runs);
    for (const auto& r : runs) summary.per_seed[r.label()].push_back(r.test.dice);
    for (const auto& [label, v] : summary.per_seed) {
        double s = 0;
        for (double d : v) s += d;
        summary.mean[label] = s / double(v.size());
    }
    ablation_cache = std::move(summary);
    return *ablation_cache;
}

Outcome component_ablation(const fs::path& work) {
    const auto& a = ablation(work);
    const double full = a.mean.at("full/uniform");
    bool ok = true;
    std::string detail = "mean mDice full " + fmt("%.4f", full);
    for (const char* v : {"dem_only/uniform", "sem_only/uniform", "baseline/uniform"}) {
        const double m = a.mean.at(v);
        ok = ok && m <= full + kAblationMargin;
        detail += std::string(", ") + v + " " + fmt("%.4f", m) + " (" + fmt("%+.4f", m - full) + ")";
    }
    return {ok, detail + "; no variant may exceed full by more than 0.01"};
}

Outcome supervision_ablation(const fs::path& work) {
    const auto& a = ablation(work);
    const double uni = a.mean.at("full/uniform"), raw = a.mean.at("full/uncertainty_raw"),
                 soft = a.mean.at("full/plus_softmax"), max = a.mean.at("full/plus_max_scaling");
    const bool ok = max >= uni - kModeMargin && raw < max && a.slowest_run < kRunBudgetSeconds;
    return {ok, "mean mDice uniform " + fmt("%.4f", uni) + ", uncertainty_raw " + fmt("%.4f", raw) +
                    ", plus_softmax " + fmt("%.4f", soft) + ", plus_max_scaling " + fmt("%.4f", max) +
                    "; need max_scaling >= uniform - 0.005 and raw < max_scaling; slowest run " +
                    fmt("%.0f", a.slowest_run) + " s (" + a.slowest_label + ", < 600 s)"};
}

Outcome convergence() {
    TrainConfig config;
    config.epochs = kConvergenceEpochs;
    config.data.difficulty = Difficulty::easy;
    const TrainResult r = train(config, generate_dataset(config.data));
    const double best = r.best_eval.combined.aggregate.dice;
    return {best > kConvergenceTarget, "easy set, " + std::to_string(kConvergenceEpochs) + " epochs: best test mDice " +
                                           fmt("%.4f", best) + " at epoch " + std::to_string(r.best_epoch) +
                                           " (> 0.90)"};
}

Outcome signal_dynamics(const fs::path& work) {
    TrainConfig config;
    config.epochs = kSignalEpochs;
    config.supervision_mode = SupervisionMode::plus_max_scaling;
    config.data.difficulty = Difficulty::blurred;
    const Dataset data = generate_dataset(config.data);

    bool first_epoch_ok = true;
    std::size_t seeds_with_change = 0;
    std::string detail;
    for (std::uint64_t seed : {0, 1, 2}) {
        config.seed = seed;
        const fs::path dir = fresh_dir(work / ("signals_seed" + std::to_string(seed)));
        train(config, data, dir);
        const auto epochs = group_by_epoch(read_weights_csv(dir / "weights.csv"));
        const auto violations = check_weight_log(epochs, config.supervision_mode);

        bool ok = !epochs.empty() && epochs.front().epoch == 1 && violations.empty();
        std::size_t distinct = 0;
        double max_lambda = 0;
        if (ok) {
            const auto& lam = epochs.front().weights.lambda;
            distinct = std::set<double>(lam.begin(), lam.end()).size();
            max_lambda = *std::max_element(lam.begin(), lam.end());
            ok = lam.size() == 6 && max_lambda == 1.0 && distinct >= 2;
        }
        first_epoch_ok = first_epoch_ok && ok;
        const std::size_t changes = ranking_changes(epochs, kSignalEpochs);
        if (changes >= 1) ++seeds_with_change;
        detail += (detail.empty() ? "" : "; ") + std::string("seed ") + std::to_string(seed) + ": epoch-1 lambda " +
                  std::to_string(distinct) + " distinct, max " + fmt("%.17g", max_lambda) +
                  (violations.empty() ? "" : ", " + std::to_string(violations.size()) + " log violations") + ", " +
                  std::to_string(changes) + " ranking changes";
    }
    return {first_epoch_ok && seeds_with_change >= 2,
            detail + "; " + std::to_string(seeds_with_change) + "/3 seeds change ranking (need 2)"};
}

Outcome determinism(const fs::path& work) {
    TrainConfig config;
    config.epochs = 2;
    config.multi_scale = true;
    config.seed = 5;
    const Dataset data = generate_dataset(config.data);
    const fs::path a = fresh_dir(work / "determinism_a"), b = fresh_dir(work / "determinism_b");
    train(config, data, a);
    train(config, data, b);
    bool ok = true;
    std::string detail;
    for (const char* f : {"log.csv", "checkpoint.bin"}) {
        const std::string x = slurp(a / f), y = slurp(b / f);
        const bool same = !x.empty() && x == y;
        ok = ok && same;
        detail += (detail.empty() ? "" : ", ") + std::string(f) + (same ? " identical" : " differs") + " (" +
                  std::to_string(x.size()) + " bytes)";
    }
    return {ok, detail};
}

struct Criterion {
    int id;
    const char* name;
    std::function<Outcome(const fs::path&)> run;
};

} // namespace

int main(int argc, char** argv) {
    fs::path work = "acceptance_work";
    std::set<int> selected, expected_fail;
    for (int i = 1; i < argc; ++i) {
        const std::string arg = argv[i];
        if (arg == "--work" && i + 1 < argc) {
            work = argv[++i];
        } else if (arg == "--expect-fail" && i + 1 < argc) {
            expected_fail.insert(std::atoi(argv[++i]));
        } else {
            try {
                selected.insert(std::stoi(arg));
            } catch (const std::exception&) {
                std::fprintf(stderr, "usage: %s [--work DIR] [--expect-fail N] [criterion ...]\n", argv[0]);
                return 2;
            }
        }
    }

    const std::vector<Criterion> criteria{
        {1, "gradient suite", [](const fs::path&) { return gradient_suite(); }},
        {2, "weight invariants", [](const fs::path&) { return weight_invariants(); }},
        {3, "oracle equivalence", [](const fs::path&) { return oracle_equivalence(); }},
        {4, "component ablation", component_ablation},
        {5, "supervision ablation", supervision_ablation},
        {6, "convergence", [](const fs::path&) { return convergence(); }},
        {7, "signal weights and rankings", signal_dynamics},
        {8, "determinism", determinism},
    };

    int failures = 0;
    for (const auto& c : criteria) {
        if (!selected.empty() && !selected.count(c.id)) continue;
        Outcome o;
        try {
            o = c.run(work);
        } catch (const std::exception& e) {
            o = {false, std::string("error: ") + e.what()};
        }
        const bool known = expected_fail.count(c.id) > 0;
        if (!o.passed && !known) ++failures;
        std::printf("%s [%d] %s: %s%s\n", o.passed ? "PASS" : "FAIL", c.id, c.name, o.detail.c_str(),
                    known ? (o.passed ? " [expected to fail, passed]" : " [known failure]") : "");
        std::fflush(stdout);
    }
    return failures == 0 ? 0 : 1;
}
