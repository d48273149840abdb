#include <cstdio>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "ds2net/checkpoint.hpp"
#include "ds2net/config.hpp"
#include "ds2net/data.hpp"
#include "ds2net/format.hpp"
#include "ds2net/gradsuite.hpp"
#include "ds2net/metrics.hpp"
#include "ds2net/trainer.hpp"
#include "ds2net/weights_log.hpp"

namespace fs = std::filesystem;
using namespace ds2net;

namespace {

// Options shared by every subcommand that needs a TrainConfig. Precedence:
// defaults < --config file < --set key=value < dedicated flags.
struct ConfigOptions {
    std::string file;
    std::vector<std::string> sets;
    std::optional<std::size_t> epochs;
    std::optional<std::uint64_t> seed;
    std::optional<double> lr;
    std::optional<std::string> mode;
    std::optional<std::string> difficulty;
    std::optional<std::string> variant;

    void attach(CLI::App* app) {
        app->add_option("-c,--config", file, "key = value config file")->check(CLI::ExistingFile);
        app->add_option("-s,--set", sets, "override one setting, key=value (repeatable)");
        app->add_option("--epochs", epochs);
        app->add_option("--seed", seed);
        app->add_option("--lr", lr);
        app->add_option("--mode", mode, "uniform|uncertainty_raw|plus_softmax|plus_max_scaling");
        app->add_option("--difficulty", difficulty, "easy|blurred|small_object|multi_object|mixed");
        app->add_option("--variant", variant, "full|dem_only|sem_only|baseline");
    }

    TrainConfig build() const {
        TrainConfig c = file.empty() ? TrainConfig{} : load_config(file);
        for (const auto& kv : sets) {
            const auto eq = kv.find('=');
            if (eq == std::string::npos) throw std::invalid_argument("--set expects key=value, got '" + kv + "'");
            apply_setting(c, kv.substr(0, eq), kv.substr(eq + 1));
        }
        if (epochs) apply_setting(c, "epochs", std::to_string(*epochs));
        if (seed) apply_setting(c, "seed", std::to_string(*seed));
        if (lr) apply_setting(c, "lr", format_double(*lr));
        if (mode) apply_setting(c, "supervision_mode", *mode);
        if (difficulty) apply_setting(c, "difficulty", *difficulty);
        if (variant) apply_setting(c, "variant", *variant);
        c.validate();
        return c;
    }
};

Dataset load_or_generate(const std::string& data_dir, const TrainConfig& c) {
    return data_dir.empty() ? generate_dataset(c.data) : read_dataset(data_dir);
}

void print_metrics(const char* label, const ImageMetrics& m) {
    std::printf("%s mDice %.4f  mIoU %.4f  MAE %.4f\n", label, m.dice, m.iou, m.mae);
}

void print_signal_table(const Evaluation& e) {
    const auto mdice = e.signal_mdice();
    const auto ranks = rank_signals(mdice);
    for (std::size_t s = 0; s < mdice.size(); ++s)
        std::printf("  %-10s mDice %.4f  rank %zu\n", e.provenance[s].label().c_str(), mdice[s], ranks[s]);
}

int cmd_gen_data(const ConfigOptions& opts, const std::string& out) {
    const TrainConfig c = opts.build();
    const Dataset d = generate_dataset(c.data);
    write_dataset(d, out);
    std::printf("wrote %zu train + %zu test samples (%zux%zu, %s) to %s\n", d.train.size(), d.test.size(), c.data.size,
                c.data.size, c.data.difficulty ? to_string(*c.data.difficulty).c_str() : "mixed", out.c_str());
    return 0;
}

int cmd_train(const ConfigOptions& opts, const std::string& name, const std::string& root, const std::string& data_dir) {
    const TrainConfig c = opts.build();
    const Dataset d = load_or_generate(data_dir, c);
    const fs::path dir = fs::path(root) / name;
    fs::create_directories(dir);
    std::printf("training %s (%s, %s) for %zu epochs -> %s\n", to_string(c.model.variant).c_str(),
                to_string(c.supervision_mode).c_str(), c.multi_scale ? "multi-scale" : "single-scale", c.epochs,
                dir.string().c_str());
    const TrainResult r = train(c, d, dir, [](const EpochLog& e) {
        char loss[32] = "-";
        if (e.train_loss) std::snprintf(loss, sizeof loss, "%.6f", *e.train_loss);
        std::printf("epoch %3zu  loss %-9s  val mDice %.4f  mIoU %.4f  MAE %.4f\n", e.epoch, loss, e.val.dice, e.val.iou,
                    e.val.mae);
        std::fflush(stdout);
    });
    std::printf("best epoch %zu\n", r.best_epoch);
    print_metrics("best val", r.best_eval.combined.aggregate);
    print_signal_table(r.best_eval);
    return 0;
}

int cmd_eval(const ConfigOptions& opts, const std::string& checkpoint, const std::string& data_dir,
             const std::string& split, const std::string& out) {
    const Model model = load_checkpoint(checkpoint);
    TrainConfig c = opts.build();
    c.data.size = model.config().input_size;
    const Dataset d = load_or_generate(data_dir, c);
    const auto& samples = split == "train" ? d.train : d.test;
    const Evaluation e = evaluate(model, samples);
    print_metrics(split.c_str(), e.combined.aggregate);
    print_signal_table(e);
    const fs::path dir = out.empty() ? fs::path(checkpoint).parent_path() : fs::path(out);
    if (!dir.empty()) fs::create_directories(dir);
    write_eval_csv(dir / ("eval_" + split + ".csv"), e);
    write_signal_eval_csv(dir / ("eval_signals_" + split + ".csv"), e);
    std::printf("wrote %s\n", (dir / ("eval_" + split + ".csv")).string().c_str());
    return 0;
}

int cmd_ablate(const ConfigOptions& opts, const std::string& name, const std::string& root,
               const std::string& data_dir, const std::vector<std::uint64_t>& seeds,
               const std::vector<std::string>& modes, const std::vector<std::string>& variants, bool swap) {
    const TrainConfig c = opts.build();
    const Dataset d = load_or_generate(data_dir, c);
    AblationPlan plan;
    if (!seeds.empty()) plan.seeds = seeds;
    if (!modes.empty()) {
        plan.modes.clear();
        for (const auto& m : modes) plan.modes.push_back(parse_supervision_mode(m));
    }
    for (const auto& v : variants) plan.variants.push_back(parse_decoder_variant(v));
    plan.include_mask_swap = swap;
    const fs::path dir = fs::path(root) / name;
    fs::create_directories(dir);
    const auto runs = run_ablation(c, d, plan, [](const AblationRun& r) {
        std::printf("%-28s seed %llu  mDice %.4f  mIoU %.4f\n", r.label().c_str(), (unsigned long long)r.seed,
                    r.test.dice, r.test.iou);
        std::fflush(stdout);
    });
    write_ablation_csv(dir / "ablation.csv", runs);
    std::printf("wrote %s\n", (dir / "ablation.csv").string().c_str());
    return 0;
}

int cmd_inspect(const std::string& target, const std::optional<std::string>& mode_flag) {
    fs::path path = target;
    if (fs::is_directory(path)) path /= "weights.csv";
    SupervisionMode mode = SupervisionMode::plus_max_scaling;
    if (mode_flag) {
        mode = parse_supervision_mode(*mode_flag);
    } else if (fs::exists(path.parent_path() / "config.txt")) {
        mode = load_config(path.parent_path() / "config.txt").supervision_mode;
    }
    const auto epochs = group_by_epoch(read_weights_csv(path));
    for (const auto& e : epochs) {
        std::printf("epoch %3zu  lambda", e.epoch);
        for (std::size_t s = 0; s < e.provenance.size(); ++s)
            std::printf(" %s=%.4f", e.provenance[s].c_str(), e.weights.lambda[s]);
        std::printf("  | ranking");
        const auto order = ranking_order(e.mdice);
        for (std::size_t k = 0; k < order.size(); ++k) {
            const bool tie = k > 0 && e.mdice[order[k]] == e.mdice[order[k - 1]];
            std::printf("%s%s", k == 0 ? " " : (tie ? " = " : " > "), e.provenance[order[k]].c_str());
        }
        std::printf("\n");
    }
    std::printf("%zu epochs, %zu ranking changes, mode %s\n", epochs.size(), ranking_changes(epochs),
                to_string(mode).c_str());
    const auto problems = check_weight_log(epochs, mode);
    for (const auto& p : problems) std::fprintf(stderr, "violation: %s\n", p.c_str());
    if (!problems.empty()) return 1;
    std::printf("weight invariants hold\n");
    return 0;
}

int cmd_grad_check(std::uint64_t seed, std::size_t configurations, bool verbose) {
    GradSuiteOptions o;
    o.seed = seed;
    o.configurations = configurations;
    const auto results = run_gradient_suite(o);
    std::size_t failed = 0;
    double worst = 0;
    for (const auto& r : results) {
        worst = std::max(worst, r.max_relative_error);
        if (!r.passed) ++failed;
        if (verbose || !r.passed)
            std::printf("%-4s %-24s coords %4zu  max rel err %.3e\n", r.passed ? "ok" : "FAIL", r.name.c_str(),
                        r.coordinates, r.max_relative_error);
    }
    std::printf("%zu checks over %zu configurations, %zu failed, worst rel err %.3e\n", results.size(), configurations,
                failed, worst);
    return failed == 0 ? 0 : 1;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"DS2Net: dual-stream deep supervision for binary segmentation"};
    app.require_subcommand(1);

    ConfigOptions gen_opts, train_opts, eval_opts, ablate_opts;
    std::string out, name = "default", root = "run", data_dir, checkpoint, split = "test";
    std::vector<std::uint64_t> seeds;
    std::vector<std::string> modes, variants;
    bool swap = false, verbose = false;
    std::string target;
    std::optional<std::string> inspect_mode;
    std::uint64_t gc_seed = 0;
    std::size_t gc_configs = 20;

    auto* gen = app.add_subcommand("gen-data", "generate the synthetic dataset as PGM files");
    gen_opts.attach(gen);
    gen->add_option("-o,--out", out, "dataset root")->required();

    auto* tr = app.add_subcommand("train", "train one model, writing run/<name>/");
    train_opts.attach(tr);
    tr->add_option("-n,--name", name);
    tr->add_option("--runs", root, "parent directory of run folders");
    tr->add_option("-d,--data", data_dir, "dataset root from gen-data (default: generate from config)");

    auto* ev = app.add_subcommand("eval", "evaluate a checkpoint");
    eval_opts.attach(ev);
    ev->add_option("checkpoint", checkpoint)->required()->check(CLI::ExistingFile);
    ev->add_option("-d,--data", data_dir);
    ev->add_option("--split", split)->check(CLI::IsMember({"train", "test"}));
    ev->add_option("-o,--out", out, "output directory (default: next to the checkpoint)");

    auto* ab = app.add_subcommand("ablate", "supervision-mode and component ablation");
    ablate_opts.attach(ab);
    ab->add_option("-n,--name", name);
    ab->add_option("--runs", root);
    ab->add_option("-d,--data", data_dir);
    ab->add_option("--seeds", seeds)->delimiter(',');
    ab->add_option("--modes", modes)->delimiter(',');
    ab->add_option("--variants", variants, "extra decoder variants, trained with uniform weights")->delimiter(',');
    ab->add_flag("--mask-swap", swap, "also train the full model with swapped mask sources");

    auto* in = app.add_subcommand("inspect-weights", "print lambda and rankings from weights.csv and check invariants");
    in->add_option("path", target, "weights.csv or a run directory")->required();
    in->add_option("--mode", inspect_mode, "supervision mode (default: from config.txt)");

    auto* gc = app.add_subcommand("grad-check", "finite-difference gradient suites");
    gc->add_option("--seed", gc_seed);
    gc->add_option("--configurations", gc_configs);
    gc->add_flag("-v,--verbose", verbose);

    CLI11_PARSE(app, argc, argv);

    try {
        if (*gen) return cmd_gen_data(gen_opts, out);
        if (*tr) return cmd_train(train_opts, name, root, data_dir);
        if (*ev) return cmd_eval(eval_opts, checkpoint, data_dir, split, out);
        if (*ab) return cmd_ablate(ablate_opts, name, root, data_dir, seeds, modes, variants, swap);
        if (*in) return cmd_inspect(target, inspect_mode);
        if (*gc) return cmd_grad_check(gc_seed, gc_configs, verbose);
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 2;
    }
    return 0;
}
