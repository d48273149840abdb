#include <gtest/gtest.h>

#include <array>
#include <filesystem>
#include <fstream>
#include <map>
#include <set>
#include <sstream>

#include "ds2net/checkpoint.hpp"
#include "ds2net/config.hpp"
#include "ds2net/gradsuite.hpp"
#include "ds2net/optim.hpp"
#include "ds2net/trainer.hpp"
#include "oracles.hpp"

namespace ds2net {
namespace {

namespace fs = std::filesystem;

fs::path scratch(const std::string& name) {
    const fs::path p = fs::temp_directory_path() / ("ds2net_harness_" + name);
    fs::remove_all(p);
    fs::create_directories(p);
    return p;
}

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

std::vector<std::vector<std::string>> read_csv(const fs::path& p) {
    std::vector<std::vector<std::string>> rows;
    std::ifstream in(p);
    for (std::string line; std::getline(in, line);) {
        std::vector<std::string> cells;
        std::stringstream ss(line);
        for (std::string c; std::getline(ss, c, ',');) cells.push_back(c);
        rows.push_back(cells);
    }
    return rows;
}

TrainConfig tiny_config() {
    TrainConfig c;
    c.model.stage_channels = {4, 6, 8, 10};
    c.model.input_size = 32;
    c.data.size = 32;
    c.data.train_count = 12;
    c.data.test_count = 6;
    c.data.seed = 5;
    c.batch_size = 4;
    c.epochs = 2;
    c.lr = 1e-3;
    c.seed = 11;
    c.model.seed = 11;
    return c;
}

ParameterSet scalar_param(double v) {
    ParameterSet p;
    p.add("theta", Tensor({1}, v));
    return p;
}

// --------------------------------------------------------------------------- AdamW

TEST(AdamW, ZeroGradientZeroDecayIsNoOp) {
    ParameterSet p = init_parameters(tiny_config().model);
    const ParameterSet before = p;
    AdamW opt(p, {0.01, 0.9, 0.999, 1e-8, 0.0});
    std::vector<Tensor> grads;
    for (const auto& t : p) grads.push_back(Tensor::zeros_like(t.value));
    for (int i = 0; i < 3; ++i) opt.step(p, grads);
    for (std::size_t i = 0; i < p.size(); ++i) EXPECT_EQ(p[i], before[i]);
    EXPECT_EQ(opt.step_count(), 3u);
}

TEST(AdamW, DecoupledDecayWithZeroGradient) {
    ParameterSet p = scalar_param(2.0);
    AdamW opt(p, {0.01, 0.9, 0.999, 1e-8, 0.1});
    double expected = 2.0;
    for (int i = 0; i < 4; ++i) {
        opt.step(p, {Tensor({1})});
        expected *= 1.0 - 0.001;
        EXPECT_NEAR(p[0][0], expected, 1e-15);
    }
}

TEST(AdamW, MatchesHandRecurrenceOverFiveSteps) {
    const double lr = 0.05, b1 = 0.8, b2 = 0.95, eps = 1e-6, wd = 0.2;
    const double g[5] = {0.3, -1.2, 0.7, 0.05, -0.4};
    ParameterSet p = scalar_param(0.9);
    AdamW opt(p, {lr, b1, b2, eps, wd});
    double theta = 0.9, m = 0, v = 0;
    for (int t = 1; t <= 5; ++t) {
        opt.step(p, {Tensor({1}, g[t - 1])});
        theta -= lr * wd * theta;
        m = b1 * m + (1 - b1) * g[t - 1];
        v = b2 * v + (1 - b2) * g[t - 1] * g[t - 1];
        theta -= lr * (m / (1 - std::pow(b1, t))) / (std::sqrt(v / (1 - std::pow(b2, t))) + eps);
        EXPECT_NEAR(p[0][0], theta, 1e-12) << "step " << t;
        EXPECT_NEAR(opt.first_moments()[0][0], m, 1e-15);
        EXPECT_NEAR(opt.second_moments()[0][0], v, 1e-15);
    }
}

TEST(AdamW, RejectsMismatchedGradients) {
    ParameterSet p = scalar_param(1.0);
    AdamW opt(p, {});
    EXPECT_THROW(opt.step(p, {Tensor({2})}), std::invalid_argument);
    EXPECT_THROW(opt.step(p, {}), std::invalid_argument);
}

// --------------------------------------------------------------------------- config

TEST(Config, DefaultsAndParsing) {
    const TrainConfig d;
    EXPECT_EQ(d.lr, 1e-4);
    EXPECT_EQ(d.weight_decay, 1e-4);
    EXPECT_EQ(d.batch_size, 8u);
    EXPECT_EQ(d.beta1, 0.9);
    EXPECT_EQ(d.beta2, 0.999);
    EXPECT_EQ(d.eps, 1e-8);
    EXPECT_EQ(d.supervision_mode, SupervisionMode::plus_max_scaling);

    const TrainConfig c = parse_config(
        "# comment\n"
        "lr = 0.001\n"
        "epochs=7   # trailing\n"
        "\n"
        "supervision_mode = uncertainty_raw\n"
        "stage_channels = 8,16,24,32\n"
        "input_size = 32\n"
        "variant = sem_only\n"
        "difficulty = blurred\n"
        "multi_scale = true\n"
        "seed = 3\n");
    EXPECT_EQ(c.lr, 0.001);
    EXPECT_EQ(c.epochs, 7u);
    EXPECT_EQ(c.supervision_mode, SupervisionMode::uncertainty_raw);
    EXPECT_EQ(c.model.stage_channels, (std::array<std::size_t, 4>{8, 16, 24, 32}));
    EXPECT_EQ(c.model.input_size, 32u);
    EXPECT_EQ(c.data.size, 32u);
    EXPECT_EQ(c.model.variant, DecoderVariant::sem_only);
    EXPECT_EQ(c.data.difficulty, Difficulty::blurred);
    EXPECT_TRUE(c.multi_scale);
    EXPECT_EQ(c.seed, 3u);
    EXPECT_EQ(c.model.seed, 3u);
}

TEST(Config, FormatRoundTrips) {
    TrainConfig c = tiny_config();
    c.supervision_mode = SupervisionMode::plus_softmax;
    c.model.mask_source_swap = true;
    c.data.difficulty = Difficulty::multi_object;
    c.lr = 3.7e-5;
    const TrainConfig back = parse_config(format_config(c));
    EXPECT_EQ(format_config(back), format_config(c));
    EXPECT_EQ(back.lr, c.lr);
    EXPECT_TRUE(back.model.mask_source_swap);
}

TEST(Config, RejectsBadInput) {
    EXPECT_THROW(parse_config("learning_rate = 1\n"), std::invalid_argument);
    EXPECT_THROW(parse_config("lr 1\n"), std::invalid_argument);
    EXPECT_THROW(parse_config("lr = fast\n"), std::invalid_argument);
    TrainConfig c;
    c.lr = 0;
    EXPECT_THROW(c.validate(), std::invalid_argument);
    c = {};
    c.weight_decay = -1;
    EXPECT_THROW(c.validate(), std::invalid_argument);
    c = {};
    c.batch_size = 0;
    EXPECT_THROW(c.validate(), std::invalid_argument);
}

// --------------------------------------------------------------------------- checkpoint / evaluation

TEST(Checkpoint, RoundTripReproducesMetrics) {
    const fs::path dir = scratch("ckpt");
    TrainConfig c = tiny_config();
    c.model.mask_source_swap = true;
    const Model model(c.model);
    save_checkpoint(dir / "m.bin", model);
    const Model back = load_checkpoint(dir / "m.bin");
    EXPECT_EQ(back.config().mask_source_swap, true);
    EXPECT_EQ(back.config().stage_channels, c.model.stage_channels);
    ASSERT_EQ(back.parameters().size(), model.parameters().size());
    for (std::size_t i = 0; i < model.parameters().size(); ++i) {
        EXPECT_EQ(back.parameters().name(i), model.parameters().name(i));
        EXPECT_EQ(back.parameters()[i], model.parameters()[i]);
    }
    const Dataset data = generate_dataset(c.data);
    const Evaluation a = evaluate(model, data.test), b = evaluate(back, data.test);
    EXPECT_NEAR(a.combined.aggregate.dice, b.combined.aggregate.dice, 1e-12);
    EXPECT_NEAR(a.combined.aggregate.mae, b.combined.aggregate.mae, 1e-12);
    EXPECT_EQ(a.signal_mdice(), b.signal_mdice());
    fs::remove_all(dir);
}

TEST(Checkpoint, RejectsCorruptFiles) {
    const fs::path dir = scratch("ckpt_bad");
    {
        std::ofstream out(dir / "bad.bin", std::ios::binary);
        out << "NOTACKPT";
    }
    EXPECT_THROW(load_checkpoint(dir / "bad.bin"), std::runtime_error);
    save_checkpoint(dir / "ok.bin", Model(tiny_config().model));
    const std::string bytes = slurp(dir / "ok.bin");
    {
        std::ofstream out(dir / "cut.bin", std::ios::binary);
        out << bytes.substr(0, bytes.size() / 2);
    }
    EXPECT_THROW(load_checkpoint(dir / "cut.bin"), std::runtime_error);
    EXPECT_THROW(load_checkpoint(dir / "missing.bin"), std::runtime_error);
    fs::remove_all(dir);
}

TEST(Evaluate, ZeroModelPredictsHalfAndTieIsBackground) {
    const TrainConfig c = tiny_config();
    ParameterSet zero = init_parameters(c.model);
    for (auto& p : zero)
        for (double& v : p.value.data()) v = 0.0;
    const Model model(c.model, zero);
    const Dataset data = generate_dataset(c.data);
    const Evaluation e = evaluate(model, data.test);
    ASSERT_EQ(e.combined.per_image.size(), data.test.size());
    for (const auto& m : e.combined.per_image) {
        EXPECT_EQ(m.dice, 0.0);  // empty prediction vs nonempty mask
        EXPECT_EQ(m.iou, 0.0);
        EXPECT_EQ(m.mae, 0.5);
    }
    for (const auto& rec : e.per_signal) EXPECT_EQ(rec.aggregate.dice, 0.0);
}

TEST(Evaluate, SignalCsvRankMatchesSortOracle) {
    const fs::path dir = scratch("ranks");
    TrainConfig c = tiny_config();
    c.epochs = 1;
    const Dataset data = generate_dataset(c.data);
    const TrainResult r = train(c, data);
    write_signal_eval_csv(dir / "s.csv", r.best_eval);
    const auto rows = read_csv(dir / "s.csv");
    ASSERT_EQ(rows.size(), 7u);
    EXPECT_EQ(rows[0], (std::vector<std::string>{"signal", "provenance", "mdice", "miou", "mae", "rank"}));
    std::vector<double> scores;
    for (std::size_t i = 1; i < rows.size(); ++i) scores.push_back(std::stod(rows[i][2]));
    std::vector<double> distinct = scores;
    std::sort(distinct.begin(), distinct.end(), std::greater<>());
    distinct.erase(std::unique(distinct.begin(), distinct.end()), distinct.end());
    for (std::size_t i = 0; i < scores.size(); ++i) {
        const auto expected = std::find(distinct.begin(), distinct.end(), scores[i]) - distinct.begin() + 1;
        EXPECT_EQ(std::stoul(rows[i + 1][5]), std::size_t(expected));
        EXPECT_EQ(rows[i + 1][1], r.provenance[i].label());
    }
    fs::remove_all(dir);
}

// --------------------------------------------------------------------------- training

TEST(Train, ZeroEpochsOnlyEvaluates) {
    const fs::path dir = scratch("epochs0");
    TrainConfig c = tiny_config();
    c.epochs = 0;
    const Dataset data = generate_dataset(c.data);
    const TrainResult r = train(c, data, dir);
    ASSERT_EQ(r.epochs.size(), 1u);
    EXPECT_FALSE(r.epochs[0].train_loss.has_value());
    EXPECT_EQ(r.best_epoch, 0u);
    const ParameterSet init = init_parameters(c.model);
    for (std::size_t i = 0; i < init.size(); ++i) EXPECT_EQ(r.final_model.parameters()[i], init[i]);
    EXPECT_EQ(read_csv(dir / "log.csv").size(), 2u);
    EXPECT_EQ(read_csv(dir / "weights.csv").size(), 1u);
    for (const char* f : {"config.txt", "checkpoint.bin", "eval.csv", "eval_signals.csv"}) EXPECT_TRUE(fs::exists(dir / f)) << f;
    fs::remove_all(dir);
}

TEST(Train, SeededRunsAreByteIdentical) {
    const fs::path a = scratch("det_a"), b = scratch("det_b");
    TrainConfig c = tiny_config();
    c.multi_scale = true;
    const Dataset data = generate_dataset(c.data);
    train(c, data, a);
    train(c, data, b);
    for (const char* f : {"log.csv", "weights.csv", "checkpoint.bin", "eval.csv", "eval_signals.csv", "config.txt"})
        EXPECT_EQ(slurp(a / f), slurp(b / f)) << f;
    EXPECT_FALSE(slurp(a / "checkpoint.bin").empty());
    fs::remove_all(a);
    fs::remove_all(b);
}

TEST(Train, LoggedValidationMatchesReEvaluation) {
    const fs::path dir = scratch("reeval");
    TrainConfig c = tiny_config();
    const Dataset data = generate_dataset(c.data);
    const TrainResult r = train(c, data, dir);
    const Evaluation e = evaluate(load_checkpoint(dir / "checkpoint.bin"), data.test);
    EXPECT_NEAR(e.combined.aggregate.dice, r.epochs[r.best_epoch].val.dice, 1e-12);
    EXPECT_NEAR(e.combined.aggregate.iou, r.epochs[r.best_epoch].val.iou, 1e-12);
    EXPECT_NEAR(e.combined.aggregate.mae, r.epochs[r.best_epoch].val.mae, 1e-12);
    for (const auto& log : r.epochs) EXPECT_LE(log.val.dice, r.epochs[r.best_epoch].val.dice);
    fs::remove_all(dir);
}

TEST(Train, WeightLogsSatisfyInvariants) {
    const fs::path dir = scratch("weights");
    TrainConfig c = tiny_config();
    c.epochs = 3;
    const Dataset data = generate_dataset(c.data);
    train(c, data, dir);
    const auto rows = read_csv(dir / "weights.csv");
    ASSERT_EQ(rows[0], (std::vector<std::string>{"epoch", "signal", "provenance", "u", "u_bar", "lambda", "mdice"}));
    ASSERT_EQ(rows.size(), 1u + 3 * 6);
    std::map<std::string, std::vector<std::pair<double, double>>> by_epoch;  // (u, lambda)
    for (std::size_t i = 1; i < rows.size(); ++i) by_epoch[rows[i][0]].push_back({std::stod(rows[i][3]), std::stod(rows[i][5])});
    for (const auto& [epoch, v] : by_epoch) {
        double top = 0;
        for (const auto& [u, l] : v) top = std::max(top, l);
        EXPECT_EQ(top, 1.0) << "epoch " << epoch;
        for (const auto& x : v)
            for (const auto& y : v)
                if (x.first < y.first) EXPECT_LT(x.second, y.second);
    }
    fs::remove_all(dir);
}

TEST(Train, ModesShareFirstForwardAndDifferOnlyInLambda) {
    const TrainConfig c = tiny_config();
    const Dataset data = generate_dataset(c.data);
    const Model model(c.model);
    const Batch batch = make_batch(std::span<const Sample>(data.train).first(4));
    Tape t1, t2;
    const auto s1 = model.forward(t1, model.bind(t1), t1.constant(batch.images));
    const auto s2 = model.forward(t2, model.bind(t2), t2.constant(batch.images));
    const auto uniform = total_loss(s1, batch.masks, batch.weights, SupervisionMode::uniform);
    const auto scaled = total_loss(s2, batch.masks, batch.weights, SupervisionMode::plus_max_scaling);
    EXPECT_EQ(uniform.weights.u, scaled.weights.u);
    EXPECT_EQ(uniform.weights.u_bar, scaled.weights.u_bar);
    EXPECT_NE(uniform.weights.lambda, scaled.weights.lambda);
    for (std::size_t i = 0; i < 6; ++i) {
        EXPECT_EQ(uniform.per_signal[i].iou, scaled.per_signal[i].iou);
        EXPECT_EQ(uniform.per_signal[i].bce, scaled.per_signal[i].bce);
    }
    // Epoch-0 rows of full training logs coincide too.
    TrainConfig cu = c, cs = c;
    cu.epochs = cs.epochs = 1;
    cu.supervision_mode = SupervisionMode::uniform;
    const auto ru = train(cu, data), rs = train(cs, data);
    EXPECT_EQ(ru.epochs[0].val.dice, rs.epochs[0].val.dice);
    EXPECT_EQ(ru.epochs[0].signal_mdice, rs.epochs[0].signal_mdice);
    EXPECT_EQ(ru.epochs[1].weights.u_bar.size(), 6u);
    EXPECT_EQ(ru.epochs[1].weights.lambda, std::vector<double>(6, 1.0));
}

TEST(Train, DivergenceNamesTheSignal) {
    TrainConfig c = tiny_config();
    c.lr = 1e30;
    c.epochs = 3;
    const Dataset data = generate_dataset(c.data);
    try {
        train(c, data);
        FAIL() << "diverging run did not abort";
    } catch (const std::runtime_error& e) {
        const std::string msg = e.what();
        EXPECT_NE(msg.find("non-finite"), std::string::npos) << msg;
        EXPECT_TRUE(msg.find("detail") != std::string::npos || msg.find("semantic") != std::string::npos) << msg;
    }
}

TEST(Train, RejectsMismatchedData) {
    TrainConfig c = tiny_config();
    SplitSpec s = c.data;
    s.size = 64;
    EXPECT_THROW(train(c, generate_dataset(s)), std::invalid_argument);
}

TEST(Ablation, RunsAndWritesDeltas) {
    const fs::path dir = scratch("ablate");
    TrainConfig c = tiny_config();
    c.epochs = 1;
    const Dataset data = generate_dataset(c.data);
    AblationPlan plan;
    plan.seeds = {0, 1};
    plan.modes = {SupervisionMode::uniform, SupervisionMode::plus_max_scaling};
    plan.variants = {DecoderVariant::baseline};
    plan.include_mask_swap = true;
    const auto runs = run_ablation(c, data, plan);
    EXPECT_EQ(runs.size(), 2u * 4);
    write_ablation_csv(dir / "ablation.csv", runs);
    const auto rows = read_csv(dir / "ablation.csv");
    EXPECT_GT(rows.size(), runs.size());
    bool zero_delta = false;
    for (const auto& row : rows)
        if (row.size() > 3 && row[0] == "full/uniform") zero_delta = true;
    EXPECT_TRUE(zero_delta);
    fs::remove_all(dir);
}

TEST(GradSuite, SmallRunPassesAndCoversEveryCheck) {
    GradSuiteOptions o;
    o.configurations = 2;
    o.seed = 5;
    const auto results = run_gradient_suite(o);
    std::set<std::string> kinds;
    for (const auto& r : results) {
        EXPECT_TRUE(r.passed) << r.name << " " << r.max_relative_error;
        EXPECT_GT(r.coordinates, 0u) << r.name;
        kinds.insert(r.name.substr(0, r.name.find('#')));
    }
    for (const char* k : {"channel_max", "upsample_bilinear", "avg_pool_same", "dem_block", "sem_block", "total_loss", "model"})
        EXPECT_TRUE(kinds.contains(k)) << k;
}

} // namespace
} // namespace ds2net
