#include "ds2net/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <numeric>
#include <stdexcept>

#include "ds2net/checkpoint.hpp"
#include "ds2net/format.hpp"
#include "ds2net/ops.hpp"
#include "ds2net/optim.hpp"
#include "ds2net/random.hpp"

namespace ds2net {

Batch make_batch(std::span<const Sample> samples) {
    require(!samples.empty(), "make_batch: empty batch");
    const Shape one = samples.front().image.shape();
    const std::size_t plane = samples.front().image.numel();
    Shape shape = one;
    shape[0] = samples.size();
    Batch b{Tensor(shape), Tensor(shape), Tensor(shape)};
    for (std::size_t i = 0; i < samples.size(); ++i) {
        require(samples[i].image.shape() == one && samples[i].mask.shape() == one, "make_batch: sample shapes differ");
        const Tensor weights = pixel_weight_map(samples[i].mask);
        std::copy_n(samples[i].image.data().begin(), plane, b.images.data().begin() + i * plane);
        std::copy_n(samples[i].mask.data().begin(), plane, b.masks.data().begin() + i * plane);
        std::copy_n(weights.data().begin(), plane, b.weights.data().begin() + i * plane);
    }
    return b;
}

std::vector<double> Evaluation::signal_mdice() const {
    std::vector<double> out;
    for (const auto& r : per_signal) out.push_back(r.aggregate.dice);
    return out;
}

namespace {

constexpr std::size_t kEvalBatch = 8;

Tensor slice_image(const Tensor& batch, std::size_t index) {
    Shape shape = batch.shape();
    shape[0] = 1;
    const std::size_t plane = batch.numel() / batch.dim(0);
    return Tensor(shape, std::vector<double>(batch.data().begin() + index * plane,
                                             batch.data().begin() + (index + 1) * plane));
}

} // namespace

Evaluation evaluate(const Model& model, std::span<const Sample> samples) {
    Evaluation eval;
    eval.provenance = model.signal_layout();
    eval.per_signal.resize(eval.provenance.size());
    for (std::size_t start = 0; start < samples.size(); start += kEvalBatch) {
        const auto chunk = samples.subspan(start, std::min(kEvalBatch, samples.size() - start));
        const Batch batch = make_batch(chunk);
        Tape tape;
        const auto bound = model.bind(tape, false);
        const SignalSet signals = model.forward(tape, bound, tape.constant(batch.images));
        const Tensor combined = aggregate_signals(signals);
        for (std::size_t i = 0; i < chunk.size(); ++i) {
            const Tensor mask = slice_image(batch.masks, i);
            eval.ids.push_back(chunk[i].id);
            eval.combined.add(image_metrics(slice_image(combined, i), mask));
            for (std::size_t s = 0; s < signals.size(); ++s)
                eval.per_signal[s].add(image_metrics(sigmoid(slice_image(signals.logits[s].value(), i)), mask));
        }
    }
    eval.combined.finalize();
    for (auto& r : eval.per_signal) r.finalize();
    return eval;
}

// ---------------------------------------------------------------------------
// CSV output

void write_eval_csv(const std::filesystem::path& path, const Evaluation& eval) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot write " + path.string());
    out << "id,dice,iou,mae\n";
    for (std::size_t i = 0; i < eval.ids.size(); ++i) {
        const auto& m = eval.combined.per_image[i];
        out << eval.ids[i] << ',' << format_double(m.dice) << ',' << format_double(m.iou) << ','
            << format_double(m.mae) << '\n';
    }
    const auto& a = eval.combined.aggregate;
    out << "mean," << format_double(a.dice) << ',' << format_double(a.iou) << ',' << format_double(a.mae) << '\n';
}

void write_signal_eval_csv(const std::filesystem::path& path, const Evaluation& eval) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot write " + path.string());
    const auto mdice = eval.signal_mdice();
    const auto ranks = rank_signals(mdice);
    out << "signal,provenance,mdice,miou,mae,rank\n";
    for (std::size_t s = 0; s < eval.per_signal.size(); ++s) {
        const auto& a = eval.per_signal[s].aggregate;
        out << s + 1 << ',' << eval.provenance[s].label() << ',' << format_double(a.dice) << ','
            << format_double(a.iou) << ',' << format_double(a.mae) << ',' << ranks[s] << '\n';
    }
}

namespace {

class RunFiles {
public:
    RunFiles(const std::filesystem::path& dir, const std::vector<Provenance>& provenance) : provenance_(provenance) {
        std::filesystem::create_directories(dir);
        log_.open(dir / "log.csv");
        weights_.open(dir / "weights.csv");
        if (!log_ || !weights_) throw std::runtime_error("cannot create run files in " + dir.string());
        log_ << "epoch,train_loss,val_mdice,val_miou,val_mae";
        for (const auto& p : provenance_) log_ << ",lambda_" << p.label();
        for (const auto& p : provenance_) log_ << ",mdice_" << p.label();
        log_ << '\n';
        weights_ << "epoch,signal,provenance,u,u_bar,lambda,mdice\n";
    }

    void write(const EpochLog& e) {
        log_ << e.epoch << ',' << (e.train_loss ? format_double(*e.train_loss) : "") << ','
             << format_double(e.val.dice) << ',' << format_double(e.val.iou) << ',' << format_double(e.val.mae);
        for (std::size_t s = 0; s < provenance_.size(); ++s)
            log_ << ',' << (e.weights.lambda.empty() ? "" : format_double(e.weights.lambda[s]));
        for (double d : e.signal_mdice) log_ << ',' << format_double(d);
        log_ << '\n';
        log_.flush();
        if (e.weights.lambda.empty()) return;
        for (std::size_t s = 0; s < provenance_.size(); ++s)
            weights_ << e.epoch << ',' << s + 1 << ',' << provenance_[s].label() << ','
                     << format_double(e.weights.u[s]) << ',' << format_double(e.weights.u_bar[s]) << ','
                     << format_double(e.weights.lambda[s]) << ',' << format_double(e.signal_mdice[s]) << '\n';
        weights_.flush();
    }

private:
    std::vector<Provenance> provenance_;
    std::ofstream log_, weights_;
};

} // namespace

TrainResult train(const TrainConfig& config, const Dataset& dataset,
                  const std::optional<std::filesystem::path>& run_dir, const EpochCallback& on_epoch) {
    config.validate();
    require(!dataset.train.empty() && !dataset.test.empty(), "train: dataset needs train and test samples");

    ModelConfig model_config = config.model;
    model_config.seed = config.seed;
    Model model(model_config);
    AdamW optimizer(model.parameters(), {config.lr, config.beta1, config.beta2, config.eps, config.weight_decay});
    const std::vector<Provenance> provenance = model.signal_layout();
    const std::size_t n_signals = provenance.size();

    std::optional<RunFiles> files;
    if (run_dir) {
        files.emplace(*run_dir, provenance);
        std::ofstream(*run_dir / "config.txt") << format_config(config);
    }

    TrainResult result{model, model, 0, {}, provenance, {}};
    auto record_epoch = [&](EpochLog log, const Evaluation& eval, const Model& current) {
        log.val = eval.combined.aggregate;
        log.signal_mdice = eval.signal_mdice();
        if (result.epochs.empty() || log.val.dice > result.best_eval.combined.aggregate.dice) {
            result.best_model = current;
            result.best_epoch = log.epoch;
            result.best_eval = eval;
        }
        if (files) files->write(log);
        if (on_epoch) on_epoch(log);
        result.epochs.push_back(std::move(log));
    };

    record_epoch(EpochLog{}, evaluate(model, dataset.test), model);

    // Static pixel weights are reused unless the batch is rescaled.
    std::vector<Tensor> static_weights;
    if (!config.multi_scale)
        for (const Sample& s : dataset.train) static_weights.push_back(pixel_weight_map(s.mask));

    Rng order_rng(mix_seed(config.seed, 0x6f72646572ULL));
    Rng scale_rng(mix_seed(config.seed, 0x7363616c65ULL));
    std::vector<std::size_t> order(dataset.train.size());
    std::iota(order.begin(), order.end(), std::size_t{0});

    for (std::size_t epoch = 1; epoch <= config.epochs; ++epoch) {
        order_rng.shuffle(order.begin(), order.end());
        double loss_sum = 0.0;
        std::vector<double> u_sum(n_signals, 0.0);
        std::size_t steps = 0;

        for (std::size_t start = 0; start < order.size(); start += config.batch_size) {
            const std::size_t count = std::min(config.batch_size, order.size() - start);
            std::vector<Sample> picked;
            picked.reserve(count);
            for (std::size_t i = 0; i < count; ++i) picked.push_back(dataset.train[order[start + i]]);
            Batch batch;
            if (config.multi_scale) {
                const double ratio = kMultiScaleRatios[scale_rng.below(std::size(kMultiScaleRatios))];
                for (Sample& s : picked) s = multi_scale(s, ratio);
                batch = make_batch(picked);
            } else {
                const std::size_t plane = picked.front().image.numel();
                Shape shape = picked.front().image.shape();
                shape[0] = count;
                batch = {Tensor(shape), Tensor(shape), Tensor(shape)};
                for (std::size_t i = 0; i < count; ++i) {
                    std::copy_n(picked[i].image.data().begin(), plane, batch.images.data().begin() + i * plane);
                    std::copy_n(picked[i].mask.data().begin(), plane, batch.masks.data().begin() + i * plane);
                    std::copy_n(static_weights[order[start + i]].data().begin(), plane,
                                batch.weights.data().begin() + i * plane);
                }
            }

            Tape tape;
            const auto bound = model.bind(tape);
            const SignalSet signals = model.forward(tape, bound, tape.constant(batch.images));
            for (std::size_t s = 0; s < n_signals; ++s)
                if (!signals.logits[s].value().all_finite())
                    throw std::runtime_error("train: non-finite loss from signal " + provenance[s].label() +
                                             " at epoch " + std::to_string(epoch) + " (logits diverged)");
            const LossBreakdown loss = total_loss(signals, batch.masks, batch.weights, config.supervision_mode);
            for (std::size_t s = 0; s < n_signals; ++s) {
                const auto& part = loss.per_signal[s];
                if (!std::isfinite(part.iou) || !std::isfinite(part.bce))
                    throw std::runtime_error("train: non-finite loss from signal " + provenance[s].label() +
                                             " at epoch " + std::to_string(epoch));
            }
            if (!std::isfinite(loss.total)) throw std::runtime_error("train: non-finite total loss");
            tape.backward(loss.total_var);

            std::vector<Tensor> grads;
            grads.reserve(bound.size());
            for (const Var& p : bound) grads.push_back(tape.grad(p));
            optimizer.step(model.parameters(), grads);

            loss_sum += loss.total;
            for (std::size_t s = 0; s < n_signals; ++s) u_sum[s] += loss.weights.u[s];
            ++steps;
        }

        EpochLog log;
        log.epoch = epoch;
        log.train_loss = loss_sum / static_cast<double>(steps);
        for (double& u : u_sum) u /= static_cast<double>(steps);
        log.weights = supervision_weights(u_sum, config.supervision_mode);
        record_epoch(std::move(log), evaluate(model, dataset.test), model);
    }

    result.final_model = model;
    if (run_dir) {
        save_checkpoint(*run_dir / "checkpoint.bin", result.best_model);
        write_eval_csv(*run_dir / "eval.csv", result.best_eval);
        write_signal_eval_csv(*run_dir / "eval_signals.csv", result.best_eval);
    }
    return result;
}

// ---------------------------------------------------------------------------
// ablation

std::string AblationRun::label() const {
    std::string out = to_string(variant) + "/" + to_string(mode);
    if (mask_source_swap) out += "/swap";
    return out;
}

std::vector<AblationRun> run_ablation(const TrainConfig& base, const Dataset& dataset, const AblationPlan& plan,
                                      const std::function<void(const AblationRun&)>& on_run) {
    struct Setting {
        DecoderVariant variant;
        SupervisionMode mode;
        bool swap;
    };
    std::vector<Setting> settings;
    for (auto mode : plan.modes) settings.push_back({DecoderVariant::full, mode, false});
    for (auto variant : plan.variants)
        if (variant != DecoderVariant::full) settings.push_back({variant, SupervisionMode::uniform, false});
    if (plan.include_mask_swap) settings.push_back({DecoderVariant::full, SupervisionMode::uniform, true});

    std::vector<AblationRun> runs;
    for (auto seed : plan.seeds)
        for (const auto& s : settings) {
            TrainConfig config = base;
            config.seed = seed;
            config.model.variant = s.variant;
            config.model.mask_source_swap = s.swap;
            config.supervision_mode = s.mode;
            const TrainResult r = train(config, dataset);
            AblationRun run{s.variant, s.mode, s.swap, seed, r.best_eval.combined.aggregate};
            if (on_run) on_run(run);
            runs.push_back(run);
        }
    return runs;
}

void write_ablation_csv(const std::filesystem::path& path, const std::vector<AblationRun>& runs) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot write " + path.string());
    std::map<std::uint64_t, ImageMetrics> reference;
    for (const auto& r : runs)
        if (r.variant == DecoderVariant::full && r.mode == SupervisionMode::uniform && !r.mask_source_swap)
            reference[r.seed] = r.test;

    out << "label,seed,mdice,miou,mae,delta_mdice,delta_miou\n";
    std::vector<std::string> labels;
    std::map<std::string, std::vector<const AblationRun*>> grouped;
    for (const auto& r : runs) {
        if (!grouped.contains(r.label())) labels.push_back(r.label());
        grouped[r.label()].push_back(&r);
        const auto ref = reference.find(r.seed);
        out << r.label() << ',' << r.seed << ',' << format_double(r.test.dice) << ',' << format_double(r.test.iou)
            << ',' << format_double(r.test.mae) << ','
            << (ref == reference.end() ? "" : format_double(r.test.dice - ref->second.dice)) << ','
            << (ref == reference.end() ? "" : format_double(r.test.iou - ref->second.iou)) << '\n';
    }
    for (const auto& label : labels) {
        ImageMetrics mean{};
        double d_dice = 0.0, d_iou = 0.0;
        std::size_t with_ref = 0;
        const auto& group = grouped[label];
        for (const AblationRun* r : group) {
            mean.dice += r->test.dice;
            mean.iou += r->test.iou;
            mean.mae += r->test.mae;
            if (const auto ref = reference.find(r->seed); ref != reference.end()) {
                d_dice += r->test.dice - ref->second.dice;
                d_iou += r->test.iou - ref->second.iou;
                ++with_ref;
            }
        }
        const double n = static_cast<double>(group.size());
        out << label << ",mean," << format_double(mean.dice / n) << ',' << format_double(mean.iou / n) << ','
            << format_double(mean.mae / n) << ','
            << (with_ref ? format_double(d_dice / static_cast<double>(with_ref)) : "") << ','
            << (with_ref ? format_double(d_iou / static_cast<double>(with_ref)) : "") << '\n';
    }
}

} // namespace ds2net
