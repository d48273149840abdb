#include "ds2net/gradsuite.hpp"

#include <numeric>
#include <string>

#include "ds2net/model.hpp"
#include "ds2net/ops.hpp"
#include "ds2net/random.hpp"
#include "ds2net/supervision.hpp"

namespace ds2net {

namespace {

struct Case {
    std::string name;
    std::vector<Tensor> inputs;
    LossBuilder build;
    bool graph = false;
};

class Draw {
public:
    explicit Draw(std::uint64_t seed) : rng_(seed) {}

    std::size_t in(std::size_t lo, std::size_t hi) { return lo + rng_.below(hi - lo + 1); }

    Tensor tensor(Shape s, double scale = 1.0) {
        Tensor t(std::move(s));
        for (double& v : t.data()) v = rng_.uniform(-scale, scale);
        return t;
    }

    Tensor mask(Shape s) {
        Tensor t(std::move(s));
        for (double& v : t.data()) v = rng_.uniform() < 0.4 ? 1.0 : 0.0;
        return t;
    }

    Rng& rng() { return rng_; }

private:
    Rng rng_;
};

// Contracts an output with fixed random coefficients so every element matters.
LossBuilder probed(Tensor coeff, std::function<Var(const std::vector<Var>&)> f) {
    return [coeff = std::move(coeff), f = std::move(f)](Tape& tape, const std::vector<Var>& v) {
        return sum(mul(f(v), tape.constant(coeff)));
    };
}

std::vector<Case> op_cases(Draw& d) {
    std::vector<Case> cases;
    const std::size_t n = d.in(1, 2), c = d.in(1, 4), h = d.in(2, 6), w = d.in(2, 6);
    const Shape x{n, c, h, w}, one{n, 1, h, w};
    auto add_case = [&](std::string name, std::vector<Tensor> in, Shape out, std::function<Var(const std::vector<Var>&)> f) {
        cases.push_back({std::move(name), std::move(in), probed(d.tensor(out), std::move(f))});
    };

    const std::size_t k = d.in(1, 3), stride = d.in(1, 2), pad = d.in(0, k / 2 + 1), co = d.in(1, 3);
    const std::size_t ho = (h + 2 * pad - k) / stride + 1, wo = (w + 2 * pad - k) / stride + 1;
    if (h + 2 * pad >= k && w + 2 * pad >= k)
        add_case("conv2d", {d.tensor(x), d.tensor({co, c, k, k}), d.tensor({co})}, {n, co, ho, wo},
                 [stride, pad](const auto& v) { return conv2d(v[0], v[1], v[2], stride, pad); });

    add_case("channel_max", {d.tensor(x)}, one, [](const auto& v) { return channel_max(v[0]); });
    add_case("channel_mean", {d.tensor(x)}, one, [](const auto& v) { return channel_mean(v[0]); });
    add_case("global_avg_pool", {d.tensor(x)}, {n, c, 1, 1}, [](const auto& v) { return global_avg_pool(v[0]); });
    const std::size_t window = 2 * d.in(0, 3) + 1;
    add_case("avg_pool_same", {d.tensor(x)}, x, [window](const auto& v) { return avg_pool_same(v[0], window); });
    const std::size_t uh = h + d.in(0, 5), uw = w + d.in(0, 5);
    add_case("upsample_bilinear", {d.tensor(x)}, {n, c, uh, uw},
             [uh, uw](const auto& v) { return upsample_bilinear(v[0], uh, uw); });
    add_case("add", {d.tensor(x), d.tensor(x)}, x, [](const auto& v) { return add(v[0], v[1]); });
    add_case("add_broadcast", {d.tensor(x), d.tensor(one)}, x, [](const auto& v) { return add(v[0], v[1]); });
    add_case("mul", {d.tensor(x), d.tensor(x)}, x, [](const auto& v) { return mul(v[0], v[1]); });
    add_case("mul_broadcast", {d.tensor(one), d.tensor(x)}, x, [](const auto& v) { return mul(v[0], v[1]); });
    add_case("scale_channels", {d.tensor(x), d.tensor({n, c, 1, 1})}, x,
             [](const auto& v) { return scale_channels(v[0], v[1]); });
    const std::size_t c2 = d.in(1, 3);
    add_case("concat_channels", {d.tensor(x), d.tensor({n, c2, h, w})}, {n, c + c2, h, w},
             [](const auto& v) { return concat_channels(v[0], v[1]); });
    add_case("relu", {d.tensor(x)}, x, [](const auto& v) { return relu(v[0]); });
    add_case("sigmoid", {d.tensor(x, 3.0)}, x, [](const auto& v) { return sigmoid(v[0]); });
    const std::size_t kc = 2 * d.in(0, 2) + 1, cc = d.in(1, 6);
    add_case("conv1d_channels", {d.tensor({n, cc, 1, 1}), d.tensor({kc})}, {n, cc, 1, 1},
             [](const auto& v) { return conv1d_channels(v[0], v[1]); });
    const double factor = d.rng().uniform(-2.0, 2.0);
    add_case("scale", {d.tensor(x)}, x, [factor](const auto& v) { return scale(v[0], factor); });
    return cases;
}

std::vector<Case> block_cases(Draw& d) {
    std::vector<Case> cases;
    const std::size_t n = d.in(1, 2), cl = d.in(1, 4), ch = d.in(1, 5), hh = d.in(2, 4);
    const std::size_t hl = 2 * hh, k = 2 * d.in(0, 2) + 1;
    const bool swap = d.rng().below(2) == 1;

    std::vector<Tensor> dem{d.tensor({n, cl, hl, hl}), d.tensor({n, ch, hh, hh})};
    for (Shape s : {Shape{1, 1, k, k}, Shape{1}, Shape{1, 1, k, k}, Shape{1}, Shape{cl, ch + cl, 1, 1}, Shape{cl},
                    Shape{cl, cl, 3, 3}, Shape{cl}})
        dem.push_back(d.tensor(s, 0.6));
    cases.push_back({"dem_block", std::move(dem), probed(d.tensor({n, cl, hl, hl}), [swap](const auto& v) {
                         return dem_forward(v[0], v[1], {{v[2], v[3]}, {v[4], v[5]}, {v[6], v[7]}, {v[8], v[9]}},
                                            swap);
                     }),
                     true});

    std::vector<Tensor> sem{d.tensor({n, cl, hl, hl}), d.tensor({n, ch, hh, hh}), d.tensor({cl, ch, 1, 1}, 0.6),
                            d.tensor({cl}, 0.2), d.tensor({1, 2, 7, 7}, 0.3), d.tensor({1}, 0.2), d.tensor({3}, 0.6)};
    cases.push_back({"sem_block", std::move(sem), probed(d.tensor({n, cl, hl, hl}), [swap](const auto& v) {
                         return sem_forward(v[0], v[1], {{v[2], v[3]}, {v[4], v[5]}, v[6]}, swap);
                     }),
                     true});

    // Weighted IoU + BCE over several signals with detached weights.
    const std::size_t signals = d.in(2, 6), size = d.in(4, 9);
    const Tensor mask = d.mask({n, 1, size, size});
    const Tensor weights = pixel_weight_map(mask);
    std::vector<Tensor> logits;
    for (std::size_t i = 0; i < signals; ++i) logits.push_back(d.tensor({n, 1, size, size}, 3.0));
    std::vector<double> u;
    for (const auto& z : logits) u.push_back(uncertainty(sigmoid(z)));
    const auto lambda = supervision_weights(u, SupervisionMode::plus_max_scaling).lambda;
    cases.push_back({"total_loss", std::move(logits),
                     [mask, weights, lambda](Tape&, const std::vector<Var>& v) {
                         Var total = scale(add(weighted_iou(v[0], mask, weights), weighted_bce(v[0], mask, weights)),
                                           lambda[0]);
                         for (std::size_t i = 1; i < v.size(); ++i)
                             total = add(total, scale(add(weighted_iou(v[i], mask, weights),
                                                          weighted_bce(v[i], mask, weights)),
                                                      lambda[i]));
                         return total;
                     },
                     true});
    return cases;
}

GradCheckResult model_case(Draw& d, std::size_t index, const GradSuiteOptions& options) {
    ModelConfig config;
    config.stage_channels = {d.in(2, 4), d.in(5, 6), d.in(7, 8), d.in(9, 10)};
    config.input_size = 32;
    config.seed = d.rng().next_u64();
    config.mask_source_swap = d.rng().below(2) == 1;
    // Zero biases put ReLUs fed by zero padding exactly on their kink.
    ParameterSet init = init_parameters(config);
    for (auto& p : init)
        if (p.name.ends_with(".bias"))
            for (double& v : p.value.data()) v = d.rng().uniform(-0.1, 0.1);
    const Model model(config, init);
    const std::size_t n = d.in(1, 2);
    Tensor image({n, 1, 32, 32});
    for (double& v : image.data()) v = d.rng().uniform();
    Tensor mask({n, 1, 32, 32});
    const std::size_t r0 = d.in(4, 14), c0 = d.in(4, 14), side = d.in(6, 14);
    for (std::size_t b = 0; b < n; ++b)
        for (std::size_t h = r0; h < r0 + side; ++h)
            for (std::size_t w = c0; w < c0 + side; ++w) mask.at(b, 0, h, w) = 1.0;
    const Tensor weights = pixel_weight_map(mask);

    Tape ref;
    const auto lambda = total_loss(model.forward(ref, model.bind(ref, false), ref.constant(image)), mask, weights,
                                   SupervisionMode::plus_max_scaling)
                            .weights.lambda;

    std::vector<Tensor> params;
    for (const auto& p : model.parameters()) params.push_back(p.value);
    std::vector<std::size_t> order(params.size());
    std::iota(order.begin(), order.end(), 0);
    d.rng().shuffle(order.begin(), order.end());
    std::vector<bool> flags(params.size(), false);
    for (std::size_t i = 0; i < std::min(options.model_coordinates, params.size()); ++i) flags[order[i]] = true;

    GradCheckOptions opt;
    opt.tolerance = options.graph_tolerance;
    opt.coordinates_per_input = 1;
    opt.kink_redraws = 0;
    opt.seed = d.rng().next_u64();
    return check_gradients(
        "model#" + std::to_string(index), params, flags,
        [&](Tape& tape, const std::vector<Var>& bound) {
            const auto s = model.forward(tape, bound, tape.constant(image));
            Var total = scale(add(weighted_iou(s.logits[0], mask, weights), weighted_bce(s.logits[0], mask, weights)),
                              lambda[0]);
            for (std::size_t i = 1; i < s.size(); ++i)
                total = add(total, scale(add(weighted_iou(s.logits[i], mask, weights),
                                             weighted_bce(s.logits[i], mask, weights)),
                                         lambda[i]));
            return total;
        },
        opt);
}

} // namespace

std::vector<GradCheckResult> run_gradient_suite(const GradSuiteOptions& options) {
    std::vector<GradCheckResult> results;
    for (std::size_t i = 0; i < options.configurations; ++i) {
        Draw d(mix_seed(options.seed, i));
        auto cases = op_cases(d);
        for (auto& c : block_cases(d)) cases.push_back(std::move(c));
        for (const auto& c : cases) {
            GradCheckOptions opt;
            opt.tolerance = c.graph ? options.graph_tolerance : options.op_tolerance;
            opt.seed = mix_seed(options.seed, i + 1000);
            results.push_back(check_gradients(c.name + "#" + std::to_string(i), c.inputs, c.build, opt));
        }
        results.push_back(model_case(d, i, options));
    }
    return results;
}

} // namespace ds2net
