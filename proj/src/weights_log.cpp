#include "ds2net/weights_log.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <sstream>
#include <stdexcept>

#include "ds2net/format.hpp"
#include "ds2net/metrics.hpp"

namespace ds2net {

namespace {

double parse_number(const std::string& cell, const std::string& where) {
    std::size_t used = 0;
    double v = 0;
    try {
        v = std::stod(cell, &used);
    } catch (const std::exception&) {
        used = 0;
    }
    if (used == 0 || used != cell.size()) throw std::runtime_error(where + ": bad number '" + cell + "'");
    return v;
}

} // namespace

std::vector<WeightRow> read_weights_csv(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open " + path.string());
    std::string line;
    if (!std::getline(in, line) || line != "epoch,signal,provenance,u,u_bar,lambda,mdice")
        throw std::runtime_error(path.string() + ": unexpected header");
    std::vector<WeightRow> rows;
    for (std::size_t n = 2; std::getline(in, line); ++n) {
        if (line.empty()) continue;
        std::vector<std::string> cells;
        std::stringstream ss(line);
        for (std::string c; std::getline(ss, c, ',');) cells.push_back(c);
        const std::string where = path.string() + ":" + std::to_string(n);
        if (cells.size() != 7) throw std::runtime_error(where + ": expected 7 fields");
        WeightRow r;
        r.epoch = static_cast<std::size_t>(parse_number(cells[0], where));
        r.signal = static_cast<std::size_t>(parse_number(cells[1], where));
        r.provenance = cells[2];
        r.u = parse_number(cells[3], where);
        r.u_bar = parse_number(cells[4], where);
        r.lambda = parse_number(cells[5], where);
        r.mdice = parse_number(cells[6], where);
        rows.push_back(r);
    }
    return rows;
}

std::vector<WeightEpoch> group_by_epoch(const std::vector<WeightRow>& rows) {
    std::vector<WeightEpoch> out;
    for (const auto& r : rows) {
        if (out.empty() || out.back().epoch != r.epoch) {
            if (!out.empty() && r.epoch < out.back().epoch) throw std::runtime_error("weights log: epochs out of order");
            out.push_back({r.epoch, {}, {}, {}});
        }
        WeightEpoch& e = out.back();
        if (r.signal != e.provenance.size() + 1)
            throw std::runtime_error("weights log: epoch " + std::to_string(r.epoch) + " signal " +
                                     std::to_string(r.signal) + " out of order");
        e.provenance.push_back(r.provenance);
        e.weights.u.push_back(r.u);
        e.weights.u_bar.push_back(r.u_bar);
        e.weights.lambda.push_back(r.lambda);
        e.mdice.push_back(r.mdice);
    }
    return out;
}

std::vector<std::string> check_weight_log(const std::vector<WeightEpoch>& epochs, SupervisionMode mode) {
    std::vector<std::string> bad;
    auto fail = [&](std::size_t epoch, const std::string& what) {
        bad.push_back("epoch " + std::to_string(epoch) + ": " + what);
    };
    for (const auto& e : epochs) {
        const auto& w = e.weights;
        if (!epochs.empty() && e.provenance != epochs.front().provenance) fail(e.epoch, "signal layout changed");
        bool in_range = true;
        for (std::size_t i = 0; i < w.u.size(); ++i) {
            if (!(w.u[i] >= 0.0 && w.u[i] <= 1.0)) {
                fail(e.epoch, e.provenance[i] + " u=" + format_double(w.u[i]) + " outside [0,1]");
                in_range = false;
            }
            if (!(e.mdice[i] >= 0.0 && e.mdice[i] <= 1.0)) fail(e.epoch, e.provenance[i] + " mdice outside [0,1]");
        }
        if (!in_range) continue;

        const double total = std::accumulate(w.u_bar.begin(), w.u_bar.end(), 0.0);
        if (std::abs(total - 1.0) > 1e-12) fail(e.epoch, "u_bar sums to " + format_double(total));
        const WeightVector expect = supervision_weights(w.u, mode);
        for (std::size_t i = 0; i < w.u.size(); ++i) {
            if (std::abs(expect.u_bar[i] - w.u_bar[i]) > 1e-12)
                fail(e.epoch, e.provenance[i] + " u_bar differs from softmax(u)");
            if (std::abs(expect.lambda[i] - w.lambda[i]) > 1e-12)
                fail(e.epoch, e.provenance[i] + " lambda differs from " + to_string(mode) + " weights of u");
        }
        if (mode == SupervisionMode::plus_max_scaling || mode == SupervisionMode::uniform) {
            const double top = *std::max_element(w.lambda.begin(), w.lambda.end());
            if (top != 1.0) fail(e.epoch, "max lambda is " + format_double(top) + ", not 1");
        }
        if (mode != SupervisionMode::uniform) {
            for (std::size_t i = 0; i < w.u.size(); ++i)
                for (std::size_t j = 0; j < w.u.size(); ++j)
                    if (w.u[i] < w.u[j] && !(w.lambda[i] < w.lambda[j]))
                        fail(e.epoch, "lambda order of " + e.provenance[i] + "/" + e.provenance[j] + " contradicts u");
        }
    }
    return bad;
}

std::size_t ranking_changes(const std::vector<WeightEpoch>& epochs, std::size_t max_epochs) {
    const std::size_t n = max_epochs == 0 ? epochs.size() : std::min(max_epochs, epochs.size());
    std::size_t changes = 0;
    std::vector<std::size_t> previous;
    for (std::size_t i = 0; i < n; ++i) {
        const auto& m = epochs[i].mdice;
        if (m.empty() || std::all_of(m.begin(), m.end(), [&](double v) { return v == m.front(); })) continue;
        const auto ranks = rank_signals(m);
        if (!previous.empty() && ranks != previous) ++changes;
        previous = ranks;
    }
    return changes;
}

} // namespace ds2net
