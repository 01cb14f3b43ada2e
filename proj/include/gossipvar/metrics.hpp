#pragma once

// Run metrics: ring weight differences, per-layer weight variance, plateau
// delay detection on the mean accuracy curve and 90%-accuracy timing.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "gossipvar/averaging.hpp"
#include "gossipvar/nn.hpp"

namespace gossipvar {

using Tick = std::int64_t;

struct AccuracyRow {
    Tick tick = 0;
    std::size_t node = 0;
    double accuracy = 0.0;
};

struct VarianceRow {
    Tick tick = 0;
    std::size_t node = 0;
    std::string layer;
    double variance = 0.0;
};

struct WeightDiffRow {
    Tick tick = 0;
    std::string layer;
    double diff = 0.0;
};

struct ServerAccuracyRow {
    Tick tick = 0;
    double accuracy = 0.0;
};

struct MetricsLog {
    std::vector<AccuracyRow> accuracy;
    std::vector<VarianceRow> variance;
    std::vector<WeightDiffRow> weight_diff;
    std::vector<ServerAccuracyRow> server_accuracy;  // federated runs only
    std::optional<Tick> t_first_average;
    std::string config_digest;
};

/// Accuracy of every node at each evaluation tick.
struct AccuracySeries {
    std::vector<Tick> ticks;
    std::vector<std::vector<double>> per_node;  // [tick index][node]

    std::vector<double> mean() const {
        std::vector<double> out;
        out.reserve(per_node.size());
        for (const auto& row : per_node) {
            double s = 0.0;
            for (double a : row) s += a;
            out.push_back(row.empty() ? 0.0 : s / static_cast<double>(row.size()));
        }
        return out;
    }
};

inline AccuracySeries accuracy_series(std::span<const AccuracyRow> rows) {
    std::map<Tick, std::map<std::size_t, double>> grouped;
    for (const auto& r : rows) grouped[r.tick][r.node] = r.accuracy;
    AccuracySeries s;
    for (const auto& [tick, nodes] : grouped) {
        s.ticks.push_back(tick);
        std::vector<double> row;
        row.reserve(nodes.size());
        for (const auto& [node, acc] : nodes) row.push_back(acc);
        s.per_node.push_back(std::move(row));
    }
    return s;
}

/// Per layer: (1/N) * sum over the ring of L1(model[(n+1) mod N] - model[n]),
/// taken over weight-matrix entries.
inline std::vector<double> model_weight_difference(std::span<const ModelWeights> models) {
    if (models.size() < 2) throw std::invalid_argument("model_weight_difference: need at least 2 models");
    for (const auto& m : models.subspan(1)) require_same_architecture(models.front(), m, "model_weight_difference");
    const std::size_t n = models.size();
    std::vector<double> out(models.front().layers.size(), 0.0);
    for (std::size_t l = 0; l < out.size(); ++l) {
        for (std::size_t i = 0; i < n; ++i)
            out[l] += (models[(i + 1) % n].layers[l].weights - models[i].layers[l].weights).cwiseAbs().sum();
        out[l] /= static_cast<double>(n);
    }
    return out;
}

/// Weight-matrix variance of every layer (same estimator as the averaging module).
inline std::vector<double> layer_variance(const ModelWeights& model) { return layer_variances(model); }

struct PlateauReport {
    Tick t_plateau_delay = 0;
    Tick t_first_average = 0;
    std::vector<Tick> profile_ticks;
    std::vector<double> derivative;  // of the smoothed series, one per profile tick
    bool degenerate = false;         // every candidate derivative equal
};

/// Centered moving average; the window shrinks symmetrically-by-truncation at the ends.
inline std::vector<double> moving_average(std::span<const double> v, std::size_t window) {
    if (window == 0) throw std::invalid_argument("moving_average: window must be >= 1");
    const std::size_t half = window / 2;
    std::vector<double> out(v.size());
    for (std::size_t i = 0; i < v.size(); ++i) {
        const std::size_t lo = i >= half ? i - half : 0;
        const std::size_t hi = std::min(v.size() - 1, i + half);
        double s = 0.0;
        for (std::size_t j = lo; j <= hi; ++j) s += v[j];
        out[i] = s / static_cast<double>(hi - lo + 1);
    }
    return out;
}

/// Central differences (one-sided at the ends).
inline std::vector<double> finite_derivative(std::span<const Tick> ticks, std::span<const double> v) {
    const std::size_t n = v.size();
    std::vector<double> d(n, 0.0);
    if (n < 2) return d;
    for (std::size_t i = 0; i < n; ++i) {
        const std::size_t lo = i == 0 ? 0 : i - 1;
        const std::size_t hi = i + 1 == n ? n - 1 : i + 1;
        d[i] = (v[hi] - v[lo]) / static_cast<double>(ticks[hi] - ticks[lo]);
    }
    return d;
}

/// Earliest tick strictly after `t_first_average` at which the smoothed mean
/// accuracy rises fastest.
inline PlateauReport plateau_delay(std::span<const Tick> ticks, std::span<const double> mean_accuracy,
                                   Tick t_first_average, std::size_t window = 5) {
    if (ticks.size() != mean_accuracy.size())
        throw std::invalid_argument("plateau_delay: ticks and values differ in length");
    for (std::size_t i = 1; i < ticks.size(); ++i)
        if (ticks[i] <= ticks[i - 1]) throw std::invalid_argument("plateau_delay: ticks must increase");
    const auto after = static_cast<std::size_t>(
        std::count_if(ticks.begin(), ticks.end(), [&](Tick t) { return t > t_first_average; }));
    if (after < 3)
        throw std::invalid_argument("plateau_delay: need at least 3 samples after t_first_average, have " +
                                    std::to_string(after));

    const auto smooth = moving_average(mean_accuracy, window);
    const auto deriv = finite_derivative(ticks, smooth);

    PlateauReport rep;
    rep.t_first_average = t_first_average;
    std::optional<std::size_t> best;
    bool all_equal = true;
    for (std::size_t i = 0; i < ticks.size(); ++i) {
        if (ticks[i] <= t_first_average) continue;
        rep.profile_ticks.push_back(ticks[i]);
        rep.derivative.push_back(deriv[i]);
        if (!best) {
            best = i;
        } else {
            if (deriv[i] != deriv[*best]) all_equal = false;
            if (deriv[i] > deriv[*best]) best = i;
        }
    }
    rep.t_plateau_delay = ticks[*best];
    rep.degenerate = all_equal;
    return rep;
}

struct Reach90 {
    std::optional<Tick> first;  // some node >= threshold
    std::optional<Tick> most;   // strictly more than `fraction` of nodes >= threshold
};

inline Reach90 reach_90(const AccuracySeries& series, double threshold = 0.9, double fraction = 0.9) {
    if (series.ticks.empty()) throw std::invalid_argument("reach_90: empty series");
    Reach90 r;
    for (std::size_t i = 0; i < series.ticks.size(); ++i) {
        const auto& row = series.per_node[i];
        const auto hits = static_cast<double>(std::count_if(row.begin(), row.end(), [&](double a) { return a >= threshold; }));
        if (!r.first && hits > 0) r.first = series.ticks[i];
        if (!r.most && !row.empty() && hits > fraction * static_cast<double>(row.size())) r.most = series.ticks[i];
        if (r.first && r.most) break;
    }
    return r;
}

/// First tick at which a single accuracy trajectory reaches `threshold`.
inline std::optional<Tick> first_crossing(std::span<const Tick> ticks, std::span<const double> acc,
                                          double threshold = 0.9) {
    for (std::size_t i = 0; i < ticks.size(); ++i)
        if (acc[i] >= threshold) return ticks[i];
    return std::nullopt;
}

}  // namespace gossipvar
