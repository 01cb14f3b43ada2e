#pragma once

// Model aggregation: plain mean, sample-weighted FedAvg, beta blend, random
// sparsification with sparse merge, and variance-corrected averaging.

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <random>
#include <span>
#include <string>
#include <variant>
#include <vector>

#include "gossipvar/errors.hpp"
#include "gossipvar/nn.hpp"
#include "gossipvar/rng.hpp"

namespace gossipvar {

enum class AveragingStrategy { plain, variance_corrected };

inline std::string to_string(AveragingStrategy s) {
    return s == AveragingStrategy::plain ? "plain" : "variance_corrected";
}

inline AveragingStrategy averaging_strategy_from_string(const std::string& s) {
    if (s == "plain") return AveragingStrategy::plain;
    if (s == "variance_corrected") return AveragingStrategy::variance_corrected;
    throw ConfigError("unknown averaging strategy '" + s + "'");
}

struct AveragingConfig {
    AveragingStrategy strategy = AveragingStrategy::plain;
    double beta = 0.5;
    double compression_ratio = 1.0;
    bool fedavg_weighted = false;
    bool post_blend_correction = false;

    void validate() const {
        if (!(beta >= 0 && beta <= 1)) throw ConfigError("beta must be in [0, 1]");
        if (!(compression_ratio > 0 && compression_ratio <= 1)) throw ConfigError("compression_ratio must be in (0, 1]");
    }

    bool operator==(const AveragingConfig&) const = default;
};

/// Per layer, flat indices address the weight matrix (column-major, n_out*n_in
/// entries) followed by the bias vector.
struct SparseLayer {
    std::vector<std::uint32_t> indices;
    std::vector<double> values;
};

struct SparseModel {
    Architecture architecture;
    std::vector<SparseLayer> layers;
};

using ModelPayload = std::variant<ModelWeights, SparseModel>;

struct BufferEntry {
    ModelPayload model;
    std::size_t sender = 0;
    std::size_t samples = 1;
};

/// Bounded multiset of received models.
class ModelBuffer {
public:
    explicit ModelBuffer(std::size_t capacity = 1) : capacity_(capacity) {}

    std::size_t capacity() const { return capacity_; }
    void set_capacity(std::size_t c) { capacity_ = c; }
    std::size_t size() const { return entries_.size(); }
    bool empty() const { return entries_.empty(); }
    bool full() const { return entries_.size() >= capacity_; }
    const std::vector<BufferEntry>& entries() const { return entries_; }
    void clear() { entries_.clear(); }

    void push(ModelWeights m, std::size_t sender = 0, std::size_t samples = 1) {
        push(BufferEntry{std::move(m), sender, samples});
    }
    void push(BufferEntry e) {
        if (full()) throw std::logic_error("ModelBuffer: push into a full buffer");
        entries_.push_back(std::move(e));
    }

    bool all_dense() const {
        return std::all_of(entries_.begin(), entries_.end(),
                           [](const BufferEntry& e) { return std::holds_alternative<ModelWeights>(e.model); });
    }

    std::vector<ModelWeights> dense_models() const {
        std::vector<ModelWeights> out;
        out.reserve(entries_.size());
        for (const auto& e : entries_) {
            if (!std::holds_alternative<ModelWeights>(e.model))
                throw std::invalid_argument("ModelBuffer: sparse entry where a dense model is required");
            out.push_back(std::get<ModelWeights>(e.model));
        }
        return out;
    }

private:
    std::size_t capacity_;
    std::vector<BufferEntry> entries_;
};

/// Population variance over every entry of a weight matrix (biases excluded).
inline double weight_variance(const Eigen::MatrixXd& w) {
    const auto n = static_cast<double>(w.size());
    if (n == 0) return 0.0;
    const double mean = w.mean();
    return (w.array() - mean).square().sum() / n;
}

inline std::vector<double> layer_variances(const ModelWeights& m) {
    std::vector<double> v;
    v.reserve(m.layers.size());
    for (const auto& l : m.layers) v.push_back(weight_variance(l.weights));
    return v;
}

namespace detail {

inline void require_common_architecture(std::span<const ModelWeights> models, const char* context) {
    if (models.empty()) throw std::invalid_argument(std::string(context) + ": empty buffer");
    for (const auto& m : models.subspan(1)) require_same_architecture(models.front(), m, context);
}

}  // namespace detail

inline ModelWeights plain_average(std::span<const ModelWeights> models) {
    detail::require_common_architecture(models, "plain_average");
    ModelWeights out = models.front();
    for (const auto& m : models.subspan(1))
        for (std::size_t l = 0; l < out.layers.size(); ++l) {
            out.layers[l].weights += m.layers[l].weights;
            out.layers[l].bias += m.layers[l].bias;
        }
    const auto n = static_cast<double>(models.size());
    for (auto& l : out.layers) {
        l.weights /= n;
        l.bias /= n;
    }
    return out;
}

inline ModelWeights plain_average(const ModelBuffer& buffer) {
    const auto models = buffer.dense_models();
    return plain_average(std::span<const ModelWeights>(models));
}

/// Convex combination with coefficients n_k / sum(n).
inline ModelWeights weighted_fedavg(std::span<const ModelWeights> models, std::span<const double> counts) {
    detail::require_common_architecture(models, "weighted_fedavg");
    if (counts.size() != models.size()) throw std::invalid_argument("weighted_fedavg: one count per model required");
    double total = 0.0;
    for (double c : counts) {
        if (!(c >= 0)) throw std::invalid_argument("weighted_fedavg: negative sample count");
        total += c;
    }
    if (!(total > 0)) throw std::invalid_argument("weighted_fedavg: total sample count is zero");
    ModelWeights out = ModelWeights::zeros(models.front().architecture());
    for (std::size_t k = 0; k < models.size(); ++k) {
        const double w = counts[k] / total;
        for (std::size_t l = 0; l < out.layers.size(); ++l) {
            out.layers[l].weights += w * models[k].layers[l].weights;
            out.layers[l].bias += w * models[k].layers[l].bias;
        }
    }
    return out;
}

inline ModelWeights weighted_fedavg(const ModelBuffer& buffer) {
    const auto models = buffer.dense_models();
    std::vector<double> counts;
    for (const auto& e : buffer.entries()) counts.push_back(static_cast<double>(e.samples));
    return weighted_fedavg(models, counts);
}

/// beta * old + (1 - beta) * avg.
inline ModelWeights blend(const ModelWeights& old, const ModelWeights& avg, double beta) {
    if (!(beta >= 0 && beta <= 1)) throw ConfigError("blend: beta must be in [0, 1]");
    require_same_architecture(old, avg, "blend");
    ModelWeights out = old;
    for (std::size_t l = 0; l < out.layers.size(); ++l) {
        out.layers[l].weights = beta * old.layers[l].weights + (1.0 - beta) * avg.layers[l].weights;
        out.layers[l].bias = beta * old.layers[l].bias + (1.0 - beta) * avg.layers[l].bias;
    }
    return out;
}

struct AveragingDiagnostics {
    std::vector<std::string> warnings;
};

inline constexpr double kDegenerateStdDev = 1e-12;

/// Rescales each layer's weights about their mean so the layer variance equals
/// `targets[l]`. Layers whose standard deviation is below 1e-12 are left alone.
inline void rescale_to_variance(ModelWeights& model, std::span<const double> targets,
                                AveragingDiagnostics* diag = nullptr) {
    if (targets.size() != model.layers.size()) throw ShapeError("rescale_to_variance: one target per layer required");
    for (std::size_t l = 0; l < model.layers.size(); ++l) {
        auto& w = model.layers[l].weights;
        const double current = std::sqrt(weight_variance(w));
        if (current < kDegenerateStdDev) {
            if (diag)
                diag->warnings.push_back("layer '" + model.layers[l].spec.name +
                                         "': averaged weights have ~zero variance, rescale skipped");
            continue;
        }
        const double mean = w.mean();
        const double scale = std::sqrt(targets[l]) / current;
        w = ((w.array() - mean) * scale + mean).matrix();
    }
}

/// Mean of the per-layer weight variances of the inputs.
inline std::vector<double> mean_layer_variances(std::span<const ModelWeights> models) {
    detail::require_common_architecture(models, "mean_layer_variances");
    std::vector<double> target(models.front().layers.size(), 0.0);
    for (const auto& m : models)
        for (std::size_t l = 0; l < target.size(); ++l) target[l] += weight_variance(m.layers[l].weights);
    for (auto& t : target) t /= static_cast<double>(models.size());
    return target;
}

/// Plain average rescaled per layer to the mean input variance. Layer means are
/// preserved and biases are averaged without rescaling.
inline ModelWeights variance_corrected_average(std::span<const ModelWeights> models,
                                               AveragingDiagnostics* diag = nullptr) {
    ModelWeights avg = plain_average(models);
    const auto target = mean_layer_variances(models);
    rescale_to_variance(avg, target, diag);
    return avg;
}

inline ModelWeights variance_corrected_average(const ModelBuffer& buffer, AveragingDiagnostics* diag = nullptr) {
    const auto models = buffer.dense_models();
    return variance_corrected_average(std::span<const ModelWeights>(models), diag);
}

inline std::size_t compressed_count(std::size_t count, double ratio) {
    const auto k = static_cast<std::size_t>(std::llround(ratio * static_cast<double>(count)));
    return std::clamp<std::size_t>(k, 1, count);
}

/// Uniformly random subset of round(ratio * count) coordinates per layer
/// (at least one), drawn without replacement. Indices come out sorted.
inline SparseModel compress_sample(const ModelWeights& model, double ratio, Rng& rng) {
    if (!(ratio > 0 && ratio <= 1)) throw ConfigError("compression ratio must be in (0, 1]");
    SparseModel out{model.architecture(), {}};
    out.layers.reserve(model.layers.size());
    for (const auto& layer : model.layers) {
        const auto nw = static_cast<std::size_t>(layer.weights.size());
        const std::size_t total = nw + static_cast<std::size_t>(layer.bias.size());
        const std::size_t k = compressed_count(total, ratio);
        SparseLayer sl;
        sl.indices.reserve(k);
        if (k == total) {
            sl.indices.resize(total);
            std::iota(sl.indices.begin(), sl.indices.end(), 0U);
        } else {
            // Selection sampling (Knuth's algorithm S): one pass, sorted output.
            std::size_t needed = k;
            for (std::size_t i = 0; i < total && needed > 0; ++i) {
                const std::size_t remaining = total - i;
                if (std::uniform_int_distribution<std::size_t>(0, remaining - 1)(rng) < needed) {
                    sl.indices.push_back(static_cast<std::uint32_t>(i));
                    --needed;
                }
            }
        }
        sl.values.reserve(k);
        for (auto idx : sl.indices)
            sl.values.push_back(idx < nw ? layer.weights.data()[idx] : layer.bias(static_cast<Eigen::Index>(idx - nw)));
        out.layers.push_back(std::move(sl));
    }
    return out;
}

/// Full-coverage sparse view of a dense model.
inline SparseModel to_sparse(const ModelWeights& model) {
    SparseModel out{model.architecture(), {}};
    for (const auto& layer : model.layers) {
        SparseLayer sl;
        const auto nw = static_cast<std::size_t>(layer.weights.size());
        const std::size_t total = nw + static_cast<std::size_t>(layer.bias.size());
        for (std::size_t i = 0; i < total; ++i) {
            sl.indices.push_back(static_cast<std::uint32_t>(i));
            sl.values.push_back(i < nw ? layer.weights.data()[i] : layer.bias(static_cast<Eigen::Index>(i - nw)));
        }
        out.layers.push_back(std::move(sl));
    }
    return out;
}

/// Per coordinate: mean over the models that sent it; untouched coordinates keep `base`.
inline ModelWeights merge_sparse(std::span<const SparseModel> models, const ModelWeights& base) {
    const Architecture arch = base.architecture();
    ModelWeights sum = ModelWeights::zeros(arch);
    ModelWeights hits = ModelWeights::zeros(arch);
    for (const auto& sm : models) {
        if (sm.architecture != arch || sm.layers.size() != arch.size())
            throw ShapeError("merge_sparse: architecture mismatch");
        for (std::size_t l = 0; l < arch.size(); ++l) {
            const auto& sl = sm.layers[l];
            if (sl.indices.size() != sl.values.size()) throw ShapeError("merge_sparse: index/value length mismatch");
            auto& s = sum.layers[l];
            auto& h = hits.layers[l];
            const auto nw = static_cast<std::size_t>(s.weights.size());
            const std::size_t total = nw + static_cast<std::size_t>(s.bias.size());
            for (std::size_t j = 0; j < sl.indices.size(); ++j) {
                const std::size_t idx = sl.indices[j];
                if (idx >= total)
                    throw ShapeError("merge_sparse: index " + std::to_string(idx) + " outside layer '" + arch[l].name +
                                     "' of size " + std::to_string(total));
                if (idx < nw) {
                    s.weights.data()[idx] += sl.values[j];
                    h.weights.data()[idx] += 1.0;
                } else {
                    s.bias(static_cast<Eigen::Index>(idx - nw)) += sl.values[j];
                    h.bias(static_cast<Eigen::Index>(idx - nw)) += 1.0;
                }
            }
        }
    }
    ModelWeights out = base;
    for (std::size_t l = 0; l < arch.size(); ++l) {
        auto& o = out.layers[l];
        const auto& s = sum.layers[l];
        const auto& h = hits.layers[l];
        o.weights = (h.weights.array() > 0).select(s.weights.array() / h.weights.array().max(1.0), o.weights.array());
        o.bias = (h.bias.array() > 0).select(s.bias.array() / h.bias.array().max(1.0), o.bias.array());
    }
    return out;
}

/// Estimated per-layer weight variance of each sparse model from the weight
/// coordinates it carries, averaged across models.
inline std::vector<double> mean_sparse_layer_variances(std::span<const SparseModel> models) {
    if (models.empty()) throw std::invalid_argument("mean_sparse_layer_variances: empty buffer");
    const auto& arch = models.front().architecture;
    std::vector<double> target(arch.size(), 0.0);
    for (std::size_t l = 0; l < arch.size(); ++l) {
        const std::size_t nw = arch[l].n_in * arch[l].n_out;
        std::size_t contributors = 0;
        for (const auto& sm : models) {
            double s = 0, s2 = 0;
            std::size_t n = 0;
            const auto& sl = sm.layers[l];
            for (std::size_t j = 0; j < sl.indices.size(); ++j)
                if (sl.indices[j] < nw) {
                    s += sl.values[j];
                    s2 += sl.values[j] * sl.values[j];
                    ++n;
                }
            if (n < 2) continue;
            const double mean = s / static_cast<double>(n);
            target[l] += std::max(0.0, s2 / static_cast<double>(n) - mean * mean);
            ++contributors;
        }
        if (contributors > 0) target[l] /= static_cast<double>(contributors);
    }
    return target;
}

/// The Average step of a buffer under `cfg`: dense buffers go through plain,
/// weighted or variance-corrected averaging; any sparse entry routes the whole
/// buffer through merge_sparse against `base`.
inline ModelWeights average_buffer(const ModelBuffer& buffer, const ModelWeights& base, const AveragingConfig& cfg,
                                   AveragingDiagnostics* diag = nullptr) {
    if (buffer.empty()) throw std::invalid_argument("average_buffer: empty buffer");
    if (buffer.all_dense()) {
        const auto models = buffer.dense_models();
        if (cfg.strategy == AveragingStrategy::variance_corrected) {
            if (cfg.fedavg_weighted) {
                std::vector<double> counts;
                for (const auto& e : buffer.entries()) counts.push_back(static_cast<double>(e.samples));
                ModelWeights avg = weighted_fedavg(models, counts);
                rescale_to_variance(avg, mean_layer_variances(models), diag);
                return avg;
            }
            return variance_corrected_average(std::span<const ModelWeights>(models), diag);
        }
        return cfg.fedavg_weighted ? weighted_fedavg(buffer) : plain_average(std::span<const ModelWeights>(models));
    }
    std::vector<SparseModel> sparse;
    for (const auto& e : buffer.entries())
        sparse.push_back(std::holds_alternative<SparseModel>(e.model) ? std::get<SparseModel>(e.model)
                                                                      : to_sparse(std::get<ModelWeights>(e.model)));
    ModelWeights merged = merge_sparse(sparse, base);
    if (cfg.strategy == AveragingStrategy::variance_corrected)
        rescale_to_variance(merged, mean_sparse_layer_variances(sparse), diag);
    return merged;
}

}  // namespace gossipvar
