#pragma once

// Dense feedforward network: Xavier initialization, softmax cross-entropy
// backpropagation, momentum SGD with an inverse learning-rate policy.

#include <Eigen/Dense>

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <random>
#include <set>
#include <span>
#include <string>
#include <vector>

#include "gossipvar/errors.hpp"
#include "gossipvar/rng.hpp"

namespace gossipvar {

enum class Activation { relu, tanh, none };
enum class InitDistribution { uniform, normal };

inline std::string to_string(Activation a) {
    switch (a) {
        case Activation::relu: return "relu";
        case Activation::tanh: return "tanh";
        case Activation::none: return "none";
    }
    return "none";
}

inline Activation activation_from_string(const std::string& s) {
    if (s == "relu") return Activation::relu;
    if (s == "tanh") return Activation::tanh;
    if (s == "none") return Activation::none;
    throw ConfigError("unknown activation '" + s + "'");
}

inline std::string to_string(InitDistribution d) {
    return d == InitDistribution::uniform ? "uniform" : "normal";
}

inline InitDistribution init_distribution_from_string(const std::string& s) {
    if (s == "uniform") return InitDistribution::uniform;
    if (s == "normal") return InitDistribution::normal;
    throw ConfigError("unknown init distribution '" + s + "'");
}

struct LayerSpec {
    std::string name;
    std::size_t n_in = 0;
    std::size_t n_out = 0;
    Activation activation = Activation::none;

    bool operator==(const LayerSpec&) const = default;
};

using Architecture = std::vector<LayerSpec>;

/// Checks fan chaining, unique names and that `none` only appears on the last layer.
inline void validate_architecture(const Architecture& arch) {
    if (arch.empty()) throw ConfigError("architecture has no layers");
    std::set<std::string> names;
    for (std::size_t i = 0; i < arch.size(); ++i) {
        const auto& l = arch[i];
        if (l.n_in == 0 || l.n_out == 0)
            throw ConfigError("layer '" + l.name + "' has a zero fan");
        if (!names.insert(l.name).second)
            throw ConfigError("duplicate layer name '" + l.name + "'");
        if (i + 1 < arch.size()) {
            if (l.n_out != arch[i + 1].n_in)
                throw ConfigError("layer '" + l.name + "' n_out=" + std::to_string(l.n_out) +
                                  " does not match next layer n_in=" + std::to_string(arch[i + 1].n_in));
            if (l.activation == Activation::none)
                throw ConfigError("hidden layer '" + l.name + "' needs an activation");
        }
    }
}

/// MLP over `sizes` (input width first). Layers are named fc1, fc2, ...
inline Architecture make_mlp(std::span<const std::size_t> sizes, Activation hidden = Activation::relu) {
    if (sizes.size() < 2) throw ConfigError("an MLP needs at least input and output sizes");
    Architecture arch;
    for (std::size_t i = 0; i + 1 < sizes.size(); ++i) {
        const bool last = i + 2 == sizes.size();
        arch.push_back({"fc" + std::to_string(i + 1), sizes[i], sizes[i + 1],
                        last ? Activation::none : hidden});
    }
    validate_architecture(arch);
    return arch;
}

struct Layer {
    LayerSpec spec;
    Eigen::MatrixXd weights;  // n_out x n_in
    Eigen::VectorXd bias;     // n_out
};

struct ModelWeights {
    std::vector<Layer> layers;

    static ModelWeights zeros(const Architecture& arch) {
        ModelWeights m;
        m.layers.reserve(arch.size());
        for (const auto& spec : arch)
            m.layers.push_back({spec,
                                Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(spec.n_out),
                                                      static_cast<Eigen::Index>(spec.n_in)),
                                Eigen::VectorXd::Zero(static_cast<Eigen::Index>(spec.n_out))});
        return m;
    }

    Architecture architecture() const {
        Architecture arch;
        arch.reserve(layers.size());
        for (const auto& l : layers) arch.push_back(l.spec);
        return arch;
    }

    bool same_architecture(const ModelWeights& other) const {
        if (layers.size() != other.layers.size()) return false;
        for (std::size_t i = 0; i < layers.size(); ++i)
            if (!(layers[i].spec == other.layers[i].spec)) return false;
        return true;
    }

    std::size_t parameter_count() const {
        std::size_t n = 0;
        for (const auto& l : layers) n += static_cast<std::size_t>(l.weights.size() + l.bias.size());
        return n;
    }

    bool all_finite() const {
        for (const auto& l : layers)
            if (!l.weights.allFinite() || !l.bias.allFinite()) return false;
        return true;
    }

    bool operator==(const ModelWeights& other) const {
        if (!same_architecture(other)) return false;
        for (std::size_t i = 0; i < layers.size(); ++i)
            if (layers[i].weights != other.layers[i].weights || layers[i].bias != other.layers[i].bias)
                return false;
        return true;
    }
};

inline void require_same_architecture(const ModelWeights& a, const ModelWeights& b, const char* context) {
    if (!a.same_architecture(b)) throw ShapeError(std::string(context) + ": architecture mismatch");
}

struct Hyperparams {
    double base_lr = 0.01;
    double momentum = 0.9;
    double weight_decay = 0.0005;
    double lr_gamma = 0.0001;
    double lr_power = 0.75;
    std::size_t batch_size = 64;

    void validate() const {
        if (!(base_lr > 0)) throw ConfigError("base_lr must be > 0");
        if (!(momentum >= 0 && momentum < 1)) throw ConfigError("momentum must be in [0, 1)");
        if (!(weight_decay >= 0)) throw ConfigError("weight_decay must be >= 0");
        if (!(lr_gamma >= 0)) throw ConfigError("lr_gamma must be >= 0");
        if (batch_size == 0) throw ConfigError("batch_size must be positive");
    }

    /// Inverse policy: base_lr * (1 + gamma * t)^-power.
    double learning_rate(std::uint64_t iteration) const {
        return base_lr * std::pow(1.0 + lr_gamma * static_cast<double>(iteration), -lr_power);
    }

    bool operator==(const Hyperparams&) const = default;
};

struct OptimizerState {
    ModelWeights velocity;
    std::uint64_t iteration = 0;

    static OptimizerState for_model(const ModelWeights& m) { return {ModelWeights::zeros(m.architecture()), 0}; }
};

inline double xavier_variance(std::size_t n_in, std::size_t n_out) {
    return 2.0 / static_cast<double>(n_in + n_out);
}

inline double xavier_uniform_bound(std::size_t n_in, std::size_t n_out) {
    return std::sqrt(6.0 / static_cast<double>(n_in + n_out));
}

/// Weights drawn i.i.d. per layer with variance 2/(n_in+n_out); biases zero.
inline ModelWeights xavier_init(const Architecture& arch, InitDistribution dist, Rng& rng) {
    validate_architecture(arch);
    ModelWeights m = ModelWeights::zeros(arch);
    for (auto& layer : m.layers) {
        const auto n_in = layer.spec.n_in;
        const auto n_out = layer.spec.n_out;
        if (dist == InitDistribution::uniform) {
            const double a = xavier_uniform_bound(n_in, n_out);
            std::uniform_real_distribution<double> u(-a, a);
            for (Eigen::Index i = 0; i < layer.weights.size(); ++i) layer.weights.data()[i] = u(rng);
        } else {
            std::normal_distribution<double> g(0.0, std::sqrt(xavier_variance(n_in, n_out)));
            for (Eigen::Index i = 0; i < layer.weights.size(); ++i) layer.weights.data()[i] = g(rng);
        }
    }
    return m;
}

namespace detail {

inline void apply_activation(Eigen::MatrixXd& z, Activation a) {
    switch (a) {
        case Activation::relu: z = z.cwiseMax(0.0); break;
        case Activation::tanh: z = z.array().tanh().matrix(); break;
        case Activation::none: break;
    }
}

/// Multiplies `grad` in place by the activation derivative, given the activation output.
inline void apply_activation_grad(Eigen::MatrixXd& grad, const Eigen::MatrixXd& out, Activation a) {
    switch (a) {
        case Activation::relu: grad = (out.array() > 0.0).select(grad, 0.0); break;
        case Activation::tanh: grad.array() *= 1.0 - out.array().square(); break;
        case Activation::none: break;
    }
}

inline void check_input(const ModelWeights& model, const Eigen::MatrixXd& batch) {
    if (model.layers.empty()) throw ShapeError("forward: model has no layers");
    if (static_cast<std::size_t>(batch.cols()) != model.layers.front().spec.n_in)
        throw ShapeError("forward: batch width " + std::to_string(batch.cols()) + " != n_in " +
                         std::to_string(model.layers.front().spec.n_in));
}

/// Activations of every layer, input included at index 0.
inline std::vector<Eigen::MatrixXd> forward_trace(const ModelWeights& model, const Eigen::MatrixXd& batch) {
    check_input(model, batch);
    std::vector<Eigen::MatrixXd> acts;
    acts.reserve(model.layers.size() + 1);
    acts.push_back(batch);
    for (const auto& layer : model.layers) {
        Eigen::MatrixXd z = acts.back() * layer.weights.transpose();
        z.rowwise() += layer.bias.transpose();
        apply_activation(z, layer.spec.activation);
        acts.push_back(std::move(z));
    }
    return acts;
}

inline Eigen::MatrixXd softmax_rows(const Eigen::MatrixXd& logits) {
    Eigen::MatrixXd p = logits;
    for (Eigen::Index r = 0; r < p.rows(); ++r) {
        const double mx = p.row(r).maxCoeff();
        p.row(r) = (p.row(r).array() - mx).exp().matrix();
        p.row(r) /= p.row(r).sum();
    }
    return p;
}

inline void check_labels(const ModelWeights& model, const Eigen::MatrixXd& batch, std::span<const int> labels) {
    if (static_cast<std::size_t>(batch.rows()) != labels.size())
        throw ShapeError("labels count " + std::to_string(labels.size()) + " != batch rows " +
                         std::to_string(batch.rows()));
    const auto classes = static_cast<int>(model.layers.back().spec.n_out);
    for (int y : labels)
        if (y < 0 || y >= classes)
            throw ShapeError("label " + std::to_string(y) + " outside [0, " + std::to_string(classes) + ")");
}

}  // namespace detail

/// Logits for each row of `batch` (rows are samples).
inline Eigen::MatrixXd forward(const ModelWeights& model, const Eigen::MatrixXd& batch) {
    return std::move(detail::forward_trace(model, batch).back());
}

/// Mean softmax cross-entropy over the batch.
inline double cross_entropy(const ModelWeights& model, const Eigen::MatrixXd& batch, std::span<const int> labels) {
    detail::check_input(model, batch);
    detail::check_labels(model, batch, labels);
    const Eigen::MatrixXd logits = forward(model, batch);
    double loss = 0.0;
    for (Eigen::Index r = 0; r < logits.rows(); ++r) {
        const double mx = logits.row(r).maxCoeff();
        const double lse = mx + std::log((logits.row(r).array() - mx).exp().sum());
        loss += lse - logits(r, labels[static_cast<std::size_t>(r)]);
    }
    return loss / static_cast<double>(logits.rows());
}

/// Gradient of the mean cross-entropy with respect to every weight and bias.
inline ModelWeights backward(const ModelWeights& model, const Eigen::MatrixXd& batch, std::span<const int> labels) {
    detail::check_input(model, batch);
    detail::check_labels(model, batch, labels);
    const auto acts = detail::forward_trace(model, batch);
    const auto n = static_cast<double>(batch.rows());

    Eigen::MatrixXd delta = detail::softmax_rows(acts.back());
    for (Eigen::Index r = 0; r < delta.rows(); ++r) delta(r, labels[static_cast<std::size_t>(r)]) -= 1.0;
    delta /= n;

    ModelWeights grads = ModelWeights::zeros(model.architecture());
    for (std::size_t li = model.layers.size(); li-- > 0;) {
        const auto& layer = model.layers[li];
        detail::apply_activation_grad(delta, acts[li + 1], layer.spec.activation);
        grads.layers[li].weights.noalias() = delta.transpose() * acts[li];
        grads.layers[li].bias = delta.colwise().sum().transpose();
        if (li > 0) {
            Eigen::MatrixXd upstream = delta * layer.weights;
            delta = std::move(upstream);
        }
    }
    return grads;
}

/// velocity = momentum*velocity - lr(t)*(grad + decay*w); w += velocity.
inline void sgd_step(ModelWeights& model, const ModelWeights& grads, OptimizerState& opt, const Hyperparams& hp) {
    require_same_architecture(model, grads, "sgd_step");
    require_same_architecture(model, opt.velocity, "sgd_step");
    if (!grads.all_finite()) throw NumericError("sgd_step: non-finite gradient");
    const double lr = hp.learning_rate(opt.iteration);
    for (std::size_t i = 0; i < model.layers.size(); ++i) {
        auto& w = model.layers[i];
        auto& v = opt.velocity.layers[i];
        const auto& g = grads.layers[i];
        v.weights = hp.momentum * v.weights - lr * (g.weights + hp.weight_decay * w.weights);
        v.bias = hp.momentum * v.bias - lr * (g.bias + hp.weight_decay * w.bias);
        w.weights += v.weights;
        w.bias += v.bias;
    }
    ++opt.iteration;
}

/// Index of the largest entry; ties go to the lowest index.
inline int argmax(const Eigen::Ref<const Eigen::RowVectorXd>& row) {
    int best = 0;
    for (Eigen::Index c = 1; c < row.size(); ++c)
        if (row(c) > row(best)) best = static_cast<int>(c);
    return best;
}

/// Fraction of rows whose argmax logit equals the label.
inline double evaluate(const ModelWeights& model, const Eigen::MatrixXd& inputs, std::span<const int> labels) {
    if (inputs.rows() == 0) throw std::invalid_argument("evaluate: empty dataset");
    detail::check_labels(model, inputs, labels);
    constexpr Eigen::Index chunk = 512;
    std::size_t correct = 0;
    for (Eigen::Index start = 0; start < inputs.rows(); start += chunk) {
        const Eigen::Index rows = std::min(chunk, inputs.rows() - start);
        const Eigen::MatrixXd logits = forward(model, inputs.middleRows(start, rows));
        for (Eigen::Index r = 0; r < rows; ++r)
            if (argmax(logits.row(r)) == labels[static_cast<std::size_t>(start + r)]) ++correct;
    }
    return static_cast<double>(correct) / static_cast<double>(inputs.rows());
}

}  // namespace gossipvar
