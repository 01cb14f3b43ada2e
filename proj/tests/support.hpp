#pragma once

#include <filesystem>
#include <fstream>
#include <random>
#include <sstream>
#include <string>

#include "gossipvar/data.hpp"
#include "gossipvar/nn.hpp"
#include "gossipvar/rng.hpp"

namespace testing_support {

inline std::filesystem::path source_dir() { return GOSSIPVAR_SOURCE_DIR; }
inline std::filesystem::path mnist_dir() { return source_dir() / "data" / "mnist"; }

/// Fresh scratch directory under the build tree, emptied on creation.
inline std::filesystem::path scratch_dir(const std::string& name) {
    auto p = std::filesystem::path(GOSSIPVAR_BINARY_DIR) / "scratch" / name;
    std::filesystem::remove_all(p);
    std::filesystem::create_directories(p);
    return p;
}

inline std::string slurp(const std::filesystem::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

/// Ten well-separated prototypes plus noise, `per_class` samples each, in
/// interleaved label order. Width 16 (a 4x4 "image").
inline gossipvar::Dataset toy_dataset(std::size_t per_class, std::uint64_t seed = 7) {
    constexpr int w = 16;
    gossipvar::Rng rng(seed);
    std::normal_distribution<double> noise(0.0, 0.1);
    Eigen::MatrixXd protos = Eigen::MatrixXd::Zero(10, w);
    for (int c = 0; c < 10; ++c) {
        protos(c, c) = 1.0;
        protos(c, (c + 3) % w) = 0.5;
        protos(c, 10 + c % 6) = 0.8;
    }
    const std::size_t n = per_class * 10;
    Eigen::MatrixXd images(static_cast<Eigen::Index>(n), w);
    std::vector<int> labels(n);
    for (std::size_t i = 0; i < n; ++i) {
        const int c = static_cast<int>(i % 10);
        labels[i] = c;
        for (int j = 0; j < w; ++j) images(static_cast<Eigen::Index>(i), j) = protos(c, j) + noise(rng);
    }
    return gossipvar::Dataset(std::move(images), std::move(labels), 4, 4);
}

inline gossipvar::ModelWeights random_model(const gossipvar::Architecture& arch, std::uint64_t seed) {
    gossipvar::Rng rng(seed);
    auto m = gossipvar::xavier_init(arch, gossipvar::InitDistribution::normal, rng);
    std::normal_distribution<double> g(0.0, 0.3);
    for (auto& l : m.layers)
        for (Eigen::Index i = 0; i < l.bias.size(); ++i) l.bias(i) = g(rng);
    return m;
}

inline double max_abs_diff(const gossipvar::ModelWeights& a, const gossipvar::ModelWeights& b) {
    double d = 0.0;
    for (std::size_t l = 0; l < a.layers.size(); ++l) {
        d = std::max(d, (a.layers[l].weights - b.layers[l].weights).cwiseAbs().maxCoeff());
        d = std::max(d, (a.layers[l].bias - b.layers[l].bias).cwiseAbs().maxCoeff());
    }
    return d;
}

/// Flat parameter access in the compression index order (column-major weights, then bias).
inline double& param(gossipvar::ModelWeights& m, std::size_t layer, std::size_t k) {
    auto& l = m.layers[layer];
    const auto nw = static_cast<std::size_t>(l.weights.size());
    return k < nw ? l.weights.data()[k] : l.bias.data()[k - nw];
}

}  // namespace testing_support
