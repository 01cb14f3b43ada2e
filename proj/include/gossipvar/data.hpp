#pragma once

// MNIST IDX ingestion, symmetric-Dirichlet label distributions, batch sampling.

#include <Eigen/Dense>
#include <zlib.h>

#include <array>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "gossipvar/errors.hpp"
#include "gossipvar/nn.hpp"
#include "gossipvar/rng.hpp"

namespace gossipvar {

inline constexpr std::uint32_t kIdxImageMagic = 0x00000803;
inline constexpr std::uint32_t kIdxLabelMagic = 0x00000801;
inline constexpr int kNumLabels = 10;

/// Images as rows scaled to [0,1], integer labels in [0,10).
class Dataset {
public:
    Dataset() = default;

    Dataset(Eigen::MatrixXd images, std::vector<int> labels, std::size_t rows = 28, std::size_t cols = 28)
        : images_(std::move(images)), labels_(std::move(labels)), rows_(rows), cols_(cols) {
        if (static_cast<std::size_t>(images_.rows()) != labels_.size())
            throw ShapeError("dataset: " + std::to_string(images_.rows()) + " images but " +
                             std::to_string(labels_.size()) + " labels");
        if (static_cast<std::size_t>(images_.cols()) != rows_ * cols_)
            throw ShapeError("dataset: image width does not match rows*cols");
        by_label_.assign(kNumLabels, {});
        for (std::size_t i = 0; i < labels_.size(); ++i) {
            const int y = labels_[i];
            if (y < 0 || y >= kNumLabels) throw ShapeError("dataset: label " + std::to_string(y) + " out of range");
            by_label_[static_cast<std::size_t>(y)].push_back(i);
        }
    }

    const Eigen::MatrixXd& images() const { return images_; }
    const std::vector<int>& labels() const { return labels_; }
    std::size_t size() const { return labels_.size(); }
    bool empty() const { return labels_.empty(); }
    std::size_t image_rows() const { return rows_; }
    std::size_t image_cols() const { return cols_; }
    const std::vector<std::size_t>& indices_of(int label) const { return by_label_.at(static_cast<std::size_t>(label)); }

    /// First `n` samples (or all, if fewer).
    Dataset head(std::size_t n) const {
        n = std::min(n, size());
        return Dataset(images_.topRows(static_cast<Eigen::Index>(n)),
                       std::vector<int>(labels_.begin(), labels_.begin() + static_cast<std::ptrdiff_t>(n)), rows_,
                       cols_);
    }

    Dataset gather(const std::vector<std::size_t>& idx) const {
        Eigen::MatrixXd im(static_cast<Eigen::Index>(idx.size()), images_.cols());
        std::vector<int> lb(idx.size());
        for (std::size_t i = 0; i < idx.size(); ++i) {
            im.row(static_cast<Eigen::Index>(i)) = images_.row(static_cast<Eigen::Index>(idx[i]));
            lb[i] = labels_[idx[i]];
        }
        return Dataset(std::move(im), std::move(lb), rows_, cols_);
    }

private:
    Eigen::MatrixXd images_;
    std::vector<int> labels_;
    std::size_t rows_ = 28;
    std::size_t cols_ = 28;
    std::vector<std::vector<std::size_t>> by_label_ = std::vector<std::vector<std::size_t>>(kNumLabels);
};

inline double evaluate(const ModelWeights& model, const Dataset& data) {
    return evaluate(model, data.images(), data.labels());
}

namespace detail {

inline bool ends_with_gz(const std::filesystem::path& p) { return p.extension() == ".gz"; }

/// Whole file contents, transparently gunzipped for ".gz" paths.
inline std::vector<unsigned char> read_file_bytes(const std::filesystem::path& path) {
    if (!std::filesystem::exists(path)) throw ParseError("file not found: " + path.string());
    std::vector<unsigned char> out;
    if (ends_with_gz(path)) {
        gzFile f = gzopen(path.string().c_str(), "rb");
        if (!f) throw ParseError("cannot open " + path.string());
        std::array<unsigned char, 1 << 16> buf{};
        int n = 0;
        while ((n = gzread(f, buf.data(), static_cast<unsigned>(buf.size()))) > 0) out.insert(out.end(), buf.data(), buf.data() + n);
        const bool failed = n < 0;
        gzclose(f);
        if (failed) throw ParseError("gzip decode error in " + path.string());
    } else {
        std::ifstream in(path, std::ios::binary);
        if (!in) throw ParseError("cannot open " + path.string());
        out.assign(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
    }
    return out;
}

inline void write_file_bytes(const std::filesystem::path& path, const std::vector<unsigned char>& bytes) {
    if (ends_with_gz(path)) {
        gzFile f = gzopen(path.string().c_str(), "wb");
        if (!f) throw std::runtime_error("cannot write " + path.string());
        const int n = gzwrite(f, bytes.data(), static_cast<unsigned>(bytes.size()));
        gzclose(f);
        if (n != static_cast<int>(bytes.size())) throw std::runtime_error("gzip write failed for " + path.string());
    } else {
        std::ofstream out(path, std::ios::binary);
        if (!out) throw std::runtime_error("cannot write " + path.string());
        out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    }
}

inline std::uint32_t read_be32(const std::vector<unsigned char>& b, std::size_t off) {
    return (std::uint32_t{b[off]} << 24) | (std::uint32_t{b[off + 1]} << 16) | (std::uint32_t{b[off + 2]} << 8) |
           std::uint32_t{b[off + 3]};
}

inline void put_be32(std::vector<unsigned char>& b, std::uint32_t v) {
    b.push_back(static_cast<unsigned char>(v >> 24));
    b.push_back(static_cast<unsigned char>(v >> 16));
    b.push_back(static_cast<unsigned char>(v >> 8));
    b.push_back(static_cast<unsigned char>(v));
}

}  // namespace detail

/// Parses a big-endian IDX image/label pair. Pixel bytes are divided by 255.
inline Dataset load_idx(const std::filesystem::path& images_path, const std::filesystem::path& labels_path) {
    const auto img = detail::read_file_bytes(images_path);
    const auto lab = detail::read_file_bytes(labels_path);

    if (img.size() < 16) throw ParseError(images_path.string() + ": truncated header");
    if (const auto magic = detail::read_be32(img, 0); magic != kIdxImageMagic)
        throw ParseError(images_path.string() + ": bad image magic " + std::to_string(magic) + " (want 2051)");
    const std::size_t count = detail::read_be32(img, 4);
    const std::size_t rows = detail::read_be32(img, 8);
    const std::size_t cols = detail::read_be32(img, 12);
    if (img.size() != 16 + count * rows * cols)
        throw ParseError(images_path.string() + ": expected " + std::to_string(16 + count * rows * cols) +
                         " bytes, found " + std::to_string(img.size()));

    if (lab.size() < 8) throw ParseError(labels_path.string() + ": truncated header");
    if (const auto magic = detail::read_be32(lab, 0); magic != kIdxLabelMagic)
        throw ParseError(labels_path.string() + ": bad label magic " + std::to_string(magic) + " (want 2049)");
    const std::size_t lcount = detail::read_be32(lab, 4);
    if (lab.size() != 8 + lcount)
        throw ParseError(labels_path.string() + ": expected " + std::to_string(8 + lcount) + " bytes, found " +
                         std::to_string(lab.size()));
    if (lcount != count)
        throw ParseError("image count " + std::to_string(count) + " != label count " + std::to_string(lcount));

    const std::size_t px = rows * cols;
    Eigen::MatrixXd images(static_cast<Eigen::Index>(count), static_cast<Eigen::Index>(px));
    for (std::size_t i = 0; i < count; ++i)
        for (std::size_t j = 0; j < px; ++j)
            images(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = img[16 + i * px + j] / 255.0;
    std::vector<int> labels(count);
    for (std::size_t i = 0; i < count; ++i) {
        labels[i] = lab[8 + i];
        if (labels[i] >= kNumLabels) throw ParseError(labels_path.string() + ": label value " + std::to_string(labels[i]));
    }
    return Dataset(std::move(images), std::move(labels), rows, cols);
}

/// Inverse of load_idx. Pixels are re-quantized with round(v * 255).
inline void write_idx(const Dataset& data, const std::filesystem::path& images_path,
                      const std::filesystem::path& labels_path) {
    std::vector<unsigned char> img;
    img.reserve(16 + data.size() * static_cast<std::size_t>(data.images().cols()));
    detail::put_be32(img, kIdxImageMagic);
    detail::put_be32(img, static_cast<std::uint32_t>(data.size()));
    detail::put_be32(img, static_cast<std::uint32_t>(data.image_rows()));
    detail::put_be32(img, static_cast<std::uint32_t>(data.image_cols()));
    for (Eigen::Index i = 0; i < data.images().rows(); ++i)
        for (Eigen::Index j = 0; j < data.images().cols(); ++j)
            img.push_back(static_cast<unsigned char>(std::lround(std::clamp(data.images()(i, j), 0.0, 1.0) * 255.0)));
    std::vector<unsigned char> lab;
    detail::put_be32(lab, kIdxLabelMagic);
    detail::put_be32(lab, static_cast<std::uint32_t>(data.size()));
    for (int y : data.labels()) lab.push_back(static_cast<unsigned char>(y));
    detail::write_file_bytes(images_path, img);
    detail::write_file_bytes(labels_path, lab);
}

struct NodeDistribution {
    std::vector<double> probs;
};

/// One Dirichlet(alpha,...,alpha) draw per node from normalized Gamma(alpha,1)
/// samples. Node i uses its own substream, so the result for node i does not
/// depend on n_nodes.
inline std::vector<NodeDistribution> dirichlet_partition(double alpha, std::size_t n_nodes, std::size_t n_labels,
                                                         std::uint64_t seed) {
    if (!(alpha > 0)) throw ConfigError("dirichlet alpha must be > 0");
    if (n_labels == 0) throw ConfigError("dirichlet needs at least one label");
    std::vector<NodeDistribution> out(n_nodes);
    for (std::size_t node = 0; node < n_nodes; ++node) {
        Rng rng = substream(seed, node, "dirichlet");
        std::gamma_distribution<double> gamma(alpha, 1.0);
        std::vector<double> p(n_labels);
        double sum = 0.0;
        for (auto& v : p) {
            v = gamma(rng);
            sum += v;
        }
        if (sum > 0.0) {
            for (auto& v : p) v /= sum;
        } else {
            // Every gamma draw underflowed (tiny alpha): the limit is a one-hot.
            std::fill(p.begin(), p.end(), 0.0);
            p[std::uniform_int_distribution<std::size_t>(0, n_labels - 1)(rng)] = 1.0;
        }
        out[node].probs = std::move(p);
    }
    return out;
}

struct Batch {
    Eigen::MatrixXd inputs;
    std::vector<int> labels;
};

/// IID when `dist` is empty: uniform with replacement. Otherwise each label is
/// drawn from `dist` (restricted to labels present in the data) and the sample
/// is chosen uniformly among that label's examples.
inline Batch sample_batch(const Dataset& data, const std::optional<NodeDistribution>& dist, std::size_t batch_size,
                          Rng& rng) {
    if (data.empty()) throw std::invalid_argument("sample_batch: empty dataset");
    std::vector<std::size_t> picks(batch_size);
    if (!dist) {
        std::uniform_int_distribution<std::size_t> u(0, data.size() - 1);
        for (auto& i : picks) i = u(rng);
    } else {
        std::vector<double> w(kNumLabels, 0.0);
        double mass = 0.0;
        for (int y = 0; y < kNumLabels && static_cast<std::size_t>(y) < dist->probs.size(); ++y) {
            if (!data.indices_of(y).empty()) w[static_cast<std::size_t>(y)] = dist->probs[static_cast<std::size_t>(y)];
            mass += w[static_cast<std::size_t>(y)];
        }
        if (!(mass > 0)) throw std::invalid_argument("sample_batch: no probability mass on labels present in dataset");
        std::discrete_distribution<int> pick_label(w.begin(), w.end());
        for (auto& i : picks) {
            const auto& pool = data.indices_of(pick_label(rng));
            i = pool[std::uniform_int_distribution<std::size_t>(0, pool.size() - 1)(rng)];
        }
    }
    Batch b{Eigen::MatrixXd(static_cast<Eigen::Index>(batch_size), data.images().cols()), std::vector<int>(batch_size)};
    for (std::size_t r = 0; r < batch_size; ++r) {
        b.inputs.row(static_cast<Eigen::Index>(r)) = data.images().row(static_cast<Eigen::Index>(picks[r]));
        b.labels[r] = data.labels()[picks[r]];
    }
    return b;
}

/// Fixed evaluation set of `n` samples drawn like a training batch.
inline Dataset holdout_for(const Dataset& data, const std::optional<NodeDistribution>& dist, std::size_t n, Rng& rng) {
    Batch b = sample_batch(data, dist, n, rng);
    return Dataset(std::move(b.inputs), std::move(b.labels), data.image_rows(), data.image_cols());
}

}  // namespace gossipvar
