#pragma once

// Experiment configuration file: JSON with `//` and `/* */` comments allowed.
// See docs/config.md for the full key reference.

#include <json.hpp>

#include <cstdint>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "gossipvar/averaging.hpp"
#include "gossipvar/errors.hpp"
#include "gossipvar/nn.hpp"
#include "gossipvar/rng.hpp"
#include "gossipvar/simulator.hpp"

namespace gossipvar {

inline constexpr int kConfigVersion = 1;
inline constexpr const char* kDataRootEnv = "GOSSIPVAR_DATA_ROOT";

struct ModelConfig {
    std::vector<std::size_t> layer_sizes{784, 128, 10};
    std::vector<Activation> activations{Activation::relu, Activation::none};
    InitDistribution init = InitDistribution::uniform;

    Architecture architecture() const {
        if (layer_sizes.size() < 2) throw ConfigError("model.layer_sizes needs at least two entries");
        if (activations.size() != layer_sizes.size() - 1)
            throw ConfigError("model.activations needs one entry per layer (" + std::to_string(layer_sizes.size() - 1) +
                              ")");
        Architecture arch;
        for (std::size_t i = 0; i + 1 < layer_sizes.size(); ++i)
            arch.push_back({"fc" + std::to_string(i + 1), layer_sizes[i], layer_sizes[i + 1], activations[i]});
        validate_architecture(arch);
        return arch;
    }

    bool operator==(const ModelConfig&) const = default;
};

struct DataConfig {
    std::string train_images = "data/mnist/train-images-idx3-ubyte.gz";
    std::string train_labels = "data/mnist/train-labels-idx1-ubyte.gz";
    std::string test_images = "data/mnist/t10k-images-idx3-ubyte.gz";
    std::string test_labels = "data/mnist/t10k-labels-idx1-ubyte.gz";
    std::optional<double> alpha;  // empty: IID
    std::size_t train_subset = 10000;
    std::size_t test_subset = 2000;
    std::size_t holdout = 256;

    bool operator==(const DataConfig&) const = default;
};

struct ExperimentConfig {
    int config_version = kConfigVersion;
    SimMode mode = SimMode::gossip;
    TopologySpec topology;
    ModelConfig model;
    Hyperparams training;
    AcquisitionSchedule t_acquisition;
    std::size_t interval_ratio = 1;
    AveragingConfig averaging;
    DataConfig data;
    Tick max_ticks = 1000;
    Tick eval_interval = 10;
    std::uint64_t seed = 1;
    std::optional<Tick> global_broadcast_tick;
    std::size_t threads = 1;
    std::size_t smoothing_window = 5;
    std::string output_dir = "runs/latest";

    bool operator==(const ExperimentConfig&) const = default;

    SimConfig to_sim() const {
        SimConfig s;
        s.mode = mode;
        s.topology = topology;
        s.architecture = model.architecture();
        s.init = model.init;
        s.training = training;
        s.averaging = averaging;
        s.interval_ratio = interval_ratio;
        s.t_acquisition = t_acquisition;
        s.max_ticks = max_ticks;
        s.eval_interval = eval_interval;
        s.seed = seed;
        s.global_broadcast_tick = global_broadcast_tick;
        s.dirichlet_alpha = data.alpha;
        s.holdout_size = data.holdout;
        s.threads = threads;
        return s;
    }

    void validate() const {
        if (config_version != kConfigVersion)
            throw ConfigError("unsupported config_version " + std::to_string(config_version) + " (expected " +
                              std::to_string(kConfigVersion) + ")");
        if (topology.n == 0) throw ConfigError("topology.n must be positive");
        if (topology.kind == TopologyKind::regular || topology.kind == TopologyKind::temporal) {
            if (topology.n > 1 && (topology.k == 0 || topology.k >= topology.n))
                throw ConfigError("topology.k must satisfy 0 < k < n");
            if (topology.n > 1 && (topology.n * topology.k) % 2 != 0) throw ConfigError("topology: n*k must be even");
        }
        if (topology.kind == TopologyKind::star && mode == SimMode::gossip && topology.n < 2)
            throw ConfigError("star topology needs n >= 2");
        if (mode == SimMode::federated && topology.kind != TopologyKind::star)
            throw ConfigError("federated mode requires topology.kind = star");
        if (data.train_subset == 0 || data.test_subset == 0) throw ConfigError("data subsets must be positive");
        if (smoothing_window == 0) throw ConfigError("smoothing_window must be >= 1");
        to_sim().validate();
    }
};

namespace detail {

using nlohmann::json;

inline void reject_unknown(const json& obj, const std::set<std::string>& allowed, const std::string& where) {
    if (!obj.is_object()) throw ConfigError(where + " must be an object");
    for (const auto& [key, _] : obj.items())
        if (!allowed.count(key)) throw ConfigError("unknown key '" + key + "' in " + where);
}

template <class T>
void read(const json& obj, const char* key, T& out, const std::string& where) {
    if (!obj.contains(key)) return;
    try {
        out = obj.at(key).get<T>();
    } catch (const json::exception& e) {
        throw ConfigError(where + "." + key + ": " + e.what());
    }
}

template <class T>
void read_optional(const json& obj, const char* key, std::optional<T>& out, const std::string& where) {
    if (!obj.contains(key)) return;
    if (obj.at(key).is_null()) {
        out.reset();
        return;
    }
    T v{};
    read(obj, key, v, where);
    out = v;
}

template <class T>
json optional_json(const std::optional<T>& v) {
    return v ? json(*v) : json(nullptr);
}

}  // namespace detail

inline nlohmann::json to_json(const ExperimentConfig& c) {
    using nlohmann::json;
    json acts = json::array();
    for (auto a : c.model.activations) acts.push_back(to_string(a));
    json tacq = c.t_acquisition.fixed() ? json(c.t_acquisition.lo) : json::array({c.t_acquisition.lo, c.t_acquisition.hi});
    return json{
        {"config_version", c.config_version},
        {"mode", to_string(c.mode)},
        {"topology",
         {{"kind", to_string(c.topology.kind)},
          {"n", c.topology.n},
          {"k", c.topology.k},
          {"activation_threshold", c.topology.activation_threshold}}},
        {"model", {{"layer_sizes", c.model.layer_sizes}, {"activations", acts}, {"init", to_string(c.model.init)}}},
        {"training",
         {{"base_lr", c.training.base_lr},
          {"momentum", c.training.momentum},
          {"weight_decay", c.training.weight_decay},
          {"lr_gamma", c.training.lr_gamma},
          {"lr_power", c.training.lr_power},
          {"batch_size", c.training.batch_size}}},
        {"schedule", {{"t_acquisition", tacq}, {"r", c.interval_ratio}}},
        {"averaging",
         {{"strategy", to_string(c.averaging.strategy)},
          {"beta", c.averaging.beta},
          {"compression_ratio", c.averaging.compression_ratio},
          {"fedavg_weighted", c.averaging.fedavg_weighted},
          {"post_blend_correction", c.averaging.post_blend_correction}}},
        {"data",
         {{"train_images", c.data.train_images},
          {"train_labels", c.data.train_labels},
          {"test_images", c.data.test_images},
          {"test_labels", c.data.test_labels},
          {"alpha", detail::optional_json(c.data.alpha)},
          {"train_subset", c.data.train_subset},
          {"test_subset", c.data.test_subset},
          {"holdout", c.data.holdout}}},
        {"sim",
         {{"max_ticks", c.max_ticks},
          {"eval_interval", c.eval_interval},
          {"seed", c.seed},
          {"global_broadcast_tick", detail::optional_json(c.global_broadcast_tick)},
          {"threads", c.threads},
          {"smoothing_window", c.smoothing_window}}},
        {"output", {{"directory", c.output_dir}}},
    };
}

/// Missing keys keep their defaults; unknown keys are rejected.
inline ExperimentConfig config_from_json(const nlohmann::json& j) {
    using detail::read;
    using detail::read_optional;
    ExperimentConfig c;
    detail::reject_unknown(j, {"config_version", "mode", "topology", "model", "training", "schedule", "averaging", "data",
                               "sim", "output"},
                           "config");
    if (!j.contains("config_version")) throw ConfigError("config_version is required");
    read(j, "config_version", c.config_version, "config");
    std::string s;
    if (j.contains("mode")) {
        read(j, "mode", s, "config");
        c.mode = sim_mode_from_string(s);
    }
    if (j.contains("topology")) {
        const auto& t = j.at("topology");
        detail::reject_unknown(t, {"kind", "n", "k", "activation_threshold"}, "topology");
        if (t.contains("kind")) {
            read(t, "kind", s, "topology");
            c.topology.kind = topology_kind_from_string(s);
        }
        read(t, "n", c.topology.n, "topology");
        read(t, "k", c.topology.k, "topology");
        read(t, "activation_threshold", c.topology.activation_threshold, "topology");
    }
    if (j.contains("model")) {
        const auto& m = j.at("model");
        detail::reject_unknown(m, {"layer_sizes", "activations", "init"}, "model");
        read(m, "layer_sizes", c.model.layer_sizes, "model");
        if (m.contains("activations")) {
            std::vector<std::string> names;
            read(m, "activations", names, "model");
            c.model.activations.clear();
            for (const auto& a : names) c.model.activations.push_back(activation_from_string(a));
        } else if (c.model.layer_sizes.size() >= 2) {
            c.model.activations.assign(c.model.layer_sizes.size() - 1, Activation::relu);
            c.model.activations.back() = Activation::none;
        }
        if (m.contains("init")) {
            read(m, "init", s, "model");
            c.model.init = init_distribution_from_string(s);
        }
    }
    if (j.contains("training")) {
        const auto& t = j.at("training");
        detail::reject_unknown(t, {"base_lr", "momentum", "weight_decay", "lr_gamma", "lr_power", "batch_size"},
                               "training");
        read(t, "base_lr", c.training.base_lr, "training");
        read(t, "momentum", c.training.momentum, "training");
        read(t, "weight_decay", c.training.weight_decay, "training");
        read(t, "lr_gamma", c.training.lr_gamma, "training");
        read(t, "lr_power", c.training.lr_power, "training");
        read(t, "batch_size", c.training.batch_size, "training");
    }
    if (j.contains("schedule")) {
        const auto& t = j.at("schedule");
        detail::reject_unknown(t, {"t_acquisition", "r"}, "schedule");
        if (t.contains("t_acquisition")) {
            const auto& v = t.at("t_acquisition");
            if (v.is_number_integer()) {
                c.t_acquisition.lo = c.t_acquisition.hi = v.get<Tick>();
            } else if (v.is_array() && v.size() == 2 && v[0].is_number_integer() && v[1].is_number_integer()) {
                c.t_acquisition.lo = v[0].get<Tick>();
                c.t_acquisition.hi = v[1].get<Tick>();
            } else {
                throw ConfigError("schedule.t_acquisition must be an integer or [lo, hi]");
            }
        }
        read(t, "r", c.interval_ratio, "schedule");
    }
    if (j.contains("averaging")) {
        const auto& a = j.at("averaging");
        detail::reject_unknown(a, {"strategy", "beta", "compression_ratio", "fedavg_weighted", "post_blend_correction"},
                               "averaging");
        if (a.contains("strategy")) {
            read(a, "strategy", s, "averaging");
            c.averaging.strategy = averaging_strategy_from_string(s);
        }
        read(a, "beta", c.averaging.beta, "averaging");
        read(a, "compression_ratio", c.averaging.compression_ratio, "averaging");
        read(a, "fedavg_weighted", c.averaging.fedavg_weighted, "averaging");
        read(a, "post_blend_correction", c.averaging.post_blend_correction, "averaging");
    }
    if (j.contains("data")) {
        const auto& d = j.at("data");
        detail::reject_unknown(d, {"train_images", "train_labels", "test_images", "test_labels", "alpha", "iid",
                                   "train_subset", "test_subset", "holdout"},
                               "data");
        read(d, "train_images", c.data.train_images, "data");
        read(d, "train_labels", c.data.train_labels, "data");
        read(d, "test_images", c.data.test_images, "data");
        read(d, "test_labels", c.data.test_labels, "data");
        read_optional(d, "alpha", c.data.alpha, "data");
        if (d.contains("iid")) {
            bool iid = false;
            read(d, "iid", iid, "data");
            if (iid && c.data.alpha) throw ConfigError("data: set either iid=true or alpha, not both");
            if (!iid && !c.data.alpha) throw ConfigError("data: iid=false requires alpha");
        }
        read(d, "train_subset", c.data.train_subset, "data");
        read(d, "test_subset", c.data.test_subset, "data");
        read(d, "holdout", c.data.holdout, "data");
    }
    if (j.contains("sim")) {
        const auto& t = j.at("sim");
        detail::reject_unknown(t, {"max_ticks", "eval_interval", "seed", "global_broadcast_tick", "threads",
                                   "smoothing_window"},
                               "sim");
        read(t, "max_ticks", c.max_ticks, "sim");
        read(t, "eval_interval", c.eval_interval, "sim");
        read(t, "seed", c.seed, "sim");
        read_optional(t, "global_broadcast_tick", c.global_broadcast_tick, "sim");
        read(t, "threads", c.threads, "sim");
        read(t, "smoothing_window", c.smoothing_window, "sim");
    }
    if (j.contains("output")) {
        const auto& o = j.at("output");
        detail::reject_unknown(o, {"directory"}, "output");
        read(o, "directory", c.output_dir, "output");
    }
    c.validate();
    return c;
}

inline ExperimentConfig parse_config(const std::string& text) {
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(text, nullptr, true, /*ignore_comments=*/true);
    } catch (const nlohmann::json::parse_error& e) {
        throw ConfigError(std::string("config parse error: ") + e.what());
    }
    return config_from_json(j);
}

inline ExperimentConfig load_config(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot read config file " + path.string());
    std::stringstream ss;
    ss << in.rdbuf();
    return parse_config(ss.str());
}

/// Relative data paths resolve against $GOSSIPVAR_DATA_ROOT when set, else against `base`.
inline std::filesystem::path resolve_data_path(const std::string& p, const std::filesystem::path& base) {
    const std::filesystem::path path(p);
    if (path.is_absolute()) return path;
    if (const char* root = std::getenv(kDataRootEnv); root && *root) return std::filesystem::path(root) / path;
    return base / path;
}

/// 64-bit FNV-1a of the canonical JSON form, as 16 hex digits.
inline std::string config_digest(const ExperimentConfig& c) {
    const auto h = detail::fnv1a(to_json(c).dump());
    static constexpr char hex[] = "0123456789abcdef";
    std::string out(16, '0');
    for (int i = 0; i < 16; ++i) out[static_cast<std::size_t>(15 - i)] = hex[(h >> (4 * i)) & 0xF];
    return out;
}

}  // namespace gossipvar
