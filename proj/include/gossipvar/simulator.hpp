#pragma once

// Tick-driven simulation of gossip learning and federated averaging.
//
// Each tick runs in fixed phases: training of every due node, sends, then
// receives (buffering and averaging) in ascending node order, then metrics.
// Training and evaluation may run on several threads; all cross-node state
// changes happen in the serialized receive phase, and every node draws from
// its own random substreams, so results do not depend on the thread count.

#include <algorithm>
#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <thread>
#include <variant>
#include <vector>

#include "gossipvar/averaging.hpp"
#include "gossipvar/data.hpp"
#include "gossipvar/errors.hpp"
#include "gossipvar/metrics.hpp"
#include "gossipvar/nn.hpp"
#include "gossipvar/rng.hpp"
#include "gossipvar/topology.hpp"

namespace gossipvar {

enum class SimMode { gossip, federated };
enum class TopologyKind { regular, star, temporal, complete };

inline std::string to_string(SimMode m) { return m == SimMode::gossip ? "gossip" : "federated"; }

inline SimMode sim_mode_from_string(const std::string& s) {
    if (s == "gossip") return SimMode::gossip;
    if (s == "federated") return SimMode::federated;
    throw ConfigError("unknown mode '" + s + "'");
}

inline std::string to_string(TopologyKind k) {
    switch (k) {
        case TopologyKind::regular: return "regular";
        case TopologyKind::star: return "star";
        case TopologyKind::temporal: return "temporal";
        case TopologyKind::complete: return "complete";
    }
    return "regular";
}

inline TopologyKind topology_kind_from_string(const std::string& s) {
    if (s == "regular") return TopologyKind::regular;
    if (s == "star") return TopologyKind::star;
    if (s == "temporal") return TopologyKind::temporal;
    if (s == "complete") return TopologyKind::complete;
    throw ConfigError("unknown topology kind '" + s + "'");
}

struct TopologySpec {
    TopologyKind kind = TopologyKind::regular;
    std::size_t n = 50;
    std::size_t k = 8;  // degree of the (baseline) regular graph
    double activation_threshold = 0.8;

    bool operator==(const TopologySpec&) const = default;
};

/// Training interval: fixed when lo == hi, otherwise drawn once per node from {lo..hi}.
struct AcquisitionSchedule {
    Tick lo = 10;
    Tick hi = 10;

    bool fixed() const { return lo == hi; }
    bool operator==(const AcquisitionSchedule&) const = default;
};

struct SimConfig {
    SimMode mode = SimMode::gossip;
    TopologySpec topology;
    Architecture architecture;
    InitDistribution init = InitDistribution::uniform;
    Hyperparams training;
    AveragingConfig averaging;
    std::size_t interval_ratio = 1;  // R
    AcquisitionSchedule t_acquisition;
    Tick max_ticks = 1000;
    Tick eval_interval = 10;
    std::uint64_t seed = 1;
    std::optional<Tick> global_broadcast_tick;
    std::optional<double> dirichlet_alpha;  // empty: IID sampling
    std::size_t holdout_size = 256;         // temporal gate evaluation set per node
    std::size_t threads = 1;
    bool record_variance = true;
    bool record_weight_diff = true;
    bool identical_node_streams = false;  // every node uses node 0's random streams

    void validate() const {
        validate_architecture(architecture);
        training.validate();
        averaging.validate();
        if (interval_ratio == 0) throw ConfigError("R must be a positive integer");
        if (t_acquisition.lo < 1 || t_acquisition.hi < t_acquisition.lo)
            throw ConfigError("T_acquisition must satisfy 1 <= lo <= hi");
        if (max_ticks < 1) throw ConfigError("max_ticks must be >= 1");
        if (eval_interval < 1) throw ConfigError("eval_interval must be >= 1");
        if (global_broadcast_tick && *global_broadcast_tick < 0) throw ConfigError("global_broadcast_tick must be >= 0");
        if (dirichlet_alpha && !(*dirichlet_alpha > 0)) throw ConfigError("dirichlet alpha must be > 0");
        if (threads == 0) throw ConfigError("threads must be >= 1");
        if (mode == SimMode::federated) {
            if (!t_acquisition.fixed()) throw ConfigError("federated rounds need a fixed T_acquisition");
            if (global_broadcast_tick) throw ConfigError("global_broadcast_tick applies to gossip mode only");
        }
        if (topology.kind == TopologyKind::temporal && holdout_size == 0)
            throw ConfigError("temporal topology needs a non-empty holdout");
    }
};

enum class EventKind { average, broadcast, activate, warning, round };

inline std::string to_string(EventKind k) {
    switch (k) {
        case EventKind::average: return "average";
        case EventKind::broadcast: return "broadcast";
        case EventKind::activate: return "activate";
        case EventKind::warning: return "warning";
        case EventKind::round: return "round";
    }
    return "?";
}

struct Event {
    Tick tick = 0;
    std::size_t node = 0;
    EventKind kind = EventKind::average;
    std::string detail;
};

class EventLog {
public:
    void append(Event e) {
        if (!events_.empty() && e.tick < events_.back().tick)
            throw std::logic_error("EventLog: tick went backwards");
        events_.push_back(std::move(e));
    }
    const std::vector<Event>& events() const { return events_; }
    std::size_t count(EventKind k) const {
        return static_cast<std::size_t>(
            std::count_if(events_.begin(), events_.end(), [k](const Event& e) { return e.kind == k; }));
    }

private:
    std::vector<Event> events_;
};

struct NodeState {
    std::size_t id = 0;
    ModelWeights model;
    OptimizerState optimizer;
    ModelBuffer buffer;
    std::optional<NodeDistribution> distribution;
    Tick period = 10;
    Rng data_rng;
    Rng comm_rng;
    std::optional<Dataset> holdout;
    std::size_t samples_seen = 0;
    std::size_t averagings = 0;
};

struct SimResult {
    MetricsLog metrics;
    EventLog events;
    std::vector<NodeState> nodes;       // final state; for federated runs, the clients
    std::optional<ModelWeights> server;  // federated runs only
};

/// Runs fn(i) for i in [0, n) on up to `threads` threads, static partition.
inline void parallel_for(std::size_t n, std::size_t threads, const std::function<void(std::size_t)>& fn) {
    threads = std::min(threads, n);
    if (threads <= 1) {
        for (std::size_t i = 0; i < n; ++i) fn(i);
        return;
    }
    std::vector<std::thread> pool;
    std::vector<std::exception_ptr> errors(threads);
    for (std::size_t t = 0; t < threads; ++t)
        pool.emplace_back([&, t] {
            try {
                for (std::size_t i = t; i < n; i += threads) fn(i);
            } catch (...) {
                errors[t] = std::current_exception();
            }
        });
    for (auto& th : pool) th.join();
    for (auto& e : errors)
        if (e) std::rethrow_exception(e);
}

/// Buffer one incoming model; when the buffer fills, average it per `cfg`,
/// blend into the node's model with beta and clear the buffer. Returns true
/// when averaging happened.
inline bool on_receive_model(NodeState& node, ModelPayload incoming, std::size_t sender, const AveragingConfig& cfg,
                             AveragingDiagnostics* diag = nullptr) {
    const Architecture arch = node.model.architecture();
    const bool matches = std::visit(
        [&](const auto& m) {
            if constexpr (std::is_same_v<std::decay_t<decltype(m)>, ModelWeights>)
                return m.architecture() == arch;
            else
                return m.architecture == arch;
        },
        incoming);
    if (!matches) throw ShapeError("on_receive_model: incoming architecture differs from node " + std::to_string(node.id));

    node.buffer.push(BufferEntry{std::move(incoming), sender, 1});
    if (!node.buffer.full()) return false;

    ModelWeights avg = average_buffer(node.buffer, node.model, cfg, diag);
    ModelWeights updated = blend(node.model, avg, cfg.beta);
    if (cfg.post_blend_correction && cfg.strategy == AveragingStrategy::variance_corrected && node.buffer.all_dense()) {
        const auto models = node.buffer.dense_models();
        rescale_to_variance(updated, mean_layer_variances(std::span<const ModelWeights>(models)), diag);
    }
    node.model = std::move(updated);
    node.buffer.clear();
    ++node.averagings;
    return true;
}

/// Replaces every node's model with the plain average of all of them.
inline void global_broadcast(std::vector<NodeState>& nodes) {
    if (nodes.empty()) return;
    std::vector<ModelWeights> models;
    models.reserve(nodes.size());
    for (const auto& n : nodes) models.push_back(n.model);
    const ModelWeights avg = plain_average(std::span<const ModelWeights>(models));
    for (auto& n : nodes) n.model = avg;
}

namespace detail {

inline NodeState make_node(std::size_t id, const SimConfig& cfg, const std::optional<NodeDistribution>& dist) {
    const std::uint64_t sid = cfg.identical_node_streams ? 0 : id;
    NodeState node;
    node.id = id;
    Rng init_rng = substream(cfg.seed, sid, "init");
    node.model = xavier_init(cfg.architecture, cfg.init, init_rng);
    node.optimizer = OptimizerState::for_model(node.model);
    node.distribution = dist;
    node.data_rng = substream(cfg.seed, sid, "data");
    node.comm_rng = substream(cfg.seed, sid, "compress");
    if (cfg.t_acquisition.fixed()) {
        node.period = cfg.t_acquisition.lo;
    } else {
        Rng sched = substream(cfg.seed, sid, "schedule");
        node.period = std::uniform_int_distribution<Tick>(cfg.t_acquisition.lo, cfg.t_acquisition.hi)(sched);
    }
    return node;
}

inline void train_one_batch(NodeState& node, const Dataset& train, const Hyperparams& hp) {
    const Batch b = sample_batch(train, node.distribution, hp.batch_size, node.data_rng);
    const ModelWeights grads = backward(node.model, b.inputs, b.labels);
    sgd_step(node.model, grads, node.optimizer, hp);
    node.samples_seen += hp.batch_size;
}

inline void record_metrics(MetricsLog& log, Tick tick, const std::vector<NodeState>& nodes, const Dataset& test,
                           const SimConfig& cfg) {
    std::vector<double> acc(nodes.size());
    parallel_for(nodes.size(), cfg.threads, [&](std::size_t i) { acc[i] = evaluate(nodes[i].model, test); });
    for (std::size_t i = 0; i < nodes.size(); ++i) log.accuracy.push_back({tick, nodes[i].id, acc[i]});
    if (cfg.record_variance)
        for (const auto& n : nodes) {
            const auto v = layer_variance(n.model);
            for (std::size_t l = 0; l < v.size(); ++l)
                log.variance.push_back({tick, n.id, n.model.layers[l].spec.name, v[l]});
        }
    if (cfg.record_weight_diff && nodes.size() >= 2) {
        std::vector<ModelWeights> models;
        models.reserve(nodes.size());
        for (const auto& n : nodes) models.push_back(n.model);
        const auto d = model_weight_difference(models);
        for (std::size_t l = 0; l < d.size(); ++l)
            log.weight_diff.push_back({tick, nodes.front().model.layers[l].spec.name, d[l]});
    }
}

inline std::vector<std::optional<NodeDistribution>> node_distributions(const SimConfig& cfg, std::size_t n) {
    std::vector<std::optional<NodeDistribution>> out(n);
    if (cfg.dirichlet_alpha) {
        const auto d = dirichlet_partition(*cfg.dirichlet_alpha, n, kNumLabels, cfg.seed);
        for (std::size_t i = 0; i < n; ++i) out[i] = d[cfg.identical_node_streams ? 0 : i];
    }
    return out;
}

}  // namespace detail

/// Gossip learning: every node initializes independently, trains one batch
/// every T ticks, sends its weights (optionally sparsified) to all active
/// peers and averages its buffer whenever it fills.
inline SimResult run_gossip(const SimConfig& cfg, const Dataset& train, const Dataset& test, const Graph& graph) {
    cfg.validate();
    if (cfg.mode != SimMode::gossip) throw ConfigError("run_gossip: mode must be gossip");
    if (graph.size() == 0) throw ConfigError("run_gossip: empty graph");
    if (train.empty() || test.empty()) throw std::invalid_argument("run_gossip: empty dataset");

    const std::size_t n = graph.size();
    const bool temporal = cfg.topology.kind == TopologyKind::temporal;
    SimResult res;
    auto& nodes = res.nodes;
    const auto dists = detail::node_distributions(cfg, n);
    for (std::size_t i = 0; i < n; ++i) nodes.push_back(detail::make_node(i, cfg, dists[i]));

    TemporalNetwork tnet;
    if (temporal) {
        tnet = TemporalNetwork(graph, cfg.topology.activation_threshold);
        for (auto& node : nodes) {
            Rng h = substream(cfg.seed, cfg.identical_node_streams ? 0 : node.id, "holdout");
            node.holdout = holdout_for(train, node.distribution, cfg.holdout_size, h);
        }
    }
    auto active_peers = [&](std::size_t i) -> const std::set<std::size_t>& {
        return temporal ? tnet.state(i).active : graph.peers(i);
    };
    for (auto& node : nodes) node.buffer.set_capacity(active_peers(node.id).size() * cfg.interval_ratio);

    auto broadcast = [&](Tick t) {
        global_broadcast(nodes);
        res.events.append({t, 0, EventKind::broadcast, "plain average applied to all nodes"});
    };
    if (cfg.global_broadcast_tick && *cfg.global_broadcast_tick == 0) broadcast(0);

    struct Message {
        std::size_t sender;
        const ModelPayload* payload;
    };
    std::vector<std::size_t> due;
    std::vector<std::optional<ModelPayload>> outgoing(n);
    std::vector<std::vector<Message>> inbox(n);

    for (Tick t = 1; t <= cfg.max_ticks; ++t) {
        if (cfg.global_broadcast_tick && *cfg.global_broadcast_tick == t) broadcast(t);

        due.clear();
        for (const auto& node : nodes)
            if (t % node.period == 0) due.push_back(node.id);

        parallel_for(due.size(), cfg.threads, [&](std::size_t j) { detail::train_one_batch(nodes[due[j]], train, cfg.training); });

        if (temporal) {
            std::vector<double> own(due.size());
            parallel_for(due.size(), cfg.threads,
                         [&](std::size_t j) { own[j] = evaluate(nodes[due[j]].model, *nodes[due[j]].holdout); });
            for (std::size_t j = 0; j < due.size(); ++j) {
                const auto id = due[j];
                if (auto peer = tnet.on_session(id, own[j])) {
                    for (auto v : {id, *peer})
                        nodes[v].buffer.set_capacity(tnet.state(v).active.size() * cfg.interval_ratio);
                    res.events.append({t, id, EventKind::activate, "peer " + std::to_string(*peer)});
                }
            }
        }

        for (auto id : due) {
            if (active_peers(id).empty()) continue;
            if (cfg.averaging.compression_ratio < 1.0)
                outgoing[id] = compress_sample(nodes[id].model, cfg.averaging.compression_ratio, nodes[id].comm_rng);
            else
                outgoing[id] = nodes[id].model;
            for (auto peer : active_peers(id)) inbox[peer].push_back({id, &*outgoing[id]});
        }

        for (std::size_t i = 0; i < n; ++i) {
            for (const auto& msg : inbox[i]) {
                AveragingDiagnostics diag;
                if (on_receive_model(nodes[i], *msg.payload, msg.sender, cfg.averaging, &diag)) {
                    if (!res.metrics.t_first_average) res.metrics.t_first_average = t;
                    res.events.append({t, i, EventKind::average, std::to_string(nodes[i].averagings)});
                }
                for (auto& w : diag.warnings) res.events.append({t, i, EventKind::warning, std::move(w)});
            }
            inbox[i].clear();
        }
        for (auto& o : outgoing) o.reset();

        if (t % cfg.eval_interval == 0) detail::record_metrics(res.metrics, t, nodes, test, cfg);
    }
    return res;
}

/// Federated averaging over a star: node 0 is the server, leaves are clients.
/// Every T ticks the server model is copied to all clients, each trains one
/// batch, and the server replaces its model with the aggregate.
inline SimResult run_federated(const SimConfig& cfg, const Dataset& train, const Dataset& test, const Graph& star) {
    cfg.validate();
    if (cfg.mode != SimMode::federated) throw ConfigError("run_federated: mode must be federated");
    if (star.size() < 2 || star.degree(0) != star.size() - 1)
        throw ConfigError("run_federated: graph must be a star with hub 0");
    if (train.empty() || test.empty()) throw std::invalid_argument("run_federated: empty dataset");

    const std::size_t clients = star.size() - 1;
    SimResult res;
    Rng server_rng = substream(cfg.seed, 0, "init");
    ModelWeights server = xavier_init(cfg.architecture, cfg.init, server_rng);

    const auto dists = detail::node_distributions(cfg, star.size());
    auto& nodes = res.nodes;
    for (std::size_t c = 1; c <= clients; ++c) nodes.push_back(detail::make_node(c, cfg, dists[c]));

    const Tick period = cfg.t_acquisition.lo;
    for (Tick t = 1; t <= cfg.max_ticks; ++t) {
        if (t % period == 0) {
            for (auto& node : nodes) node.model = server;
            parallel_for(nodes.size(), cfg.threads, [&](std::size_t j) { detail::train_one_batch(nodes[j], train, cfg.training); });
            ModelBuffer buffer(clients);
            for (const auto& node : nodes) buffer.push(node.model, node.id, cfg.training.batch_size);
            AveragingDiagnostics diag;
            server = average_buffer(buffer, server, cfg.averaging, &diag);
            if (!res.metrics.t_first_average) res.metrics.t_first_average = t;
            res.events.append({t, 0, EventKind::round, std::to_string(clients) + " clients"});
            for (auto& w : diag.warnings) res.events.append({t, 0, EventKind::warning, std::move(w)});
        }
        if (t % cfg.eval_interval == 0) {
            detail::record_metrics(res.metrics, t, nodes, test, cfg);
            res.metrics.server_accuracy.push_back({t, evaluate(server, test)});
        }
    }
    res.server = std::move(server);
    return res;
}

/// Builds the communication graph described by `spec`. Federated runs get a
/// star with one extra hub node acting as the server.
inline Graph build_topology(const SimConfig& cfg) {
    if (cfg.mode == SimMode::federated) return build_star(cfg.topology.n + 1);
    switch (cfg.topology.kind) {
        case TopologyKind::star: return build_star(cfg.topology.n);
        case TopologyKind::complete: return build_complete(cfg.topology.n);
        case TopologyKind::regular:
        case TopologyKind::temporal: {
            if (cfg.topology.n == 1) return Graph(1);
            Rng rng = substream(cfg.seed, 0, "topology");
            return build_regular(cfg.topology.n, cfg.topology.k, rng);
        }
    }
    throw ConfigError("unknown topology");
}

inline SimResult run(const SimConfig& cfg, const Dataset& train, const Dataset& test) {
    const Graph g = build_topology(cfg);
    return cfg.mode == SimMode::gossip ? run_gossip(cfg, train, test, g) : run_federated(cfg, train, test, g);
}

}  // namespace gossipvar
