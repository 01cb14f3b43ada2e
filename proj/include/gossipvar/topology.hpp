#pragma once

// Communication graphs (random k-regular, star) and the temporal peer-activation
// rule that grows a node's active peer set as its local accuracy improves.

#include <algorithm>
#include <cstddef>
#include <deque>
#include <istream>
#include <optional>
#include <ostream>
#include <queue>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "gossipvar/errors.hpp"
#include "gossipvar/rng.hpp"

namespace gossipvar {

class Graph {
public:
    Graph() = default;
    explicit Graph(std::size_t n) : adjacency_(n) {}

    std::size_t size() const { return adjacency_.size(); }
    const std::set<std::size_t>& peers(std::size_t node) const { return adjacency_.at(node); }
    std::size_t degree(std::size_t node) const { return adjacency_.at(node).size(); }

    void add_edge(std::size_t u, std::size_t v) {
        if (u == v) throw std::invalid_argument("graph: self-loop at " + std::to_string(u));
        if (u >= size() || v >= size()) throw std::out_of_range("graph: node id out of range");
        adjacency_[u].insert(v);
        adjacency_[v].insert(u);
    }

    bool has_edge(std::size_t u, std::size_t v) const { return adjacency_.at(u).count(v) > 0; }

    /// Undirected edges as (u, v) with u < v, in lexicographic order.
    std::vector<std::pair<std::size_t, std::size_t>> edges() const {
        std::vector<std::pair<std::size_t, std::size_t>> out;
        for (std::size_t u = 0; u < size(); ++u)
            for (auto v : adjacency_[u])
                if (u < v) out.emplace_back(u, v);
        return out;
    }

    std::size_t edge_count() const { return edges().size(); }

    bool connected() const {
        if (size() == 0) return true;
        std::vector<bool> seen(size(), false);
        std::queue<std::size_t> q;
        q.push(0);
        seen[0] = true;
        std::size_t reached = 1;
        while (!q.empty()) {
            const auto u = q.front();
            q.pop();
            for (auto v : adjacency_[u])
                if (!seen[v]) {
                    seen[v] = true;
                    ++reached;
                    q.push(v);
                }
        }
        return reached == size();
    }

    bool operator==(const Graph&) const = default;

private:
    std::vector<std::set<std::size_t>> adjacency_;
};

/// Edge list: a "# nodes N" header, then one "u v" pair per line.
inline void write_edge_list(const Graph& g, std::ostream& out) {
    out << "# nodes " << g.size() << '\n';
    for (const auto& [u, v] : g.edges()) out << u << ' ' << v << '\n';
}

inline Graph read_edge_list(std::istream& in) {
    std::string line;
    std::vector<std::pair<std::size_t, std::size_t>> edges;
    std::size_t n = 0;
    bool have_header = false;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        std::istringstream ls(line);
        if (line[0] == '#') {
            std::string hash, key;
            if (ls >> hash >> key >> n && key == "nodes") have_header = true;
            continue;
        }
        std::size_t u = 0, v = 0;
        if (!(ls >> u >> v)) throw ParseError("edge list: bad line '" + line + "'");
        edges.emplace_back(u, v);
        if (!have_header) n = std::max({n, u + 1, v + 1});
    }
    Graph g(n);
    for (auto [u, v] : edges) g.add_edge(u, v);
    return g;
}

/// Random connected k-regular simple graph. Stubs are paired one at a time,
/// rejecting pairs that would form loops or multi-edges; if no legal pair
/// remains the attempt restarts, up to `max_attempts` times.
inline Graph build_regular(std::size_t n, std::size_t k, Rng& rng, std::size_t max_attempts = 1000) {
    if (k == 0 || k >= n) throw ConfigError("regular graph needs 0 < k < n (n=" + std::to_string(n) + ", k=" +
                                            std::to_string(k) + ")");
    if ((n * k) % 2 != 0) throw ConfigError("regular graph needs n*k even (n=" + std::to_string(n) + ", k=" +
                                            std::to_string(k) + ")");
    for (std::size_t attempt = 0; attempt < max_attempts; ++attempt) {
        Graph g(n);
        std::vector<std::size_t> stubs;
        stubs.reserve(n * k);
        for (std::size_t v = 0; v < n; ++v) stubs.insert(stubs.end(), k, v);

        bool stuck = false;
        while (!stubs.empty() && !stuck) {
            bool paired = false;
            for (int tries = 0; tries < 64 && !paired; ++tries) {
                std::uniform_int_distribution<std::size_t> pick(0, stubs.size() - 1);
                const std::size_t i = pick(rng);
                const std::size_t j = pick(rng);
                const auto u = stubs[i];
                const auto v = stubs[j];
                if (i == j || u == v || g.has_edge(u, v)) continue;
                g.add_edge(u, v);
                const auto hi = std::max(i, j);
                const auto lo = std::min(i, j);
                stubs[hi] = stubs.back();
                stubs.pop_back();
                stubs[lo] = stubs.back();
                stubs.pop_back();
                paired = true;
            }
            if (paired) continue;
            // Random probing failed; look for any legal pair before giving up on this attempt.
            std::vector<std::pair<std::size_t, std::size_t>> legal;
            for (std::size_t i = 0; i < stubs.size(); ++i)
                for (std::size_t j = i + 1; j < stubs.size(); ++j)
                    if (stubs[i] != stubs[j] && !g.has_edge(stubs[i], stubs[j])) legal.emplace_back(i, j);
            if (legal.empty()) {
                stuck = true;
                break;
            }
            const auto [i, j] = legal[std::uniform_int_distribution<std::size_t>(0, legal.size() - 1)(rng)];
            g.add_edge(stubs[i], stubs[j]);
            stubs[j] = stubs.back();
            stubs.pop_back();
            stubs[i] = stubs.back();
            stubs.pop_back();
        }
        if (!stuck && g.connected()) return g;
    }
    throw std::runtime_error("build_regular: no connected " + std::to_string(k) + "-regular graph on " +
                             std::to_string(n) + " nodes after " + std::to_string(max_attempts) + " attempts");
}

/// Node 0 is the hub.
inline Graph build_star(std::size_t n) {
    if (n < 2) throw ConfigError("star graph needs at least 2 nodes");
    Graph g(n);
    for (std::size_t v = 1; v < n; ++v) g.add_edge(0, v);
    return g;
}

inline Graph build_complete(std::size_t n) {
    Graph g(n);
    for (std::size_t u = 0; u < n; ++u)
        for (std::size_t v = u + 1; v < n; ++v) g.add_edge(u, v);
    return g;
}

struct TemporalState {
    std::set<std::size_t> active;
    std::deque<std::size_t> waiting;
    double threshold = 0.8;

    /// All baseline peers start on the waiting list, in ascending id order.
    static TemporalState from_baseline(const std::set<std::size_t>& peers, double threshold = 0.8) {
        return {{}, std::deque<std::size_t>(peers.begin(), peers.end()), threshold};
    }

    bool operator==(const TemporalState&) const = default;
};

/// Promotes the head of the waiting list once own-data accuracy reaches the
/// threshold. At most one peer moves per call.
inline TemporalState temporal_activation(TemporalState state, double own_accuracy) {
    if (own_accuracy >= state.threshold && !state.waiting.empty()) {
        state.active.insert(state.waiting.front());
        state.waiting.pop_front();
    }
    return state;
}

/// Per-node temporal states over a baseline graph. Links are mutual: when
/// either endpoint activates an edge, both treat it as live.
class TemporalNetwork {
public:
    TemporalNetwork() = default;
    TemporalNetwork(const Graph& baseline, double threshold) {
        states_.reserve(baseline.size());
        for (std::size_t v = 0; v < baseline.size(); ++v)
            states_.push_back(TemporalState::from_baseline(baseline.peers(v), threshold));
    }

    const TemporalState& state(std::size_t node) const { return states_.at(node); }
    std::size_t size() const { return states_.size(); }

    /// Applies temporal_activation for `node`; returns the newly activated peer, if any.
    std::optional<std::size_t> on_session(std::size_t node, double own_accuracy) {
        auto& s = states_.at(node);
        const auto before = s.active;
        s = temporal_activation(std::move(s), own_accuracy);
        if (s.active.size() == before.size()) return std::nullopt;
        std::size_t peer = 0;
        for (auto p : s.active)
            if (!before.count(p)) peer = p;
        auto& other = states_.at(peer);
        if (!other.active.count(node)) {
            other.active.insert(node);
            other.waiting.erase(std::remove(other.waiting.begin(), other.waiting.end(), node), other.waiting.end());
        }
        return peer;
    }

private:
    std::vector<TemporalState> states_;
};

}  // namespace gossipvar
