#include <gtest/gtest.h>

#include <sstream>

#include "gossipvar/errors.hpp"
#include "gossipvar/topology.hpp"

using namespace gossipvar;

TEST(Regular, Baseline50x8) {
    Rng rng(1);
    const Graph g = build_regular(50, 8, rng);
    ASSERT_EQ(g.size(), 50u);
    for (std::size_t v = 0; v < 50; ++v) EXPECT_EQ(g.degree(v), 8u);
    EXPECT_EQ(g.edge_count(), 200u);
    EXPECT_TRUE(g.connected());
}

TEST(Regular, FourThreeIsK4) {
    Rng rng(2);
    EXPECT_EQ(build_regular(4, 3, rng), build_complete(4));
}

TEST(Regular, ParityAndRangeErrors) {
    Rng rng(3);
    EXPECT_THROW(build_regular(5, 3, rng), ConfigError);
    EXPECT_THROW(build_regular(4, 4, rng), ConfigError);
    EXPECT_THROW(build_regular(4, 0, rng), ConfigError);
}

TEST(Regular, SeedDeterminesGraph) {
    Rng a(4), b(4), c(5);
    const auto ga = build_regular(30, 4, a);
    EXPECT_EQ(ga, build_regular(30, 4, b));
    EXPECT_FALSE(ga == build_regular(30, 4, c));
}

// Property: every (n, k) with even n*k and k < n yields a simple connected k-regular graph.
TEST(RegularProperty, SimpleConnectedRegular) {
    Rng rng(6);
    for (std::size_t n = 3; n <= 24; ++n)
        for (std::size_t k = 2; k < n; ++k) {
            if ((n * k) % 2) continue;
            const Graph g = build_regular(n, k, rng);
            for (std::size_t v = 0; v < n; ++v) {
                EXPECT_EQ(g.degree(v), k) << n << "," << k;
                EXPECT_FALSE(g.has_edge(v, v));
            }
            EXPECT_EQ(g.edge_count(), n * k / 2);
            EXPECT_TRUE(g.connected()) << n << "," << k;
        }
}

TEST(Star, Fifty) {
    const Graph g = build_star(50);
    EXPECT_EQ(g.degree(0), 49u);
    for (std::size_t v = 1; v < 50; ++v) EXPECT_EQ(g.peers(v), std::set<std::size_t>{0});
}

TEST(Star, TwoAndOne) {
    EXPECT_EQ(build_star(2).edge_count(), 1u);
    EXPECT_THROW(build_star(1), ConfigError);
}

TEST(Graph, EdgeListRoundTrip) {
    Rng rng(7);
    const Graph g = build_regular(12, 4, rng);
    std::stringstream ss;
    write_edge_list(g, ss);
    EXPECT_EQ(read_edge_list(ss), g);
}

TEST(Graph, SelfLoopRejected) {
    Graph g(3);
    EXPECT_THROW(g.add_edge(1, 1), std::invalid_argument);
}

TEST(Temporal, BelowThresholdUnchanged) {
    auto s = TemporalState::from_baseline({3, 7});
    EXPECT_EQ(temporal_activation(s, 0.79), s);
}

TEST(Temporal, ActivatesHeadOfWaitingList) {
    const auto s = temporal_activation(TemporalState::from_baseline({3, 7}), 0.85);
    EXPECT_EQ(s.active, std::set<std::size_t>{3});
    EXPECT_EQ(s.waiting, std::deque<std::size_t>{7});
}

TEST(Temporal, EmptyWaitingIsNoop) {
    TemporalState s{{1, 2}, {}, 0.8};
    EXPECT_EQ(temporal_activation(s, 0.99), s);
}

TEST(Temporal, ExactlyThresholdActivates) {
    const auto s = temporal_activation(TemporalState::from_baseline({5}), 0.8);
    EXPECT_EQ(s.active.size(), 1u);
}

TEST(TemporalNetwork, LinksAreMutual) {
    Graph g(3);
    g.add_edge(0, 1);
    g.add_edge(0, 2);
    TemporalNetwork net(g, 0.8);
    EXPECT_EQ(net.on_session(0, 0.5), std::nullopt);
    EXPECT_EQ(net.on_session(0, 0.9), std::optional<std::size_t>(1));
    EXPECT_EQ(net.state(1).active, std::set<std::size_t>{0});
    EXPECT_TRUE(net.state(1).waiting.empty());
    // node 1 has nothing left to activate
    EXPECT_EQ(net.on_session(1, 0.95), std::nullopt);
    EXPECT_EQ(net.on_session(0, 0.9), std::optional<std::size_t>(2));
    EXPECT_EQ(net.state(0).active, (std::set<std::size_t>{1, 2}));
}
