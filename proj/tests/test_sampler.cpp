#include <doctest.h>

#include "geoaddr/checks.hpp"
#include "geoaddr/errors.hpp"
#include "geoaddr/sampler.hpp"
#include "helpers.hpp"

using namespace geoaddr;

namespace {

HeteroGraph blank(int n) {
    HeteroGraph g;
    for (int i = 0; i < n; ++i) g.add_node(AddressNode{});
    return g;
}

}  // namespace

TEST_CASE("k = 1 returns the base alone") {
    HeteroGraph g = blank(3);
    g.add_edge(0, 1, 1);
    g.add_edge(1, 2, 1);
    SampleConfig c;
    c.k = 1;
    const auto s = sample(g, 1, c);
    CHECK(s.node_ids == std::vector<NodeId>{1});
    CHECK(s.induced_edges.empty());
}

TEST_CASE("small component stops the sampler") {
    HeteroGraph g = blank(6);
    g.add_edge(0, 1, 1);
    g.add_edge(1, 2, 2);
    g.add_edge(3, 4, 1);
    SampleConfig c;
    c.k = 6;
    for (std::uint64_t seed = 0; seed < 50; ++seed) {
        c.seed = seed;
        const auto s = sample(g, 2, c);
        CHECK(s.size() == 3);
        CHECK(std::set<NodeId>(s.node_ids.begin(), s.node_ids.end()) == checks::bfs_component(g, 2));
    }
    c.seed = 0;
    CHECK(sample(g, 5, c).node_ids == std::vector<NodeId>{5});
}

TEST_CASE("path graph with p = 0 walks the path") {
    HeteroGraph g = blank(4);
    g.add_edge(0, 1, 1);
    g.add_edge(1, 2, 1);
    g.add_edge(2, 3, 1);
    SampleConfig c;
    c.k = 3;
    c.p = 0.0;
    c.seed = 42;
    CHECK(sample(g, 0, c).node_ids == std::vector<NodeId>{0, 1, 2});
}

TEST_CASE("star graph picks each leaf with probability one half") {
    HeteroGraph g = blank(3);
    g.add_edge(0, 1, 2);
    g.add_edge(0, 2, 2);
    SampleConfig c;
    c.k = 2;
    c.p = 0.0;
    int first = 0;
    const int runs = 10000;
    for (int seed = 0; seed < runs; ++seed) {
        c.seed = static_cast<std::uint64_t>(seed);
        first += sample(g, 0, c).node_ids[1] == 1;
    }
    CHECK(std::abs(first / static_cast<double>(runs) - 0.5) <= 0.05);
}

TEST_CASE("corpus is deterministic and matches an adjacency recheck") {
    const World w = generate_world(testutil::small_world());
    const HeteroGraph g = build_graph(w.deliveries, w.pois, w.tree);
    SampleConfig c;
    c.seed = 9;
    CHECK(sample_corpus(g, 0, c).empty());
    const auto a = sample_corpus(g, 100, c);
    CHECK(a == sample_corpus(g, 100, c));
    for (const auto& s : a) {
        CHECK(s.induced_edges == checks::recheck_edges(g, s.node_ids));
        CHECK(std::set<NodeId>(s.node_ids.begin(), s.node_ids.end()).size() == s.size());
    }
}

TEST_CASE("sampler errors and persistence") {
    HeteroGraph g = blank(2);
    SampleConfig c;
    CHECK_THROWS_AS(sample(g, 7, c), NodeNotFound);
    c.k = 0;
    CHECK_THROWS_AS(sample(g, 0, c), ConfigError);
    c.k = 6;
    c.p = 1.5;
    CHECK_THROWS_AS(sample(g, 0, c), ConfigError);
    CHECK_THROWS_AS(sample_corpus(HeteroGraph{}, 3, SampleConfig{}), EmptyGraph);

    const World w = generate_world(testutil::small_world());
    const HeteroGraph big = build_graph(w.deliveries, w.pois, w.tree);
    const auto corpus = sample_corpus(big, 25, SampleConfig{});
    testutil::TempDir dir;
    save_samples(corpus, dir.path, 10);
    CHECK(std::filesystem::exists(dir.path / "part-00002.jsonl"));
    CHECK(load_samples(dir.path) == corpus);
}
