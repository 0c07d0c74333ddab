#include <doctest.h>

#include "geoaddr/checks.hpp"
#include "geoaddr/features.hpp"
#include "helpers.hpp"

using namespace geoaddr;

TEST_CASE("two nodes joined by a 101 edge") {
    SampledSubgraph s;
    s.node_ids = {4, 9};
    s.induced_edges[{0, 1}] = EdgeCode{5};
    const auto f = featurize_local(s, {1, 1});
    CHECK(f.dist == std::vector<int>{0, 1, 1, 0});
    CHECK(f.route(0, 1, 0) == 5);
    CHECK(f.route(1, 0, 0) == 5);
    CHECK(f.positions == std::vector<int>{1, 2});
}

TEST_CASE("disconnected pair gets the sentinel and empty routes") {
    SampledSubgraph s;
    s.node_ids = {0, 1, 2};
    s.induced_edges[{0, 1}] = EdgeCode{1};
    const auto f = featurize_local(s, {1, 1, 0});
    CHECK(f.distance(0, 2) == f.unreachable());
    CHECK(f.distance(2, 1) == 3);
    for (int k = 0; k < f.path_slots(); ++k) CHECK(f.route(0, 2, k) == 0);
}

TEST_CASE("routes follow the smallest shortest path") {
    // Square 0-1-3, 0-2-3 with different codes: 0 to 3 must go through 1.
    SampledSubgraph s;
    s.node_ids = {10, 11, 12, 13};
    s.induced_edges[{0, 1}] = EdgeCode{1};
    s.induced_edges[{1, 3}] = EdgeCode{2};
    s.induced_edges[{0, 2}] = EdgeCode{4};
    s.induced_edges[{2, 3}] = EdgeCode{4};
    const auto f = featurize_local(s, {2, 2, 2, 2});
    CHECK(f.distance(0, 3) == 2);
    CHECK(f.route(0, 3, 0) == 1);
    CHECK(f.route(0, 3, 1) == 2);
    CHECK(f.route(0, 3, 2) == 0);
    CHECK(f.route(3, 0, 0) == 2);
}

TEST_CASE("featurize against Floyd-Warshall and path replay") {
    const World w = generate_world(testutil::small_world());
    const HeteroGraph g = build_graph(w.deliveries, w.pois, w.tree);
    SampleConfig c;
    c.k = 6;
    c.seed = 1;
    for (const auto& s : sample_corpus(g, 200, c)) {
        const auto f = featurize(g, s);
        const auto d = checks::floyd_warshall(s);
        CHECK(f.dist == d);
        CHECK(f.route_types == checks::replay_routes(s, d));
        for (std::size_t i = 0; i < s.size(); ++i) CHECK(f.degrees[i] == static_cast<int>(g.degree(s.node_ids[i])));
        for (int i = 0; i < f.n; ++i)
            for (int j = 0; j < f.n; ++j) {
                CHECK(f.distance(i, j) == f.distance(j, i));
                for (int k = 0; k < f.n; ++k)
                    if (f.distance(i, k) < f.n && f.distance(k, j) < f.n)
                        CHECK(f.distance(i, j) <= f.distance(i, k) + f.distance(k, j));
            }
    }
}

TEST_CASE("subgraph degree option") {
    SampledSubgraph s;
    s.node_ids = {0, 1};
    s.induced_edges[{0, 1}] = EdgeCode{1};
    HeteroGraph g;
    for (int i = 0; i < 3; ++i) g.add_node(AddressNode{});
    g.add_edge(0, 1, 1);
    g.add_edge(0, 2, 1);
    CHECK(featurize(g, s).degrees == std::vector<int>{2, 1});
    CHECK(featurize(g, s, {true}).degrees == std::vector<int>{1, 1});
}

TEST_CASE("relabelling nodes permutes distances and degrees") {
    const World w = generate_world(testutil::small_world());
    const HeteroGraph g = build_graph(w.deliveries, w.pois, w.tree);
    SampleConfig c;
    c.k = 6;
    Rng rng(5);
    for (const auto& s : sample_corpus(g, 50, c)) {
        const auto f = featurize(g, s);
        const auto n = s.size();
        std::vector<std::size_t> pi(n);
        for (std::size_t i = 0; i < n; ++i) pi[i] = i;
        rng.shuffle(pi);
        SampledSubgraph t;
        for (std::size_t i = 0; i < n; ++i) t.node_ids.push_back(s.node_ids[pi[i]]);
        t.induced_edges = induce_edges(g, t.node_ids);
        const auto ft = featurize(g, t);
        for (std::size_t i = 0; i < n; ++i) {
            CHECK(ft.degrees[i] == f.degrees[pi[i]]);
            for (std::size_t j = 0; j < n; ++j) {
                const int a = static_cast<int>(i), b = static_cast<int>(j);
                const int pa = static_cast<int>(pi[i]), pb = static_cast<int>(pi[j]);
                CHECK(ft.distance(a, b) == f.distance(pa, pb));
                int nz = 0, pnz = 0;
                for (int k = 0; k < f.path_slots(); ++k) {
                    nz += ft.route(a, b, k) != 0;
                    pnz += f.route(pa, pb, k) != 0;
                }
                CHECK(nz == pnz);
            }
        }
    }
}

TEST_CASE("features persist as little-endian parts") {
    const auto c = testutil::small_corpus(12);
    testutil::TempDir dir;
    save_features(c.features, dir.path, 5);
    CHECK(std::filesystem::exists(dir.path / "part-00002.bin"));
    CHECK(std::filesystem::exists(dir.path / "part-00002.meta.json"));
    CHECK(load_features(dir.path) == c.features);
}
