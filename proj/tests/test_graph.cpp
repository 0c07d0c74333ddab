#include <doctest.h>

#include <fstream>
#include <set>

#include "geoaddr/errors.hpp"
#include "geoaddr/graph.hpp"
#include "geoaddr/io.hpp"
#include "helpers.hpp"

using namespace geoaddr;

namespace {

HeteroGraph clique(int n) {
    HeteroGraph g;
    for (int i = 0; i < n; ++i) g.add_node(AddressNode{});
    for (int i = 0; i < n; ++i)
        for (int j = i + 1; j < n; ++j) g.add_edge(static_cast<NodeId>(i), static_cast<NodeId>(j), EdgeCode::kAoiColocate);
    return g;
}

DeliveryRecord visit(PoiId poi, std::uint32_t courier, std::uint32_t step) {
    DeliveryRecord d;
    d.poi_id = poi;
    d.courier_id = courier;
    d.step_index = step;
    return d;
}

}  // namespace

TEST_CASE("route plus alias is coded 101") {
    const World w = generate_world(testutil::small_world());
    std::vector<PoiRecord> recs = w.pois.records();
    std::size_t other = 1;
    while (recs[other].aoi_id == recs[0].aoi_id) ++other;
    std::vector<PoiRecord> two{recs[0], recs[other]};
    two[0].alias_of.reset();
    two[1].alias_of = two[0].poi_id;
    const PoiTable table(two);
    const std::vector<DeliveryRecord> del{visit(two[0].poi_id, 0, 0), visit(two[1].poi_id, 0, 1)};
    const HeteroGraph g = build_graph(del, table, w.tree);
    CHECK(g.edge(0, 1).bits == 5);
    CHECK(g.edge(0, 1).has(EdgeCode::kDeliveryRoute));
    CHECK(g.edge(0, 1).has(EdgeCode::kAlias));
    CHECK(!g.edge(0, 1).has(EdgeCode::kAoiColocate));
}

TEST_CASE("single delivery record creates no route edge") {
    const World w = generate_world(testutil::small_world());
    const std::vector<DeliveryRecord> del{visit(0, 0, 0)};
    const HeteroGraph g = build_graph(del, w.pois, w.tree);
    for (NodeId v = 0; v < g.num_nodes(); ++v)
        for (const auto& [u, c] : g.neighbors(v)) CHECK(!c.has(EdgeCode::kDeliveryRoute));
}

TEST_CASE("AOI with m POIs gives m(m-1)/2 co-locate pairs") {
    auto wc = testutil::small_world();
    wc.pois_per_aoi_min = 5;
    wc.pois_per_aoi_max = 5;
    wc.alias_fraction = 0.0;
    const World w = generate_world(wc);
    const HeteroGraph g = build_graph(w.deliveries, w.pois, w.tree);
    std::map<AoiId, int> pairs;
    for (NodeId a = 0; a < g.num_nodes(); ++a)
        for (const auto& [b, c] : g.neighbors(a))
            if (a < b && c.has(EdgeCode::kAoiColocate)) ++pairs[g.node(a).aoi_id];
    REQUIRE(pairs.size() == static_cast<std::size_t>(wc.n_aois));
    for (const auto& [aoi, n] : pairs) CHECK(n == 10);
}

TEST_CASE("edge bits agree with the raw streams") {
    auto wc = testutil::small_world();
    wc.alias_fraction = 0.3;
    const World w = generate_world(wc);
    const HeteroGraph g = build_graph(w.deliveries, w.pois, w.tree);
    std::set<std::pair<NodeId, NodeId>> route;
    for (std::size_t i = 1; i < w.deliveries.size(); ++i) {
        const auto& p = w.deliveries[i - 1];
        const auto& c = w.deliveries[i];
        if (p.courier_id != c.courier_id || p.poi_id == c.poi_id) continue;
        route.insert({std::min(p.poi_id, c.poi_id), std::max(p.poi_id, c.poi_id)});
    }
    for (NodeId a = 0; a < g.num_nodes(); ++a)
        for (NodeId b = a + 1; b < g.num_nodes(); ++b) {
            const EdgeCode e = g.edge(a, b);
            const auto& na = g.node(a);
            const auto& nb = g.node(b);
            const bool r = route.count({std::min(na.poi_id, nb.poi_id), std::max(na.poi_id, nb.poi_id)}) > 0;
            CHECK(e.has(EdgeCode::kDeliveryRoute) == r);
            CHECK(e.has(EdgeCode::kAoiColocate) == (na.aoi_id == nb.aoi_id));
            if (e.has(EdgeCode::kAlias)) CHECK((na.lat == nb.lat && na.lon == nb.lon));
            CHECK(g.edge(b, a) == e);
        }
}

TEST_CASE("neighbors and degree") {
    HeteroGraph iso;
    iso.add_node(AddressNode{});
    CHECK(iso.neighbors(0).empty());
    CHECK(iso.degree(0) == 0);
    CHECK(clique(3).neighbors(1).size() == 2);
    CHECK(clique(4).degree(2) == 3);
    CHECK_THROWS_AS(iso.neighbors(5), NodeNotFound);

    const World w = generate_world(testutil::small_world());
    const HeteroGraph g = build_graph(w.deliveries, w.pois, w.tree);
    for (NodeId v = 0; v < g.num_nodes(); v += 7) {
        std::vector<std::pair<NodeId, EdgeCode>> scan;
        for (NodeId u = 0; u < g.num_nodes(); ++u)
            if (g.edge(v, u).bits) scan.emplace_back(u, g.edge(v, u));
        CHECK(g.neighbors(v) == scan);
        CHECK(g.degree(v) == scan.size());
    }
}

TEST_CASE("self loops are dropped") {
    HeteroGraph g = clique(2);
    g.add_edge(0, 0, EdgeCode::kAlias);
    CHECK(g.degree(0) == 1);
}

TEST_CASE("graph save and load") {
    testutil::TempDir dir;
    save_graph(HeteroGraph{}, dir.path / "empty");
    CHECK(load_graph(dir.path / "empty") == HeteroGraph{});

    const World w = generate_world(testutil::small_world());
    const HeteroGraph g = build_graph(w.deliveries, w.pois, w.tree);
    save_graph(g, dir.path / "g");
    CHECK(load_graph(dir.path / "g") == g);

    // Cut the last line in half.
    const auto edges = dir.path / "g" / "edges.tsv";
    std::string text = io::read_text(edges);
    text.resize(text.size() - 3);
    io::write_text(edges, text);
    CHECK_THROWS_AS(load_graph(dir.path / "g"), FormatError);
}

TEST_CASE("out-of-order deliveries are rejected") {
    const World w = generate_world(testutil::small_world());
    const std::vector<DeliveryRecord> del{visit(0, 0, 1), visit(1, 0, 0)};
    CHECK_THROWS_AS(build_graph(del, w.pois, w.tree), IngestError);
    const std::vector<DeliveryRecord> unknown{visit(999999, 0, 0)};
    CHECK_THROWS_AS(build_graph(unknown, w.pois, w.tree), IngestError);
}
