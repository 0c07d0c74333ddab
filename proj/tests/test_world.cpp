#include <doctest.h>

#include <map>
#include <set>

#include "geoaddr/errors.hpp"
#include "geoaddr/io.hpp"
#include "geoaddr/world.hpp"
#include "helpers.hpp"

using namespace geoaddr;

TEST_CASE("same seed regenerates byte-identical files") {
    testutil::TempDir a, b;
    save_world(generate_world(testutil::small_world(11)), a.path);
    save_world(generate_world(testutil::small_world(11)), b.path);
    for (const char* f : {"admin_tree.jsonl", "pois.jsonl", "deliveries.jsonl", "config.json"})
        CHECK(io::file_hash(a.path / f) == io::file_hash(b.path / f));
    save_world(generate_world(testutil::small_world(12)), b.path);
    CHECK(io::file_hash(a.path / "deliveries.jsonl") != io::file_hash(b.path / "deliveries.jsonl"));
}

TEST_CASE("alias_fraction zero gives no alias pairs") {
    auto wc = testutil::small_world();
    wc.alias_fraction = 0.0;
    CHECK(generate_world(wc).pois.alias_pairs().empty());
}

TEST_CASE("sequences have the configured fixed length") {
    WorldConfig wc;
    wc.n_couriers = 10;
    wc.deliveries_per_courier = 40;
    const World w = generate_world(wc);
    std::map<std::pair<std::uint32_t, std::uint32_t>, int> lengths;
    for (const auto& d : w.deliveries) ++lengths[{d.courier_id, d.sequence_id}];
    REQUIRE(lengths.size() == 10);
    for (const auto& [k, n] : lengths) CHECK(n == 40);
}

TEST_CASE("generated records are consistent") {
    auto wc = testutil::small_world();
    wc.alias_fraction = 0.5;
    const World w = generate_world(wc);
    std::set<AoiId> aois_with_pois;
    for (const auto& p : w.pois.records()) {
        aois_with_pois.insert(p.aoi_id);
        CHECK(wc.bbox.contains(p.location));
        CHECK(!p.addresses.empty());
        CHECK(p.addresses.size() <= 4);
        for (const auto& a : p.addresses) CHECK(admin_path(a, w.tree).size() == kAdminLevels);
    }
    CHECK(aois_with_pois.size() == static_cast<std::size_t>(wc.n_aois));
    for (const auto& d : w.deliveries) CHECK(w.pois.contains(d.poi_id));
    const auto pairs = w.pois.alias_pairs();
    CHECK(!pairs.empty());
    for (const auto& [a, b] : pairs) {
        CHECK(w.pois.at(a).location == w.pois.at(b).location);
        CHECK(w.pois.at(a).name != w.pois.at(b).name);
    }
    // step_index strictly increases inside a sequence
    for (std::size_t i = 1; i < w.deliveries.size(); ++i) {
        const auto& p = w.deliveries[i - 1];
        const auto& c = w.deliveries[i];
        if (p.courier_id == c.courier_id && p.sequence_id == c.sequence_id) CHECK(p.step_index < c.step_index);
    }
}

TEST_CASE("world save and load roundtrip") {
    testutil::TempDir dir;
    const World w = generate_world(testutil::small_world());
    save_world(w, dir.path);
    const World back = load_world(dir.path);
    CHECK(back.tree == w.tree);
    CHECK(back.pois == w.pois);
    CHECK(back.deliveries == w.deliveries);
}

TEST_CASE("invalid configs are rejected") {
    auto wc = testutil::small_world();
    wc.n_couriers = 0;
    CHECK_THROWS_AS(generate_world(wc), ConfigError);
    wc = testutil::small_world();
    wc.alias_fraction = 1.5;
    CHECK_THROWS_AS(wc.validate(), ConfigError);
    wc = testutil::small_world();
    wc.bbox.lat_max = 95;
    CHECK_THROWS_AS(wc.validate(), ConfigError);
}
