#include <doctest.h>

#include "geoaddr/address.hpp"
#include "geoaddr/errors.hpp"
#include "geoaddr/world.hpp"
#include "helpers.hpp"

using namespace geoaddr;

namespace {

struct Fixture {
    World w = generate_world(testutil::small_world());
    PoiNameSet names = w.pois.name_set();
};

}  // namespace

TEST_CASE("normalize strips house units and remarks") {
    Fixture f;
    const auto& truth = f.w.pois.records().front().canonical();
    const std::string raw = truth.province + " " + truth.city + " " + truth.district + " " + truth.town + " " +
                            truth.road + " " + truth.road_number + " Tower B, leave at door, " + truth.poi_name;
    const NormalizedAddress got = normalize(raw, f.w.tree, f.names);
    CHECK(got == truth);
}

TEST_CASE("normalize recovers generator fields from every raw delivery") {
    Fixture f;
    for (const auto& d : f.w.deliveries) {
        const NormalizedAddress got = normalize(d.raw_address, f.w.tree, f.names);
        const auto& addrs = f.w.pois.at(d.poi_id).addresses;
        CHECK(std::find(addrs.begin(), addrs.end(), got) != addrs.end());
    }
}

TEST_CASE("normalize is idempotent") {
    Fixture f;
    for (const auto& d : f.w.deliveries) {
        const auto once = normalize(d.raw_address, f.w.tree, f.names);
        CHECK(normalize(once.full_text, f.w.tree, f.names) == once);
    }
}

TEST_CASE("normalize rejects text without regions") {
    Fixture f;
    CHECK_THROWS_AS(normalize("garbagetext", f.w.tree, f.names), NormalizationFailed);
    CHECK_THROWS_AS(normalize("", f.w.tree, f.names), NormalizationFailed);
}

TEST_CASE("segment reproduces the fields") {
    Fixture f;
    for (const auto& p : f.w.pois.records()) {
        const auto& a = p.canonical();
        const auto spans = segment(a.full_text, f.w.tree);
        std::map<EntityLabel, std::string> text;
        for (const auto& s : spans) {
            CHECK(s.start < s.end);
            CHECK(s.end <= a.full_text.size());
            text[s.label] = a.full_text.substr(s.start, s.end - s.start);
        }
        for (int l = 1; l <= kAdminLevels; ++l) CHECK(text[static_cast<EntityLabel>(l - 1)] == a.admin_field(l));
        CHECK(text[EntityLabel::RoadNumber] == a.road_number);
        CHECK(text[EntityLabel::PoiName] == a.poi_name);
        for (std::size_t i = 1; i < spans.size(); ++i) CHECK(spans[i - 1].end <= spans[i].start);
    }
}

TEST_CASE("segment degenerate inputs") {
    Fixture f;
    auto a = f.w.pois.records().front().canonical();
    a.poi_name.clear();
    a.recompose();
    for (const auto& s : segment(a.full_text, f.w.tree)) CHECK(s.label != EntityLabel::PoiName);
    const auto one = segment(a.province, f.w.tree);
    REQUIRE(one.size() == 1);
    CHECK(one[0].label == EntityLabel::Province);
}

TEST_CASE("admin_path follows the tree") {
    Fixture f;
    const auto& a = f.w.pois.records().front().canonical();
    const auto path = admin_path(a, f.w.tree);
    REQUIRE(path.size() == 5);
    CHECK(f.w.tree.region(path[0]).parent_id == std::nullopt);
    for (std::size_t i = 1; i < path.size(); ++i) CHECK(f.w.tree.region(path[i]).parent_id == path[i - 1]);

    NormalizedAddress prov;
    prov.province = a.province;
    CHECK(admin_path(prov, f.w.tree).size() == 1);

    // A city from the other province.
    NormalizedAddress bad = a;
    for (RegionId c : f.w.tree.regions_at_level(2))
        if (!f.w.tree.is_ancestor(path[0], c)) bad.city = f.w.tree.region(c).name;
    REQUIRE(bad.city != a.city);
    CHECK_THROWS_AS(admin_path(bad, f.w.tree), InconsistentHierarchy);
}

TEST_CASE("admin tree rejects broken structure and roundtrips") {
    AdminTree t;
    t.add({1, "P", 1, std::nullopt});
    t.add({2, "C", 2, 1});
    CHECK_THROWS(t.add({3, "X", 3, 1}));
    CHECK_THROWS(t.add({4, "Y", 2, 99}));
    CHECK(t.children(kRootRegion).size() == 1);
    Fixture f;
    testutil::TempDir dir;
    save_admin_tree(f.w.tree, dir.path / "tree.jsonl");
    CHECK(load_admin_tree(dir.path / "tree.jsonl") == f.w.tree);
}
