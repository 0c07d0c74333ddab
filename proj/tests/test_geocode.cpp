#include <doctest.h>

#include <cmath>
#include <numbers>

#include "geoaddr/errors.hpp"
#include "geoaddr/geocode.hpp"
#include "geoaddr/rng.hpp"

using namespace geoaddr;

namespace {

// Base-3 digits of 4*a + b, three of them, most significant first.
std::string ternary_pair(int a, int b) {
    int v = 4 * a + b;
    std::string s(3, '0');
    for (int k = 2; k >= 0; --k, v /= 3) s[static_cast<std::size_t>(k)] = static_cast<char>('0' + v % 3);
    return s;
}

LatLon random_point(Rng& rng) {
    return {std::asin(rng.uniform(-1.0, 1.0)) * 180.0 / std::numbers::pi, rng.uniform(-180.0, 180.0)};
}

}  // namespace

TEST_CASE("2Lt3C hand examples") {
    CHECK(encode_2lt3c({0, 2, {3, 2}}).chars == "112");
    CHECK(encode_2lt3c({0, 2, {0, 0}}).chars == "000");
    CHECK(encode_2lt3c({0, 1, {3}}).chars == "010");
    CHECK(label_length(18) == 27);
    CHECK(label_length(22) == 33);
    CHECK(label_length(1) == 3);
}

TEST_CASE("2Lt3C agrees with a ternary expansion") {
    Rng rng(1);
    for (int i = 0; i < 200; ++i) {
        CellId c{static_cast<int>(rng.index(6)), 18, {}};
        for (int k = 0; k < 18; ++k) c.path.push_back(static_cast<std::uint8_t>(rng.index(4)));
        std::string want;
        for (int k = 0; k < 18; k += 2) want += ternary_pair(c.path[static_cast<std::size_t>(k)], c.path[static_cast<std::size_t>(k) + 1]);
        CHECK(encode_2lt3c(c).chars == want);
    }
}

TEST_CASE("decode rejects bad labels") {
    CHECK_THROWS_AS(decode_2lt3c({"113", 2}, 0), FormatError);
    CHECK_THROWS_AS(decode_2lt3c({"121", 2}, 0), FormatError);  // 16 is not a quadrant pair
    CHECK_THROWS_AS(decode_2lt3c({"11", 2}, 0), FormatError);
    const CellId clamped = decode_2lt3c_clamped({"222", 2}, 0);
    CHECK(clamped.path == std::vector<std::uint8_t>{3, 3});
}

TEST_CASE("cells nest across levels") {
    Rng rng(2);
    for (int i = 0; i < 500; ++i) {
        const LatLon p = random_point(rng);
        const CellId c18 = cell_from_latlon(p, 18);
        const CellId c17 = cell_from_latlon(p, 17);
        CHECK(c18.parent(17) == c17);
        CHECK(cell_from_latlon(p, 18) == c18);
        for (int l = 1; l < 18; l += 4) CHECK(cell_from_latlon(p, l) == c18.parent(l));
    }
}

TEST_CASE("points 10 km apart fall in different level-18 cells") {
    const LatLon a{30.25, 120.15};
    const LatLon b{30.25 + 10.0 / 111.19, 120.15};
    CHECK(std::abs(haversine_km(a, b) - 10.0) < 0.05);
    CHECK(!(cell_from_latlon(a, 18) == cell_from_latlon(b, 18)));
}

TEST_CASE("cell centers map back into their cells") {
    Rng rng(3);
    for (int i = 0; i < 1000; ++i) {
        const int level = 1 + static_cast<int>(rng.index(kMaxCellLevel));
        CellId c{static_cast<int>(rng.index(6)), level, {}};
        for (int k = 0; k < level; ++k) c.path.push_back(static_cast<std::uint8_t>(rng.index(4)));
        const LatLon center = cell_center(c);
        CHECK(cell_from_latlon(center, level) == c);
        if (level > 1) CHECK(cell_from_latlon(center, level - 1) == c.parent(level - 1));
    }
    for (int f = 0; f < 6; ++f) {
        const CellId top{f, 1, {0}};
        CHECK(cell_from_latlon(cell_center(top), 1).face == f);
    }
}

TEST_CASE("cell area distortion stays within 2x") {
    Rng rng(4);
    double lo = 1e300, hi = 0.0;
    for (int i = 0; i < 2000; ++i) {
        const double a = cell_area_m2(cell_from_latlon(random_point(rng), 12));
        lo = std::min(lo, a);
        hi = std::max(hi, a);
    }
    CHECK(hi / lo <= 2.0);
    const double a18 = cell_area_m2(cell_from_latlon(30.25, 120.15, 18));
    CHECK(a18 > 600.0);
    CHECK(a18 < 2400.0);
}

TEST_CASE("haversine") {
    const LatLon a{12.5, -40.0};
    CHECK(haversine_km(a, a) == 0.0);
    CHECK(std::abs(haversine_km({0, 0}, {0, 1}) - 111.19) < 0.1);
    Rng rng(5);
    for (int i = 0; i < 100; ++i) {
        const LatLon p = random_point(rng), q = random_point(rng);
        CHECK(haversine_km(p, q) == doctest::Approx(haversine_km(q, p)).epsilon(1e-12));
    }
}

TEST_CASE("invalid levels and coordinates") {
    CHECK_THROWS(cell_from_latlon(0, 0, 0));
    CHECK_THROWS(cell_from_latlon(0, 0, 23));
    CHECK_THROWS(cell_from_latlon(95, 0, 5));
}
