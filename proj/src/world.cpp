#include "geoaddr/world.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <numbers>

#include "geoaddr/errors.hpp"
#include "geoaddr/io.hpp"
#include "geoaddr/rng.hpp"

namespace geoaddr {

namespace {

constexpr double kMetersPerDegreeLat = 111'195.0;
constexpr double kAoiRadiusMeters = 35.0;
constexpr double kStayInAoiProbability = 0.75;

std::string numbered(const char* prefix, int width, long value) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%s%0*ld", prefix, width, value);
    return buf;
}

constexpr const char* kNameStems[] = {"Maple", "Cedar", "Lotus", "Harbor", "Summit", "Willow",
                                      "Aspen", "Coral", "Ember", "Falcon", "Juniper", "Orchid"};
constexpr const char* kPoiKinds[] = {"Tower", "Plaza", "Court", "Garden", "Mall", "Center", "Park", "Square"};
constexpr const char* kHouseUnits[] = {"Unit", "Room", "Bldg", "Floor"};
constexpr const char* kRemarks[] = {"leave at door", "put it in the courier cabinet", "call on arrival",
                                    "put it in the post station", "deliver after 6pm"};

template <std::size_t N>
const char* pick(Rng& rng, const char* const (&items)[N]) {
    return items[rng.index(N)];
}

}  // namespace

void WorldConfig::validate() const {
    auto positive = [](int v, const char* field) {
        if (v < 1) throw ConfigError(std::string(field) + " must be >= 1");
    };
    positive(n_provinces, "n_provinces");
    positive(cities_per_province, "cities_per_province");
    positive(districts_per_city, "districts_per_city");
    positive(towns_per_district, "towns_per_district");
    positive(roads_per_town, "roads_per_town");
    positive(pois_per_aoi_min, "pois_per_aoi_min");
    positive(pois_per_aoi_max, "pois_per_aoi_max");
    positive(n_aois, "n_aois");
    positive(n_couriers, "n_couriers");
    positive(deliveries_per_courier, "deliveries_per_courier");
    if (pois_per_aoi_max < pois_per_aoi_min) throw ConfigError("pois_per_aoi_max must be >= pois_per_aoi_min");
    if (!(alias_fraction >= 0.0 && alias_fraction <= 1.0)) throw ConfigError("alias_fraction must lie in [0,1]");
    auto lat_ok = [](double v) { return v >= -90.0 && v <= 90.0; };
    auto lon_ok = [](double v) { return v >= -180.0 && v <= 180.0; };
    if (!lat_ok(bbox.lat_min) || !lat_ok(bbox.lat_max) || !(bbox.lat_min < bbox.lat_max))
        throw ConfigError("bbox.lat must be an increasing range inside [-90,90]");
    if (!lon_ok(bbox.lon_min) || !lon_ok(bbox.lon_max) || !(bbox.lon_min < bbox.lon_max))
        throw ConfigError("bbox.lon must be an increasing range inside [-180,180]");
}

void to_json(nlohmann::json& j, const WorldConfig& c) {
    j = nlohmann::json{{"seed", c.seed},
                       {"n_provinces", c.n_provinces},
                       {"cities_per_province", c.cities_per_province},
                       {"districts_per_city", c.districts_per_city},
                       {"towns_per_district", c.towns_per_district},
                       {"roads_per_town", c.roads_per_town},
                       {"pois_per_aoi", {c.pois_per_aoi_min, c.pois_per_aoi_max}},
                       {"n_aois", c.n_aois},
                       {"alias_fraction", c.alias_fraction},
                       {"n_couriers", c.n_couriers},
                       {"deliveries_per_courier", c.deliveries_per_courier},
                       {"bbox",
                        {{"lat", {c.bbox.lat_min, c.bbox.lat_max}}, {"lon", {c.bbox.lon_min, c.bbox.lon_max}}}}};
}

void from_json(const nlohmann::json& j, WorldConfig& c) {
    WorldConfig d;
    c.seed = j.value("seed", d.seed);
    c.n_provinces = j.value("n_provinces", d.n_provinces);
    c.cities_per_province = j.value("cities_per_province", d.cities_per_province);
    c.districts_per_city = j.value("districts_per_city", d.districts_per_city);
    c.towns_per_district = j.value("towns_per_district", d.towns_per_district);
    c.roads_per_town = j.value("roads_per_town", d.roads_per_town);
    if (j.contains("pois_per_aoi")) {
        c.pois_per_aoi_min = j["pois_per_aoi"].at(0).get<int>();
        c.pois_per_aoi_max = j["pois_per_aoi"].at(1).get<int>();
    }
    c.n_aois = j.value("n_aois", d.n_aois);
    c.alias_fraction = j.value("alias_fraction", d.alias_fraction);
    c.n_couriers = j.value("n_couriers", d.n_couriers);
    c.deliveries_per_courier = j.value("deliveries_per_courier", d.deliveries_per_courier);
    if (j.contains("bbox")) {
        const auto& b = j["bbox"];
        c.bbox.lat_min = b.at("lat").at(0).get<double>();
        c.bbox.lat_max = b.at("lat").at(1).get<double>();
        c.bbox.lon_min = b.at("lon").at(0).get<double>();
        c.bbox.lon_max = b.at("lon").at(1).get<double>();
    }
}

void to_json(nlohmann::json& j, const PoiRecord& p) {
    j = nlohmann::json{{"poi_id", p.poi_id}, {"name", p.name},       {"aoi_id", p.aoi_id},
                       {"lat", p.location.lat}, {"lon", p.location.lon}, {"addresses", p.addresses}};
    j["alias_of"] = p.alias_of ? nlohmann::json(*p.alias_of) : nlohmann::json(nullptr);
}

void from_json(const nlohmann::json& j, PoiRecord& p) {
    j.at("poi_id").get_to(p.poi_id);
    j.at("name").get_to(p.name);
    j.at("aoi_id").get_to(p.aoi_id);
    j.at("lat").get_to(p.location.lat);
    j.at("lon").get_to(p.location.lon);
    j.at("addresses").get_to(p.addresses);
    const auto& a = j.at("alias_of");
    p.alias_of = a.is_null() ? std::nullopt : std::optional<PoiId>(a.get<PoiId>());
    if (p.addresses.empty() || p.addresses.size() > 4)
        throw FormatError("poi " + std::to_string(p.poi_id) + " must carry 1..4 addresses");
}

void to_json(nlohmann::json& j, const DeliveryRecord& r) {
    j = nlohmann::json{{"courier_id", r.courier_id}, {"sequence_id", r.sequence_id}, {"step_index", r.step_index},
                       {"raw_address", r.raw_address}, {"lat", r.lat}, {"lon", r.lon},
                       {"aoi_id", r.aoi_id}, {"poi_id", r.poi_id}};
}

void from_json(const nlohmann::json& j, DeliveryRecord& r) {
    j.at("courier_id").get_to(r.courier_id);
    j.at("sequence_id").get_to(r.sequence_id);
    j.at("step_index").get_to(r.step_index);
    j.at("raw_address").get_to(r.raw_address);
    j.at("lat").get_to(r.lat);
    j.at("lon").get_to(r.lon);
    j.at("aoi_id").get_to(r.aoi_id);
    j.at("poi_id").get_to(r.poi_id);
}

PoiTable::PoiTable(std::vector<PoiRecord> records) : records_(std::move(records)) {
    constexpr auto npos = std::numeric_limits<std::size_t>::max();
    for (std::size_t i = 0; i < records_.size(); ++i) {
        const PoiId id = records_[i].poi_id;
        if (id >= index_.size()) index_.resize(id + 1, npos);
        if (index_[id] != npos) throw FormatError("duplicate poi_id " + std::to_string(id));
        index_[id] = i;
    }
}

bool PoiTable::contains(PoiId id) const {
    return id < index_.size() && index_[id] != std::numeric_limits<std::size_t>::max();
}

const PoiRecord& PoiTable::at(PoiId id) const {
    if (!contains(id)) throw IngestError("unknown poi_id " + std::to_string(id));
    return records_[index_[id]];
}

PoiNameSet PoiTable::name_set() const {
    PoiNameSet set;
    for (const auto& p : records_) set.add(p.name);
    return set;
}

std::vector<std::pair<PoiId, PoiId>> PoiTable::alias_pairs() const {
    std::vector<std::pair<PoiId, PoiId>> out;
    for (const auto& p : records_)
        if (p.alias_of) out.emplace_back(std::min(p.poi_id, *p.alias_of), std::max(p.poi_id, *p.alias_of));
    std::sort(out.begin(), out.end());
    out.erase(std::unique(out.begin(), out.end()), out.end());
    return out;
}

namespace {

struct Aoi {
    AoiId id = 0;
    int row = 0, col = 0;
    LatLon center;
    RegionId road = 0;
    std::vector<PoiId> pois;
};

AdminTree build_tree(const WorldConfig& cfg, std::vector<RegionId>& roads) {
    AdminTree tree;
    RegionId next_id = 1;
    long counters[kAdminLevels] = {0, 0, 0, 0, 0};
    const char* prefixes[kAdminLevels] = {"Province", "City", "District", "Town", "Road"};
    const int widths[kAdminLevels] = {2, 3, 3, 4, 4};
    const int fanout[kAdminLevels] = {cfg.n_provinces, cfg.cities_per_province, cfg.districts_per_city,
                                      cfg.towns_per_district, cfg.roads_per_town};

    auto grow = [&](auto&& self, std::optional<RegionId> parent, int level) -> void {
        for (int k = 0; k < fanout[level - 1]; ++k) {
            AdminRegion r;
            r.region_id = next_id++;
            r.level = level;
            r.parent_id = parent;
            r.name = numbered(prefixes[level - 1], widths[level - 1], ++counters[level - 1]);
            const RegionId id = r.region_id;
            tree.add(std::move(r));
            if (level == kAdminLevels)
                roads.push_back(id);
            else
                self(self, id, level + 1);
        }
    };
    grow(grow, std::nullopt, 1);
    return tree;
}

std::array<std::string, kAdminLevels> chain_names(const AdminTree& tree, RegionId road) {
    std::array<std::string, kAdminLevels> names;
    RegionId cur = road;
    while (cur != kRootRegion) {
        const auto& r = tree.region(cur);
        names[static_cast<std::size_t>(r.level - 1)] = r.name;
        cur = tree.parent_or_root(cur);
    }
    return names;
}

std::vector<NormalizedAddress> make_variants(Rng& rng, const std::array<std::string, kAdminLevels>& chain,
                                             const std::string& poi_name) {
    const int n = static_cast<int>(rng.range(1, 4));
    const long base_number = rng.range(1, 199);
    std::vector<NormalizedAddress> out;
    for (int k = 0; k < n; ++k)
        out.push_back(make_address(chain, "No." + std::to_string(base_number + 2 * k), poi_name));
    return out;
}

void rename_addresses(std::vector<NormalizedAddress>& addrs, const std::string& poi_name) {
    for (auto& a : addrs) {
        a.poi_name = poi_name;
        a.recompose();
    }
}

std::string render_raw(Rng& rng, const NormalizedAddress& a) {
    std::string admin;
    for (const auto& f : a.admin_fields()) {
        if (f.empty()) continue;
        if (!admin.empty()) admin += ' ';
        admin += f;
    }
    const std::string house = std::string(pick(rng, kHouseUnits)) + " " + std::to_string(rng.range(1, 30));
    const std::string remark = pick(rng, kRemarks);
    switch (rng.index(3)) {
        case 0: return admin + " " + a.road_number + " " + house + ", " + remark + ", " + a.poi_name;
        case 1: return admin + " " + a.road_number + " " + a.poi_name + " " + house;
        default: return admin + " " + a.poi_name + " " + a.road_number + ", " + remark;
    }
}

}  // namespace

World generate_world(const WorldConfig& cfg) {
    cfg.validate();
    Rng rng(derive_seed(cfg.seed, 0));
    World world;
    world.config = cfg;

    std::vector<RegionId> roads;
    world.tree = build_tree(cfg, roads);

    const auto& bb = cfg.bbox;
    const int grid = static_cast<int>(std::ceil(std::sqrt(static_cast<double>(cfg.n_aois))));
    const double cell_lat = (bb.lat_max - bb.lat_min) / grid;
    const double cell_lon = (bb.lon_max - bb.lon_min) / grid;
    const double mid_lat = 0.5 * (bb.lat_min + bb.lat_max);
    const double disc_lat = kAoiRadiusMeters / kMetersPerDegreeLat;
    const double disc_lon = disc_lat / std::cos(mid_lat * std::numbers::pi / 180.0);

    std::vector<Aoi> aois(static_cast<std::size_t>(cfg.n_aois));
    std::vector<PoiRecord> pois;
    PoiId next_poi = 0;
    for (int a = 0; a < cfg.n_aois; ++a) {
        Aoi& aoi = aois[static_cast<std::size_t>(a)];
        aoi.id = static_cast<AoiId>(a);
        aoi.row = a / grid;
        aoi.col = a % grid;
        double lat = bb.lat_min + (aoi.row + 0.5 + rng.uniform(-0.25, 0.25)) * cell_lat;
        double lon = bb.lon_min + (aoi.col + 0.5 + rng.uniform(-0.25, 0.25)) * cell_lon;
        lat = std::clamp(lat, bb.lat_min + disc_lat, bb.lat_max - disc_lat);
        lon = std::clamp(lon, bb.lon_min + disc_lon, bb.lon_max - disc_lon);
        aoi.center = {lat, lon};
        // Consecutive AOIs share roads, so admin regions stay spatially compact.
        aoi.road = roads[static_cast<std::size_t>(a) * roads.size() / static_cast<std::size_t>(cfg.n_aois)];
        const auto chain = chain_names(world.tree, aoi.road);

        const int count = static_cast<int>(rng.range(cfg.pois_per_aoi_min, cfg.pois_per_aoi_max));
        for (int k = 0; k < count; ++k) {
            const double r = std::sqrt(rng.uniform());
            const double theta = rng.uniform(0.0, 2.0 * std::numbers::pi);
            PoiRecord base;
            base.poi_id = next_poi++;
            base.aoi_id = aoi.id;
            base.location = {lat + r * disc_lat * std::sin(theta), lon + r * disc_lon * std::cos(theta)};
            base.name = std::string(pick(rng, kNameStems)) + std::to_string(base.poi_id) + " " + pick(rng, kPoiKinds);
            base.addresses = make_variants(rng, chain, base.name);
            aoi.pois.push_back(base.poi_id);
            const bool aliased = rng.bernoulli(cfg.alias_fraction);
            if (aliased) {
                PoiRecord alias;
                alias.poi_id = next_poi++;
                alias.aoi_id = aoi.id;
                alias.location = base.location;
                alias.name = base.name + " Annex";
                alias.addresses = make_variants(rng, chain, alias.name);
                alias.alias_of = base.poi_id;
                std::swap(base.addresses, alias.addresses);
                rename_addresses(base.addresses, base.name);
                rename_addresses(alias.addresses, alias.name);
                aoi.pois.push_back(alias.poi_id);
                pois.push_back(std::move(base));
                pois.push_back(std::move(alias));
            } else {
                pois.push_back(std::move(base));
            }
        }
    }
    world.pois = PoiTable(std::move(pois));

    for (int c = 0; c < cfg.n_couriers; ++c) {
        std::size_t current = rng.index(aois.size());
        for (int step = 0; step < cfg.deliveries_per_courier; ++step) {
            if (step > 0 && !rng.bernoulli(kStayInAoiProbability)) {
                std::vector<std::size_t> nearby;
                const Aoi& here = aois[current];
                for (std::size_t o = 0; o < aois.size(); ++o)
                    if (o != current && std::abs(aois[o].row - here.row) <= 1 && std::abs(aois[o].col - here.col) <= 1)
                        nearby.push_back(o);
                if (!nearby.empty()) current = nearby[rng.index(nearby.size())];
            }
            const Aoi& aoi = aois[current];
            const PoiRecord& poi = world.pois.at(aoi.pois[rng.index(aoi.pois.size())]);
            const NormalizedAddress& addr = poi.addresses[rng.index(poi.addresses.size())];
            DeliveryRecord rec;
            rec.courier_id = static_cast<std::uint32_t>(c);
            rec.sequence_id = 0;
            rec.step_index = static_cast<std::uint32_t>(step);
            rec.raw_address = render_raw(rng, addr);
            rec.lat = poi.location.lat;
            rec.lon = poi.location.lon;
            rec.aoi_id = poi.aoi_id;
            rec.poi_id = poi.poi_id;
            world.deliveries.push_back(std::move(rec));
        }
    }
    return world;
}

void save_world(const World& world, const std::filesystem::path& dir) {
    save_admin_tree(world.tree, dir / "admin_tree.jsonl");
    std::vector<nlohmann::json> rows;
    for (const auto& p : world.pois.records()) rows.emplace_back(p);
    io::write_jsonl(dir / "pois.jsonl", rows);
    rows.clear();
    for (const auto& d : world.deliveries) rows.emplace_back(d);
    io::write_jsonl(dir / "deliveries.jsonl", rows);
    io::write_text(dir / "config.json", nlohmann::json(world.config).dump(2) + "\n");
}

std::vector<DeliveryRecord> load_deliveries(const std::filesystem::path& path) {
    std::vector<DeliveryRecord> out;
    io::for_each_jsonl(path, [&](const nlohmann::json& j, std::size_t) { out.push_back(j.get<DeliveryRecord>()); });
    return out;
}

PoiTable load_pois(const std::filesystem::path& path) {
    std::vector<PoiRecord> out;
    io::for_each_jsonl(path, [&](const nlohmann::json& j, std::size_t) { out.push_back(j.get<PoiRecord>()); });
    return PoiTable(std::move(out));
}

World load_world(const std::filesystem::path& dir) {
    World w;
    if (std::filesystem::exists(dir / "config.json"))
        w.config = nlohmann::json::parse(io::read_text(dir / "config.json")).get<WorldConfig>();
    w.tree = load_admin_tree(dir / "admin_tree.jsonl");
    w.pois = load_pois(dir / "pois.jsonl");
    w.deliveries = load_deliveries(dir / "deliveries.jsonl");
    return w;
}

}  // namespace geoaddr
