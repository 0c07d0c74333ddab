#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <vector>

#include <nlohmann/json.hpp>

#include "geoaddr/address.hpp"

namespace geoaddr {

using PoiId = std::uint32_t;
using AoiId = std::uint32_t;

struct LatLon {
    double lat = 0.0;
    double lon = 0.0;

    bool operator==(const LatLon&) const = default;
};

struct BoundingBox {
    double lat_min = 30.20, lat_max = 30.30;
    double lon_min = 120.10, lon_max = 120.20;

    bool contains(LatLon p) const {
        return p.lat >= lat_min && p.lat <= lat_max && p.lon >= lon_min && p.lon <= lon_max;
    }
};

struct WorldConfig {
    std::uint64_t seed = 7;
    int n_provinces = 2;
    int cities_per_province = 2;
    int districts_per_city = 2;
    int towns_per_district = 2;
    int roads_per_town = 2;
    int pois_per_aoi_min = 3;
    int pois_per_aoi_max = 6;
    int n_aois = 40;
    double alias_fraction = 0.1;
    int n_couriers = 10;
    int deliveries_per_courier = 40;
    BoundingBox bbox;

    // Throws ConfigError naming the first offending field.
    void validate() const;
};

void to_json(nlohmann::json& j, const WorldConfig& c);
void from_json(const nlohmann::json& j, WorldConfig& c);

struct PoiRecord {
    PoiId poi_id = 0;
    std::string name;
    AoiId aoi_id = 0;
    LatLon location;
    // 1..4 administrative addresses; index 0 is canonical.
    std::vector<NormalizedAddress> addresses;
    std::optional<PoiId> alias_of;

    const NormalizedAddress& canonical() const { return addresses.front(); }
    bool operator==(const PoiRecord&) const = default;
};

void to_json(nlohmann::json& j, const PoiRecord& p);
void from_json(const nlohmann::json& j, PoiRecord& p);

class PoiTable {
public:
    PoiTable() = default;
    explicit PoiTable(std::vector<PoiRecord> records);

    const std::vector<PoiRecord>& records() const { return records_; }
    std::size_t size() const { return records_.size(); }
    bool contains(PoiId id) const;
    const PoiRecord& at(PoiId id) const;
    PoiNameSet name_set() const;
    // (a, b) with a < b, ascending.
    std::vector<std::pair<PoiId, PoiId>> alias_pairs() const;

    bool operator==(const PoiTable& o) const { return records_ == o.records_; }

private:
    std::vector<PoiRecord> records_;
    std::vector<std::size_t> index_;  // poi_id -> position, npos when absent
};

struct DeliveryRecord {
    std::uint32_t courier_id = 0;
    std::uint32_t sequence_id = 0;
    std::uint32_t step_index = 0;
    std::string raw_address;
    double lat = 0.0;
    double lon = 0.0;
    AoiId aoi_id = 0;
    PoiId poi_id = 0;

    bool operator==(const DeliveryRecord&) const = default;
};

void to_json(nlohmann::json& j, const DeliveryRecord& r);
void from_json(const nlohmann::json& j, DeliveryRecord& r);

struct World {
    WorldConfig config;
    AdminTree tree;
    PoiTable pois;
    std::vector<DeliveryRecord> deliveries;
};

World generate_world(const WorldConfig& cfg);

// world/admin_tree.jsonl, world/pois.jsonl, world/deliveries.jsonl under `dir`.
void save_world(const World& world, const std::filesystem::path& dir);
World load_world(const std::filesystem::path& dir);

std::vector<DeliveryRecord> load_deliveries(const std::filesystem::path& path);
PoiTable load_pois(const std::filesystem::path& path);

}  // namespace geoaddr
