#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include <nlohmann/json.hpp>

namespace geoaddr {

using RegionId = std::uint32_t;

// Implicit parent of every level-1 region. Never stored as a region.
inline constexpr RegionId kRootRegion = 0;
inline constexpr int kAdminLevels = 5;

struct AdminRegion {
    RegionId region_id = 0;
    std::string name;
    int level = 1;  // 1=province .. 5=road
    std::optional<RegionId> parent_id;

    bool operator==(const AdminRegion&) const = default;
};

void to_json(nlohmann::json& j, const AdminRegion& r);
void from_json(const nlohmann::json& j, AdminRegion& r);

class AdminTree {
public:
    // Parent must already be present; level must be parent level + 1.
    void add(AdminRegion region);

    bool contains(RegionId id) const { return regions_.count(id) != 0; }
    const AdminRegion& region(RegionId id) const;
    const std::map<RegionId, AdminRegion>& regions() const { return regions_; }
    std::size_t size() const { return regions_.size(); }

    // Children in insertion order; kRootRegion gives the provinces.
    std::span<const RegionId> children(RegionId id) const;
    std::vector<RegionId> regions_at_level(int level) const;
    std::vector<RegionId> find_by_name(std::string_view name) const;

    RegionId parent_or_root(RegionId id) const;
    bool is_ancestor(RegionId ancestor, RegionId descendant) const;
    // All regions at `level` below `ancestor` (kRootRegion allowed), ascending id.
    std::vector<RegionId> descendants_at_level(RegionId ancestor, int level) const;

    // Throws FormatError on a broken parent/level/children relation.
    void validate() const;

    bool operator==(const AdminTree& other) const { return regions_ == other.regions_ && children_ == other.children_; }

private:
    std::map<RegionId, AdminRegion> regions_;
    std::map<RegionId, std::vector<RegionId>> children_;
    std::unordered_multimap<std::string, RegionId> by_name_;
};

void save_admin_tree(const AdminTree& tree, const std::filesystem::path& path);
AdminTree load_admin_tree(const std::filesystem::path& path);

// Paradigm form: province city district town road road_number poi_name.
struct NormalizedAddress {
    std::string province, city, district, town, road, road_number;
    std::string poi_name;
    std::string full_text;

    std::array<std::string, kAdminLevels> admin_fields() const { return {province, city, district, town, road}; }
    std::string& admin_field(int level);
    const std::string& admin_field(int level) const;

    // Rebuilds full_text from the fields (single-space separator, empty fields skipped).
    void recompose();

    bool operator==(const NormalizedAddress&) const = default;
};

NormalizedAddress make_address(std::array<std::string, kAdminLevels> admin, std::string road_number,
                               std::string poi_name);

void to_json(nlohmann::json& j, const NormalizedAddress& a);
void from_json(const nlohmann::json& j, NormalizedAddress& a);

enum class EntityLabel : int { Province = 0, City, District, Town, Road, RoadNumber, PoiName, Other };
inline constexpr int kEntityLabels = 8;
std::string_view entity_label_name(EntityLabel label);

struct EntitySpan {
    std::size_t start = 0;
    std::size_t end = 0;  // exclusive
    EntityLabel label = EntityLabel::Other;

    bool operator==(const EntitySpan&) const = default;
};

// Known POI names, matched as whole-word sequences (longest match wins).
class PoiNameSet {
public:
    void add(std::string_view name);
    // Length in words of the longest known name starting at words[pos], 0 if none.
    std::size_t longest_match(std::span<const std::string> words, std::size_t pos) const;
    std::size_t size() const { return names_.size(); }

private:
    std::unordered_map<std::string, std::size_t> names_;
    std::size_t max_words_ = 0;
};

bool is_road_number(std::string_view word);

// Whitespace / comma word split with character offsets into `text`.
struct Word {
    std::string text;
    std::size_t start = 0;
    std::size_t end = 0;
};
std::vector<Word> split_words(std::string_view text);

NormalizedAddress normalize(std::string_view raw_address, const AdminTree& tree, const PoiNameSet& pois);

std::vector<EntitySpan> segment(std::string_view full_text, const AdminTree& tree);

// Root-to-leaf chain of region ids for the non-empty admin fields.
std::vector<RegionId> admin_path(const NormalizedAddress& addr, const AdminTree& tree);

}  // namespace geoaddr
