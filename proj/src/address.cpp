#include "geoaddr/address.hpp"

#include <algorithm>
#include <cctype>

#include "geoaddr/errors.hpp"
#include "geoaddr/io.hpp"

namespace geoaddr {

void to_json(nlohmann::json& j, const AdminRegion& r) {
    j = nlohmann::json{{"region_id", r.region_id}, {"name", r.name}, {"level", r.level}};
    j["parent_id"] = r.parent_id ? nlohmann::json(*r.parent_id) : nlohmann::json(nullptr);
}

void from_json(const nlohmann::json& j, AdminRegion& r) {
    j.at("region_id").get_to(r.region_id);
    j.at("name").get_to(r.name);
    j.at("level").get_to(r.level);
    const auto& p = j.at("parent_id");
    r.parent_id = p.is_null() ? std::nullopt : std::optional<RegionId>(p.get<RegionId>());
}

void AdminTree::add(AdminRegion region) {
    if (region.region_id == kRootRegion) throw FormatError("region id 0 is reserved for the root");
    if (contains(region.region_id)) throw FormatError("duplicate region id " + std::to_string(region.region_id));
    if (region.level < 1 || region.level > kAdminLevels)
        throw FormatError("region " + std::to_string(region.region_id) + " has level outside 1..5");
    RegionId parent = kRootRegion;
    if (region.level == 1) {
        if (region.parent_id) throw FormatError("level-1 region must not name a parent");
    } else {
        if (!region.parent_id || !contains(*region.parent_id))
            throw FormatError("region " + std::to_string(region.region_id) + " has unknown parent");
        parent = *region.parent_id;
        if (regions_.at(parent).level != region.level - 1)
            throw FormatError("region " + std::to_string(region.region_id) + " is not one level below its parent");
    }
    children_[parent].push_back(region.region_id);
    by_name_.emplace(region.name, region.region_id);
    regions_.emplace(region.region_id, std::move(region));
}

const AdminRegion& AdminTree::region(RegionId id) const {
    auto it = regions_.find(id);
    if (it == regions_.end()) throw FormatError("unknown region id " + std::to_string(id));
    return it->second;
}

std::span<const RegionId> AdminTree::children(RegionId id) const {
    auto it = children_.find(id);
    if (it == children_.end()) return {};
    return it->second;
}

std::vector<RegionId> AdminTree::regions_at_level(int level) const {
    std::vector<RegionId> out;
    for (const auto& [id, r] : regions_)
        if (r.level == level) out.push_back(id);
    return out;
}

std::vector<RegionId> AdminTree::find_by_name(std::string_view name) const {
    std::vector<RegionId> out;
    auto [lo, hi] = by_name_.equal_range(std::string(name));
    for (auto it = lo; it != hi; ++it) out.push_back(it->second);
    std::sort(out.begin(), out.end());
    return out;
}

RegionId AdminTree::parent_or_root(RegionId id) const {
    const auto& r = region(id);
    return r.parent_id.value_or(kRootRegion);
}

bool AdminTree::is_ancestor(RegionId ancestor, RegionId descendant) const {
    if (ancestor == kRootRegion) return contains(descendant);
    RegionId cur = descendant;
    while (cur != kRootRegion) {
        if (cur == ancestor) return true;
        cur = parent_or_root(cur);
    }
    return false;
}

std::vector<RegionId> AdminTree::descendants_at_level(RegionId ancestor, int level) const {
    std::vector<RegionId> frontier{ancestor};
    const int start_level = ancestor == kRootRegion ? 0 : region(ancestor).level;
    for (int l = start_level; l < level; ++l) {
        std::vector<RegionId> next;
        for (RegionId r : frontier)
            for (RegionId c : children(r)) next.push_back(c);
        frontier = std::move(next);
    }
    if (start_level > level) frontier.clear();
    std::sort(frontier.begin(), frontier.end());
    return frontier;
}

void AdminTree::validate() const {
    std::size_t listed = 0;
    for (const auto& [parent, kids] : children_) {
        for (RegionId c : kids) {
            const auto& r = region(c);
            if (r.parent_id.value_or(kRootRegion) != parent)
                throw FormatError("children list of " + std::to_string(parent) + " disagrees with parent_id");
        }
        listed += kids.size();
    }
    if (listed != regions_.size()) throw FormatError("region missing from children lists");
}

void save_admin_tree(const AdminTree& tree, const std::filesystem::path& path) {
    std::vector<nlohmann::json> rows;
    rows.reserve(tree.size());
    for (const auto& [id, r] : tree.regions()) rows.emplace_back(r);
    // Parent-before-child order so load() can insert line by line.
    std::stable_sort(rows.begin(), rows.end(),
                     [](const auto& a, const auto& b) { return a["level"].template get<int>() < b["level"].template get<int>(); });
    io::write_jsonl(path, rows);
}

AdminTree load_admin_tree(const std::filesystem::path& path) {
    AdminTree tree;
    io::for_each_jsonl(path, [&](const nlohmann::json& j, std::size_t line) {
        try {
            tree.add(j.get<AdminRegion>());
        } catch (const FormatError& e) {
            throw FormatError(path.string() + ":" + std::to_string(line) + ": " + e.what());
        }
    });
    tree.validate();
    return tree;
}

std::string& NormalizedAddress::admin_field(int level) {
    switch (level) {
        case 1: return province;
        case 2: return city;
        case 3: return district;
        case 4: return town;
        case 5: return road;
        default: throw DomainError("admin level out of range: " + std::to_string(level));
    }
}

const std::string& NormalizedAddress::admin_field(int level) const {
    return const_cast<NormalizedAddress*>(this)->admin_field(level);
}

void NormalizedAddress::recompose() {
    full_text.clear();
    for (const std::string* f : {&province, &city, &district, &town, &road, &road_number, &poi_name}) {
        if (f->empty()) continue;
        if (!full_text.empty()) full_text += ' ';
        full_text += *f;
    }
}

NormalizedAddress make_address(std::array<std::string, kAdminLevels> admin, std::string road_number,
                               std::string poi_name) {
    NormalizedAddress a;
    a.province = std::move(admin[0]);
    a.city = std::move(admin[1]);
    a.district = std::move(admin[2]);
    a.town = std::move(admin[3]);
    a.road = std::move(admin[4]);
    a.road_number = std::move(road_number);
    a.poi_name = std::move(poi_name);
    a.recompose();
    return a;
}

void to_json(nlohmann::json& j, const NormalizedAddress& a) {
    j = nlohmann::json{{"province", a.province}, {"city", a.city},         {"district", a.district},
                       {"town", a.town},         {"road", a.road},         {"road_number", a.road_number},
                       {"poi_name", a.poi_name}, {"full_text", a.full_text}};
}

void from_json(const nlohmann::json& j, NormalizedAddress& a) {
    j.at("province").get_to(a.province);
    j.at("city").get_to(a.city);
    j.at("district").get_to(a.district);
    j.at("town").get_to(a.town);
    j.at("road").get_to(a.road);
    j.at("road_number").get_to(a.road_number);
    j.at("poi_name").get_to(a.poi_name);
    j.at("full_text").get_to(a.full_text);
}

std::string_view entity_label_name(EntityLabel label) {
    switch (label) {
        case EntityLabel::Province: return "PROVINCE";
        case EntityLabel::City: return "CITY";
        case EntityLabel::District: return "DISTRICT";
        case EntityLabel::Town: return "TOWN";
        case EntityLabel::Road: return "ROAD";
        case EntityLabel::RoadNumber: return "ROAD_NUMBER";
        case EntityLabel::PoiName: return "POI_NAME";
        case EntityLabel::Other: return "OTHER";
    }
    return "OTHER";
}

std::vector<Word> split_words(std::string_view text) {
    std::vector<Word> out;
    std::size_t i = 0;
    auto is_sep = [](char c) { return std::isspace(static_cast<unsigned char>(c)) || c == ','; };
    while (i < text.size()) {
        while (i < text.size() && is_sep(text[i])) ++i;
        const std::size_t start = i;
        while (i < text.size() && !is_sep(text[i])) ++i;
        if (i > start) out.push_back({std::string(text.substr(start, i - start)), start, i});
    }
    return out;
}

void PoiNameSet::add(std::string_view name) {
    const auto words = split_words(name);
    if (words.empty()) return;
    std::string key;
    for (const auto& w : words) {
        if (!key.empty()) key += ' ';
        key += w.text;
    }
    names_[key] = words.size();
    max_words_ = std::max(max_words_, words.size());
}

std::size_t PoiNameSet::longest_match(std::span<const std::string> words, std::size_t pos) const {
    const std::size_t limit = std::min(max_words_, words.size() - std::min(pos, words.size()));
    for (std::size_t len = limit; len >= 1; --len) {
        std::string key;
        for (std::size_t k = 0; k < len; ++k) {
            if (k) key += ' ';
            key += words[pos + k];
        }
        if (names_.count(key)) return len;
    }
    return 0;
}

bool is_road_number(std::string_view word) {
    if (word.size() < 4 || word.substr(0, 3) != "No.") return false;
    return std::all_of(word.begin() + 3, word.end(), [](char c) { return std::isdigit(static_cast<unsigned char>(c)); });
}

namespace {

// Region named `name` strictly deeper than `last_level` and under `current`.
std::optional<RegionId> match_region(const AdminTree& tree, std::string_view name, RegionId current, int last_level) {
    for (RegionId id : tree.find_by_name(name)) {
        const auto& r = tree.region(id);
        if (r.level > last_level && tree.is_ancestor(current, id)) return id;
    }
    return std::nullopt;
}

}  // namespace

NormalizedAddress normalize(std::string_view raw_address, const AdminTree& tree, const PoiNameSet& pois) {
    const auto words = split_words(raw_address);
    if (words.empty()) throw NormalizationFailed("empty address");
    std::vector<std::string> texts;
    texts.reserve(words.size());
    for (const auto& w : words) texts.push_back(w.text);

    NormalizedAddress out;
    RegionId current = kRootRegion;
    int last_level = 0;
    bool any_region = false;
    for (std::size_t i = 0; i < texts.size(); ++i) {
        if (auto id = match_region(tree, texts[i], current, last_level)) {
            const auto& r = tree.region(*id);
            out.admin_field(r.level) = r.name;
            current = *id;
            last_level = r.level;
            any_region = true;
            continue;
        }
        if (out.road_number.empty() && is_road_number(texts[i])) {
            out.road_number = texts[i];
            continue;
        }
        if (out.poi_name.empty()) {
            if (std::size_t len = pois.longest_match(texts, i); len > 0) {
                for (std::size_t k = 0; k < len; ++k) {
                    if (k) out.poi_name += ' ';
                    out.poi_name += texts[i + k];
                }
                i += len - 1;
                continue;
            }
        }
        // House numbers, unit details and delivery remarks fall through here.
    }
    if (!any_region) throw NormalizationFailed(std::string(raw_address));
    out.recompose();
    return out;
}

std::vector<EntitySpan> segment(std::string_view full_text, const AdminTree& tree) {
    const auto words = split_words(full_text);
    std::vector<EntityLabel> labels(words.size(), EntityLabel::Other);
    RegionId current = kRootRegion;
    int last_level = 0;
    bool road_number_seen = false;
    std::size_t last_structured = 0;  // one past the last admin / road-number word
    for (std::size_t i = 0; i < words.size(); ++i) {
        if (auto id = match_region(tree, words[i].text, current, last_level)) {
            const auto& r = tree.region(*id);
            labels[i] = static_cast<EntityLabel>(r.level - 1);
            current = *id;
            last_level = r.level;
            last_structured = i + 1;
        } else if (!road_number_seen && is_road_number(words[i].text)) {
            labels[i] = EntityLabel::RoadNumber;
            road_number_seen = true;
            last_structured = i + 1;
        }
    }
    std::vector<EntitySpan> spans;
    for (std::size_t i = 0; i < words.size(); ++i) {
        if (i >= last_structured) {
            // Trailing free text is the POI name, one span across its words.
            spans.push_back({words[i].start, words.back().end, EntityLabel::PoiName});
            break;
        }
        spans.push_back({words[i].start, words[i].end, labels[i]});
    }
    return spans;
}

std::vector<RegionId> admin_path(const NormalizedAddress& addr, const AdminTree& tree) {
    std::vector<RegionId> path;
    RegionId current = kRootRegion;
    for (int level = 1; level <= kAdminLevels; ++level) {
        const std::string& name = addr.admin_field(level);
        if (name.empty()) continue;
        std::optional<RegionId> found;
        for (RegionId id : tree.find_by_name(name)) {
            if (tree.region(id).level == level && tree.is_ancestor(current, id)) {
                found = id;
                break;
            }
        }
        if (!found)
            throw InconsistentHierarchy("'" + name + "' (level " + std::to_string(level) + ") is not under " +
                                        (current == kRootRegion ? std::string("the root") : tree.region(current).name));
        path.push_back(*found);
        current = *found;
    }
    return path;
}

}  // namespace geoaddr
