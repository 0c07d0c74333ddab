#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "geoaddr/world.hpp"

namespace geoaddr {

inline constexpr int kMaxCellLevel = 22;
inline constexpr int kPretrainCellLevel = 18;
inline constexpr int kFinetuneCellLevel = 22;
inline constexpr double kEarthRadiusKm = 6371.0;

// Cube-face quadtree cell: one of 6 faces, then `level` quadrant digits.
struct CellId {
    int face = 0;
    int level = 0;
    std::vector<std::uint8_t> path;  // each digit in 0..3, (i_bit << 1) | j_bit

    bool operator==(const CellId&) const = default;
    // Ancestor at a coarser level (path prefix).
    CellId parent(int at_level) const;
};

struct LabelChars {
    std::string chars;  // alphabet {'0','1','2'}
    int level = 0;

    bool operator==(const LabelChars&) const = default;
};

// 3 * ceil(level / 2).
constexpr int label_length(int level) { return 3 * ((level + 1) / 2); }

CellId cell_from_latlon(double lat, double lon, int level);
inline CellId cell_from_latlon(LatLon p, int level) { return cell_from_latlon(p.lat, p.lon, level); }
LatLon cell_center(const CellId& c);
LatLon cell_vertex(const CellId& c, int corner);  // corners 0..3
double cell_area_m2(const CellId& c);

LabelChars encode_2lt3c(const CellId& c);
// Throws FormatError on characters outside {0,1,2} or digit groups that do
// not correspond to a quadrant pair.
CellId decode_2lt3c(const LabelChars& l, int face);
// As decode_2lt3c but clamps out-of-range groups; for argmax model outputs.
CellId decode_2lt3c_clamped(const LabelChars& l, int face);

double haversine_km(LatLon a, LatLon b);

}  // namespace geoaddr
