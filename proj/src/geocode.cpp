#include "geoaddr/geocode.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <numbers>

#include "geoaddr/errors.hpp"

namespace geoaddr {

namespace {

using Vec3 = std::array<double, 3>;

constexpr double kDeg = std::numbers::pi / 180.0;

Vec3 to_xyz(double lat, double lon) {
    const double la = lat * kDeg, lo = lon * kDeg;
    return {std::cos(la) * std::cos(lo), std::cos(la) * std::sin(lo), std::sin(la)};
}

LatLon to_latlon(const Vec3& p) {
    const double lat = std::atan2(p[2], std::hypot(p[0], p[1]));
    const double lon = std::atan2(p[1], p[0]);
    return {lat / kDeg, lon / kDeg};
}

int face_of(const Vec3& p) {
    int axis = 0;
    if (std::abs(p[1]) > std::abs(p[axis])) axis = 1;
    if (std::abs(p[2]) > std::abs(p[axis])) axis = 2;
    return p[axis] < 0 ? axis + 3 : axis;
}

void xyz_to_uv(int face, const Vec3& p, double& u, double& v) {
    switch (face) {
        case 0: u = p[1] / p[0]; v = p[2] / p[0]; break;
        case 1: u = -p[0] / p[1]; v = p[2] / p[1]; break;
        case 2: u = -p[0] / p[2]; v = -p[1] / p[2]; break;
        case 3: u = p[2] / p[0]; v = p[1] / p[0]; break;
        case 4: u = p[2] / p[1]; v = -p[0] / p[1]; break;
        default: u = -p[1] / p[2]; v = -p[0] / p[2]; break;
    }
}

Vec3 uv_to_xyz(int face, double u, double v) {
    switch (face) {
        case 0: return {1.0, u, v};
        case 1: return {-u, 1.0, v};
        case 2: return {-u, -v, 1.0};
        case 3: return {-1.0, -v, -u};
        case 4: return {v, -1.0, -u};
        default: return {v, u, -1.0};
    }
}

// Tangent transform between the face coordinate u in [-1,1] and the grid
// coordinate s in [0,1]. Keeps cell areas within about 1.41x of each other;
// the quadratic variant reaches about 2.08x.
double uv_to_st(double u) { return 0.5 * (1.0 + std::atan(u) * 4.0 / std::numbers::pi); }
double st_to_uv(double s) { return std::tan(std::numbers::pi / 4.0 * (2.0 * s - 1.0)); }

void path_to_ij(const CellId& c, std::uint64_t& i, std::uint64_t& j) {
    i = j = 0;
    for (auto d : c.path) {
        i = (i << 1) | (d >> 1);
        j = (j << 1) | (d & 1u);
    }
}

void check_cell(const CellId& c) {
    if (c.face < 0 || c.face > 5) throw DomainError("cell face must be 0..5");
    if (c.level < 1 || c.level > kMaxCellLevel) throw DomainError("cell level must be 1..22");
    if (c.path.size() != static_cast<std::size_t>(c.level)) throw DomainError("cell path length must equal level");
    for (auto d : c.path)
        if (d > 3) throw DomainError("cell path digit outside 0..3");
}

LatLon grid_point(const CellId& c, double di, double dj) {
    check_cell(c);
    std::uint64_t i, j;
    path_to_ij(c, i, j);
    const double scale = std::ldexp(1.0, -c.level);
    const double s = (static_cast<double>(i) + di) * scale;
    const double t = (static_cast<double>(j) + dj) * scale;
    return to_latlon(uv_to_xyz(c.face, st_to_uv(s), st_to_uv(t)));
}

Vec3 unit(const Vec3& p) {
    const double r = std::sqrt(p[0] * p[0] + p[1] * p[1] + p[2] * p[2]);
    return {p[0] / r, p[1] / r, p[2] / r};
}

double dot(const Vec3& a, const Vec3& b) { return a[0] * b[0] + a[1] * b[1] + a[2] * b[2]; }

double triangle_area(const Vec3& a, const Vec3& b, const Vec3& c) {
    const Vec3 bxc{b[1] * c[2] - b[2] * c[1], b[2] * c[0] - b[0] * c[2], b[0] * c[1] - b[1] * c[0]};
    const double num = std::abs(dot(a, bxc));
    const double den = 1.0 + dot(a, b) + dot(b, c) + dot(c, a);
    return 2.0 * std::atan2(num, den);
}

}  // namespace

CellId CellId::parent(int at_level) const {
    if (at_level < 1 || at_level > level) throw DomainError("parent level out of range");
    CellId p;
    p.face = face;
    p.level = at_level;
    p.path.assign(path.begin(), path.begin() + at_level);
    return p;
}

CellId cell_from_latlon(double lat, double lon, int level) {
    if (!(lat >= -90.0 && lat <= 90.0) || !(lon >= -180.0 && lon <= 180.0))
        throw DomainError("coordinates out of range");
    if (level < 1 || level > kMaxCellLevel) throw DomainError("cell level must be 1..22");
    const Vec3 p = to_xyz(lat, lon);
    CellId c;
    c.face = face_of(p);
    c.level = level;
    double u, v;
    xyz_to_uv(c.face, p, u, v);
    const std::uint64_t cells = std::uint64_t{1} << level;
    auto cell_index = [&](double st) {
        const double x = std::floor(st * static_cast<double>(cells));
        return static_cast<std::uint64_t>(std::clamp(x, 0.0, static_cast<double>(cells - 1)));
    };
    const std::uint64_t i = cell_index(uv_to_st(u));
    const std::uint64_t j = cell_index(uv_to_st(v));
    c.path.resize(static_cast<std::size_t>(level));
    for (int k = 0; k < level; ++k) {
        const int bit = level - 1 - k;
        c.path[static_cast<std::size_t>(k)] = static_cast<std::uint8_t>((((i >> bit) & 1u) << 1) | ((j >> bit) & 1u));
    }
    return c;
}

LatLon cell_center(const CellId& c) { return grid_point(c, 0.5, 0.5); }

LatLon cell_vertex(const CellId& c, int corner) {
    static constexpr double kCorners[4][2] = {{0, 0}, {1, 0}, {1, 1}, {0, 1}};
    if (corner < 0 || corner > 3) throw DomainError("corner must be 0..3");
    return grid_point(c, kCorners[corner][0], kCorners[corner][1]);
}

double cell_area_m2(const CellId& c) {
    std::array<Vec3, 4> v;
    for (int k = 0; k < 4; ++k) {
        const LatLon p = cell_vertex(c, k);
        v[static_cast<std::size_t>(k)] = unit(to_xyz(p.lat, p.lon));
    }
    const double steradians = triangle_area(v[0], v[1], v[2]) + triangle_area(v[0], v[2], v[3]);
    const double r_m = kEarthRadiusKm * 1000.0;
    return steradians * r_m * r_m;
}

LabelChars encode_2lt3c(const CellId& c) {
    check_cell(c);
    LabelChars out;
    out.level = c.level;
    out.chars.reserve(static_cast<std::size_t>(label_length(c.level)));
    for (int k = 0; k < c.level; k += 2) {
        int value = c.path[static_cast<std::size_t>(k)];
        if (k + 1 < c.level) value = 4 * value + c.path[static_cast<std::size_t>(k + 1)];
        out.chars += static_cast<char>('0' + value / 9);
        out.chars += static_cast<char>('0' + (value / 3) % 3);
        out.chars += static_cast<char>('0' + value % 3);
    }
    return out;
}

namespace {

CellId decode_impl(const LabelChars& l, int face, bool clamp) {
    if (face < 0 || face > 5) throw DomainError("cell face must be 0..5");
    if (l.level < 1 || l.level > kMaxCellLevel) throw FormatError("label level must be 1..22");
    if (l.chars.size() != static_cast<std::size_t>(label_length(l.level)))
        throw FormatError("label length " + std::to_string(l.chars.size()) + " does not match level " +
                          std::to_string(l.level));
    CellId c;
    c.face = face;
    c.level = l.level;
    for (std::size_t g = 0; g < l.chars.size(); g += 3) {
        int value = 0;
        for (std::size_t k = 0; k < 3; ++k) {
            const char ch = l.chars[g + k];
            if (ch < '0' || ch > '2') throw FormatError(std::string("label character '") + ch + "' outside {0,1,2}");
            value = 3 * value + (ch - '0');
        }
        const int level_at = static_cast<int>(g / 3) * 2;
        const bool paired = level_at + 1 < l.level;
        const int limit = paired ? 15 : 3;
        if (value > limit) {
            if (!clamp) throw FormatError("label group value " + std::to_string(value) + " is not a quadrant code");
            value = limit;
        }
        if (paired) {
            c.path.push_back(static_cast<std::uint8_t>(value / 4));
            c.path.push_back(static_cast<std::uint8_t>(value % 4));
        } else {
            c.path.push_back(static_cast<std::uint8_t>(value));
        }
    }
    return c;
}

}  // namespace

CellId decode_2lt3c(const LabelChars& l, int face) { return decode_impl(l, face, false); }
CellId decode_2lt3c_clamped(const LabelChars& l, int face) { return decode_impl(l, face, true); }

double haversine_km(LatLon a, LatLon b) {
    const double dlat = (b.lat - a.lat) * kDeg;
    const double dlon = (b.lon - a.lon) * kDeg;
    const double h = std::sin(dlat / 2) * std::sin(dlat / 2) +
                     std::cos(a.lat * kDeg) * std::cos(b.lat * kDeg) * std::sin(dlon / 2) * std::sin(dlon / 2);
    return 2.0 * kEarthRadiusKm * std::asin(std::min(1.0, std::sqrt(h)));
}

}  // namespace geoaddr
