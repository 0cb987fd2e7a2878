#include "tempo/geo_tiles.hpp"

#include "tempo/error.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <string>

namespace tempo {

namespace {

// Tolerance, in tile units, for snapping bbox edges onto tile boundaries.
constexpr double edge_snap = 1e-6;

void check_zoom(std::uint32_t zoom) {
    if (zoom > max_zoom) {
        throw InputError("zoom " + std::to_string(zoom) + " exceeds " + std::to_string(max_zoom));
    }
}

void check_lonlat(double lon, double lat) {
    if (!std::isfinite(lon) || !std::isfinite(lat) || lon < -180.0 || lon > 180.0 ||
        std::abs(lat) > mercator_lat_limit) {
        throw InputError("coordinate (" + std::to_string(lon) + ", " + std::to_string(lat) +
                         ") outside the Mercator domain");
    }
}

std::uint32_t clamp_index(double v, std::uint32_t n) {
    if (v < 0.0) {
        return 0;
    }
    if (v >= static_cast<double>(n)) {
        return n - 1;
    }
    return static_cast<std::uint32_t>(v);
}

} // namespace

void validate(const TileId& t) {
    check_zoom(t.zoom);
    const auto n = tiles_per_axis(t.zoom);
    if (t.x >= n || t.y >= n) {
        throw InputError("tile (" + std::to_string(t.x) + ", " + std::to_string(t.y) +
                         ") outside zoom " + std::to_string(t.zoom));
    }
}

void validate(const GeoBBox& b) {
    check_lonlat(b.lon_min, b.lat_min);
    check_lonlat(b.lon_max, b.lat_max);
    if (!(b.lon_min < b.lon_max) || !(b.lat_min < b.lat_max)) {
        throw InputError("degenerate bounding box");
    }
}

void validate(const TileGrid& g) {
    validate(g.origin);
    const auto n = std::uint64_t{tiles_per_axis(g.origin.zoom)};
    if (g.width < 1 || g.height < 1 || g.origin.x + std::uint64_t{g.width} > n ||
        g.origin.y + std::uint64_t{g.height} > n) {
        throw InputError("tile grid exceeds the world at zoom " + std::to_string(g.origin.zoom));
    }
}

TileCoord lonlat_to_tile_coord(double lon, double lat, std::uint32_t zoom) {
    check_zoom(zoom);
    check_lonlat(lon, lat);
    const double n = tiles_per_axis(zoom);
    const double rad = lat * std::numbers::pi / 180.0;
    return TileCoord{
        (lon + 180.0) / 360.0 * n,
        (1.0 - std::log(std::tan(rad) + 1.0 / std::cos(rad)) / std::numbers::pi) / 2.0 * n,
    };
}

std::pair<double, double> tile_coord_to_lonlat(const TileCoord& c, std::uint32_t zoom) {
    check_zoom(zoom);
    const double n = tiles_per_axis(zoom);
    const double lon = c.x / n * 360.0 - 180.0;
    const double lat =
        std::atan(std::sinh(std::numbers::pi * (1.0 - 2.0 * c.y / n))) * 180.0 / std::numbers::pi;
    return {lon, lat};
}

TileId lonlat_to_tile(double lon, double lat, std::uint32_t zoom) {
    const auto c = lonlat_to_tile_coord(lon, lat, zoom);
    const auto n = tiles_per_axis(zoom);
    return TileId{clamp_index(std::floor(c.x), n), clamp_index(std::floor(c.y), n), zoom};
}

GeoBBox tile_to_bbox(const TileId& t) {
    validate(t);
    const auto [west, north] = tile_coord_to_lonlat({double(t.x), double(t.y)}, t.zoom);
    const auto [east, south] = tile_coord_to_lonlat({double(t.x) + 1.0, double(t.y) + 1.0}, t.zoom);
    return GeoBBox{west, south, east, north};
}

TileGrid make_grid(const GeoBBox& bbox, std::uint32_t zoom) {
    validate(bbox);
    const auto n = tiles_per_axis(zoom);
    const auto nw = lonlat_to_tile_coord(bbox.lon_min, bbox.lat_max, zoom);
    const auto se = lonlat_to_tile_coord(bbox.lon_max, bbox.lat_min, zoom);

    const auto x0 = clamp_index(std::floor(nw.x + edge_snap), n);
    const auto y0 = clamp_index(std::floor(nw.y + edge_snap), n);
    const auto x1 = std::max(x0, clamp_index(std::ceil(se.x - edge_snap) - 1.0, n));
    const auto y1 = std::max(y0, clamp_index(std::ceil(se.y - edge_snap) - 1.0, n));

    TileGrid g{TileId{x0, y0, zoom}, x1 - x0 + 1, y1 - y0 + 1};
    validate(g);
    return g;
}

std::optional<GridCell> grid_index(const TileGrid& g, const TileId& t) noexcept {
    if (t.zoom != g.origin.zoom || t.x < g.origin.x || t.y < g.origin.y) {
        return std::nullopt;
    }
    const auto col = t.x - g.origin.x;
    const auto row = t.y - g.origin.y;
    if (col >= g.width || row >= g.height) {
        return std::nullopt;
    }
    return GridCell{row, col};
}

} // namespace tempo
