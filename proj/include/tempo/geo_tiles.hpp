#pragma once

#include <compare>
#include <cstdint>
#include <optional>

namespace tempo {

/// Latitude bound of the spherical Mercator projection, in degrees.
inline constexpr double mercator_lat_limit = 85.05112878;

inline constexpr std::uint32_t default_zoom = 24;
inline constexpr std::uint32_t max_zoom = 30;

inline constexpr std::uint32_t tiles_per_axis(std::uint32_t zoom) noexcept {
    return std::uint32_t{1} << zoom;
}

/**
 * A slippy-map tile. Rows grow southward: y = 0 touches the northern
 * projection limit.
 */
struct TileId {
    std::uint32_t x = 0;
    std::uint32_t y = 0;
    std::uint32_t zoom = default_zoom;

    friend auto operator<=>(const TileId&, const TileId&) = default;
};

/// Throws InputError when the tile lies outside its zoom level.
void validate(const TileId& t);

struct GeoBBox {
    double lon_min = 0.0;
    double lat_min = 0.0;
    double lon_max = 0.0;
    double lat_max = 0.0;

    [[nodiscard]] double center_lon() const noexcept { return 0.5 * (lon_min + lon_max); }
    [[nodiscard]] double center_lat() const noexcept { return 0.5 * (lat_min + lat_max); }
};

/// Throws InputError for inverted, zero-area or out-of-projection boxes.
void validate(const GeoBBox& b);

struct GridCell {
    std::uint32_t row = 0;
    std::uint32_t col = 0;

    friend bool operator==(const GridCell&, const GridCell&) = default;
};

/// Rectangular block of tiles; origin is the northwest tile.
struct TileGrid {
    TileId origin;
    std::uint32_t width = 1;
    std::uint32_t height = 1;

    [[nodiscard]] std::size_t cell_count() const noexcept {
        return std::size_t{width} * height;
    }
    [[nodiscard]] std::uint32_t zoom() const noexcept { return origin.zoom; }
    [[nodiscard]] TileId tile_at(std::uint32_t row, std::uint32_t col) const noexcept {
        return TileId{origin.x + col, origin.y + row, origin.zoom};
    }

    friend bool operator==(const TileGrid&, const TileGrid&) = default;
};

void validate(const TileGrid& g);

/// Continuous tile-space coordinates of a point (x grows east, y south).
struct TileCoord {
    double x = 0.0;
    double y = 0.0;
};

TileCoord lonlat_to_tile_coord(double lon, double lat, std::uint32_t zoom = default_zoom);

/// Inverse of lonlat_to_tile_coord; returns {lon, lat}.
std::pair<double, double> tile_coord_to_lonlat(const TileCoord& c, std::uint32_t zoom = default_zoom);

/**
 * Tile containing (lon, lat). Points on the eastern or southern edge of the
 * world clamp to the last column or row rather than wrapping.
 */
TileId lonlat_to_tile(double lon, double lat, std::uint32_t zoom = default_zoom);

GeoBBox tile_to_bbox(const TileId& t);

/// Smallest grid of tiles covering the box. Edges that fall on a tile
/// boundary do not pull in the neighbouring tile.
TileGrid make_grid(const GeoBBox& bbox, std::uint32_t zoom = default_zoom);

std::optional<GridCell> grid_index(const TileGrid& g, const TileId& t) noexcept;

} // namespace tempo
