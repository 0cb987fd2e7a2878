#include "tempo/error.hpp"
#include "tempo/geo_tiles.hpp"

#include <doctest.h>

#include <random>

using namespace tempo;

TEST_CASE("lonlat_to_tile at fixed points") {
    CHECK(lonlat_to_tile(0.0, 0.0) == TileId{8388608, 8388608, 24});
    CHECK(lonlat_to_tile(-180.0, mercator_lat_limit) == TileId{0, 0, 24});
    // Frozen from a 50-digit mpmath evaluation of the slippy formula:
    // x = 2683450.4545..., y = 6484745.2439...
    CHECK(lonlat_to_tile(-122.4194, 37.7749) == TileId{2683450, 6484745, 24});
}

TEST_CASE("lonlat_to_tile clamps at the world edge") {
    constexpr auto last = tiles_per_axis(24) - 1;
    CHECK(lonlat_to_tile(180.0, 0.0).x == last);
    CHECK(lonlat_to_tile(0.0, -mercator_lat_limit).y == last);
    CHECK(lonlat_to_tile(0.0, mercator_lat_limit).y == 0);
    CHECK(lonlat_to_tile(180.0, -mercator_lat_limit, 8) == TileId{255, 255, 8});
}

TEST_CASE("lonlat_to_tile rejects out-of-range input") {
    CHECK_THROWS_AS(lonlat_to_tile(180.5, 0.0), InputError);
    CHECK_THROWS_AS(lonlat_to_tile(0.0, 86.0), InputError);
    CHECK_THROWS_AS(lonlat_to_tile(std::nan(""), 0.0), InputError);
    CHECK_THROWS_AS(lonlat_to_tile(0.0, 0.0, 31), InputError);
}

TEST_CASE("tile_to_bbox corners") {
    const auto mid = tile_to_bbox(TileId{8388608, 8388608, 24});
    CHECK(std::abs(mid.lon_min) <= 1e-12);
    const auto nw = tile_to_bbox(TileId{0, 0, 24});
    CHECK(std::abs(nw.lon_min + 180.0) <= 1e-6);
    CHECK(std::abs(nw.lat_max - mercator_lat_limit) <= 1e-6);
    CHECK_THROWS_AS(tile_to_bbox(TileId{1u << 24, 0, 24}), InputError);
}

TEST_CASE("tile round trip over random tiles") {
    std::mt19937_64 rng(7);
    std::uniform_int_distribution<std::uint32_t> coord(0, tiles_per_axis(24) - 1);
    for (int i = 0; i < 10000; ++i) {
        const TileId t{coord(rng), coord(rng), 24};
        const auto b = tile_to_bbox(t);
        REQUIRE(lonlat_to_tile(b.center_lon(), b.center_lat()) == t);
        const auto g = make_grid(b);
        REQUIRE(g.width == 1);
        REQUIRE(g.height == 1);
        const auto cell = grid_index(g, t);
        REQUIRE(cell.has_value());
        REQUIRE(*cell == GridCell{0, 0});
    }
}

TEST_CASE("make_grid spans") {
    const TileId a{1000, 2000, 12};
    const TileId b{1001, 2002, 12};
    const auto ba = tile_to_bbox(a);
    const auto bb = tile_to_bbox(b);
    const auto g = make_grid(GeoBBox{ba.lon_min, bb.lat_min, bb.lon_max, ba.lat_max}, 12);
    CHECK(g.origin == a);
    CHECK(g.width == 2);
    CHECK(g.height == 3);

    const auto eq = make_grid(GeoBBox{10.0, -0.5, 10.5, 0.5}, 10);
    CHECK(eq.origin.y < (1u << 9));
    CHECK(eq.origin.y + eq.height - 1 >= (1u << 9));

    CHECK_THROWS_AS(make_grid(GeoBBox{1.0, 1.0, 1.0, 2.0}), InputError);
    CHECK_THROWS_AS(make_grid(GeoBBox{2.0, 1.0, 1.0, 2.0}), InputError);
}

TEST_CASE("grid_index") {
    const TileGrid g{TileId{10, 20, 10}, 3, 2};
    CHECK(*grid_index(g, TileId{10, 20, 10}) == GridCell{0, 0});
    CHECK(*grid_index(g, TileId{11, 20, 10}) == GridCell{0, 1});
    CHECK(*grid_index(g, TileId{12, 21, 10}) == GridCell{1, 2});
    CHECK_FALSE(grid_index(g, TileId{13, 20, 10}).has_value());
    CHECK_FALSE(grid_index(g, TileId{10, 19, 10}).has_value());
    CHECK_FALSE(grid_index(g, TileId{10, 20, 11}).has_value());
}

TEST_CASE("projection is monotone") {
    std::mt19937_64 rng(11);
    std::uniform_real_distribution<double> lon(-180.0, 180.0);
    std::uniform_real_distribution<double> lat(-mercator_lat_limit, mercator_lat_limit);
    for (int i = 0; i < 2000; ++i) {
        auto l0 = lon(rng), l1 = lon(rng);
        auto p0 = lat(rng), p1 = lat(rng);
        if (l0 > l1) std::swap(l0, l1);
        if (p0 > p1) std::swap(p0, p1);
        REQUIRE(lonlat_to_tile(l0, p0).x <= lonlat_to_tile(l1, p0).x);
        REQUIRE(lonlat_to_tile(l0, p0).y >= lonlat_to_tile(l0, p1).y);
    }
}
