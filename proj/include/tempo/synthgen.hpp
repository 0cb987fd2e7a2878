#pragma once

#include "tempo/ingest.hpp"
#include "tempo/raster.hpp"

#include <nlohmann/json_fwd.hpp>

#include <array>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <string>
#include <vector>

namespace tempo {

inline constexpr std::size_t hours_per_week = 168;

/// Monday 2023-11-13 00:00 UTC; scenes treat t0 as local Monday midnight.
inline constexpr std::int64_t default_scene_t0 = 1699833600;

/**
 * Synthetic land-use class. The weekly profile has mean 1 and carries the
 * shape of the activity; base_rate (records per hour) carries the volume.
 */
struct Archetype {
    std::string name;
    double base_rate = 1.0;
    double noise_sigma = 0.0; ///< lognormal per-bucket jitter
    std::array<double, hours_per_week> profile{};
};

/// Profiles shipped in data/archetypes.json: commercial, residential, golf, grocery, intersection, rural.
const std::vector<Archetype>& default_archetypes();

/// Parses an archetype table; profiles are rescaled to mean 1.
std::vector<Archetype> parse_archetypes(const nlohmann::json& j);

/// Index of `name` in `set`; throws InputError when absent.
std::size_t archetype_index(const std::vector<Archetype>& set, std::string_view name);

struct DensityCenter {
    double row = 0.0;
    double col = 0.0;
    double sigma = 1.0; ///< in tiles
};

/// Spatial multiplier on archetype base rates: floor + (peak - floor) * max_i gauss_i.
struct DensityField {
    double floor = 1.0;
    double peak = 1.0;
    std::vector<DensityCenter> centers;

    [[nodiscard]] double at(std::uint32_t row, std::uint32_t col) const;
};

struct SceneSpec {
    TileGrid grid;
    TimeWindow window{default_scene_t0, 3600, 672};
    std::uint64_t seed = 0;
    std::vector<Archetype> archetypes = default_archetypes();
    std::vector<std::uint8_t> assignment; ///< archetype index per cell, row-major
    DensityField density;

    /// Expected records per hour of the cell, before profile and jitter.
    [[nodiscard]] double rate(std::uint32_t row, std::uint32_t col) const;
    [[nodiscard]] const Archetype& archetype_at(std::uint32_t row, std::uint32_t col) const {
        return archetypes[assignment[std::size_t{row} * grid.width + col]];
    }
};

void validate(const SceneSpec& s);

struct SceneLayout {
    std::uint32_t width = 64;
    std::uint32_t height = 64;
    std::uint32_t patch = 4; ///< archetypes are assigned per patch x patch block
    double lon = -122.4194;  ///< northwest corner
    double lat = 37.7749;
    std::uint32_t zoom = default_zoom;
};

/// Seeded patchwork of the default archetypes over a density field with two activity centres.
SceneSpec make_default_scene(const SceneLayout& layout, std::uint64_t seed,
                             const TimeWindow& window = {default_scene_t0, 3600, 672});

nlohmann::json scene_to_json(const SceneSpec& s);
/// Archetype names refer to `library` (default archetypes unless given).
SceneSpec scene_from_json(const nlohmann::json& j, const std::vector<Archetype>& library = default_archetypes());
SceneSpec load_scene(const std::filesystem::path& path);
void save_scene(const SceneSpec& s, const std::filesystem::path& path);

/// counts[k] ~ Poisson(rate * dt/3600 * profile[hour of week] * jitter), one seeded stream per tile.
DenseSeries generate_counts(const SceneSpec& spec);

/// Non-empty tiles of a dense series keyed by tile; the shape `aggregate` produces.
SeriesMap sparse_series(const DenseSeries& dense);

/**
 * Writes one record per counted event: uniform position inside the tile,
 * uniform timestamp inside the bucket, modality driving. Returns the number
 * of records written.
 */
std::uint64_t emit_records(const DenseSeries& counts, const SceneSpec& spec, std::ostream& out,
                           RecordFormat format = RecordFormat::csv);
std::uint64_t emit_records_file(const DenseSeries& counts, const SceneSpec& spec,
                                const std::filesystem::path& path);

enum class LabelTask { res_vs_com, strata, activity_area, archetype };

std::string_view to_string(LabelTask t) noexcept;
LabelTask parse_label_task(std::string_view s);

/// Ground-truth labels derived from the archetype assignment and tile rates.
LabelRaster label_raster(const SceneSpec& spec, LabelTask task);

/// Single-channel raster of per-tile expected hourly rates.
FloatRaster rate_raster(const SceneSpec& spec);

} // namespace tempo
