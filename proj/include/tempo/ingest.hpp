#pragma once

#include "tempo/geo_tiles.hpp"

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace tempo {

enum class Modality : std::uint8_t { driving, walking, biking, unknown };

std::string_view to_string(Modality m) noexcept;
std::optional<Modality> parse_modality(std::string_view s) noexcept;

struct GpsRecord {
    std::int64_t timestamp = 0; ///< unix seconds
    double lon = 0.0;
    double lat = 0.0;
    Modality modality = Modality::unknown;
    std::string trajectory_id;

    friend bool operator==(const GpsRecord&, const GpsRecord&) = default;
};

/// N consecutive buckets of dt seconds starting at t0.
struct TimeWindow {
    std::int64_t t0 = 0;
    std::int64_t dt = 3600;
    std::uint32_t n = 672;

    [[nodiscard]] std::int64_t end() const noexcept { return t0 + dt * std::int64_t{n}; }

    friend bool operator==(const TimeWindow&, const TimeWindow&) = default;
};

void validate(const TimeWindow& w);

struct ActivitySeries {
    TileId tile;
    std::vector<std::uint32_t> counts;
    TimeWindow window;

    [[nodiscard]] std::uint64_t total() const noexcept;

    friend bool operator==(const ActivitySeries&, const ActivitySeries&) = default;
};

using SeriesMap = std::map<TileId, ActivitySeries>;

enum class RecordFormat { csv, jsonl };

struct ParseIssue {
    std::size_t line = 0; ///< 1-based
    std::string message;
};

struct ParseResult {
    std::vector<GpsRecord> records;
    std::vector<ParseIssue> errors;
    std::size_t lines = 0; ///< non-blank lines examined
};

/**
 * Reads one record per line. Malformed lines are collected in the error
 * report; the parse only fails outright when the stream is unreadable or
 * more than half of the non-blank lines are malformed. A CSV header line
 * is accepted as the first line.
 */
ParseResult parse_records(std::istream& in, RecordFormat format);

/// Format is picked from the extension (.csv / .jsonl, optionally + .gz).
ParseResult parse_file(const std::filesystem::path& path);

RecordFormat format_for_path(const std::filesystem::path& path);

/// Concatenates shard reports; errors end up sorted by line number.
ParseResult merge_parse_results(std::vector<ParseResult> shards);

std::string format_record(const GpsRecord& r, RecordFormat format);

enum class CountMode {
    records,             ///< every GPS fix counts
    unique_trajectories, ///< each trajectory counts once per tile and bucket
};

struct AggregateOptions {
    std::optional<Modality> modality = Modality::driving; ///< nullopt keeps all
    CountMode mode = CountMode::records;
    std::uint32_t zoom = default_zoom;
};

/// Buckets are half-open: [t0 + k*dt, t0 + (k+1)*dt).
SeriesMap aggregate(std::span<const GpsRecord> records, const TimeWindow& window,
                    const AggregateOptions& options = {});

/// Element-wise count addition. Only meaningful for CountMode::records.
void merge_into(SeriesMap& into, const SeriesMap& other);

/// Aggregates contiguous partitions on up to `threads` workers and merges.
SeriesMap aggregate_sharded(std::span<const GpsRecord> records, const TimeWindow& window,
                            const AggregateOptions& options, unsigned threads);

/// Series for every cell of a grid, row-major.
struct DenseSeries {
    TileGrid grid;
    TimeWindow window;
    std::vector<ActivitySeries> cells;
    std::vector<std::uint8_t> has_data;

    [[nodiscard]] const ActivitySeries& at(std::uint32_t row, std::uint32_t col) const {
        return cells[std::size_t{row} * grid.width + col];
    }
};

DenseSeries densify(const SeriesMap& series, const TileGrid& grid, const TimeWindow& window);

/// Reads a whole file, transparently gunzipping names ending in .gz.
std::string read_text_file(const std::filesystem::path& path);

/// Writes a whole file, gzip-compressing names ending in .gz.
void write_text_file(const std::filesystem::path& path, std::string_view content);

} // namespace tempo
