#include "tempo/ingest.hpp"

#include "tempo/error.hpp"

#include <nlohmann/json.hpp>
#include <spdlog/spdlog.h>
#include <zlib.h>

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <set>
#include <sstream>
#include <thread>
#include <tuple>

namespace tempo {

namespace {

constexpr std::string_view csv_header = "timestamp,lon,lat,modality,trajectory_id";

bool ends_with(const std::string& s, std::string_view suffix) {
    return s.size() >= suffix.size() && s.compare(s.size() - suffix.size(), suffix.size(), suffix) == 0;
}

template <typename T>
bool parse_number(std::string_view s, T& out) {
    const auto* first = s.data();
    const auto* last = s.data() + s.size();
    auto [ptr, ec] = std::from_chars(first, last, out);
    return ec == std::errc{} && ptr == last;
}

std::string_view trim(std::string_view s) {
    while (!s.empty() && (s.back() == '\r' || s.back() == ' ' || s.back() == '\t')) {
        s.remove_suffix(1);
    }
    while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) {
        s.remove_prefix(1);
    }
    return s;
}

// Returns an empty string on success, otherwise the reason the record is unusable.
std::string check_record(const GpsRecord& r) {
    if (r.timestamp < 0) {
        return "negative timestamp";
    }
    if (!std::isfinite(r.lon) || !std::isfinite(r.lat) || r.lon < -180.0 || r.lon > 180.0 ||
        std::abs(r.lat) > mercator_lat_limit) {
        return "coordinate outside projection bounds";
    }
    return {};
}

std::string parse_csv_line(std::string_view line, GpsRecord& r) {
    std::string_view fields[5];
    std::size_t count = 0;
    std::size_t start = 0;
    while (true) {
        const auto comma = line.find(',', start);
        if (count == 5) {
            return "too many fields";
        }
        fields[count++] = trim(line.substr(start, comma == std::string_view::npos ? line.npos : comma - start));
        if (comma == std::string_view::npos) {
            break;
        }
        start = comma + 1;
    }
    if (count != 5) {
        return "expected 5 fields, found " + std::to_string(count);
    }
    if (!parse_number(fields[0], r.timestamp)) {
        return "bad timestamp";
    }
    if (!parse_number(fields[1], r.lon) || !parse_number(fields[2], r.lat)) {
        return "bad coordinate";
    }
    const auto m = parse_modality(fields[3]);
    if (!m) {
        return "unknown modality '" + std::string(fields[3]) + "'";
    }
    r.modality = *m;
    r.trajectory_id.assign(fields[4]);
    return check_record(r);
}

std::string parse_jsonl_line(std::string_view line, GpsRecord& r) {
    const auto j = nlohmann::json::parse(line, nullptr, false);
    if (j.is_discarded() || !j.is_object()) {
        return "not a JSON object";
    }
    try {
        const auto& ts = j.at("timestamp");
        if (!ts.is_number_integer()) {
            return "bad timestamp";
        }
        r.timestamp = ts.get<std::int64_t>();
        const auto& lon = j.at("lon");
        const auto& lat = j.at("lat");
        if (!lon.is_number() || !lat.is_number()) {
            return "bad coordinate";
        }
        r.lon = lon.get<double>();
        r.lat = lat.get<double>();
        const auto m = parse_modality(j.at("modality").get<std::string>());
        if (!m) {
            return "unknown modality";
        }
        r.modality = *m;
        const auto& id = j.at("trajectory_id");
        r.trajectory_id = id.is_string() ? id.get<std::string>() : id.dump();
    } catch (const nlohmann::json::exception& e) {
        return std::string("missing or mistyped field: ") + e.what();
    }
    return check_record(r);
}

template <typename F>
void for_each_tile_bucket(std::span<const GpsRecord> records, const TimeWindow& window,
                          const AggregateOptions& options, F&& visit) {
    for (const auto& r : records) {
        if (options.modality && r.modality != *options.modality) {
            continue;
        }
        if (r.timestamp < window.t0 || r.timestamp >= window.end()) {
            continue;
        }
        const auto bucket = static_cast<std::uint32_t>((r.timestamp - window.t0) / window.dt);
        visit(lonlat_to_tile(r.lon, r.lat, options.zoom), bucket, r);
    }
}

ActivitySeries& series_for(SeriesMap& m, const TileId& t, const TimeWindow& window) {
    auto it = m.find(t);
    if (it == m.end()) {
        it = m.emplace(t, ActivitySeries{t, std::vector<std::uint32_t>(window.n, 0), window}).first;
    }
    return it->second;
}

} // namespace

std::string_view to_string(Modality m) noexcept {
    switch (m) {
    case Modality::driving: return "driving";
    case Modality::walking: return "walking";
    case Modality::biking: return "biking";
    case Modality::unknown: return "unknown";
    }
    return "unknown";
}

std::optional<Modality> parse_modality(std::string_view s) noexcept {
    if (s == "driving") return Modality::driving;
    if (s == "walking") return Modality::walking;
    if (s == "biking") return Modality::biking;
    if (s == "unknown") return Modality::unknown;
    return std::nullopt;
}

void validate(const TimeWindow& w) {
    if (w.dt <= 0) {
        throw InputError("time window bucket length must be positive");
    }
    if (w.n < 2) {
        throw InputError("time window needs at least 2 buckets");
    }
    if (w.t0 < 0) {
        throw InputError("time window start must be non-negative");
    }
}

std::uint64_t ActivitySeries::total() const noexcept {
    std::uint64_t s = 0;
    for (auto c : counts) {
        s += c;
    }
    return s;
}

ParseResult parse_records(std::istream& in, RecordFormat format) {
    if (!in) {
        throw IoError("record stream is not readable");
    }
    ParseResult result;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        const auto view = trim(line);
        if (view.empty()) {
            continue;
        }
        if (format == RecordFormat::csv && result.lines == 0 && view == csv_header) {
            continue;
        }
        ++result.lines;
        GpsRecord r;
        auto err = format == RecordFormat::csv ? parse_csv_line(view, r) : parse_jsonl_line(view, r);
        if (err.empty()) {
            result.records.push_back(std::move(r));
        } else {
            result.errors.push_back({line_no, std::move(err)});
        }
    }
    if (in.bad()) {
        throw IoError("read failure after line " + std::to_string(line_no));
    }
    if (result.lines > 0 && 2 * result.errors.size() > result.lines) {
        const auto& first = result.errors.front();
        throw DataError(std::to_string(result.errors.size()) + " of " + std::to_string(result.lines) +
                        " lines malformed; first at line " + std::to_string(first.line) + ": " +
                        first.message);
    }
    for (const auto& e : result.errors) {
        spdlog::debug("line {}: {}", e.line, e.message);
    }
    if (!result.errors.empty()) {
        spdlog::warn("{} malformed lines skipped", result.errors.size());
    }
    return result;
}

RecordFormat format_for_path(const std::filesystem::path& path) {
    auto name = path.filename().string();
    if (ends_with(name, ".gz")) {
        name.resize(name.size() - 3);
    }
    if (ends_with(name, ".csv")) {
        return RecordFormat::csv;
    }
    if (ends_with(name, ".jsonl")) {
        return RecordFormat::jsonl;
    }
    throw InputError("cannot infer record format from '" + path.string() + "'");
}

ParseResult parse_file(const std::filesystem::path& path) {
    const auto format = format_for_path(path);
    if (ends_with(path.filename().string(), ".gz")) {
        std::istringstream in(read_text_file(path));
        return parse_records(in, format);
    }
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw IoError("cannot open " + path.string());
    }
    return parse_records(in, format);
}

ParseResult merge_parse_results(std::vector<ParseResult> shards) {
    ParseResult out;
    for (auto& s : shards) {
        out.lines += s.lines;
        out.records.insert(out.records.end(), std::make_move_iterator(s.records.begin()),
                           std::make_move_iterator(s.records.end()));
        out.errors.insert(out.errors.end(), std::make_move_iterator(s.errors.begin()),
                          std::make_move_iterator(s.errors.end()));
    }
    std::stable_sort(out.errors.begin(), out.errors.end(),
                     [](const ParseIssue& a, const ParseIssue& b) { return a.line < b.line; });
    return out;
}

std::string format_record(const GpsRecord& r, RecordFormat format) {
    char lon[32];
    char lat[32];
    std::snprintf(lon, sizeof lon, "%.10f", r.lon);
    std::snprintf(lat, sizeof lat, "%.10f", r.lat);
    if (format == RecordFormat::csv) {
        std::string s = std::to_string(r.timestamp);
        s.append(",").append(lon).append(",").append(lat).append(",");
        s.append(to_string(r.modality)).append(",").append(r.trajectory_id);
        return s;
    }
    nlohmann::json j;
    j["timestamp"] = r.timestamp;
    j["lon"] = std::stod(lon);
    j["lat"] = std::stod(lat);
    j["modality"] = std::string(to_string(r.modality));
    j["trajectory_id"] = r.trajectory_id;
    return j.dump();
}

SeriesMap aggregate(std::span<const GpsRecord> records, const TimeWindow& window,
                    const AggregateOptions& options) {
    validate(window);
    SeriesMap out;
    if (options.mode == CountMode::records) {
        for_each_tile_bucket(records, window, options,
                             [&](const TileId& t, std::uint32_t bucket, const GpsRecord&) {
                                 ++series_for(out, t, window).counts[bucket];
                             });
        return out;
    }
    std::set<std::tuple<TileId, std::uint32_t, std::string_view>> seen;
    for_each_tile_bucket(records, window, options,
                         [&](const TileId& t, std::uint32_t bucket, const GpsRecord& r) {
                             if (seen.emplace(t, bucket, r.trajectory_id).second) {
                                 ++series_for(out, t, window).counts[bucket];
                             }
                         });
    return out;
}

void merge_into(SeriesMap& into, const SeriesMap& other) {
    for (const auto& [tile, s] : other) {
        auto& dst = series_for(into, tile, s.window);
        if (dst.window != s.window) {
            throw InputError("cannot merge series over different time windows");
        }
        for (std::size_t k = 0; k < s.counts.size(); ++k) {
            dst.counts[k] += s.counts[k];
        }
    }
}

SeriesMap aggregate_sharded(std::span<const GpsRecord> records, const TimeWindow& window,
                            const AggregateOptions& options, unsigned threads) {
    if (options.mode != CountMode::records) {
        throw InputError("sharded aggregation requires per-record counting");
    }
    validate(window);
    threads = std::max(1u, std::min<unsigned>(threads, static_cast<unsigned>(records.size() / 4096 + 1)));
    if (threads == 1) {
        return aggregate(records, window, options);
    }
    std::vector<SeriesMap> partial(threads);
    std::vector<std::thread> workers;
    const auto chunk = (records.size() + threads - 1) / threads;
    for (unsigned i = 0; i < threads; ++i) {
        const auto begin = std::min(records.size(), i * chunk);
        const auto end = std::min(records.size(), begin + chunk);
        workers.emplace_back([&, i, begin, end] {
            partial[i] = aggregate(records.subspan(begin, end - begin), window, options);
        });
    }
    for (auto& w : workers) {
        w.join();
    }
    SeriesMap out;
    for (const auto& p : partial) {
        merge_into(out, p);
    }
    return out;
}

DenseSeries densify(const SeriesMap& series, const TileGrid& grid, const TimeWindow& window) {
    validate(grid);
    validate(window);
    DenseSeries out{grid, window, {}, std::vector<std::uint8_t>(grid.cell_count(), 0)};
    out.cells.reserve(grid.cell_count());
    for (std::uint32_t r = 0; r < grid.height; ++r) {
        for (std::uint32_t c = 0; c < grid.width; ++c) {
            out.cells.push_back(ActivitySeries{grid.tile_at(r, c), std::vector<std::uint32_t>(window.n, 0), window});
        }
    }
    for (const auto& [tile, s] : series) {
        const auto cell = grid_index(grid, tile);
        if (!cell) {
            throw DataError("tile (" + std::to_string(tile.x) + ", " + std::to_string(tile.y) + ", z" +
                            std::to_string(tile.zoom) + ") lies outside the grid");
        }
        if (s.window != window) {
            throw DataError("series window does not match the dense window");
        }
        const auto idx = std::size_t{cell->row} * grid.width + cell->col;
        out.cells[idx].counts = s.counts;
        out.has_data[idx] = 1;
    }
    return out;
}

std::string read_text_file(const std::filesystem::path& path) {
    if (ends_with(path.filename().string(), ".gz")) {
        gzFile f = gzopen(path.string().c_str(), "rb");
        if (f == nullptr) {
            throw IoError("cannot open " + path.string());
        }
        std::string out;
        char buf[1 << 16];
        int n = 0;
        while ((n = gzread(f, buf, sizeof buf)) > 0) {
            out.append(buf, static_cast<std::size_t>(n));
        }
        const bool failed = n < 0;
        gzclose(f);
        if (failed) {
            throw IoError("corrupt gzip stream in " + path.string());
        }
        return out;
    }
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw IoError("cannot open " + path.string());
    }
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

void write_text_file(const std::filesystem::path& path, std::string_view content) {
    if (ends_with(path.filename().string(), ".gz")) {
        gzFile f = gzopen(path.string().c_str(), "wb");
        if (f == nullptr) {
            throw IoError("cannot create " + path.string());
        }
        const bool ok = content.empty() ||
                        gzwrite(f, content.data(), static_cast<unsigned>(content.size())) > 0;
        gzclose(f);
        if (!ok) {
            throw IoError("write failure on " + path.string());
        }
        return;
    }
    std::ofstream out(path, std::ios::binary);
    out.write(content.data(), static_cast<std::streamsize>(content.size()));
    if (!out) {
        throw IoError("write failure on " + path.string());
    }
}

} // namespace tempo
