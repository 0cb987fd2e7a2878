#include "tempo/synthgen.hpp"

#include "tempo/archetypes_data.hpp"
#include "tempo/binary_io.hpp"
#include "tempo/error.hpp"

#include <nlohmann/json.hpp>
#include <spdlog/spdlog.h>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <random>
#include <sstream>

namespace tempo {

namespace {

std::uint64_t splitmix64(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

std::uint64_t tile_seed(std::uint64_t seed, const TileId& t, std::uint64_t salt) {
    const auto coords = (std::uint64_t{t.x} << 32) | t.y;
    return splitmix64(seed ^ splitmix64(coords ^ splitmix64(salt + t.zoom)));
}

constexpr std::uint64_t counts_salt = 1;
constexpr std::uint64_t emit_salt = 2;
constexpr std::uint64_t layout_salt = 3;

} // namespace

std::vector<Archetype> parse_archetypes(const nlohmann::json& j) {
    std::vector<Archetype> out;
    try {
        for (const auto& a : j.at("archetypes")) {
            Archetype arch;
            arch.name = a.at("name").get<std::string>();
            arch.base_rate = a.at("base_rate").get<double>();
            arch.noise_sigma = a.at("noise_sigma").get<double>();
            const auto profile = a.at("profile").get<std::vector<double>>();
            if (profile.size() != hours_per_week) {
                throw DataError("archetype '" + arch.name + "' profile has " + std::to_string(profile.size()) +
                                " entries, expected 168");
            }
            if (arch.base_rate < 0 || arch.noise_sigma < 0 ||
                std::any_of(profile.begin(), profile.end(), [](double v) { return !(v >= 0); })) {
                throw DataError("archetype '" + arch.name + "' has negative parameters");
            }
            const double mean = std::accumulate(profile.begin(), profile.end(), 0.0) / hours_per_week;
            if (!(mean > 0)) {
                throw DataError("archetype '" + arch.name + "' profile is all zero");
            }
            for (std::size_t h = 0; h < hours_per_week; ++h) {
                arch.profile[h] = profile[h] / mean;
            }
            out.push_back(std::move(arch));
        }
    } catch (const nlohmann::json::exception& e) {
        throw DataError(std::string("bad archetype table: ") + e.what());
    }
    if (out.empty() || out.size() >= LabelRaster::ignore) {
        throw DataError("archetype table must have between 1 and 254 entries");
    }
    return out;
}

const std::vector<Archetype>& default_archetypes() {
    static const std::vector<Archetype> set = parse_archetypes(nlohmann::json::parse(detail::archetypes_json));
    return set;
}

std::size_t archetype_index(const std::vector<Archetype>& set, std::string_view name) {
    for (std::size_t i = 0; i < set.size(); ++i) {
        if (set[i].name == name) {
            return i;
        }
    }
    throw InputError("unknown archetype '" + std::string(name) + "'");
}

double DensityField::at(std::uint32_t row, std::uint32_t col) const {
    double g = 0.0;
    for (const auto& c : centers) {
        const double dr = row - c.row;
        const double dc = col - c.col;
        g = std::max(g, std::exp(-0.5 * (dr * dr + dc * dc) / (c.sigma * c.sigma)));
    }
    return floor + (peak - floor) * g;
}

double SceneSpec::rate(std::uint32_t row, std::uint32_t col) const {
    return archetype_at(row, col).base_rate * density.at(row, col);
}

void validate(const SceneSpec& s) {
    validate(s.grid);
    validate(s.window);
    if (s.assignment.size() != s.grid.cell_count()) {
        throw InputError("scene assigns " + std::to_string(s.assignment.size()) + " of " +
                         std::to_string(s.grid.cell_count()) + " tiles");
    }
    for (auto a : s.assignment) {
        if (a >= s.archetypes.size()) {
            throw InputError("scene references archetype index " + std::to_string(a));
        }
    }
    if (!(s.density.floor >= 0) || !(s.density.peak >= 0)) {
        throw InputError("density multipliers must be non-negative");
    }
    for (const auto& c : s.density.centers) {
        if (!(c.sigma > 0)) {
            throw InputError("density centre sigma must be positive");
        }
    }
    if (s.window.n % hours_per_week != 0 && s.window.dt == 3600) {
        spdlog::warn("window of {} hourly buckets is not a whole number of weeks", s.window.n);
    }
}

SceneSpec make_default_scene(const SceneLayout& layout, std::uint64_t seed, const TimeWindow& window) {
    if (layout.width == 0 || layout.height == 0 || layout.patch == 0) {
        throw InputError("scene layout needs a non-empty grid and patch size");
    }
    SceneSpec s;
    s.grid = TileGrid{lonlat_to_tile(layout.lon, layout.lat, layout.zoom), layout.width, layout.height};
    validate(s.grid);
    s.window = window;
    s.seed = seed;
    s.archetypes = default_archetypes();

    // Patch draw weights in default-archetype order.
    const std::vector<std::pair<std::string_view, double>> weights{
        {"commercial", 0.26}, {"residential", 0.30}, {"golf", 0.08},
        {"grocery", 0.08},    {"intersection", 0.10}, {"rural", 0.18},
    };
    std::vector<double> w;
    std::vector<std::uint8_t> idx;
    for (const auto& [name, weight] : weights) {
        idx.push_back(static_cast<std::uint8_t>(archetype_index(s.archetypes, name)));
        w.push_back(weight);
    }
    std::mt19937_64 rng(splitmix64(seed ^ layout_salt));
    std::discrete_distribution<std::size_t> pick(w.begin(), w.end());

    const auto pw = (layout.width + layout.patch - 1) / layout.patch;
    const auto ph = (layout.height + layout.patch - 1) / layout.patch;
    std::vector<std::uint8_t> patches(std::size_t{pw} * ph);
    for (auto& p : patches) {
        p = idx[pick(rng)];
    }
    s.assignment.resize(s.grid.cell_count());
    for (std::uint32_t r = 0; r < layout.height; ++r) {
        for (std::uint32_t c = 0; c < layout.width; ++c) {
            s.assignment[std::size_t{r} * layout.width + c] =
                patches[std::size_t{r / layout.patch} * pw + c / layout.patch];
        }
    }

    const double w_f = layout.width;
    const double h_f = layout.height;
    s.density.floor = 0.15;
    s.density.peak = 1.4;
    s.density.centers = {
        {0.3 * h_f, 0.35 * w_f, 0.18 * std::min(w_f, h_f)},
        {0.75 * h_f, 0.7 * w_f, 0.12 * std::min(w_f, h_f)},
    };
    validate(s);
    return s;
}

nlohmann::json scene_to_json(const SceneSpec& s) {
    validate(s);
    nlohmann::json j;
    j["version"] = 1;
    j["grid"] = {{"zoom", s.grid.origin.zoom},
                 {"origin_x", s.grid.origin.x},
                 {"origin_y", s.grid.origin.y},
                 {"width", s.grid.width},
                 {"height", s.grid.height}};
    j["window"] = {{"t0", s.window.t0}, {"dt", s.window.dt}, {"n", s.window.n}};
    j["seed"] = s.seed;
    auto names = nlohmann::json::array();
    for (const auto& a : s.archetypes) {
        names.push_back(a.name);
    }
    j["archetypes"] = names;
    auto rows = nlohmann::json::array();
    for (std::uint32_t r = 0; r < s.grid.height; ++r) {
        auto runs = nlohmann::json::array();
        std::uint32_t c = 0;
        while (c < s.grid.width) {
            const auto v = s.assignment[std::size_t{r} * s.grid.width + c];
            std::uint32_t len = 1;
            while (c + len < s.grid.width && s.assignment[std::size_t{r} * s.grid.width + c + len] == v) {
                ++len;
            }
            runs.push_back({v, len});
            c += len;
        }
        rows.push_back(runs);
    }
    j["rows"] = rows;
    auto centers = nlohmann::json::array();
    for (const auto& c : s.density.centers) {
        centers.push_back({{"row", c.row}, {"col", c.col}, {"sigma", c.sigma}});
    }
    j["density"] = {{"floor", s.density.floor}, {"peak", s.density.peak}, {"centers", centers}};
    return j;
}

SceneSpec scene_from_json(const nlohmann::json& j, const std::vector<Archetype>& library) {
    SceneSpec s;
    try {
        if (j.at("version").get<int>() != 1) {
            throw DataError("unsupported scene version");
        }
        const auto& g = j.at("grid");
        s.grid = TileGrid{TileId{g.at("origin_x").get<std::uint32_t>(), g.at("origin_y").get<std::uint32_t>(),
                                 g.at("zoom").get<std::uint32_t>()},
                          g.at("width").get<std::uint32_t>(), g.at("height").get<std::uint32_t>()};
        const auto& w = j.at("window");
        s.window = TimeWindow{w.at("t0").get<std::int64_t>(), w.at("dt").get<std::int64_t>(),
                              w.at("n").get<std::uint32_t>()};
        s.seed = j.at("seed").get<std::uint64_t>();
        s.archetypes.clear();
        for (const auto& name : j.at("archetypes")) {
            s.archetypes.push_back(library[archetype_index(library, name.get<std::string>())]);
        }
        const auto& rows = j.at("rows");
        if (rows.size() != s.grid.height) {
            throw DataError("scene has " + std::to_string(rows.size()) + " rows, grid height is " +
                            std::to_string(s.grid.height));
        }
        for (std::size_t r = 0; r < rows.size(); ++r) {
            std::size_t filled = 0;
            for (const auto& run : rows[r]) {
                const auto v = run.at(0).get<std::uint8_t>();
                const auto len = run.at(1).get<std::uint32_t>();
                s.assignment.insert(s.assignment.end(), len, v);
                filled += len;
            }
            if (filled != s.grid.width) {
                throw DataError("scene row " + std::to_string(r) + " covers " + std::to_string(filled) +
                                " tiles, grid width is " + std::to_string(s.grid.width));
            }
        }
        const auto& d = j.at("density");
        s.density.floor = d.at("floor").get<double>();
        s.density.peak = d.at("peak").get<double>();
        for (const auto& c : d.at("centers")) {
            s.density.centers.push_back(
                {c.at("row").get<double>(), c.at("col").get<double>(), c.at("sigma").get<double>()});
        }
    } catch (const nlohmann::json::exception& e) {
        throw DataError(std::string("bad scene spec: ") + e.what());
    }
    try {
        validate(s);
    } catch (const InputError& e) {
        throw DataError(std::string("bad scene spec: ") + e.what());
    }
    return s;
}

SceneSpec load_scene(const std::filesystem::path& path) {
    const auto text = binary::read_file(path);
    const auto j = nlohmann::json::parse(text, nullptr, false);
    if (j.is_discarded()) {
        throw DataError(path.string() + " is not valid JSON");
    }
    return scene_from_json(j);
}

void save_scene(const SceneSpec& s, const std::filesystem::path& path) {
    binary::write_file(path, scene_to_json(s).dump(1) + "\n");
}

DenseSeries generate_counts(const SceneSpec& spec) {
    validate(spec);
    const auto& g = spec.grid;
    const auto& win = spec.window;
    DenseSeries out{g, win, {}, std::vector<std::uint8_t>(g.cell_count(), 0)};
    out.cells.reserve(g.cell_count());
    const double bucket_hours = static_cast<double>(win.dt) / 3600.0;
    for (std::uint32_t r = 0; r < g.height; ++r) {
        for (std::uint32_t c = 0; c < g.width; ++c) {
            const auto tile = g.tile_at(r, c);
            const auto& arch = spec.archetype_at(r, c);
            const double rate = spec.rate(r, c) * bucket_hours;
            ActivitySeries s{tile, std::vector<std::uint32_t>(win.n, 0), win};
            std::mt19937_64 rng(tile_seed(spec.seed, tile, counts_salt));
            std::normal_distribution<double> normal(0.0, 1.0);
            const double sigma = arch.noise_sigma;
            for (std::uint32_t k = 0; k < win.n; ++k) {
                const auto hour = static_cast<std::size_t>((std::int64_t{k} * win.dt) / 3600) % hours_per_week;
                // Draw the jitter even at zero rate so streams stay aligned across rates.
                const double jitter = sigma > 0 ? std::exp(sigma * normal(rng) - 0.5 * sigma * sigma) : 1.0;
                const double mean = rate * arch.profile[hour] * jitter;
                if (mean > 0) {
                    s.counts[k] = static_cast<std::uint32_t>(std::poisson_distribution<std::uint32_t>(mean)(rng));
                }
            }
            out.has_data[out.cells.size()] = s.total() > 0 ? 1 : 0;
            out.cells.push_back(std::move(s));
        }
    }
    return out;
}

SeriesMap sparse_series(const DenseSeries& dense) {
    SeriesMap out;
    for (const auto& s : dense.cells) {
        if (s.total() > 0) {
            out.emplace(s.tile, s);
        }
    }
    return out;
}

std::uint64_t emit_records(const DenseSeries& counts, const SceneSpec& spec, std::ostream& out,
                           RecordFormat format) {
    std::uint64_t written = 0;
    const auto& win = counts.window;
    std::string line;
    for (const auto& s : counts.cells) {
        if (s.total() == 0) {
            continue;
        }
        std::mt19937_64 rng(tile_seed(spec.seed, s.tile, emit_salt));
        std::uniform_real_distribution<double> inside(0.01, 0.99);
        std::uniform_int_distribution<std::int64_t> offset(0, win.dt - 1);
        std::uniform_int_distribution<int> vehicle(0, 9999);
        for (std::uint32_t k = 0; k < s.counts.size(); ++k) {
            for (std::uint32_t i = 0; i < s.counts[k]; ++i) {
                const TileCoord tc{s.tile.x + inside(rng), s.tile.y + inside(rng)};
                const auto [lon, lat] = tile_coord_to_lonlat(tc, s.tile.zoom);
                GpsRecord r{win.t0 + std::int64_t{k} * win.dt + offset(rng), lon, lat, Modality::driving,
                            "veh" + std::to_string(vehicle(rng))};
                out << format_record(r, format) << '\n';
                ++written;
            }
        }
    }
    if (!out) {
        throw IoError("failed writing trajectory records");
    }
    return written;
}

std::uint64_t emit_records_file(const DenseSeries& counts, const SceneSpec& spec,
                                const std::filesystem::path& path) {
    const auto format = format_for_path(path);
    const auto name = path.filename().string();
    if (name.size() > 3 && name.compare(name.size() - 3, 3, ".gz") == 0) {
        std::ostringstream buf;
        const auto n = emit_records(counts, spec, buf, format);
        write_text_file(path, buf.str());
        return n;
    }
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) {
        throw IoError("cannot create " + path.string());
    }
    return emit_records(counts, spec, out, format);
}

std::string_view to_string(LabelTask t) noexcept {
    switch (t) {
    case LabelTask::res_vs_com: return "res_vs_com";
    case LabelTask::strata: return "strata";
    case LabelTask::activity_area: return "activity_area";
    case LabelTask::archetype: return "archetype";
    }
    return "res_vs_com";
}

LabelTask parse_label_task(std::string_view s) {
    if (s == "res_vs_com") return LabelTask::res_vs_com;
    if (s == "strata") return LabelTask::strata;
    if (s == "activity_area") return LabelTask::activity_area;
    if (s == "archetype") return LabelTask::archetype;
    throw InputError("unknown label task '" + std::string(s) + "'");
}

LabelRaster label_raster(const SceneSpec& spec, LabelTask task) {
    validate(spec);
    const auto& g = spec.grid;
    LabelRaster l{g, std::vector<std::uint8_t>(g.cell_count(), LabelRaster::ignore), {}};
    auto by_name = [&](const std::vector<std::string>& classes) {
        l.classes = classes;
        for (std::size_t i = 0; i < l.labels.size(); ++i) {
            const auto& name = spec.archetypes[spec.assignment[i]].name;
            const auto it = std::find(classes.begin(), classes.end(), name);
            if (it != classes.end()) {
                l.labels[i] = static_cast<std::uint8_t>(it - classes.begin());
            }
        }
    };

    switch (task) {
    case LabelTask::res_vs_com:
        by_name({"residential", "commercial"});
        break;
    case LabelTask::activity_area:
        by_name({"other", "golf", "grocery", "intersection"});
        for (std::size_t i = 0; i < l.labels.size(); ++i) {
            if (l.labels[i] == LabelRaster::ignore) {
                l.labels[i] = 0;
            }
        }
        break;
    case LabelTask::archetype: {
        std::vector<std::string> names;
        for (const auto& a : spec.archetypes) {
            names.push_back(a.name);
        }
        l.classes = names;
        std::copy(spec.assignment.begin(), spec.assignment.end(), l.labels.begin());
        break;
    }
    case LabelTask::strata: {
        l.classes = {"downtown", "urban", "suburban", "rural"};
        std::vector<double> rates(g.cell_count());
        for (std::uint32_t r = 0; r < g.height; ++r) {
            for (std::uint32_t c = 0; c < g.width; ++c) {
                rates[std::size_t{r} * g.width + c] = spec.rate(r, c);
            }
        }
        std::vector<double> sorted = rates;
        std::sort(sorted.begin(), sorted.end());
        const auto n = sorted.size();
        const double q1 = sorted[n / 4];
        const double q2 = sorted[n / 2];
        const double q3 = sorted[(3 * n) / 4];
        for (std::size_t i = 0; i < n; ++i) {
            const double v = rates[i];
            l.labels[i] = v >= q3 ? 0 : v >= q2 ? 1 : v >= q1 ? 2 : 3;
        }
        break;
    }
    }

    const auto counts = class_counts(l);
    const auto present = std::count_if(counts.begin(), counts.end(), [](auto c) { return c > 0; });
    if (present < 2) {
        spdlog::warn("label task {} has only {} class(es) present", to_string(task), present);
    }
    return l;
}

FloatRaster rate_raster(const SceneSpec& spec) {
    validate(spec);
    FloatRaster out(spec.grid, 1);
    for (std::uint32_t r = 0; r < spec.grid.height; ++r) {
        for (std::uint32_t c = 0; c < spec.grid.width; ++c) {
            out.data[std::size_t{r} * spec.grid.width + c] = static_cast<float>(spec.rate(r, c));
        }
    }
    return out;
}

} // namespace tempo
