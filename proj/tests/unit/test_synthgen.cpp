#include "tempo/error.hpp"
#include "tempo/spectral.hpp"
#include "tempo/synthgen.hpp"

#include <doctest.h>
#include <nlohmann/json.hpp>

#include <algorithm>
#include <numeric>
#include <sstream>

using namespace tempo;

namespace {

const Archetype& by_name(std::string_view name) {
    const auto& set = default_archetypes();
    return set[archetype_index(set, name)];
}

double autocov(const Archetype& a, std::size_t lag) {
    double s = 0.0;
    for (std::size_t t = 0; t < hours_per_week; ++t) {
        s += (a.profile[t] - 1.0) * (a.profile[(t + lag) % hours_per_week] - 1.0);
    }
    return s;
}

SceneSpec uniform_scene(const Archetype& a, std::uint32_t w, std::uint32_t h, std::uint32_t n) {
    SceneSpec s;
    s.grid = TileGrid{TileId{1000, 2000, 16}, w, h};
    s.window = TimeWindow{default_scene_t0, 3600, n};
    s.seed = 5;
    s.archetypes = {a};
    s.assignment.assign(s.grid.cell_count(), 0);
    return s;
}

SceneLayout small_layout() {
    SceneLayout l;
    l.width = 12;
    l.height = 10;
    l.patch = 2;
    return l;
}

} // namespace

TEST_CASE("default archetypes") {
    const auto& set = default_archetypes();
    REQUIRE(set.size() == 6);
    for (const auto& a : set) {
        const double mean = std::accumulate(a.profile.begin(), a.profile.end(), 0.0) / hours_per_week;
        CHECK(std::abs(mean - 1.0) <= 1e-9);
        CHECK(*std::min_element(a.profile.begin(), a.profile.end()) >= 0.0);
    }
    const auto& com = by_name("commercial");
    // Frozen from an independent evaluation over data/archetypes.json.
    CHECK(autocov(com, 24) == doctest::Approx(156.144321).epsilon(1e-6));
    CHECK(autocov(com, 13) == doctest::Approx(-114.924977).epsilon(1e-6));
    CHECK(autocov(com, 24) > autocov(com, 13));
    // weekday peaks at noon and 18:00, weekend at half volume
    CHECK(com.profile[12] > com.profile[10]);
    CHECK(com.profile[12] > com.profile[15]);
    CHECK(com.profile[18] > com.profile[15]);
    CHECK(com.profile[18] > com.profile[21]);
    CHECK(com.profile[5 * 24 + 12] == doctest::Approx(0.5 * com.profile[12]));

    const auto& inter = by_name("intersection");
    const auto peak = std::max_element(inter.profile.begin(), inter.profile.end()) - inter.profile.begin();
    CHECK((peak % 24 == 8 || peak % 24 == 17));
    CHECK(peak < 5 * 24);

    CHECK(by_name("residential").noise_sigma == 0.8);
    CHECK(by_name("rural").base_rate <= 0.2);
    CHECK_THROWS_AS(archetype_index(set, "airport"), InputError);
}

TEST_CASE("archetype parsing") {
    nlohmann::json j{{"version", 1},
                     {"archetypes", {{{"name", "x"}, {"base_rate", 2.0}, {"noise_sigma", 0.1},
                                      {"profile", std::vector<double>(168, 3.0)}}}}};
    const auto set = parse_archetypes(j);
    CHECK(set[0].profile[100] == doctest::Approx(1.0));
    j["archetypes"][0]["profile"] = std::vector<double>(10, 1.0);
    CHECK_THROWS_AS(parse_archetypes(j), DataError);
    j["archetypes"][0]["profile"] = std::vector<double>(168, 0.0);
    CHECK_THROWS_AS(parse_archetypes(j), DataError);
}

TEST_CASE("generate_counts") {
    Archetype zero{"zero", 0.0, 0.5, {}};
    zero.profile.fill(1.0);
    const auto z = generate_counts(uniform_scene(zero, 3, 3, 168));
    for (const auto& s : z.cells) {
        CHECK(s.total() == 0);
    }
    CHECK(std::count(z.has_data.begin(), z.has_data.end(), 1) == 0);

    Archetype flat{"flat", 10.0, 0.0, {}};
    flat.profile.fill(1.0);
    const auto spec = uniform_scene(flat, 4, 4, 672);
    const auto d = generate_counts(spec);
    for (const auto& s : d.cells) {
        // Poisson(6720): 4 sigma = 4 * sqrt(6720)
        CHECK(std::abs(static_cast<double>(s.total()) - 6720.0) <= 4.0 * std::sqrt(6720.0));
    }
    const auto again = generate_counts(spec);
    for (std::size_t i = 0; i < d.cells.size(); ++i) {
        CHECK(d.cells[i] == again.cells[i]);
    }
}

TEST_CASE("emit and ingest round trip") {
    const auto scene = make_default_scene(small_layout(), 11, TimeWindow{default_scene_t0, 3600, 168});
    const auto counts = generate_counts(scene);
    for (auto fmt : {RecordFormat::csv, RecordFormat::jsonl}) {
        std::stringstream io;
        const auto n = emit_records(counts, scene, io, fmt);
        const auto parsed = parse_records(io, fmt);
        CHECK(parsed.errors.empty());
        CHECK(parsed.records.size() == n);
        const auto agg = aggregate(parsed.records, scene.window);
        CHECK(agg == sparse_series(counts));
        CHECK(densify(agg, scene.grid, scene.window).has_data == counts.has_data);
    }

    Archetype zero{"zero", 0.0, 0.0, {}};
    zero.profile.fill(1.0);
    const auto zspec = uniform_scene(zero, 2, 2, 168);
    std::ostringstream empty;
    CHECK(emit_records(generate_counts(zspec), zspec, empty) == 0);
    CHECK(empty.str().empty());

    auto one = generate_counts(zspec);
    one.cells[3].counts[17] = 1;
    std::stringstream single;
    CHECK(emit_records(one, zspec, single) == 1);
    const auto rec = parse_records(single, RecordFormat::csv).records.at(0);
    CHECK(lonlat_to_tile(rec.lon, rec.lat, 16) == zspec.grid.tile_at(1, 1));
    CHECK((rec.timestamp - zspec.window.t0) / 3600 == 17);
    CHECK(rec.modality == Modality::driving);
}

TEST_CASE("scene json round trip") {
    const auto scene = make_default_scene(small_layout(), 3);
    const auto back = scene_from_json(scene_to_json(scene));
    CHECK(back.grid == scene.grid);
    CHECK(back.window == scene.window);
    CHECK(back.seed == scene.seed);
    CHECK(back.assignment == scene.assignment);
    CHECK(back.density.centers.size() == scene.density.centers.size());
    CHECK(scene_to_json(back) == scene_to_json(scene));
    const auto a = generate_counts(scene);
    const auto b = generate_counts(back);
    for (std::size_t i = 0; i < a.cells.size(); ++i) {
        REQUIRE(a.cells[i] == b.cells[i]);
    }
    auto j = scene_to_json(scene);
    j["rows"].erase(0);
    CHECK_THROWS_AS(scene_from_json(j), DataError);
    SceneLayout empty = small_layout();
    empty.width = 0;
    CHECK_THROWS_AS(make_default_scene(empty, 1), InputError);
}

TEST_CASE("label rasters") {
    const auto scene = make_default_scene(small_layout(), 21);
    const auto arch = label_raster(scene, LabelTask::archetype);
    CHECK(arch.labels == scene.assignment);

    const auto rc = label_raster(scene, LabelTask::res_vs_com);
    const auto res = archetype_index(scene.archetypes, "residential");
    const auto com = archetype_index(scene.archetypes, "commercial");
    const auto counts = class_counts(rc);
    CHECK(counts[0] == static_cast<std::size_t>(std::count(scene.assignment.begin(), scene.assignment.end(), res)));
    CHECK(counts[1] == static_cast<std::size_t>(std::count(scene.assignment.begin(), scene.assignment.end(), com)));

    const auto aa = label_raster(scene, LabelTask::activity_area);
    CHECK(class_counts(aa)[1] == static_cast<std::size_t>(std::count(scene.assignment.begin(), scene.assignment.end(),
                                                                     archetype_index(scene.archetypes, "golf"))));
    CHECK(std::count(aa.labels.begin(), aa.labels.end(), LabelRaster::ignore) == 0);

    // strata: a denser tile never gets a sparser stratum (class ids grow toward rural)
    const auto st = label_raster(scene, LabelTask::strata);
    for (std::uint32_t i = 0; i < st.labels.size(); ++i) {
        for (std::uint32_t j = 0; j < st.labels.size(); ++j) {
            const auto ri = scene.rate(i / scene.grid.width, i % scene.grid.width);
            const auto rj = scene.rate(j / scene.grid.width, j % scene.grid.width);
            if (ri > rj) {
                REQUIRE(st.labels[i] <= st.labels[j]);
            }
        }
    }

    auto all_res = uniform_scene(by_name("residential"), 3, 3, 168);
    const auto single = label_raster(all_res, LabelTask::res_vs_com);
    CHECK(std::count(single.labels.begin(), single.labels.end(), 0) == 9);
    CHECK_THROWS_AS(parse_label_task("parks"), InputError);
}

TEST_CASE("commercial tiles carry the daily tone") {
    // Raw magnitudes: log compression folds the Poisson floor of residential tiles into the same range.
    SpectrogramOptions opt;
    opt.log_compress = false;
    auto mean_spectrum = [&](const Archetype& a) {
        const auto spec = uniform_scene(a, 6, 6, 672);
        const auto dense = generate_counts(spec);
        std::vector<double> col(opt.kept_bins, 0.0);
        for (const auto& s : dense.cells) {
            const auto sp = spectrogram(s, opt);
            for (std::uint32_t r = 0; r < sp.rows; ++r) {
                for (std::uint32_t c = 0; c < sp.cols; ++c) {
                    col[c] += sp.at(r, c);
                }
            }
        }
        return col;
    };
    const auto com = mean_spectrum(by_name("commercial"));
    const auto res = mean_spectrum(by_name("residential"));
    const auto best = std::max_element(com.begin() + 1, com.end()) - com.begin();
    CHECK(best == 7);
    CHECK(*std::max_element(res.begin() + 1, res.end()) <= 0.5 * com[7]);
}

TEST_CASE("default scene is a pure function of its seed") {
    const auto a = make_default_scene(small_layout(), 8);
    const auto b = make_default_scene(small_layout(), 8);
    CHECK(a.assignment == b.assignment);
    CHECK(scene_to_json(a) == scene_to_json(b));
    CHECK(make_default_scene(small_layout(), 9).assignment != a.assignment);
    const auto r = rate_raster(a);
    CHECK(r.data[5] == static_cast<float>(a.rate(0, 5)));
}
