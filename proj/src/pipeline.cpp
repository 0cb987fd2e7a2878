#include "tempo/pipeline.hpp"

#include "tempo/binary_io.hpp"
#include "tempo/error.hpp"
#include "tempo/hashing.hpp"

#include <spdlog/spdlog.h>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <set>
#include <sstream>
#include <thread>

namespace tempo {

namespace fs = std::filesystem;
using nlohmann::json;

namespace files {
std::string labels(LabelTask t) { return "labels_" + std::string(to_string(t)) + ".temb"; }
std::string features(FeatureKind k) { return "features_" + std::string(to_string(k)) + ".temb"; }
std::string scores(FeatureKind k) { return "scores_" + std::string(to_string(k)) + ".csv"; }
std::string predicted(FeatureKind k) { return "predicted_" + std::string(to_string(k)) + ".temb"; }
std::string pr_csv(FeatureKind k, std::string_view cls) {
    return "pr_" + std::string(to_string(k)) + "_" + std::string(cls) + ".csv";
}
std::string pr_png(std::string_view cls) { return "pr_" + std::string(cls) + ".png"; }
std::string config_snapshot(std::string_view command) { return "config." + std::string(command) + ".json"; }
} // namespace files

namespace {

constexpr std::array<FeatureKind, 3> all_kinds{FeatureKind::embedding, FeatureKind::raw_dft,
                                               FeatureKind::activity_count};

// ---------------------------------------------------------------- config io

template <typename T>
void read_opt(const json& j, const char* key, T& out) {
    if (j.contains(key)) {
        out = j.at(key).get<T>();
    }
}

void reject_unknown(const json& j, std::initializer_list<std::string_view> keys, const std::string& where) {
    if (!j.is_object()) {
        throw ConfigError(where + " must be a JSON object");
    }
    for (const auto& [k, v] : j.items()) {
        if (std::find(keys.begin(), keys.end(), k) == keys.end()) {
            throw ConfigError("unknown key '" + k + "' in " + where);
        }
    }
}

// ---------------------------------------------------------------- stage cache

class StageCache {
public:
    explicit StageCache(fs::path workdir) : dir_(std::move(workdir)) {
        const auto path = dir_ / files::cache;
        if (fs::exists(path)) {
            const auto j = json::parse(binary::read_file(path), nullptr, false);
            if (j.is_object()) {
                state_ = j;
            }
        }
    }

    [[nodiscard]] bool fresh(const std::string& stage, const std::string& key,
                             const std::vector<std::string>& outputs) const {
        if (!state_.contains(stage) || state_[stage].value("key", "") != key) {
            return false;
        }
        const auto& recorded = state_[stage]["outputs"];
        for (const auto& name : outputs) {
            const auto path = dir_ / name;
            if (!recorded.contains(name) || !fs::exists(path) || sha256_file(path) != recorded[name].get<std::string>()) {
                return false;
            }
        }
        return true;
    }

    void record(const std::string& stage, const std::string& key, const std::vector<std::string>& outputs) {
        json out = json::object();
        for (const auto& name : outputs) {
            out[name] = sha256_file(dir_ / name);
        }
        state_[stage] = {{"key", key}, {"outputs", out}};
        binary::write_file(dir_ / files::cache, state_.dump(1) + "\n");
    }

private:
    fs::path dir_;
    json state_ = json::object();
};

std::string stage_key(const json& params, const fs::path& dir, const std::vector<fs::path>& inputs) {
    json j{{"params", params}, {"inputs", json::object()}};
    for (const auto& in : inputs) {
        // Bare names refer to the work directory; anything with a directory part is used as given.
        const auto path = in.has_parent_path() ? in : dir / in;
        if (!fs::exists(path)) {
            throw DataError("missing input " + path.string());
        }
        // Work-directory files are keyed by relative name so a copied directory stays fresh.
        const auto rel = path.lexically_relative(dir);
        const bool inside = !rel.empty() && *rel.begin() != "..";
        j["inputs"][inside ? rel.generic_string() : path.string()] = sha256_file(path);
    }
    return sha256_hex(j.dump());
}

template <typename F>
StageRun run_stage(StageCache& cache, const std::string& name, const std::string& key,
                   const std::vector<std::string>& outputs, F&& body) {
    if (cache.fresh(name, key, outputs)) {
        spdlog::info("stage {}: up to date", name);
        return {name, false};
    }
    spdlog::info("stage {}: running", name);
    try {
        body();
    } catch (const Error& e) {
        spdlog::error("stage {} failed: {}", name, e.what());
        throw;
    }
    cache.record(name, key, outputs);
    return {name, true};
}

void write_snapshot(const PipelineConfig& c, std::string_view command) {
    binary::write_file(c.workdir / files::config_snapshot(command), config_to_json(c).dump(2) + "\n");
}

// Sub-seeds derive from the run seed so one number pins every random stream.
PipelineConfig seeded(PipelineConfig c) {
    c.cae.seed = c.seed + 1;
    c.classifier.seed = c.seed + 2;
    return c;
}

void ensure_workdir(const PipelineConfig& c) {
    if (!fs::is_directory(c.workdir)) {
        throw DataError("work directory " + c.workdir.string() + " does not exist; run generate first");
    }
}

std::string csv_double(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

void write_stream_file(const fs::path& path, const std::function<void(std::ostream&)>& body) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) {
        throw IoError("cannot create " + path.string());
    }
    body(out);
    if (!out) {
        throw IoError("write failure on " + path.string());
    }
}

template <typename F>
void parallel_for(std::size_t n, unsigned threads, F&& f) {
    threads = std::max(1u, std::min<unsigned>(threads, static_cast<unsigned>(std::max<std::size_t>(n, 1))));
    if (threads == 1) {
        for (std::size_t i = 0; i < n; ++i) {
            f(i);
        }
        return;
    }
    std::vector<std::thread> pool;
    const auto chunk = (n + threads - 1) / threads;
    for (unsigned t = 0; t < threads; ++t) {
        pool.emplace_back([&, t] {
            for (std::size_t i = t * chunk; i < std::min(n, (t + 1) * chunk); ++i) {
                f(i);
            }
        });
    }
    for (auto& th : pool) {
        th.join();
    }
}

std::vector<fs::path> trajectory_inputs(const PipelineConfig& c) {
    if (!c.trajectories.empty()) {
        std::vector<fs::path> out;
        for (const auto& p : c.trajectories) {
            out.push_back(p.has_parent_path() ? p : fs::path(".") / p);
        }
        return out;
    }
    return {c.workdir / c.trajectory_name};
}

TileGrid resolve_grid(const PipelineConfig& c, const SeriesMap& series) {
    if (c.bbox) {
        return make_grid(*c.bbox, c.zoom);
    }
    if (fs::exists(c.workdir / files::scene)) {
        return load_scene(c.workdir / files::scene).grid;
    }
    if (series.empty()) {
        throw DataError("no in-window records and no grid configured");
    }
    auto x0 = series.begin()->first.x;
    auto x1 = x0;
    auto y0 = series.begin()->first.y;
    auto y1 = y0;
    for (const auto& [t, s] : series) {
        x0 = std::min(x0, t.x);
        x1 = std::max(x1, t.x);
        y0 = std::min(y0, t.y);
        y1 = std::max(y1, t.y);
    }
    return TileGrid{TileId{x0, y0, c.zoom}, x1 - x0 + 1, y1 - y0 + 1};
}

json spectral_json(const SpectrogramOptions& o) {
    return {{"window_len", o.window_len}, {"hop", o.hop}, {"kept_bins", o.kept_bins},
            {"remove_mean", o.remove_mean}, {"log_compress", o.log_compress}};
}

json window_json(const TimeWindow& w) { return {{"t0", w.t0}, {"dt", w.dt}, {"n", w.n}}; }

// ---------------------------------------------------------------- stages

void ingest_stage(const PipelineConfig& c) {
    std::vector<ParseResult> parsed;
    for (const auto& path : trajectory_inputs(c)) {
        auto r = parse_file(path);
        spdlog::info("parsed {} records from {} ({} malformed)", r.records.size(), path.string(), r.errors.size());
        parsed.push_back(std::move(r));
    }
    const auto all = merge_parse_results(std::move(parsed));
    const AggregateOptions opts{c.modality, c.count_mode, c.zoom};
    const auto series = c.count_mode == CountMode::records ? aggregate_sharded(all.records, c.window, opts, c.threads)
                                                           : aggregate(all.records, c.window, opts);
    const auto grid = resolve_grid(c, series);
    const auto dense = densify(series, grid, c.window);
    save_raster(series_to_raster(dense), c.workdir / files::activity);
}

void spectral_stage(const PipelineConfig& c) {
    const auto dense = raster_to_series(load_raster(c.workdir / files::activity), c.window);
    const auto specs = dense_spectrograms(dense, c.spectral, c.threads);
    const auto rows = spectrogram_rows(c.window.n, c.spectral);
    const auto per_tile = std::size_t{rows} * c.spectral.kept_bins;
    if (per_tile + 1 > 0xffff) {
        throw ConfigError("spectrogram of " + std::to_string(per_tile) + " values exceeds the raster channel limit");
    }
    FloatRaster out(dense.grid, static_cast<std::uint16_t>(per_tile + 1));
    for (std::size_t i = 0; i < dense.cells.size(); ++i) {
        if (!dense.has_data[i]) {
            continue;
        }
        auto px = out.pixel(i);
        std::transform(specs[i].values.begin(), specs[i].values.end(), px.begin(),
                       [](double v) { return static_cast<float>(v); });
        px.back() = 1.0f;
    }
    save_raster(out, c.workdir / files::spectrogram);
}

std::vector<Spectrogram> spectrograms_from_raster(const FloatRaster& r, const PipelineConfig& c,
                                                  std::vector<std::size_t>& valid) {
    const auto rows = spectrogram_rows(c.window.n, c.spectral);
    const auto cols = c.spectral.kept_bins;
    if (r.channels != std::size_t{rows} * cols + 1) {
        throw DataError("cached spectrogram raster does not match the spectral configuration");
    }
    std::vector<Spectrogram> out;
    for (std::size_t i = 0; i < r.pixel_count(); ++i) {
        if (!masked_in(r, i)) {
            continue;
        }
        const auto px = r.pixel(i);
        Spectrogram sp{rows, cols, c.spectral.window_len, c.spectral.hop, std::vector<double>(px.begin(), px.end() - 1)};
        out.push_back(std::move(sp));
        valid.push_back(i);
    }
    return out;
}

Eigen::MatrixXd flattened_matrix(const std::vector<Spectrogram>& specs, const NormStats& stats) {
    const auto dim = specs.empty() ? 0 : static_cast<Eigen::Index>(specs.front().values.size());
    Eigen::MatrixXd x(dim, static_cast<Eigen::Index>(specs.size()));
    for (std::size_t i = 0; i < specs.size(); ++i) {
        const auto v = flatten(specs[i], stats);
        x.col(static_cast<Eigen::Index>(i)) = Eigen::Map<const Eigen::VectorXd>(v.data(), dim);
    }
    return x;
}

void train_stage(const PipelineConfig& c) {
    std::vector<std::size_t> valid;
    const auto specs = spectrograms_from_raster(load_raster(c.workdir / files::spectrogram), c, valid);
    if (specs.empty()) {
        throw DataError("no tiles with data to train the autoencoder on");
    }
    const auto stats = compute_norm_stats(specs);
    const auto data = flattened_matrix(specs, stats);
    spdlog::info("training autoencoder on {} tiles x {} inputs", data.cols(), data.rows());
    const auto result = train(data, c.architecture, c.cae, [](const EpochStats& e) {
        spdlog::info("epoch {:3d}  loss {:.6g}  recon {:.6g}  penalty {:.6g}", e.epoch, e.mean.total,
                     e.mean.reconstruction, e.mean.penalty);
    });
    save_norm_stats(stats, c.workdir / files::norm_stats);
    save_model(result.model, c.workdir / files::model);
    write_stream_file(c.workdir / files::loss_history, [&](std::ostream& out) {
        out << "epoch,loss,reconstruction,penalty,learning_rate,lambda\n";
        for (const auto& e : result.history) {
            out << e.epoch << ',' << csv_double(e.mean.total) << ',' << csv_double(e.mean.reconstruction) << ','
                << csv_double(e.mean.penalty) << ',' << csv_double(c.cae.learning_rate) << ','
                << csv_double(c.cae.lambda) << '\n';
        }
    });
}

void encode_stage(const PipelineConfig& c) {
    const auto raster = load_raster(c.workdir / files::spectrogram);
    std::vector<std::size_t> valid;
    const auto specs = spectrograms_from_raster(raster, c, valid);
    const auto stats = load_norm_stats(c.workdir / files::norm_stats);
    const auto model = load_model(c.workdir / files::model);
    const Eigen::MatrixXd data = flattened_matrix(specs, stats);

    const auto n = static_cast<std::size_t>(data.cols());
    Eigen::MatrixXd codes(model.bottleneck_dim(), data.cols());
    constexpr std::size_t chunk = 256;
    parallel_for((n + chunk - 1) / chunk, c.threads, [&](std::size_t b) {
        const auto start = static_cast<Eigen::Index>(b * chunk);
        const auto count = static_cast<Eigen::Index>(std::min(chunk, n - b * chunk));
        codes.middleCols(start, count) = encode_batch(model, data.middleCols(start, count));
    });

    std::map<TileId, TemporalEmbedding> emb;
    for (std::size_t j = 0; j < valid.size(); ++j) {
        const auto row = static_cast<std::uint32_t>(valid[j] / raster.grid.width);
        const auto col = static_cast<std::uint32_t>(valid[j] % raster.grid.width);
        const auto tile = raster.grid.tile_at(row, col);
        emb.emplace(tile, TemporalEmbedding{tile, codes.col(static_cast<Eigen::Index>(j))});
    }
    const auto out = build_raster(emb, raster.grid, model.bottleneck_dim());
    save_raster(out, c.workdir / files::embeddings);
    write_stream_file(c.workdir / files::embeddings_csv, [&](std::ostream& os) { write_embedding_csv(os, out); });
}

void features_stage(const PipelineConfig& c) {
    const auto dense = raster_to_series(load_raster(c.workdir / files::activity), c.window);
    save_raster(baseline_features(dense, FeatureKind::raw_dft), c.workdir / files::features(FeatureKind::raw_dft));
    save_raster(baseline_features(dense, FeatureKind::activity_count),
                c.workdir / files::features(FeatureKind::activity_count));
}

std::vector<std::string> classify_outputs(const PipelineConfig& c, const std::vector<std::string>& classes,
                                          bool sparse) {
    std::vector<std::string> out{files::split, files::metrics, files::summary};
    if (sparse) {
        out.emplace_back(files::metrics_sparse);
    }
    for (auto k : all_kinds) {
        out.push_back(files::scores(k));
        out.push_back(files::predicted(k));
        for (const auto& cls : classes) {
            out.push_back(files::pr_csv(k, cls));
        }
    }
    for (const auto& cls : classes) {
        out.push_back(files::pr_png(cls));
    }
    (void)c;
    return out;
}

fs::path feature_path(const PipelineConfig& c, FeatureKind k) {
    return c.workdir / (k == FeatureKind::embedding ? std::string(files::embeddings) : files::features(k));
}

void classify_stage(const PipelineConfig& c, bool sparse) {
    const auto labels = load_label_raster(c.workdir / files::labels(c.task));
    const auto is_test = spatial_block_split(labels.grid, c.effective_split_seed(), c.split_block, c.test_fraction);
    check_split(labels, is_test);
    std::vector<std::uint8_t> is_train(is_test.size());
    std::transform(is_test.begin(), is_test.end(), is_train.begin(), [](auto v) { return v ? 0 : 1; });
    save_label_raster(LabelRaster{labels.grid, is_test, {"train", "test"}}, c.workdir / files::split);

    std::vector<std::uint8_t> sparse_test;
    if (sparse) {
        const auto rates = load_raster(c.workdir / files::rates);
        if (!(rates.grid == labels.grid)) {
            throw DataError("rate raster grid does not match labels");
        }
        sparse_test.resize(is_test.size());
        for (std::size_t i = 0; i < is_test.size(); ++i) {
            sparse_test[i] = is_test[i] && rates.data[i] <= c.sparse_rate_max ? 1 : 0;
        }
    }

    Report report;
    Report sparse_report;
    std::map<std::string, std::vector<std::pair<FeatureKind, PRCurve>>> curves;
    for (auto kind : all_kinds) {
        const auto features = load_raster(feature_path(c, kind));
        if (!(features.grid == labels.grid)) {
            throw DataError(std::string(to_string(kind)) + " features cover a different grid than the labels");
        }
        auto cfg = c.classifier;
        const auto clf = train_pixel_classifier(features, kind, labels, cfg, is_train);
        const auto scores = predict_scores(clf, features);
        const auto rows = evaluate_classifier(scores, kind, labels, is_test);
        report.rows.insert(report.rows.end(), rows.begin(), rows.end());
        if (sparse) {
            const auto srows = evaluate_classifier(scores, kind, labels, sparse_test);
            sparse_report.rows.insert(sparse_report.rows.end(), srows.begin(), srows.end());
        }

        save_label_raster(predicted_labels(scores, labels), c.workdir / files::predicted(kind));
        write_stream_file(c.workdir / files::scores(kind), [&](std::ostream& out) {
            out << "pixel,tile_x,tile_y,label,test";
            for (const auto& cls : labels.classes) {
                out << ",p_" << cls;
            }
            out << '\n';
            for (std::size_t i = 0; i < labels.labels.size(); ++i) {
                if (labels.labels[i] == LabelRaster::ignore) {
                    continue;
                }
                const auto tile = labels.grid.tile_at(static_cast<std::uint32_t>(i / labels.grid.width),
                                                      static_cast<std::uint32_t>(i % labels.grid.width));
                out << i << ',' << tile.x << ',' << tile.y << ',' << int{labels.labels[i]} << ',' << int{is_test[i]};
                for (std::uint32_t k = 0; k < scores.classes; ++k) {
                    out << ',' << csv_double(scores.at(i, k));
                }
                out << '\n';
            }
        });
        for (std::uint32_t cls = 0; cls < labels.classes.size(); ++cls) {
            std::vector<double> s;
            std::vector<std::uint8_t> pos;
            for (std::size_t i = 0; i < labels.labels.size(); ++i) {
                if (is_test[i] && labels.labels[i] != LabelRaster::ignore) {
                    s.push_back(scores.at(i, cls));
                    pos.push_back(labels.labels[i] == cls ? 1 : 0);
                }
            }
            const auto n_pos = std::count(pos.begin(), pos.end(), 1);
            PRCurve curve;
            if (n_pos > 0 && static_cast<std::size_t>(n_pos) < pos.size()) {
                curve = pr_curve(s, pos);
            }
            write_stream_file(c.workdir / files::pr_csv(kind, labels.classes[cls]),
                              [&](std::ostream& out) { write_pr_csv(out, curve); });
            curves[labels.classes[cls]].emplace_back(kind, std::move(curve));
        }
    }

    write_stream_file(c.workdir / files::metrics, [&](std::ostream& out) { write_report_csv(out, report); });
    if (sparse) {
        write_stream_file(c.workdir / files::metrics_sparse,
                          [&](std::ostream& out) { write_report_csv(out, sparse_report); });
    }
    write_stream_file(c.workdir / files::summary, [&](std::ostream& out) {
        out << "task " << to_string(c.task) << ", test pixels: spatial " << c.split_block << "x" << c.split_block
            << " blocks\n\n";
        write_report_summary(out, report);
        if (sparse) {
            out << "\nsparse tiles (expected rate <= " << c.sparse_rate_max << " records/hour)\n\n";
            write_report_summary(out, sparse_report);
        }
    });
    const std::map<FeatureKind, Rgb> colors{{FeatureKind::embedding, {220, 40, 40}},
                                            {FeatureKind::raw_dft, {40, 160, 40}},
                                            {FeatureKind::activity_count, {40, 80, 220}}};
    for (const auto& [cls, list] : curves) {
        std::vector<NamedCurve> named;
        for (const auto& [kind, curve] : list) {
            named.push_back({std::string(to_string(kind)), colors.at(kind), &curve});
        }
        write_png(c.workdir / files::pr_png(cls), plot_pr_curves(named));
    }
    spdlog::info("classification report:\n{}", binary::read_file(c.workdir / files::summary));
}

void map_stage(const PipelineConfig& c) {
    const auto raster = load_raster(c.workdir / files::embeddings);
    const std::vector<FloatRaster> set{raster};
    const auto proj = fit_projection(set);
    render_rgb(raster, proj, c.workdir / files::map_png);
    json j;
    j["mean"] = std::vector<double>(proj.mean.data(), proj.mean.data() + proj.mean.size());
    j["components"] = json::array();
    for (int r = 0; r < 3; ++r) {
        std::vector<double> row(static_cast<std::size_t>(proj.components.cols()));
        for (Eigen::Index k = 0; k < proj.components.cols(); ++k) {
            row[static_cast<std::size_t>(k)] = proj.components(r, k);
        }
        j["components"].push_back(row);
    }
    j["lo"] = proj.lo;
    j["hi"] = proj.hi;
    j["explained_variance"] = proj.explained;
    j["rank_deficient"] = proj.rank_deficient;
    binary::write_file(c.workdir / files::projection, j.dump(1) + "\n");
}

} // namespace

// ---------------------------------------------------------------- public API

void validate(const PipelineConfig& c) {
    try {
        validate(c.window);
        validate(c.spectral);
        spectrogram_rows(c.window.n, c.spectral);
        validate(c.cae);
        if (c.zoom > max_zoom) {
            throw InputError("zoom too large");
        }
        if (c.bbox) {
            validate(*c.bbox);
        }
        if (c.architecture.bottleneck_dim < 1 ||
            std::any_of(c.architecture.hidden_dims.begin(), c.architecture.hidden_dims.end(),
                        [](auto d) { return d < 1; })) {
            throw InputError("autoencoder dimensions must be at least 1");
        }
        if (c.split_block < 1 || !(c.test_fraction > 0 && c.test_fraction < 1)) {
            throw InputError("split block must be >= 1 and test fraction in (0, 1)");
        }
        if (c.classifier.hidden < 1 || c.classifier.epochs < 1 || c.classifier.batch_size < 1 ||
            !(c.classifier.learning_rate > 0)) {
            throw InputError("invalid classifier settings");
        }
        if (c.scene_layout.width < 1 || c.scene_layout.height < 1 || c.scene_layout.patch < 1) {
            throw InputError("scene grid must be at least 1x1 tiles");
        }
        if (c.threads < 1) {
            throw InputError("threads must be at least 1");
        }
    } catch (const InputError& e) {
        throw ConfigError(e.what());
    }
}

nlohmann::json config_to_json(const PipelineConfig& c) {
    json j;
    j["workdir"] = c.workdir.string();
    j["seed"] = c.seed;
    j["threads"] = c.threads;
    auto traj = json::array();
    for (const auto& p : c.trajectories) {
        traj.push_back(p.string());
    }
    j["inputs"] = {{"trajectories", traj}, {"zoom", c.zoom}};
    if (c.bbox) {
        j["inputs"]["bbox"] = {c.bbox->lon_min, c.bbox->lat_min, c.bbox->lon_max, c.bbox->lat_max};
    }
    j["scene"] = {{"path", c.scene_path.string()},
                  {"width", c.scene_layout.width},
                  {"height", c.scene_layout.height},
                  {"patch", c.scene_layout.patch},
                  {"lon", c.scene_layout.lon},
                  {"lat", c.scene_layout.lat},
                  {"zoom", c.scene_layout.zoom},
                  {"trajectory_file", c.trajectory_name}};
    j["window"] = window_json(c.window);
    j["ingest"] = {{"modality", c.modality ? std::string(to_string(*c.modality)) : std::string("any")},
                   {"count_mode", c.count_mode == CountMode::records ? "records" : "unique_trajectories"}};
    j["spectral"] = spectral_json(c.spectral);
    j["cae"] = {{"hidden_dims", c.architecture.hidden_dims},
                {"bottleneck", c.architecture.bottleneck_dim},
                {"lambda", c.cae.lambda},
                {"learning_rate", c.cae.learning_rate},
                {"epochs", c.cae.epochs},
                {"batch_size", c.cae.batch_size},
                {"optimizer", std::string(to_string(c.cae.optimizer))}};
    j["downstream"] = {{"task", std::string(to_string(c.task))},
                       {"split_seed", c.effective_split_seed()},
                       {"split_block", c.split_block},
                       {"test_fraction", c.test_fraction},
                       {"hidden", c.classifier.hidden},
                       {"epochs", c.classifier.epochs},
                       {"batch_size", c.classifier.batch_size},
                       {"learning_rate", c.classifier.learning_rate},
                       {"sparse_rate_max", c.sparse_rate_max}};
    return j;
}

PipelineConfig config_from_json(const nlohmann::json& j, PipelineConfig c) {
    try {
        reject_unknown(j, {"workdir", "seed", "threads", "inputs", "scene", "window", "ingest", "spectral", "cae",
                           "downstream"},
                       "config");
        if (j.contains("workdir")) {
            c.workdir = j.at("workdir").get<std::string>();
        }
        read_opt(j, "seed", c.seed);
        read_opt(j, "threads", c.threads);
        if (j.contains("inputs")) {
            const auto& in = j.at("inputs");
            reject_unknown(in, {"trajectories", "zoom", "bbox"}, "inputs");
            if (in.contains("trajectories")) {
                c.trajectories.clear();
                for (const auto& p : in.at("trajectories")) {
                    c.trajectories.emplace_back(p.get<std::string>());
                }
            }
            read_opt(in, "zoom", c.zoom);
            if (in.contains("bbox") && !in.at("bbox").is_null()) {
                const auto b = in.at("bbox").get<std::vector<double>>();
                if (b.size() != 4) {
                    throw ConfigError("inputs.bbox needs [lon_min, lat_min, lon_max, lat_max]");
                }
                c.bbox = GeoBBox{b[0], b[1], b[2], b[3]};
            }
        }
        if (j.contains("scene")) {
            const auto& s = j.at("scene");
            reject_unknown(s, {"path", "width", "height", "patch", "lon", "lat", "zoom", "trajectory_file"}, "scene");
            if (s.contains("path")) {
                c.scene_path = s.at("path").get<std::string>();
            }
            read_opt(s, "width", c.scene_layout.width);
            read_opt(s, "height", c.scene_layout.height);
            read_opt(s, "patch", c.scene_layout.patch);
            read_opt(s, "lon", c.scene_layout.lon);
            read_opt(s, "lat", c.scene_layout.lat);
            read_opt(s, "zoom", c.scene_layout.zoom);
            read_opt(s, "trajectory_file", c.trajectory_name);
        }
        if (j.contains("window")) {
            const auto& w = j.at("window");
            reject_unknown(w, {"t0", "dt", "n"}, "window");
            read_opt(w, "t0", c.window.t0);
            read_opt(w, "dt", c.window.dt);
            read_opt(w, "n", c.window.n);
        }
        if (j.contains("ingest")) {
            const auto& in = j.at("ingest");
            reject_unknown(in, {"modality", "count_mode"}, "ingest");
            if (in.contains("modality")) {
                const auto m = in.at("modality").get<std::string>();
                if (m == "any") {
                    c.modality.reset();
                } else if (auto parsed = parse_modality(m)) {
                    c.modality = *parsed;
                } else {
                    throw ConfigError("unknown modality '" + m + "'");
                }
            }
            if (in.contains("count_mode")) {
                const auto m = in.at("count_mode").get<std::string>();
                if (m == "records") {
                    c.count_mode = CountMode::records;
                } else if (m == "unique_trajectories") {
                    c.count_mode = CountMode::unique_trajectories;
                } else {
                    throw ConfigError("unknown count mode '" + m + "'");
                }
            }
        }
        if (j.contains("spectral")) {
            const auto& s = j.at("spectral");
            reject_unknown(s, {"window_len", "hop", "kept_bins", "remove_mean", "log_compress"}, "spectral");
            read_opt(s, "window_len", c.spectral.window_len);
            read_opt(s, "hop", c.spectral.hop);
            read_opt(s, "kept_bins", c.spectral.kept_bins);
            read_opt(s, "remove_mean", c.spectral.remove_mean);
            read_opt(s, "log_compress", c.spectral.log_compress);
        }
        if (j.contains("cae")) {
            const auto& s = j.at("cae");
            reject_unknown(s, {"hidden_dims", "bottleneck", "lambda", "learning_rate", "epochs", "batch_size",
                               "optimizer"},
                           "cae");
            read_opt(s, "hidden_dims", c.architecture.hidden_dims);
            read_opt(s, "bottleneck", c.architecture.bottleneck_dim);
            read_opt(s, "lambda", c.cae.lambda);
            read_opt(s, "learning_rate", c.cae.learning_rate);
            read_opt(s, "epochs", c.cae.epochs);
            read_opt(s, "batch_size", c.cae.batch_size);
            if (s.contains("optimizer")) {
                c.cae.optimizer = parse_optimizer(s.at("optimizer").get<std::string>());
            }
        }
        if (j.contains("downstream")) {
            const auto& d = j.at("downstream");
            reject_unknown(d, {"task", "split_seed", "split_block", "test_fraction", "hidden", "epochs", "batch_size",
                               "learning_rate", "sparse_rate_max"},
                           "downstream");
            if (d.contains("task")) {
                c.task = parse_label_task(d.at("task").get<std::string>());
            }
            if (d.contains("split_seed") && !d.at("split_seed").is_null()) {
                c.split_seed = d.at("split_seed").get<std::uint64_t>();
            }
            read_opt(d, "split_block", c.split_block);
            read_opt(d, "test_fraction", c.test_fraction);
            read_opt(d, "hidden", c.classifier.hidden);
            read_opt(d, "epochs", c.classifier.epochs);
            read_opt(d, "batch_size", c.classifier.batch_size);
            read_opt(d, "learning_rate", c.classifier.learning_rate);
            read_opt(d, "sparse_rate_max", c.sparse_rate_max);
        }
    } catch (const json::exception& e) {
        throw ConfigError(std::string("bad config: ") + e.what());
    } catch (const InputError& e) {
        throw ConfigError(e.what());
    }
    return c;
}

PipelineConfig load_config(const fs::path& path, PipelineConfig base) {
    std::string text;
    try {
        text = binary::read_file(path);
    } catch (const IoError& e) {
        throw ConfigError(e.what());
    }
    const auto j = json::parse(text, nullptr, false);
    if (j.is_discarded()) {
        throw ConfigError(path.string() + " is not valid JSON");
    }
    return config_from_json(j, std::move(base));
}

bool CommandResult::executed(std::string_view stage) const {
    return std::any_of(stages.begin(), stages.end(), [&](const StageRun& s) { return s.name == stage && s.executed; });
}

bool CommandResult::any_executed() const {
    return std::any_of(stages.begin(), stages.end(), [](const StageRun& s) { return s.executed; });
}

CommandResult cmd_generate(const PipelineConfig& c, bool force) {
    validate(c);
    if (fs::exists(c.workdir) && !fs::is_empty(c.workdir) && !force) {
        throw ConfigError("work directory " + c.workdir.string() + " is not empty; pass --force to overwrite");
    }
    fs::create_directories(c.workdir);
    fs::remove(c.workdir / files::cache);

    SceneSpec scene;
    if (!c.scene_path.empty()) {
        scene = load_scene(c.scene_path);
    } else {
        try {
            scene = make_default_scene(c.scene_layout, c.seed, c.window);
        } catch (const InputError& e) {
            throw ConfigError(e.what());
        }
    }
    if (scene.window != c.window) {
        spdlog::warn("scene window differs from the configured window; ingest uses the configured one");
    }
    const auto counts = generate_counts(scene);
    const auto n = emit_records_file(counts, scene, c.workdir / c.trajectory_name);
    spdlog::info("generated {} records over {}x{} tiles", n, scene.grid.width, scene.grid.height);

    save_scene(scene, c.workdir / files::scene);
    for (auto task : {LabelTask::res_vs_com, LabelTask::strata, LabelTask::activity_area, LabelTask::archetype}) {
        save_label_raster(label_raster(scene, task), c.workdir / files::labels(task));
    }
    save_raster(rate_raster(scene), c.workdir / files::rates);
    write_snapshot(c, "generate");

    json manifest;
    manifest["records"] = n;
    manifest["files"] = json::object();
    std::vector<fs::path> listed;
    for (const auto& entry : fs::directory_iterator(c.workdir)) {
        if (entry.is_regular_file() && entry.path().filename() != files::manifest) {
            listed.push_back(entry.path());
        }
    }
    std::sort(listed.begin(), listed.end());
    for (const auto& p : listed) {
        manifest["files"][p.filename().string()] = {{"sha256", sha256_file(p)}, {"bytes", fs::file_size(p)}};
    }
    binary::write_file(c.workdir / files::manifest, manifest.dump(1) + "\n");
    return {{{"generate", true}}};
}

CommandResult cmd_embed(const PipelineConfig& cfg) {
    const auto c = seeded(cfg);
    validate(c);
    ensure_workdir(c);
    write_snapshot(c, "embed");
    StageCache cache(c.workdir);
    CommandResult result;

    std::vector<fs::path> ingest_inputs = trajectory_inputs(c);
    if (!c.bbox && fs::exists(c.workdir / files::scene)) {
        ingest_inputs.emplace_back(files::scene);
    }
    json ingest_params{{"window", window_json(c.window)},
                       {"modality", c.modality ? std::string(to_string(*c.modality)) : std::string("any")},
                       {"count_mode", c.count_mode == CountMode::records ? "records" : "unique"},
                       {"zoom", c.zoom}};
    if (c.bbox) {
        ingest_params["bbox"] = {c.bbox->lon_min, c.bbox->lat_min, c.bbox->lon_max, c.bbox->lat_max};
    }
    result.stages.push_back(run_stage(cache, "ingest", stage_key(ingest_params, c.workdir, ingest_inputs),
                                      {files::activity}, [&] { ingest_stage(c); }));

    const json spec_params{{"spectral", spectral_json(c.spectral)}, {"window", window_json(c.window)}};
    result.stages.push_back(run_stage(cache, "spectral", stage_key(spec_params, c.workdir, {files::activity}),
                                      {files::spectrogram}, [&] { spectral_stage(c); }));

    const auto full = config_to_json(c);
    const json train_params{{"cae", full["cae"]}, {"seed", c.cae.seed}, {"spectral", spectral_json(c.spectral)},
                            {"window", window_json(c.window)}};
    result.stages.push_back(run_stage(cache, "train", stage_key(train_params, c.workdir, {files::spectrogram}),
                                      {files::norm_stats, files::model, files::loss_history},
                                      [&] { train_stage(c); }));

    result.stages.push_back(run_stage(cache, "encode",
                                      stage_key(spec_params, c.workdir,
                                                {files::spectrogram, files::norm_stats, files::model}),
                                      {files::embeddings, files::embeddings_csv}, [&] { encode_stage(c); }));
    return result;
}

CommandResult cmd_classify(const PipelineConfig& cfg) {
    const auto c = seeded(cfg);
    validate(c);
    ensure_workdir(c);
    write_snapshot(c, "classify");
    StageCache cache(c.workdir);
    CommandResult result;

    const json feat_params{{"window", window_json(c.window)}};
    result.stages.push_back(run_stage(cache, "features", stage_key(feat_params, c.workdir, {files::activity}),
                                      {files::features(FeatureKind::raw_dft),
                                       files::features(FeatureKind::activity_count)},
                                      [&] { features_stage(c); }));

    const auto label_file = files::labels(c.task);
    if (!fs::exists(c.workdir / label_file)) {
        throw DataError("label raster " + label_file + " not found in the work directory");
    }
    const bool sparse = fs::exists(c.workdir / files::rates);
    std::vector<fs::path> inputs{files::embeddings, files::features(FeatureKind::raw_dft),
                                 files::features(FeatureKind::activity_count), label_file, label_file + ".json"};
    if (sparse) {
        inputs.emplace_back(files::rates);
    }
    const auto labels = load_label_raster(c.workdir / label_file);
    const auto full = config_to_json(c);
    const json params{{"downstream", full["downstream"]}, {"classifier_seed", c.classifier.seed}};
    result.stages.push_back(run_stage(cache, "classify", stage_key(params, c.workdir, inputs),
                                      classify_outputs(c, labels.classes, sparse),
                                      [&] { classify_stage(c, sparse); }));
    return result;
}

CommandResult cmd_map(const PipelineConfig& cfg) {
    const auto c = seeded(cfg);
    validate(c);
    ensure_workdir(c);
    write_snapshot(c, "map");
    StageCache cache(c.workdir);
    return {{run_stage(cache, "map", stage_key(json::object(), c.workdir, {files::embeddings}),
                       {files::map_png, files::projection}, [&] { map_stage(c); })}};
}

CommandResult cmd_all(const PipelineConfig& c, bool force) {
    CommandResult all = cmd_generate(c, force);
    for (auto r : {cmd_embed(c), cmd_classify(c), cmd_map(c)}) {
        all.stages.insert(all.stages.end(), r.stages.begin(), r.stages.end());
    }
    return all;
}

std::vector<Spectrogram> dense_spectrograms(const DenseSeries& series, const SpectrogramOptions& o, unsigned threads) {
    std::vector<Spectrogram> out(series.cells.size());
    parallel_for(series.cells.size(), threads, [&](std::size_t i) {
        if (series.has_data[i]) {
            out[i] = spectrogram(series.cells[i], o);
        }
    });
    return out;
}

FloatRaster series_to_raster(const DenseSeries& s) {
    if (s.window.n + 1 > 0xffff) {
        throw InputError("too many buckets to store as raster channels");
    }
    FloatRaster r(s.grid, static_cast<std::uint16_t>(s.window.n + 1));
    for (std::size_t i = 0; i < s.cells.size(); ++i) {
        auto px = r.pixel(i);
        for (std::uint32_t k = 0; k < s.window.n; ++k) {
            px[k] = static_cast<float>(s.cells[i].counts[k]);
        }
        px.back() = s.has_data[i] ? 1.0f : 0.0f;
    }
    return r;
}

DenseSeries raster_to_series(const FloatRaster& r, const TimeWindow& w) {
    if (r.channels != w.n + 1) {
        throw DataError("activity raster has " + std::to_string(r.channels - 1) + " buckets, window has " +
                        std::to_string(w.n));
    }
    DenseSeries s{r.grid, w, {}, std::vector<std::uint8_t>(r.pixel_count(), 0)};
    s.cells.reserve(r.pixel_count());
    for (std::size_t i = 0; i < r.pixel_count(); ++i) {
        const auto px = r.pixel(i);
        ActivitySeries a{r.grid.tile_at(static_cast<std::uint32_t>(i / r.grid.width),
                                        static_cast<std::uint32_t>(i % r.grid.width)),
                         std::vector<std::uint32_t>(w.n), w};
        for (std::uint32_t k = 0; k < w.n; ++k) {
            a.counts[k] = static_cast<std::uint32_t>(px[k]);
        }
        s.has_data[i] = px.back() != 0.0f ? 1 : 0;
        s.cells.push_back(std::move(a));
    }
    return s;
}

NormStats load_norm_stats(const fs::path& path) {
    const auto j = json::parse(binary::read_file(path), nullptr, false);
    if (j.is_discarded()) {
        throw DataError(path.string() + " is not valid JSON");
    }
    try {
        NormStats s{j.at("mean").get<std::vector<double>>(), j.at("std").get<std::vector<double>>()};
        if (s.mean.size() != s.std.size()) {
            throw DataError("normalization stats have mismatched lengths");
        }
        return s;
    } catch (const json::exception& e) {
        throw DataError(std::string("bad normalization stats: ") + e.what());
    }
}

void save_norm_stats(const NormStats& s, const fs::path& path) {
    binary::write_file(path, json{{"mean", s.mean}, {"std", s.std}}.dump() + "\n");
}

int exit_code_for(const std::exception& e) noexcept {
    if (dynamic_cast<const ConfigError*>(&e) != nullptr) {
        return 2;
    }
    if (dynamic_cast<const DivergenceError*>(&e) != nullptr) {
        return 4;
    }
    return 3;
}

} // namespace tempo
