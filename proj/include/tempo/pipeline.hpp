#pragma once

#include "tempo/cae.hpp"
#include "tempo/downstream.hpp"
#include "tempo/ingest.hpp"
#include "tempo/spectral.hpp"
#include "tempo/synthgen.hpp"

#include <nlohmann/json.hpp>

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

namespace tempo {

struct PipelineConfig {
    std::filesystem::path workdir = "tempo_run";
    std::uint64_t seed = 42;
    unsigned threads = 1;

    /// External trajectory files; empty means the generated workdir/trajectories.csv.
    std::vector<std::filesystem::path> trajectories;
    /// Optional explicit grid for external data: lon_min, lat_min, lon_max, lat_max.
    std::optional<GeoBBox> bbox;
    std::uint32_t zoom = default_zoom;

    /// Scene file to generate from; empty means make_default_scene(scene_layout).
    std::filesystem::path scene_path;
    SceneLayout scene_layout;
    std::string trajectory_name = "trajectories.csv";

    TimeWindow window{default_scene_t0, 3600, 672};

    std::optional<Modality> modality = Modality::driving;
    CountMode count_mode = CountMode::records;

    SpectrogramOptions spectral;

    CaeArchitecture architecture;
    TrainConfig cae;

    LabelTask task = LabelTask::res_vs_com;
    std::optional<std::uint64_t> split_seed;
    std::uint32_t split_block = 8;
    double test_fraction = 0.25;
    ClassifierConfig classifier;
    /// Extra evaluation on test tiles whose expected rate is at most this (synthetic scenes only).
    double sparse_rate_max = 1.0;

    [[nodiscard]] std::uint64_t effective_split_seed() const { return split_seed.value_or(seed + 3); }
};

/// Throws ConfigError on out-of-range parameters.
void validate(const PipelineConfig& c);

nlohmann::json config_to_json(const PipelineConfig& c);
/// Fields present in `j` override `base`; unknown keys are rejected.
PipelineConfig config_from_json(const nlohmann::json& j, PipelineConfig base = {});
PipelineConfig load_config(const std::filesystem::path& path, PipelineConfig base = {});

/// File names inside the work directory.
namespace files {
inline constexpr const char* scene = "scene.json";
inline constexpr const char* manifest = "manifest.json";
inline constexpr const char* rates = "rates.temb";
inline constexpr const char* activity = "activity.temb";
inline constexpr const char* spectrogram = "spectrogram.temb";
inline constexpr const char* norm_stats = "norm_stats.json";
inline constexpr const char* model = "model.cae";
inline constexpr const char* loss_history = "loss_history.csv";
inline constexpr const char* embeddings = "embeddings.temb";
inline constexpr const char* embeddings_csv = "embeddings.csv";
inline constexpr const char* split = "split.temb";
inline constexpr const char* metrics = "metrics.csv";
inline constexpr const char* metrics_sparse = "metrics_sparse.csv";
inline constexpr const char* summary = "summary.txt";
inline constexpr const char* map_png = "embedding_map.png";
inline constexpr const char* projection = "projection.json";
inline constexpr const char* cache = "stage_cache.json";

std::string labels(LabelTask t);
std::string features(FeatureKind k);
std::string scores(FeatureKind k);
std::string predicted(FeatureKind k);
std::string pr_csv(FeatureKind k, std::string_view cls);
std::string pr_png(std::string_view cls);
std::string config_snapshot(std::string_view command);
} // namespace files

struct StageRun {
    std::string name;
    bool executed = false; ///< false when the cached outputs were reused
};

struct CommandResult {
    std::vector<StageRun> stages;

    [[nodiscard]] bool executed(std::string_view stage) const;
    [[nodiscard]] bool any_executed() const;
};

/// Synthetic scene, trajectories, label rasters and a hash manifest. Refuses a non-empty workdir unless force.
CommandResult cmd_generate(const PipelineConfig& c, bool force);
/// ingest -> spectrogram -> autoencoder training -> per-tile embeddings; cached per stage.
CommandResult cmd_embed(const PipelineConfig& c);
/// Classifiers on embedding, raw-DFT and activity-count features with a shared split.
CommandResult cmd_classify(const PipelineConfig& c);
/// RGB map of the embeddings.
CommandResult cmd_map(const PipelineConfig& c);
CommandResult cmd_all(const PipelineConfig& c, bool force);

/// Per-tile spectrograms of a dense series; tiles without data stay empty.
std::vector<Spectrogram> dense_spectrograms(const DenseSeries& series, const SpectrogramOptions& o, unsigned threads);

/// Activity counts as a raster with one channel per bucket plus a has-data mask.
FloatRaster series_to_raster(const DenseSeries& s);
DenseSeries raster_to_series(const FloatRaster& r, const TimeWindow& w);

NormStats load_norm_stats(const std::filesystem::path& path);
void save_norm_stats(const NormStats& s, const std::filesystem::path& path);

/// CLI exit status for an exception escaping a command.
int exit_code_for(const std::exception& e) noexcept;

} // namespace tempo
