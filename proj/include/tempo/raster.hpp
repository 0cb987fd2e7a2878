#pragma once

#include "tempo/cae.hpp"
#include "tempo/geo_tiles.hpp"
#include "tempo/png_image.hpp"

#include <Eigen/Dense>

#include <array>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <map>
#include <span>
#include <string>
#include <vector>

namespace tempo {

/// Element types of the TEMB container.
enum class RasterDtype : std::uint8_t { u8 = 1, f32 = 2 };

/**
 * Multi-channel float raster over a tile grid, row-major with channels
 * interleaved per pixel. Embedding rasters carry the validity mask as the
 * last channel.
 */
struct FloatRaster {
    TileGrid grid;
    std::uint16_t channels = 1;
    std::vector<float> data;

    FloatRaster() = default;
    FloatRaster(const TileGrid& g, std::uint16_t c);

    [[nodiscard]] std::size_t pixel_count() const noexcept { return grid.cell_count(); }
    [[nodiscard]] std::span<float> pixel(std::size_t i) {
        return {data.data() + i * channels, channels};
    }
    [[nodiscard]] std::span<const float> pixel(std::size_t i) const {
        return {data.data() + i * channels, channels};
    }

    friend bool operator==(const FloatRaster&, const FloatRaster&) = default;
};

using EmbeddingRaster = FloatRaster;

/// True when the pixel's mask (last channel) is set. Only meaningful for masked rasters.
[[nodiscard]] inline bool masked_in(const FloatRaster& r, std::size_t i) {
    return r.data[i * r.channels + r.channels - 1] != 0.0f;
}

/// Per-pixel class ids with a class table; 255 marks pixels excluded from training and evaluation.
struct LabelRaster {
    static constexpr std::uint8_t ignore = 255;

    TileGrid grid;
    std::vector<std::uint8_t> labels; ///< row-major
    std::vector<std::string> classes; ///< id -> name

    friend bool operator==(const LabelRaster&, const LabelRaster&) = default;
};

void validate(const LabelRaster& l);

/// Per-class pixel counts, ignoring the ignore value.
std::vector<std::size_t> class_counts(const LabelRaster& l);

/// Embedding channels followed by a 0/1 validity mask; cells without an embedding are zero.
EmbeddingRaster build_raster(const std::map<TileId, TemporalEmbedding>& embeddings, const TileGrid& grid,
                             Eigen::Index dim);

std::string serialize_raster(const FloatRaster& r);
FloatRaster deserialize_raster(std::string_view bytes);
void save_raster(const FloatRaster& r, const std::filesystem::path& path);
FloatRaster load_raster(const std::filesystem::path& path);

/// TEMB container with dtype u8; the class table goes to `<path>.json`.
void save_label_raster(const LabelRaster& l, const std::filesystem::path& path);
LabelRaster load_label_raster(const std::filesystem::path& path);
std::string serialize_label_raster(const LabelRaster& l);
/// Labels only; the class table must be supplied separately.
LabelRaster deserialize_label_raster(std::string_view bytes, std::vector<std::string> classes);

/// tile_x, tile_y, e0..e{C-2} for every masked pixel.
void write_embedding_csv(std::ostream& out, const EmbeddingRaster& r);

/// Linear map from embedding space to three display coordinates.
struct Projection3 {
    Eigen::Matrix<double, 3, Eigen::Dynamic> components; ///< orthonormal rows
    Eigen::VectorXd mean;
    std::array<double, 3> lo{};  ///< colour scaling range per component
    std::array<double, 3> hi{};
    std::array<double, 3> explained{}; ///< fraction of total variance per component
    bool rank_deficient = false;

    [[nodiscard]] Eigen::Vector3d project(std::span<const float> features) const;
};

/// Top-3 principal directions of all masked pixels' embedding channels.
Projection3 fit_projection(std::span<const EmbeddingRaster> rasters);

/// Masked pixels coloured by min-max scaled projection, unmasked pixels black.
RgbImage render_rgb_image(const EmbeddingRaster& raster, const Projection3& proj);
void render_rgb(const EmbeddingRaster& raster, const Projection3& proj, const std::filesystem::path& path);

} // namespace tempo
