#pragma once

#include "tempo/cae.hpp"
#include "tempo/ingest.hpp"
#include "tempo/optim.hpp"
#include "tempo/raster.hpp"

#include <Eigen/Dense>

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <span>
#include <string>
#include <vector>

namespace tempo {

enum class FeatureKind { embedding, raw_dft, activity_count };

std::string_view to_string(FeatureKind k) noexcept;
FeatureKind parse_feature_kind(std::string_view s);

/// Baseline feature rasters derived from dense activity series (mask in the last channel).
/// raw_dft: log1p |X_k| of the full series, k = 0..N/2. activity_count: log1p(mean count per bucket).
FloatRaster baseline_features(const DenseSeries& series, FeatureKind kind);

struct ClassifierConfig {
    std::uint32_t hidden = 32;
    std::uint32_t epochs = 200;
    std::uint32_t batch_size = 64;
    double learning_rate = 1e-2;
    std::uint64_t seed = 0;
    OptimizerKind optimizer = OptimizerKind::adam;
};

/// One tanh hidden layer and a softmax output over standardized pixel features.
struct PixelClassifier {
    FeatureKind kind = FeatureKind::embedding;
    std::vector<std::string> classes;
    Eigen::VectorXd feature_mean;
    Eigen::VectorXd feature_scale;
    DenseLayer hidden;
    DenseLayer output; ///< logits
    std::uint32_t epochs_trained = 0;
    double final_loss = 0.0;

    [[nodiscard]] Eigen::Index input_dim() const { return hidden.in(); }
};

/**
 * Minimizes mean cross-entropy over pixels whose label is not `ignore` and
 * whose `selection` entry is non-zero (all pixels when `selection` is
 * empty). Throws DataError when fewer than two classes remain.
 */
PixelClassifier train_pixel_classifier(const FloatRaster& features, FeatureKind kind, const LabelRaster& labels,
                                       const ClassifierConfig& config, std::span<const std::uint8_t> selection = {});

/// Per-pixel class probabilities, pixel-major.
struct ScoreRaster {
    TileGrid grid;
    std::uint32_t classes = 0;
    std::vector<double> probs;

    [[nodiscard]] double at(std::size_t pixel, std::uint32_t cls) const { return probs[pixel * classes + cls]; }
    [[nodiscard]] std::uint8_t argmax(std::size_t pixel) const;
};

ScoreRaster predict_scores(const PixelClassifier& clf, const FloatRaster& features);

/// Argmax labels; pixels ignored in `labels` stay ignored.
LabelRaster predicted_labels(const ScoreRaster& scores, const LabelRaster& labels);

struct PRPoint {
    double threshold = 0.0;
    double recall = 0.0;
    double precision = 0.0;
};

struct PRCurve {
    std::vector<PRPoint> points; ///< thresholds descending, recall non-decreasing
    double auc = 0.0;
};

/**
 * Sweeps every distinct score from high to low, treating `score >= t` as
 * positive. AUC is the trapezoid over recall starting from (0, first
 * precision). Requires at least one positive and one negative.
 */
PRCurve pr_curve(std::span<const double> scores, std::span<const std::uint8_t> positive);

/// 1 for test pixels: block x block tiles go to test with probability test_fraction by seeded hash.
std::vector<std::uint8_t> spatial_block_split(const TileGrid& grid, std::uint64_t seed, std::uint32_t block = 8,
                                              double test_fraction = 0.25);

struct ClassMetrics {
    FeatureKind kind = FeatureKind::embedding;
    std::string cls;
    double precision = 0.0; ///< at the argmax decision
    double recall = 0.0;
    double pr_auc = 0.0;     ///< one-vs-rest
    std::size_t positives = 0;
    std::size_t evaluated = 0;
};

/// Metrics over labelled pixels with a non-zero `selection` entry.
std::vector<ClassMetrics> evaluate_classifier(const ScoreRaster& scores, FeatureKind kind, const LabelRaster& labels,
                                              std::span<const std::uint8_t> selection);

/// Throws DataError naming the first class that is absent from train or test.
void check_split(const LabelRaster& labels, std::span<const std::uint8_t> is_test);

struct Report {
    std::vector<ClassMetrics> rows;

    [[nodiscard]] const ClassMetrics& find(FeatureKind kind, std::string_view cls) const;
};

void write_report_csv(std::ostream& out, const Report& r);
void write_report_summary(std::ostream& out, const Report& r);

/// threshold,precision,recall
void write_pr_csv(std::ostream& out, const PRCurve& c);

struct NamedCurve {
    std::string label;
    Rgb color;
    const PRCurve* curve = nullptr;
};

/// Line plot of precision against recall.
RgbImage plot_pr_curves(std::span<const NamedCurve> curves, std::uint32_t size = 256);

} // namespace tempo
