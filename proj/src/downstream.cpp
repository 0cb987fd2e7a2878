#include "tempo/downstream.hpp"

#include "tempo/error.hpp"
#include "tempo/spectral.hpp"

#include <spdlog/spdlog.h>

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <ostream>
#include <random>

namespace tempo {

namespace {

std::uint64_t splitmix64(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

Eigen::MatrixXd softmax_columns(Eigen::MatrixXd logits) {
    for (Eigen::Index c = 0; c < logits.cols(); ++c) {
        auto col = logits.col(c);
        col.array() -= col.maxCoeff();
        col = col.array().exp().matrix();
        col /= col.sum();
    }
    return logits;
}

Eigen::MatrixXd standardized(const PixelClassifier& clf, const FloatRaster& f, std::span<const std::size_t> pixels) {
    const auto dim = clf.input_dim();
    Eigen::MatrixXd x(dim, static_cast<Eigen::Index>(pixels.size()));
    for (std::size_t j = 0; j < pixels.size(); ++j) {
        const auto px = f.pixel(pixels[j]);
        for (Eigen::Index k = 0; k < dim; ++k) {
            x(k, static_cast<Eigen::Index>(j)) =
                (static_cast<double>(px[static_cast<std::size_t>(k)]) - clf.feature_mean(k)) / clf.feature_scale(k);
        }
    }
    return x;
}

Eigen::MatrixXd class_probs(const PixelClassifier& clf, const Eigen::MatrixXd& x) {
    Eigen::MatrixXd h = clf.hidden.weight * x;
    h.colwise() += clf.hidden.bias;
    h = h.array().tanh().matrix();
    Eigen::MatrixXd logits = clf.output.weight * h;
    logits.colwise() += clf.output.bias;
    return softmax_columns(std::move(logits));
}

double safe_ratio(std::size_t num, std::size_t den) {
    return den == 0 ? 0.0 : static_cast<double>(num) / static_cast<double>(den);
}

} // namespace

std::string_view to_string(FeatureKind k) noexcept {
    switch (k) {
    case FeatureKind::embedding: return "embedding";
    case FeatureKind::raw_dft: return "raw_dft";
    case FeatureKind::activity_count: return "activity_count";
    }
    return "embedding";
}

FeatureKind parse_feature_kind(std::string_view s) {
    if (s == "embedding") return FeatureKind::embedding;
    if (s == "raw_dft") return FeatureKind::raw_dft;
    if (s == "activity_count") return FeatureKind::activity_count;
    throw InputError("unknown feature kind '" + std::string(s) + "'");
}

FloatRaster baseline_features(const DenseSeries& series, FeatureKind kind) {
    const auto n = series.window.n;
    std::uint16_t channels = 0;
    switch (kind) {
    case FeatureKind::raw_dft: channels = static_cast<std::uint16_t>(n / 2 + 2); break;
    case FeatureKind::activity_count: channels = 2; break;
    case FeatureKind::embedding: throw InputError("embedding features come from the autoencoder");
    }
    FloatRaster out(series.grid, channels);
    std::vector<double> signal(n);
    for (std::size_t i = 0; i < series.cells.size(); ++i) {
        if (!series.has_data[i]) {
            continue;
        }
        const auto& counts = series.cells[i].counts;
        std::copy(counts.begin(), counts.end(), signal.begin());
        auto px = out.pixel(i);
        if (kind == FeatureKind::raw_dft) {
            const auto feats = full_dft_features(signal);
            std::transform(feats.begin(), feats.end(), px.begin(), [](double v) { return static_cast<float>(v); });
        } else {
            px[0] = static_cast<float>(std::log1p(static_cast<double>(series.cells[i].total()) / n));
        }
        px.back() = 1.0f;
    }
    return out;
}

PixelClassifier train_pixel_classifier(const FloatRaster& features, FeatureKind kind, const LabelRaster& labels,
                                       const ClassifierConfig& config, std::span<const std::uint8_t> selection) {
    validate(labels);
    if (!(features.grid == labels.grid)) {
        throw InputError("feature and label rasters cover different grids");
    }
    if (!selection.empty() && selection.size() != labels.labels.size()) {
        throw InputError("pixel selection size does not match the grid");
    }
    if (config.hidden < 1 || config.epochs < 1 || config.batch_size < 1 || !(config.learning_rate > 0)) {
        throw InputError("invalid classifier configuration");
    }
    std::vector<std::size_t> pixels;
    for (std::size_t i = 0; i < labels.labels.size(); ++i) {
        if (labels.labels[i] != LabelRaster::ignore && (selection.empty() || selection[i])) {
            pixels.push_back(i);
        }
    }
    std::vector<std::size_t> counts(labels.classes.size(), 0);
    for (auto i : pixels) {
        ++counts[labels.labels[i]];
    }
    if (std::count_if(counts.begin(), counts.end(), [](auto c) { return c > 0; }) < 2) {
        throw DataError("classifier training needs at least two classes among labelled pixels");
    }

    const auto dim = static_cast<Eigen::Index>(features.channels);
    const auto n_cls = static_cast<Eigen::Index>(labels.classes.size());
    PixelClassifier clf;
    clf.kind = kind;
    clf.classes = labels.classes;
    clf.feature_mean = Eigen::VectorXd::Zero(dim);
    clf.feature_scale = Eigen::VectorXd::Zero(dim);
    for (auto i : pixels) {
        const auto px = features.pixel(i);
        for (Eigen::Index k = 0; k < dim; ++k) {
            clf.feature_mean(k) += px[static_cast<std::size_t>(k)];
        }
    }
    clf.feature_mean /= static_cast<double>(pixels.size());
    for (auto i : pixels) {
        const auto px = features.pixel(i);
        for (Eigen::Index k = 0; k < dim; ++k) {
            const double d = px[static_cast<std::size_t>(k)] - clf.feature_mean(k);
            clf.feature_scale(k) += d * d;
        }
    }
    for (Eigen::Index k = 0; k < dim; ++k) {
        const double sd = std::sqrt(clf.feature_scale(k) / static_cast<double>(pixels.size()));
        clf.feature_scale(k) = sd > 1e-8 ? sd : 1.0;
    }

    std::mt19937_64 rng(config.seed);
    auto init = [&](Eigen::Index in, Eigen::Index out, Activation act) {
        const double range = 1.0 / std::sqrt(static_cast<double>(in));
        std::uniform_real_distribution<double> dist(-range, range);
        DenseLayer l{Eigen::MatrixXd(out, in), Eigen::VectorXd::Zero(out), act};
        for (Eigen::Index r = 0; r < out; ++r) {
            for (Eigen::Index c = 0; c < in; ++c) {
                l.weight(r, c) = dist(rng);
            }
        }
        return l;
    };
    clf.hidden = init(dim, config.hidden, Activation::tanh);
    clf.output = init(config.hidden, n_cls, Activation::identity);

    const Eigen::MatrixXd x_all = standardized(clf, features, pixels);
    Optimizer opt({config.optimizer, config.learning_rate});
    std::vector<std::size_t> order(pixels.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    Eigen::MatrixXd gw1, gw2;
    Eigen::VectorXd gb1, gb2;

    for (std::uint32_t epoch = 1; epoch <= config.epochs; ++epoch) {
        std::shuffle(order.begin(), order.end(), rng);
        double epoch_loss = 0.0;
        for (std::size_t start = 0; start < order.size(); start += config.batch_size) {
            const auto count = std::min<std::size_t>(config.batch_size, order.size() - start);
            const auto b = static_cast<Eigen::Index>(count);
            Eigen::MatrixXd x(dim, b);
            Eigen::MatrixXd target = Eigen::MatrixXd::Zero(n_cls, b);
            for (std::size_t j = 0; j < count; ++j) {
                const auto idx = order[start + j];
                x.col(static_cast<Eigen::Index>(j)) = x_all.col(static_cast<Eigen::Index>(idx));
                target(labels.labels[pixels[idx]], static_cast<Eigen::Index>(j)) = 1.0;
            }
            Eigen::MatrixXd h = clf.hidden.weight * x;
            h.colwise() += clf.hidden.bias;
            h = h.array().tanh().matrix();
            Eigen::MatrixXd logits = clf.output.weight * h;
            logits.colwise() += clf.output.bias;
            const Eigen::MatrixXd p = softmax_columns(logits);
            for (Eigen::Index j = 0; j < b; ++j) {
                Eigen::Index cls = 0;
                target.col(j).maxCoeff(&cls);
                epoch_loss -= std::log(std::max(p(cls, j), 1e-300));
            }
            const Eigen::MatrixXd d_logits = (p - target) / static_cast<double>(b);
            gw2 = d_logits * h.transpose();
            gb2 = d_logits.rowwise().sum();
            const Eigen::MatrixXd d_h =
                (clf.output.weight.transpose() * d_logits).cwiseProduct((1.0 - h.array().square()).matrix());
            gw1 = d_h * x.transpose();
            gb1 = d_h.rowwise().sum();
            const std::vector<ParamView> views{
                {{clf.hidden.weight.data(), static_cast<std::size_t>(clf.hidden.weight.size())},
                 {gw1.data(), static_cast<std::size_t>(gw1.size())}},
                {{clf.hidden.bias.data(), static_cast<std::size_t>(clf.hidden.bias.size())},
                 {gb1.data(), static_cast<std::size_t>(gb1.size())}},
                {{clf.output.weight.data(), static_cast<std::size_t>(clf.output.weight.size())},
                 {gw2.data(), static_cast<std::size_t>(gw2.size())}},
                {{clf.output.bias.data(), static_cast<std::size_t>(clf.output.bias.size())},
                 {gb2.data(), static_cast<std::size_t>(gb2.size())}},
            };
            opt.step(views);
        }
        clf.final_loss = epoch_loss / static_cast<double>(order.size());
        if (!std::isfinite(clf.final_loss)) {
            throw DivergenceError("classifier loss became non-finite in epoch " + std::to_string(epoch) +
                                  " at learning rate " + std::to_string(config.learning_rate));
        }
    }
    clf.epochs_trained = config.epochs;
    spdlog::debug("{} classifier: final cross-entropy {:.6g}", to_string(kind), clf.final_loss);
    return clf;
}

std::uint8_t ScoreRaster::argmax(std::size_t pixel) const {
    std::uint32_t best = 0;
    for (std::uint32_t c = 1; c < classes; ++c) {
        if (at(pixel, c) > at(pixel, best)) {
            best = c;
        }
    }
    return static_cast<std::uint8_t>(best);
}

ScoreRaster predict_scores(const PixelClassifier& clf, const FloatRaster& features) {
    if (features.channels != clf.input_dim()) {
        throw InputError("feature raster has " + std::to_string(features.channels) + " channels, " +
                         std::string(to_string(clf.kind)) + " classifier expects " +
                         std::to_string(clf.input_dim()));
    }
    ScoreRaster out{features.grid, static_cast<std::uint32_t>(clf.classes.size()), {}};
    out.probs.resize(features.pixel_count() * out.classes);
    std::vector<std::size_t> all(features.pixel_count());
    std::iota(all.begin(), all.end(), std::size_t{0});
    constexpr std::size_t chunk = 1024;
    for (std::size_t start = 0; start < all.size(); start += chunk) {
        const auto count = std::min(chunk, all.size() - start);
        const auto p = class_probs(clf, standardized(clf, features, std::span(all).subspan(start, count)));
        for (std::size_t j = 0; j < count; ++j) {
            for (std::uint32_t c = 0; c < out.classes; ++c) {
                out.probs[(start + j) * out.classes + c] = p(c, static_cast<Eigen::Index>(j));
            }
        }
    }
    return out;
}

LabelRaster predicted_labels(const ScoreRaster& scores, const LabelRaster& labels) {
    LabelRaster out{labels.grid, labels.labels, labels.classes};
    for (std::size_t i = 0; i < out.labels.size(); ++i) {
        if (out.labels[i] != LabelRaster::ignore) {
            out.labels[i] = scores.argmax(i);
        }
    }
    return out;
}

PRCurve pr_curve(std::span<const double> scores, std::span<const std::uint8_t> positive) {
    if (scores.size() != positive.size()) {
        throw InputError("scores and labels differ in length");
    }
    const auto n_pos = static_cast<std::size_t>(std::count_if(positive.begin(), positive.end(), [](auto v) { return v != 0; }));
    if (n_pos == 0) {
        throw InputError("precision-recall curve needs at least one positive");
    }
    if (n_pos == positive.size()) {
        throw InputError("precision-recall curve needs at least one negative");
    }
    std::vector<std::size_t> order(scores.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::sort(order.begin(), order.end(), [&](auto a, auto b) { return scores[a] > scores[b]; });

    PRCurve curve;
    std::size_t tp = 0;
    std::size_t taken = 0;
    double prev_recall = 0.0;
    double prev_precision = -1.0;
    for (std::size_t i = 0; i < order.size();) {
        const double t = scores[order[i]];
        for (; i < order.size() && scores[order[i]] == t; ++i) {
            tp += positive[order[i]] != 0 ? 1 : 0;
            ++taken;
        }
        const double recall = safe_ratio(tp, n_pos);
        const double precision = safe_ratio(tp, taken);
        if (prev_precision < 0) {
            prev_precision = precision;
        }
        curve.auc += (recall - prev_recall) * 0.5 * (precision + prev_precision);
        prev_recall = recall;
        prev_precision = precision;
        curve.points.push_back({t, recall, precision});
    }
    return curve;
}

std::vector<std::uint8_t> spatial_block_split(const TileGrid& grid, std::uint64_t seed, std::uint32_t block,
                                              double test_fraction) {
    validate(grid);
    if (block < 1 || !(test_fraction >= 0 && test_fraction <= 1)) {
        throw InputError("invalid spatial split parameters");
    }
    std::vector<std::uint8_t> is_test(grid.cell_count(), 0);
    for (std::uint32_t r = 0; r < grid.height; ++r) {
        for (std::uint32_t c = 0; c < grid.width; ++c) {
            const std::uint64_t key = (std::uint64_t{r / block} << 32) | (c / block);
            const double u = static_cast<double>(splitmix64(seed ^ splitmix64(key)) >> 11) * 0x1.0p-53;
            is_test[std::size_t{r} * grid.width + c] = u < test_fraction ? 1 : 0;
        }
    }
    return is_test;
}

std::vector<ClassMetrics> evaluate_classifier(const ScoreRaster& scores, FeatureKind kind, const LabelRaster& labels,
                                              std::span<const std::uint8_t> selection) {
    if (!(scores.grid == labels.grid) || scores.classes != labels.classes.size()) {
        throw InputError("scores and labels disagree on grid or classes");
    }
    if (selection.size() != labels.labels.size()) {
        throw InputError("selection size does not match the grid");
    }
    std::vector<std::size_t> pixels;
    for (std::size_t i = 0; i < labels.labels.size(); ++i) {
        if (selection[i] && labels.labels[i] != LabelRaster::ignore) {
            pixels.push_back(i);
        }
    }
    std::vector<ClassMetrics> out;
    for (std::uint32_t c = 0; c < scores.classes; ++c) {
        ClassMetrics m{kind, labels.classes[c], 0, 0, 0, 0, pixels.size()};
        std::size_t tp = 0;
        std::size_t predicted = 0;
        std::vector<double> s(pixels.size());
        std::vector<std::uint8_t> pos(pixels.size());
        for (std::size_t j = 0; j < pixels.size(); ++j) {
            const auto i = pixels[j];
            const bool is_pos = labels.labels[i] == c;
            const bool pred = scores.argmax(i) == c;
            m.positives += is_pos ? 1 : 0;
            predicted += pred ? 1 : 0;
            tp += (is_pos && pred) ? 1 : 0;
            s[j] = scores.at(i, c);
            pos[j] = is_pos ? 1 : 0;
        }
        m.precision = safe_ratio(tp, predicted);
        m.recall = safe_ratio(tp, m.positives);
        if (m.positives > 0 && m.positives < pixels.size()) {
            m.pr_auc = pr_curve(s, pos).auc;
        } else {
            m.pr_auc = std::numeric_limits<double>::quiet_NaN();
        }
        out.push_back(m);
    }
    return out;
}

void check_split(const LabelRaster& labels, std::span<const std::uint8_t> is_test) {
    if (is_test.size() != labels.labels.size()) {
        throw InputError("split size does not match the grid");
    }
    std::vector<std::size_t> train(labels.classes.size(), 0);
    std::vector<std::size_t> test(labels.classes.size(), 0);
    for (std::size_t i = 0; i < labels.labels.size(); ++i) {
        const auto v = labels.labels[i];
        if (v == LabelRaster::ignore) {
            continue;
        }
        ++(is_test[i] ? test : train)[v];
    }
    for (std::size_t c = 0; c < labels.classes.size(); ++c) {
        if (train[c] + test[c] == 0) {
            continue;
        }
        if (train[c] == 0) {
            throw DataError("spatial split leaves class '" + labels.classes[c] + "' without training pixels");
        }
        if (test[c] == 0) {
            throw DataError("spatial split leaves class '" + labels.classes[c] + "' without test pixels");
        }
    }
}

const ClassMetrics& Report::find(FeatureKind kind, std::string_view cls) const {
    for (const auto& r : rows) {
        if (r.kind == kind && r.cls == cls) {
            return r;
        }
    }
    throw InputError("report has no row for " + std::string(to_string(kind)) + "/" + std::string(cls));
}

void write_report_csv(std::ostream& out, const Report& r) {
    out << "feature_kind,class,precision,recall,pr_auc,positives,evaluated\n";
    char buf[160];
    for (const auto& m : r.rows) {
        std::snprintf(buf, sizeof buf, "%.17g,%.17g,%.17g,%zu,%zu", m.precision, m.recall, m.pr_auc, m.positives,
                      m.evaluated);
        out << to_string(m.kind) << ',' << m.cls << ',' << buf << '\n';
    }
}

void write_report_summary(std::ostream& out, const Report& r) {
    char buf[200];
    std::snprintf(buf, sizeof buf, "%-16s %-14s %9s %9s %9s %9s\n", "features", "class", "precision", "recall",
                  "pr_auc", "positives");
    out << buf;
    for (const auto& m : r.rows) {
        std::snprintf(buf, sizeof buf, "%-16s %-14s %9.4f %9.4f %9.4f %9zu\n", std::string(to_string(m.kind)).c_str(),
                      m.cls.c_str(), m.precision, m.recall, m.pr_auc, m.positives);
        out << buf;
    }
}

void write_pr_csv(std::ostream& out, const PRCurve& c) {
    out << "threshold,precision,recall\n";
    char buf[96];
    for (const auto& p : c.points) {
        std::snprintf(buf, sizeof buf, "%.17g,%.17g,%.17g\n", p.threshold, p.precision, p.recall);
        out << buf;
    }
}

RgbImage plot_pr_curves(std::span<const NamedCurve> curves, std::uint32_t size) {
    if (size < 32) {
        throw InputError("plot size too small");
    }
    RgbImage img(size, size, {255, 255, 255});
    const int margin = 16;
    const int span = static_cast<int>(size) - 2 * margin;
    auto px = [&](double recall, double precision) {
        return std::pair<int, int>{margin + static_cast<int>(std::lround(recall * span)),
                                   margin + static_cast<int>(std::lround((1.0 - precision) * span))};
    };
    const Rgb axis{0, 0, 0};
    const Rgb grid{220, 220, 220};
    for (int k = 1; k < 4; ++k) {
        const int g = margin + k * span / 4;
        img.line(margin, g, margin + span, g, grid);
        img.line(g, margin, g, margin + span, grid);
    }
    img.line(margin, margin + span, margin + span, margin + span, axis);
    img.line(margin, margin, margin, margin + span, axis);
    for (const auto& nc : curves) {
        if (nc.curve == nullptr || nc.curve->points.empty()) {
            continue;
        }
        auto [x0, y0] = px(0.0, nc.curve->points.front().precision);
        for (const auto& p : nc.curve->points) {
            const auto [x1, y1] = px(p.recall, p.precision);
            img.line(x0, y0, x1, y1, nc.color);
            x0 = x1;
            y0 = y1;
        }
    }
    return img;
}

} // namespace tempo
