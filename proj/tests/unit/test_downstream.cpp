#include "tempo/downstream.hpp"
#include "tempo/error.hpp"

#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <random>
#include <set>
#include <sstream>

using namespace tempo;

namespace {

// Independent O(n^2) recount at every distinct threshold.
double brute_force_auc(const std::vector<double>& s, const std::vector<std::uint8_t>& y) {
    std::set<double, std::greater<>> thresholds(s.begin(), s.end());
    const double total_pos = static_cast<double>(std::count(y.begin(), y.end(), 1));
    double prev_r = 0.0;
    double prev_p = -1.0;
    double auc = 0.0;
    for (double t : thresholds) {
        double tp = 0;
        double fp = 0;
        for (std::size_t i = 0; i < s.size(); ++i) {
            if (s[i] >= t) {
                (y[i] ? tp : fp) += 1;
            }
        }
        const double r = tp / total_pos;
        const double p = tp / (tp + fp);
        if (prev_p < 0) {
            prev_p = p;
        }
        auc += (r - prev_r) * (p + prev_p) / 2;
        prev_r = r;
        prev_p = p;
    }
    return auc;
}

struct Fixture {
    FloatRaster features;
    LabelRaster labels;
};

// Two gaussian blobs in 3-D, one per class, with a mask channel.
Fixture blobs(std::uint32_t w, std::uint32_t h, double separation, std::uint64_t seed) {
    const TileGrid g{TileId{0, 0, 12}, w, h};
    Fixture f{FloatRaster(g, 4), LabelRaster{g, std::vector<std::uint8_t>(g.cell_count()), {"neg", "pos"}}};
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> d(0.0, 1.0);
    for (std::size_t i = 0; i < g.cell_count(); ++i) {
        const auto cls = static_cast<std::uint8_t>(rng() % 2);
        f.labels.labels[i] = cls;
        auto px = f.features.pixel(i);
        for (int k = 0; k < 3; ++k) {
            px[static_cast<std::size_t>(k)] = static_cast<float>(d(rng) + (cls ? separation : -separation) * (k == 0));
        }
        px[3] = 1.0f;
    }
    return f;
}

} // namespace

TEST_CASE("pr_curve fixed cases") {
    const std::vector<double> s{0.9, 0.8, 0.1};
    const std::vector<std::uint8_t> y{1, 1, 0};
    CHECK(pr_curve(s, y).auc == 1.0);

    const std::vector<double> flat(4, 0.5);
    const std::vector<std::uint8_t> bal{1, 0, 1, 0};
    const auto c = pr_curve(flat, bal);
    REQUIRE(c.points.size() == 1);
    CHECK(c.points[0].precision == 0.5);
    CHECK(c.points[0].recall == 1.0);

    CHECK_THROWS_AS(pr_curve(s, std::vector<std::uint8_t>{0, 0, 0}), InputError);
    CHECK_THROWS_AS(pr_curve(s, std::vector<std::uint8_t>{1, 1, 1}), InputError);
}

TEST_CASE("pr_curve matches a brute-force threshold oracle") {
    std::mt19937_64 rng(99);
    for (int trial = 0; trial < 20; ++trial) {
        std::vector<double> s(200);
        std::vector<std::uint8_t> y(200);
        for (std::size_t i = 0; i < s.size(); ++i) {
            // Coarse scores force ties.
            s[i] = static_cast<double>(rng() % 50) / 50.0;
            y[i] = static_cast<std::uint8_t>(rng() % 3 == 0);
        }
        y[0] = 1;
        y[1] = 0;
        const auto c = pr_curve(s, y);
        REQUIRE(std::abs(c.auc - brute_force_auc(s, y)) <= 1e-12);
        for (std::size_t k = 1; k < c.points.size(); ++k) {
            REQUIRE(c.points[k].recall >= c.points[k - 1].recall);
            REQUIRE(c.points[k].threshold < c.points[k - 1].threshold);
        }
        for (const auto& p : c.points) {
            REQUIRE(p.precision >= 0.0);
            REQUIRE(p.precision <= 1.0);
            std::size_t tp = 0;
            std::size_t fp = 0;
            for (std::size_t i = 0; i < s.size(); ++i) {
                if (s[i] >= p.threshold) {
                    (y[i] ? tp : fp) += 1;
                }
            }
            const auto npos = static_cast<std::size_t>(std::count(y.begin(), y.end(), 1));
            REQUIRE(p.precision == static_cast<double>(tp) / static_cast<double>(tp + fp));
            REQUIRE(p.recall == static_cast<double>(tp) / static_cast<double>(npos));
        }

        std::vector<double> t(s.size());
        std::transform(s.begin(), s.end(), t.begin(), [](double v) { return std::exp(3 * v) - 7; });
        REQUIRE(pr_curve(t, y).auc == c.auc);
    }
}

TEST_CASE("spatial block split") {
    const TileGrid g{TileId{100, 200, 12}, 40, 48};
    const auto a = spatial_block_split(g, 4);
    CHECK(a == spatial_block_split(g, 4));
    CHECK(a != spatial_block_split(g, 5));
    REQUIRE(a.size() == g.cell_count());
    for (std::uint32_t r = 0; r < g.height; ++r) {
        for (std::uint32_t c = 0; c < g.width; ++c) {
            const auto v = a[std::size_t{r} * g.width + c];
            REQUIRE((v == 0 || v == 1));
            REQUIRE(v == a[std::size_t{r / 8 * 8} * g.width + c / 8 * 8]);
        }
    }
    const TileGrid big{TileId{0, 0, 16}, 800, 800};
    const auto s = spatial_block_split(big, 1);
    const double frac = static_cast<double>(std::count(s.begin(), s.end(), 1)) / static_cast<double>(s.size());
    CHECK(frac == doctest::Approx(0.25).epsilon(0.08));
    CHECK_THROWS_AS(spatial_block_split(g, 1, 0), InputError);
    CHECK_THROWS_AS(spatial_block_split(g, 1, 8, 1.5), InputError);

    LabelRaster l{TileGrid{TileId{0, 0, 12}, 2, 2}, {0, 1, 1, 0}, {"x", "y"}};
    CHECK_NOTHROW(check_split(l, std::vector<std::uint8_t>{1, 1, 0, 0}));
    try {
        check_split(l, std::vector<std::uint8_t>{1, 0, 0, 1});
        FAIL("expected DataError");
    } catch (const DataError& e) {
        CHECK(std::string(e.what()).find("'x'") != std::string::npos);
    }
}

TEST_CASE("classifier on separable blobs") {
    const auto f = blobs(20, 20, 4.0, 1);
    ClassifierConfig cfg;
    cfg.epochs = 60;
    cfg.seed = 7;
    const auto clf = train_pixel_classifier(f.features, FeatureKind::embedding, f.labels, cfg);
    const auto scores = predict_scores(clf, f.features);
    std::size_t correct = 0;
    for (std::size_t i = 0; i < f.labels.labels.size(); ++i) {
        double sum = 0.0;
        for (std::uint32_t k = 0; k < scores.classes; ++k) {
            sum += scores.at(i, k);
        }
        REQUIRE(std::abs(sum - 1.0) <= 1e-9);
        correct += scores.argmax(i) == f.labels.labels[i] ? 1 : 0;
    }
    CHECK(static_cast<double>(correct) / f.labels.labels.size() >= 0.99);
    const auto pred = predicted_labels(scores, f.labels);
    CHECK(pred.classes == f.labels.classes);

    const auto again = train_pixel_classifier(f.features, FeatureKind::embedding, f.labels, cfg);
    CHECK(again.hidden.weight == clf.hidden.weight);
    CHECK(again.output.bias == clf.output.bias);
}

TEST_CASE("classifier edge cases") {
    auto f = blobs(6, 6, 1.0, 2);
    auto ignored = f.labels;
    std::fill(ignored.labels.begin(), ignored.labels.end(), LabelRaster::ignore);
    CHECK_THROWS_AS(train_pixel_classifier(f.features, FeatureKind::embedding, ignored, {}), DataError);
    auto single = f.labels;
    std::fill(single.labels.begin(), single.labels.end(), 0);
    CHECK_THROWS_AS(train_pixel_classifier(f.features, FeatureKind::embedding, single, {}), DataError);

    // Constant features: scores converge to the class prior.
    auto flat = blobs(20, 20, 0.0, 3);
    for (std::size_t i = 0; i < flat.features.pixel_count(); ++i) {
        auto px = flat.features.pixel(i);
        std::fill(px.begin(), px.end() - 1, 0.5f);
    }
    ClassifierConfig cfg;
    cfg.epochs = 50;
    const auto clf = train_pixel_classifier(flat.features, FeatureKind::embedding, flat.labels, cfg);
    const auto scores = predict_scores(clf, flat.features);
    const double prior = static_cast<double>(std::count(flat.labels.labels.begin(), flat.labels.labels.end(), 1)) /
                         static_cast<double>(flat.labels.labels.size());
    CHECK(scores.at(0, 1) == doctest::Approx(prior).epsilon(0.05));

    FloatRaster wrong(f.features.grid, 3);
    CHECK_THROWS_AS(predict_scores(clf, wrong), InputError);
}

TEST_CASE("evaluate and report") {
    const auto f = blobs(16, 16, 1.0, 4);
    ClassifierConfig cfg;
    cfg.epochs = 20;
    const auto is_test = spatial_block_split(f.labels.grid, 2, 4, 0.4);
    std::vector<std::uint8_t> is_train(is_test.size());
    std::transform(is_test.begin(), is_test.end(), is_train.begin(), [](auto v) { return v ? 0 : 1; });
    const auto clf = train_pixel_classifier(f.features, FeatureKind::embedding, f.labels, cfg, is_train);
    const auto scores = predict_scores(clf, f.features);
    Report rep;
    for (auto kind : {FeatureKind::embedding, FeatureKind::raw_dft}) {
        const auto rows = evaluate_classifier(scores, kind, f.labels, is_test);
        rep.rows.insert(rep.rows.end(), rows.begin(), rows.end());
    }
    const auto& a = rep.find(FeatureKind::embedding, "pos");
    const auto& b = rep.find(FeatureKind::raw_dft, "pos");
    CHECK(a.pr_auc == b.pr_auc);
    CHECK(a.precision == b.precision);
    CHECK(a.evaluated == static_cast<std::size_t>(std::count(is_test.begin(), is_test.end(), 1)));
    CHECK_THROWS_AS(rep.find(FeatureKind::activity_count, "pos"), InputError);

    std::ostringstream csv1;
    std::ostringstream csv2;
    write_report_csv(csv1, rep);
    write_report_csv(csv2, rep);
    CHECK(csv1.str() == csv2.str());
    CHECK(csv1.str().rfind("feature_kind,class,precision,recall,pr_auc,positives,evaluated\n", 0) == 0);

    const auto curve = pr_curve(std::vector<double>{0.9, 0.4, 0.3}, std::vector<std::uint8_t>{1, 0, 1});
    std::ostringstream pr;
    write_pr_csv(pr, curve);
    CHECK(pr.str().rfind("threshold,precision,recall\n", 0) == 0);
    const NamedCurve named[] = {{"embedding", {255, 0, 0}, &curve}};
    const auto img = plot_pr_curves(named);
    CHECK(img.width == 256);
}

TEST_CASE("baseline features") {
    const TimeWindow w{0, 3600, 8};
    const TileGrid g{TileId{0, 0, 12}, 2, 1};
    SeriesMap m;
    m[TileId{1, 0, 12}] = ActivitySeries{TileId{1, 0, 12}, {1, 3, 1, 3, 1, 3, 1, 3}, w};
    const auto dense = densify(m, g, w);
    const auto dft = baseline_features(dense, FeatureKind::raw_dft);
    CHECK(dft.channels == 6);
    CHECK(dft.pixel(0)[5] == 0.0f);
    CHECK(dft.pixel(1)[5] == 1.0f);
    CHECK(dft.pixel(1)[0] == static_cast<float>(std::log1p(16.0)));
    CHECK(dft.pixel(1)[4] == static_cast<float>(std::log1p(8.0)));
    CHECK(dft.pixel(1)[1] == doctest::Approx(0.0).epsilon(1e-6));
    const auto cnt = baseline_features(dense, FeatureKind::activity_count);
    CHECK(cnt.channels == 2);
    CHECK(cnt.pixel(1)[0] == static_cast<float>(std::log1p(2.0)));
    CHECK_THROWS_AS(baseline_features(dense, FeatureKind::embedding), InputError);
    CHECK(parse_feature_kind("raw_dft") == FeatureKind::raw_dft);
    CHECK_THROWS_AS(parse_feature_kind("pixels"), InputError);
}
