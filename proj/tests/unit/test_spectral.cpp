#include "tempo/error.hpp"
#include "tempo/spectral.hpp"

#include <doctest.h>

#include <cmath>
#include <numbers>
#include <random>

using namespace tempo;

namespace {

std::vector<double> random_signal(std::size_t n, std::mt19937_64& rng) {
    std::normal_distribution<double> d(0.0, 1.0);
    std::vector<double> x(n);
    for (auto& v : x) {
        v = d(rng);
    }
    return x;
}

double max_abs(const Spectrum& s) {
    double m = 0;
    for (const auto& b : s.bins) {
        m = std::max(m, std::abs(b));
    }
    return m;
}

} // namespace

TEST_CASE("dft_direct analytic cases") {
    const std::vector<double> ones(8, 1.0);
    const auto dc = dft_direct(ones);
    CHECK(std::abs(dc.bins[0] - Complex(8, 0)) <= 1e-12);
    for (std::size_t k = 1; k < 8; ++k) {
        CHECK(std::abs(dc.bins[k]) <= 1e-12);
    }

    std::vector<double> tone(8);
    for (std::size_t t = 0; t < 8; ++t) {
        tone[t] = std::cos(2 * std::numbers::pi * 2 * t / 8.0);
    }
    const auto tn = dft_direct(tone);
    for (std::size_t k = 0; k < 8; ++k) {
        CHECK(std::abs(std::abs(tn.bins[k]) - (k == 2 || k == 6 ? 4.0 : 0.0)) <= 1e-12);
    }

    const std::vector<double> five{5.0};
    CHECK(dft_direct(five).bins == std::vector<Complex>{Complex(5, 0)});
    const std::vector<double> bad{1.0, std::nan("")};
    CHECK_THROWS_AS(dft_direct(bad), InputError);
    CHECK_THROWS_AS(dft_direct(std::vector<double>{}), InputError);
}

TEST_CASE("fft agrees with dft_direct") {
    std::vector<double> impulse(16, 0.0);
    impulse[0] = 1.0;
    for (const auto& b : fft(impulse).bins) {
        CHECK(std::abs(b - Complex(1, 0)) <= 1e-12);
    }
    CHECK_THROWS_AS(fft(std::vector<double>(12, 1.0)), InputError);

    std::mt19937_64 rng(1);
    const auto x = random_signal(1024, rng);
    const auto a = fft(x);
    const auto b = dft_direct(x);
    const double tol = 1e-9 * max_abs(b);
    for (std::size_t k = 0; k < x.size(); ++k) {
        REQUIRE(std::abs(a.bins[k] - b.bins[k]) <= tol);
    }
}

TEST_CASE("fft agreement and Parseval over 100 random signals") {
    std::mt19937_64 rng(2);
    for (int trial = 0; trial < 100; ++trial) {
        const std::size_t n = std::size_t{8} << (trial % 8); // 8 .. 1024
        const auto x = random_signal(n, rng);
        const auto d = dft_direct(x);
        const auto f = fft(x);
        const double tol = 1e-9 * max_abs(d);
        double energy_t = 0.0;
        double energy_f = 0.0;
        for (std::size_t k = 0; k < n; ++k) {
            REQUIRE(std::abs(f.bins[k] - d.bins[k]) <= tol);
            energy_t += x[k] * x[k];
            energy_f += std::norm(d.bins[k]);
        }
        REQUIRE(std::abs(energy_t - energy_f / n) <= 1e-9 * energy_t);
        for (std::size_t k = 1; k < n; ++k) {
            REQUIRE(std::abs(d.bins[k] - std::conj(d.bins[n - k])) <= tol);
        }
    }
}

TEST_CASE("dft is linear") {
    std::mt19937_64 rng(3);
    for (std::size_t n : {7u, 64u, 168u}) {
        const auto x = random_signal(n, rng);
        const auto y = random_signal(n, rng);
        const double a = 1.7;
        const double b = -0.3;
        std::vector<double> z(n);
        for (std::size_t i = 0; i < n; ++i) {
            z[i] = a * x[i] + b * y[i];
        }
        const auto fx = dft(x);
        const auto fy = dft(y);
        const auto fz = dft(z);
        const double tol = 1e-9 * max_abs(fz);
        for (std::size_t k = 0; k < n; ++k) {
            REQUIRE(std::abs(fz.bins[k] - (a * fx.bins[k] + b * fy.bins[k])) <= tol);
        }
    }
}

TEST_CASE("spectrogram shape and simple inputs") {
    CHECK(spectrogram_rows(672, SpectrogramOptions{}) == 22);
    const std::vector<double> zeros(672, 0.0);
    const auto z = spectrogram(zeros);
    CHECK(z.rows == 22);
    CHECK(z.cols == 85);
    CHECK(std::all_of(z.values.begin(), z.values.end(), [](double v) { return v == 0.0; }));
    CHECK_THROWS_AS(spectrogram(std::vector<double>(100, 1.0)), InputError);
    SpectrogramOptions bad;
    bad.kept_bins = 86;
    CHECK_THROWS_AS(spectrogram(zeros, bad), InputError);
    bad = {};
    bad.hop = 0;
    CHECK_THROWS_AS(spectrogram(zeros, bad), InputError);
}

TEST_CASE("daily tone dominates bin 7") {
    std::vector<double> x(672);
    for (std::size_t t = 0; t < x.size(); ++t) {
        x[t] = 5.0 + 3.0 * std::sin(2 * std::numbers::pi * t / 24.0);
    }
    const auto sp = spectrogram(x);
    for (std::uint32_t r = 0; r < sp.rows; ++r) {
        std::uint32_t best = 0;
        for (std::uint32_t c = 1; c < sp.cols; ++c) {
            if (sp.at(r, c) > sp.at(r, best)) {
                best = c;
            }
        }
        REQUIRE(best == 7);
    }
}

TEST_CASE("spectrogram shifts by one row per hop") {
    std::mt19937_64 rng(4);
    auto x = random_signal(400, rng);
    for (auto& v : x) {
        v = std::abs(v) * 3;
    }
    std::vector<double> shifted(x.begin() + 24, x.end());
    const auto a = spectrogram(x);
    const auto b = spectrogram(shifted);
    REQUIRE(b.rows == a.rows - 1);
    for (std::uint32_t r = 0; r < b.rows; ++r) {
        for (std::uint32_t c = 0; c < b.cols; ++c) {
            REQUIRE(b.at(r, c) == doctest::Approx(a.at(r + 1, c)).epsilon(1e-12));
        }
    }
}

TEST_CASE("flatten and normalization") {
    const Spectrogram sp{2, 2, 2, 1, {1, 2, 3, 4}};
    const NormStats id{{0, 0}, {1, 1}};
    CHECK(flatten(sp, id) == std::vector<double>{1, 2, 3, 4});

    const Spectrogram spb{2, 2, 2, 1, {5, 6, 7, 8}};
    const std::vector<Spectrogram> corpus{sp, spb};
    const auto stats = compute_norm_stats(corpus);
    CHECK(stats.mean[0] == doctest::Approx(4.0));
    CHECK(stats.mean[1] == doctest::Approx(5.0));
    // population std of {1,3,5,7}
    CHECK(stats.std[0] == doctest::Approx(std::sqrt(5.0)));

    const Spectrogram means{1, 2, 2, 1, {4, 5}};
    for (double v : flatten(means, stats)) {
        CHECK(std::abs(v) <= 1e-15);
    }
    CHECK_THROWS_AS(flatten(sp, NormStats{{0, 0, 0}, {1, 1, 1}}), InputError);

    const Spectrogram flat{2, 1, 2, 1, {3, 3}};
    const std::vector<Spectrogram> fc{flat};
    const auto fs = compute_norm_stats(fc);
    CHECK(fs.std[0] == 0.0);
    // the floor keeps a constant column finite
    CHECK(flatten(flat, fs) == std::vector<double>{0.0, 0.0});

    std::mt19937_64 rng(8);
    const auto sig = random_signal(336, rng);
    const auto big = spectrogram(sig);
    const std::vector<Spectrogram> one{big, spectrogram(random_signal(336, rng))};
    const auto st = compute_norm_stats(one);
    const auto back = unflatten(flatten(big, st), st, big.rows, big.window_len, big.hop);
    REQUIRE(back.values.size() == big.values.size());
    for (std::size_t i = 0; i < back.values.size(); ++i) {
        REQUIRE(back.values[i] == doctest::Approx(big.values[i]).epsilon(1e-12));
    }
}
