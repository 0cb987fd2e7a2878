#pragma once

#include "tempo/ingest.hpp"

#include <complex>
#include <cstdint>
#include <iosfwd>
#include <span>
#include <vector>

namespace tempo {

using Complex = std::complex<double>;

struct Spectrum {
    std::vector<Complex> bins;
    double sample_period = 1.0; ///< seconds between input samples
};

/// O(N^2) DFT, bins[k] = sum_t x[t] exp(-2 pi i k t / N).
Spectrum dft_direct(std::span<const double> signal, double sample_period = 1.0);

/// Radix-2 FFT. Rejects lengths that are not a power of two.
Spectrum fft(std::span<const double> signal, double sample_period = 1.0);

/// fft for power-of-two lengths, dft_direct otherwise.
Spectrum dft(std::span<const double> signal, double sample_period = 1.0);

[[nodiscard]] constexpr bool is_power_of_two(std::size_t n) noexcept {
    return n != 0 && (n & (n - 1)) == 0;
}

struct SpectrogramOptions {
    std::uint32_t window_len = 168; ///< L, buckets per window
    std::uint32_t hop = 24;         ///< H, buckets between window starts
    std::uint32_t kept_bins = 85;   ///< F, lowest bins retained
    bool remove_mean = true;        ///< subtract each window's mean before the DFT
    bool log_compress = true;       ///< store log1p(|X|) instead of |X|

    friend bool operator==(const SpectrogramOptions&, const SpectrogramOptions&) = default;
};

void validate(const SpectrogramOptions& o);

/// Number of window positions for a series of n buckets.
std::uint32_t spectrogram_rows(std::uint32_t n, const SpectrogramOptions& o);

/// Rolling-window magnitude spectrogram; rows are windows ordered by start time.
struct Spectrogram {
    std::uint32_t rows = 0;
    std::uint32_t cols = 0;
    std::uint32_t window_len = 0;
    std::uint32_t hop = 0;
    std::vector<double> values; ///< row-major

    [[nodiscard]] double at(std::uint32_t r, std::uint32_t c) const { return values[std::size_t{r} * cols + c]; }
    [[nodiscard]] double& at(std::uint32_t r, std::uint32_t c) { return values[std::size_t{r} * cols + c]; }

    friend bool operator==(const Spectrogram&, const Spectrogram&) = default;
};

Spectrogram spectrogram(std::span<const double> signal, const SpectrogramOptions& o = {});
Spectrogram spectrogram(const ActivitySeries& series, const SpectrogramOptions& o = {});

/// log1p(|X_k|) of the full-series DFT for k = 0..N/2.
std::vector<double> full_dft_features(std::span<const double> signal);

/// Per-frequency-column statistics pooled over every row of a corpus.
struct NormStats {
    std::vector<double> mean;
    std::vector<double> std;
};

inline constexpr double norm_std_floor = 1e-8;

NormStats compute_norm_stats(std::span<const Spectrogram> corpus);

/// Row-major flattening with each column standardized under `stats`.
std::vector<double> flatten(const Spectrogram& sp, const NormStats& stats);

/// Inverse of flatten given the row layout of the original spectrogram.
Spectrogram unflatten(std::span<const double> flat, const NormStats& stats, std::uint32_t rows,
                      std::uint32_t window_len, std::uint32_t hop);

/// Debug dump, one line per window.
void write_csv(std::ostream& out, const Spectrogram& sp);

} // namespace tempo
