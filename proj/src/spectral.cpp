#include "tempo/spectral.hpp"

#include "tempo/error.hpp"

#include <cmath>
#include <numbers>
#include <ostream>
#include <string>

namespace tempo {

namespace {

void check_finite(std::span<const double> signal) {
    for (std::size_t i = 0; i < signal.size(); ++i) {
        if (!std::isfinite(signal[i])) {
            throw InputError("non-finite sample at index " + std::to_string(i));
        }
    }
}

// exp(-2 pi i m / n) for m in [0, count)
std::vector<Complex> twiddles(std::size_t n, std::size_t count) {
    std::vector<Complex> w(count);
    for (std::size_t m = 0; m < count; ++m) {
        w[m] = std::polar(1.0, -2.0 * std::numbers::pi * static_cast<double>(m) / static_cast<double>(n));
    }
    return w;
}

// First `bins` DFT coefficients using an exact modular twiddle table.
void direct_bins(std::span<const double> x, std::span<const Complex> table, std::span<Complex> out) {
    const auto n = x.size();
    for (std::size_t k = 0; k < out.size(); ++k) {
        Complex acc{0.0, 0.0};
        std::size_t idx = 0;
        for (std::size_t t = 0; t < n; ++t) {
            acc += x[t] * table[idx];
            idx += k;
            if (idx >= n) {
                idx -= n;
            }
        }
        out[k] = acc;
    }
}

void fft_in_place(std::vector<Complex>& a) {
    const auto n = a.size();
    for (std::size_t i = 1, j = 0; i < n; ++i) {
        std::size_t bit = n >> 1;
        for (; j & bit; bit >>= 1) {
            j ^= bit;
        }
        j ^= bit;
        if (i < j) {
            std::swap(a[i], a[j]);
        }
    }
    const auto w = twiddles(n, n / 2);
    for (std::size_t len = 2; len <= n; len <<= 1) {
        const auto stride = n / len;
        const auto half = len / 2;
        for (std::size_t i = 0; i < n; i += len) {
            for (std::size_t j = 0; j < half; ++j) {
                const Complex u = a[i + j];
                const Complex v = a[i + j + half] * w[j * stride];
                a[i + j] = u + v;
                a[i + j + half] = u - v;
            }
        }
    }
}

} // namespace

Spectrum dft_direct(std::span<const double> signal, double sample_period) {
    if (signal.empty()) {
        throw InputError("DFT of an empty signal");
    }
    check_finite(signal);
    const auto n = signal.size();
    Spectrum s{std::vector<Complex>(n), sample_period};
    const auto table = twiddles(n, n);
    direct_bins(signal, table, s.bins);
    return s;
}

Spectrum fft(std::span<const double> signal, double sample_period) {
    if (!is_power_of_two(signal.size())) {
        throw InputError("fft length " + std::to_string(signal.size()) + " is not a power of two");
    }
    check_finite(signal);
    Spectrum s{std::vector<Complex>(signal.begin(), signal.end()), sample_period};
    fft_in_place(s.bins);
    return s;
}

Spectrum dft(std::span<const double> signal, double sample_period) {
    return is_power_of_two(signal.size()) ? fft(signal, sample_period) : dft_direct(signal, sample_period);
}

void validate(const SpectrogramOptions& o) {
    if (o.window_len < 1 || o.hop < 1) {
        throw InputError("spectrogram window and hop must be at least 1");
    }
    if (o.kept_bins < 1 || o.kept_bins > o.window_len / 2 + 1) {
        throw InputError("kept bins must lie in [1, " + std::to_string(o.window_len / 2 + 1) + "]");
    }
}

std::uint32_t spectrogram_rows(std::uint32_t n, const SpectrogramOptions& o) {
    validate(o);
    if (o.window_len > n) {
        throw InputError("series of " + std::to_string(n) + " buckets is shorter than the " +
                         std::to_string(o.window_len) + "-bucket window; need at least " +
                         std::to_string(o.window_len));
    }
    return (n - o.window_len) / o.hop + 1;
}

Spectrogram spectrogram(std::span<const double> signal, const SpectrogramOptions& o) {
    const auto rows = spectrogram_rows(static_cast<std::uint32_t>(signal.size()), o);
    check_finite(signal);
    const auto len = o.window_len;
    Spectrogram sp{rows, o.kept_bins, len, o.hop, std::vector<double>(std::size_t{rows} * o.kept_bins)};

    const bool fast = is_power_of_two(len);
    const auto table = fast ? std::vector<Complex>{} : twiddles(len, len);
    std::vector<double> window(len);
    std::vector<Complex> bins(fast ? len : o.kept_bins);
    for (std::uint32_t r = 0; r < rows; ++r) {
        const auto start = std::size_t{r} * o.hop;
        double mean = 0.0;
        for (std::uint32_t t = 0; t < len; ++t) {
            window[t] = signal[start + t];
            mean += window[t];
        }
        mean /= len;
        if (o.remove_mean) {
            for (auto& v : window) {
                v -= mean;
            }
        }
        if (fast) {
            bins.assign(window.begin(), window.end());
            fft_in_place(bins);
        } else {
            direct_bins(window, table, bins);
        }
        for (std::uint32_t k = 0; k < o.kept_bins; ++k) {
            const double mag = std::abs(bins[k]);
            sp.at(r, k) = o.log_compress ? std::log1p(mag) : mag;
        }
    }
    return sp;
}

Spectrogram spectrogram(const ActivitySeries& series, const SpectrogramOptions& o) {
    const std::vector<double> signal(series.counts.begin(), series.counts.end());
    return spectrogram(signal, o);
}

std::vector<double> full_dft_features(std::span<const double> signal) {
    if (signal.empty()) {
        throw InputError("DFT of an empty signal");
    }
    check_finite(signal);
    const auto n = signal.size();
    std::vector<Complex> bins(n / 2 + 1);
    if (is_power_of_two(n)) {
        std::vector<Complex> a(signal.begin(), signal.end());
        fft_in_place(a);
        std::copy_n(a.begin(), bins.size(), bins.begin());
    } else {
        direct_bins(signal, twiddles(n, n), bins);
    }
    std::vector<double> out(bins.size());
    for (std::size_t k = 0; k < bins.size(); ++k) {
        out[k] = std::log1p(std::abs(bins[k]));
    }
    return out;
}

NormStats compute_norm_stats(std::span<const Spectrogram> corpus) {
    if (corpus.empty()) {
        throw InputError("normalization statistics need at least one spectrogram");
    }
    const auto cols = corpus.front().cols;
    std::vector<double> sum(cols, 0.0);
    std::vector<double> sq(cols, 0.0);
    std::size_t count = 0;
    for (const auto& sp : corpus) {
        if (sp.cols != cols) {
            throw InputError("spectrogram corpus has mixed column counts");
        }
        for (std::uint32_t r = 0; r < sp.rows; ++r) {
            for (std::uint32_t c = 0; c < cols; ++c) {
                sum[c] += sp.at(r, c);
            }
        }
        count += sp.rows;
    }
    NormStats s{std::vector<double>(cols), std::vector<double>(cols)};
    for (std::uint32_t c = 0; c < cols; ++c) {
        s.mean[c] = sum[c] / static_cast<double>(count);
    }
    // second pass on centred values keeps the variance well conditioned
    for (const auto& sp : corpus) {
        for (std::uint32_t r = 0; r < sp.rows; ++r) {
            for (std::uint32_t c = 0; c < cols; ++c) {
                const double d = sp.at(r, c) - s.mean[c];
                sq[c] += d * d;
            }
        }
    }
    for (std::uint32_t c = 0; c < cols; ++c) {
        s.std[c] = std::sqrt(sq[c] / static_cast<double>(count));
    }
    return s;
}

std::vector<double> flatten(const Spectrogram& sp, const NormStats& stats) {
    if (stats.mean.size() != sp.cols || stats.std.size() != sp.cols) {
        throw InputError("normalization stats cover " + std::to_string(stats.mean.size()) +
                         " columns, spectrogram has " + std::to_string(sp.cols));
    }
    std::vector<double> out(sp.values.size());
    for (std::uint32_t r = 0; r < sp.rows; ++r) {
        for (std::uint32_t c = 0; c < sp.cols; ++c) {
            out[std::size_t{r} * sp.cols + c] =
                (sp.at(r, c) - stats.mean[c]) / std::max(stats.std[c], norm_std_floor);
        }
    }
    return out;
}

Spectrogram unflatten(std::span<const double> flat, const NormStats& stats, std::uint32_t rows,
                      std::uint32_t window_len, std::uint32_t hop) {
    const auto cols = static_cast<std::uint32_t>(stats.mean.size());
    if (flat.size() != std::size_t{rows} * cols) {
        throw InputError("flattened vector length does not match rows x columns");
    }
    Spectrogram sp{rows, cols, window_len, hop, std::vector<double>(flat.size())};
    for (std::uint32_t r = 0; r < rows; ++r) {
        for (std::uint32_t c = 0; c < cols; ++c) {
            sp.at(r, c) = flat[std::size_t{r} * cols + c] * std::max(stats.std[c], norm_std_floor) +
                          stats.mean[c];
        }
    }
    return sp;
}

void write_csv(std::ostream& out, const Spectrogram& sp) {
    out << "window_start";
    for (std::uint32_t c = 0; c < sp.cols; ++c) {
        out << ",bin" << c;
    }
    out << '\n';
    char buf[32];
    for (std::uint32_t r = 0; r < sp.rows; ++r) {
        out << std::size_t{r} * sp.hop;
        for (std::uint32_t c = 0; c < sp.cols; ++c) {
            std::snprintf(buf, sizeof buf, ",%.17g", sp.at(r, c));
            out << buf;
        }
        out << '\n';
    }
}

} // namespace tempo
