#include "avcap/signal_frontend.hpp"

#include <cmath>
#include <complex>
#include <stdexcept>
#include <string>

namespace avcap {

namespace {

constexpr float kLogFloor = 1e-10f;

// Iterative radix-2 FFT, in place. n must be a power of two.
void fft_radix2(std::vector<std::complex<double>>& a) {
    const size_t n = a.size();
    for (size_t i = 1, j = 0; i < n; ++i) {
        size_t bit = n >> 1;
        for (; j & bit; bit >>= 1) j ^= bit;
        j ^= bit;
        if (i < j) std::swap(a[i], a[j]);
    }
    for (size_t len = 2; len <= n; len <<= 1) {
        const double ang = -2.0 * M_PI / static_cast<double>(len);
        const std::complex<double> wlen(std::cos(ang), std::sin(ang));
        for (size_t i = 0; i < n; i += len) {
            std::complex<double> w(1.0, 0.0);
            for (size_t k = 0; k < len / 2; ++k) {
                const std::complex<double> u = a[i + k];
                const std::complex<double> v = a[i + k + len / 2] * w;
                a[i + k] = u + v;
                a[i + k + len / 2] = u - v;
                w *= wlen;
            }
        }
    }
}

// Triangular mel filterbank (HTK scale, peak 1), n_mels x (fft/2 + 1).
std::vector<double> build_mel_filters(const FrontendConfig& cfg) {
    const int n_bins = cfg.fft_size / 2 + 1;
    const double mel_lo = hz_to_mel(cfg.fmin);
    const double mel_hi = hz_to_mel(cfg.fmax);
    std::vector<double> edges(cfg.n_mels + 2);
    for (int i = 0; i < cfg.n_mels + 2; ++i)
        edges[i] = mel_to_hz(mel_lo + (mel_hi - mel_lo) * i / (cfg.n_mels + 1));

    std::vector<double> fb(static_cast<size_t>(cfg.n_mels) * n_bins, 0.0);
    for (int m = 0; m < cfg.n_mels; ++m) {
        const double lo = edges[m], mid = edges[m + 1], hi = edges[m + 2];
        for (int k = 0; k < n_bins; ++k) {
            const double f = static_cast<double>(k) * cfg.sample_rate / cfg.fft_size;
            double w = 0.0;
            if (f > lo && f < mid)
                w = (f - lo) / (mid - lo);
            else if (f >= mid && f < hi)
                w = (hi - f) / (hi - mid);
            fb[static_cast<size_t>(m) * n_bins + k] = w;
        }
    }
    return fb;
}

}  // namespace

double hz_to_mel(double hz) { return 2595.0 * std::log10(1.0 + hz / 700.0); }

double mel_to_hz(double mel) { return 700.0 * (std::pow(10.0, mel / 2595.0) - 1.0); }

MelSpectrogram compute_logmel(const Waveform& w, const FrontendConfig& cfg) {
    if (w.sample_rate != cfg.sample_rate)
        throw std::runtime_error("compute_logmel: sample rate " + std::to_string(w.sample_rate) +
                                 " Hz, expected " + std::to_string(cfg.sample_rate));
    const int win = cfg.window_samples();
    const int hop = cfg.hop_samples();
    if (static_cast<int>(w.samples.size()) < win)
        throw std::runtime_error("compute_logmel: waveform shorter than one window");
    if (cfg.fft_size < win) throw std::runtime_error("compute_logmel: fft_size < window");

    const int n_frames = 1 + static_cast<int>((w.samples.size() - win) / hop);
    const int n_bins = cfg.fft_size / 2 + 1;

    // Periodic Hanning window.
    std::vector<double> window(win);
    for (int i = 0; i < win; ++i)
        window[i] = 0.5 - 0.5 * std::cos(2.0 * M_PI * i / win);

    const std::vector<double> fb = build_mel_filters(cfg);

    MelSpectrogram out;
    out.frames = n_frames;
    out.bins = cfg.n_mels;
    out.data.resize(static_cast<size_t>(n_frames) * cfg.n_mels);

    std::vector<std::complex<double>> buf(cfg.fft_size);
    std::vector<double> mag(n_bins);
    for (int t = 0; t < n_frames; ++t) {
        const size_t start = static_cast<size_t>(t) * hop;
        for (int i = 0; i < cfg.fft_size; ++i) {
            const double s = i < win ? static_cast<double>(w.samples[start + i]) * window[i] : 0.0;
            buf[i] = {s, 0.0};
        }
        fft_radix2(buf);
        for (int k = 0; k < n_bins; ++k) mag[k] = std::abs(buf[k]);
        for (int m = 0; m < cfg.n_mels; ++m) {
            double e = 0.0;
            const double* row = fb.data() + static_cast<size_t>(m) * n_bins;
            for (int k = 0; k < n_bins; ++k) e += row[k] * mag[k];
            out.at(t, m) = std::log(std::max(e, static_cast<double>(kLogFloor)));
        }
    }
    return out;
}

MelSpectrogram pad_or_truncate(const MelSpectrogram& m, int target_frames) {
    if (target_frames <= 0) throw std::runtime_error("pad_or_truncate: target_frames must be > 0");
    MelSpectrogram out;
    out.frames = target_frames;
    out.bins = m.bins;
    out.data.assign(static_cast<size_t>(target_frames) * m.bins, 0.0f);
    const int keep = std::min(m.frames, target_frames);
    std::copy_n(m.data.begin(), static_cast<size_t>(keep) * m.bins, out.data.begin());
    return out;
}

MelSpectrogram normalize(const MelSpectrogram& m, float mean, float std_dev) {
    if (std_dev == 0.0f) throw std::runtime_error("normalize: std must be nonzero");
    MelSpectrogram out = m;
    for (auto& v : out.data) v = (v - mean) / std_dev;
    return out;
}

MelSpectrogram standardize(const MelSpectrogram& m) {
    double mean = 0.0;
    for (float v : m.data) mean += v;
    mean /= static_cast<double>(m.data.size());
    double var = 0.0;
    for (float v : m.data) {
        const double d = v - mean;
        var += d * d;
    }
    var /= static_cast<double>(m.data.size());
    const double sd = std::max(std::sqrt(var), 1e-6);
    return normalize(m, static_cast<float>(mean), static_cast<float>(sd));
}

PatchSequence patchify_audio(const MelSpectrogram& m, int p) {
    if (p <= 0 || m.frames % p != 0 || m.bins % p != 0)
        throw std::runtime_error("patchify_audio: " + std::to_string(m.frames) + "x" +
                                 std::to_string(m.bins) + " not divisible by patch " +
                                 std::to_string(p));
    PatchSequence ps;
    ps.grid_rows = m.frames / p;
    ps.grid_cols = m.bins / p;
    ps.count = ps.grid_rows * ps.grid_cols;
    ps.dim = p * p;
    ps.data.resize(static_cast<size_t>(ps.count) * ps.dim);
    size_t o = 0;
    for (int bt = 0; bt < ps.grid_rows; ++bt)
        for (int bf = 0; bf < ps.grid_cols; ++bf)
            for (int r = 0; r < p; ++r)
                for (int c = 0; c < p; ++c)
                    ps.data[o++] = m.at(bt * p + r, bf * p + c);
    return ps;
}

PatchSequence audio_to_patches(const Waveform& w, const FrontendConfig& cfg) {
    MelSpectrogram mel = compute_logmel(w, cfg);
    mel = cfg.per_instance_norm ? standardize(mel) : normalize(mel, cfg.norm_mean, cfg.norm_std);
    mel = pad_or_truncate(mel, cfg.target_frames);
    return patchify_audio(mel, cfg.patch);
}

}  // namespace avcap
