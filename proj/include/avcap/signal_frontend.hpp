#pragma once

#include "avcap/wav.hpp"

#include <string>
#include <vector>

namespace avcap {

// Log-mel spectrogram, row-major frames x mel bins.
struct MelSpectrogram {
    int frames = 0;
    int bins = 0;
    std::vector<float> data;

    float at(int t, int f) const { return data[static_cast<size_t>(t) * bins + f]; }
    float& at(int t, int f) { return data[static_cast<size_t>(t) * bins + f]; }
};

// Flattened patch vectors from one modality plus their grid geometry.
struct PatchSequence {
    int count = 0;
    int dim = 0;
    std::vector<float> data;  // count x dim, row-major
    int grid_rows = 0;        // time blocks (audio) / spatial rows (video)
    int grid_cols = 0;
    int grid_depth = 1;       // temporal blocks for video tubelets

    const float* patch(int i) const { return data.data() + static_cast<size_t>(i) * dim; }
};

struct FrontendConfig {
    int sample_rate = 16000;
    int window_ms = 25;   // 400 samples
    int hop_ms = 10;      // 160 samples
    int fft_size = 512;
    int n_mels = 128;
    double fmin = 0.0;
    double fmax = 8000.0;
    int target_frames = 1024;
    int patch = 16;
    // Normalization: per-instance standardization by default, or fixed stats.
    bool per_instance_norm = true;
    float norm_mean = 0.0f;
    float norm_std = 1.0f;

    int window_samples() const { return sample_rate * window_ms / 1000; }
    int hop_samples() const { return sample_rate * hop_ms / 1000; }
};

// Hanning-windowed STFT magnitudes through an HTK-scale triangular mel
// filterbank, log-compressed with floor 1e-10. No center padding; frame
// count is 1 + floor((len - win) / hop).
MelSpectrogram compute_logmel(const Waveform& w, const FrontendConfig& cfg);

// Exact target length: zero-pads short inputs at the end, truncates long ones.
MelSpectrogram pad_or_truncate(const MelSpectrogram& m, int target_frames);

// Entry-wise (x - mean) / std; std must be nonzero.
MelSpectrogram normalize(const MelSpectrogram& m, float mean, float std_dev);

// Per-instance standardization with a floored std for constant inputs.
MelSpectrogram standardize(const MelSpectrogram& m);

// Splits a T x F spectrogram into p x p patches, time-major order, each
// flattened row-major to length p^2.
PatchSequence patchify_audio(const MelSpectrogram& m, int p);

// Full chain: logmel -> normalization -> pad/truncate -> patchify.
PatchSequence audio_to_patches(const Waveform& w, const FrontendConfig& cfg);

// Mel scale helpers (HTK formula).
double hz_to_mel(double hz);
double mel_to_hz(double mel);

}  // namespace avcap
