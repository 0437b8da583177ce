#pragma once

#include <string>
#include <vector>

namespace avcap {

// Raw audio in [-1, 1] at a fixed sample rate.
struct Waveform {
    std::vector<float> samples;
    int sample_rate = 0;
};

// Reads a mono 16-bit signed little-endian PCM WAV file. Anything else
// (other codecs, bit depths, channel counts) is rejected.
Waveform read_wav(const std::string& path);

// Writes samples (clamped to [-1, 1]) as mono PCM16 LE.
void write_wav(const std::string& path, const Waveform& w);

}  // namespace avcap
