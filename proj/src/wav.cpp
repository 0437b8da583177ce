#include "avcap/wav.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <stdexcept>

namespace avcap {

namespace {

uint32_t read_u32(const uint8_t* p) {
    return static_cast<uint32_t>(p[0]) | (static_cast<uint32_t>(p[1]) << 8) |
           (static_cast<uint32_t>(p[2]) << 16) | (static_cast<uint32_t>(p[3]) << 24);
}

uint16_t read_u16(const uint8_t* p) {
    return static_cast<uint16_t>(p[0] | (p[1] << 8));
}

void put_u32(std::vector<uint8_t>& out, uint32_t v) {
    out.push_back(v & 0xff);
    out.push_back((v >> 8) & 0xff);
    out.push_back((v >> 16) & 0xff);
    out.push_back((v >> 24) & 0xff);
}

void put_u16(std::vector<uint8_t>& out, uint16_t v) {
    out.push_back(v & 0xff);
    out.push_back((v >> 8) & 0xff);
}

}  // namespace

Waveform read_wav(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw std::runtime_error("read_wav: cannot open " + path);
    std::vector<uint8_t> bytes((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
    if (bytes.size() < 44 || std::memcmp(bytes.data(), "RIFF", 4) != 0 ||
        std::memcmp(bytes.data() + 8, "WAVE", 4) != 0)
        throw std::runtime_error("read_wav: " + path + " is not a RIFF/WAVE file");

    int channels = 0, bits = 0;
    uint32_t rate = 0;
    uint16_t format = 0;
    const uint8_t* data = nullptr;
    size_t data_len = 0;

    size_t pos = 12;
    while (pos + 8 <= bytes.size()) {
        const char* id = reinterpret_cast<const char*>(bytes.data() + pos);
        const uint32_t len = read_u32(bytes.data() + pos + 4);
        const size_t body = pos + 8;
        if (body + len > bytes.size()) throw std::runtime_error("read_wav: truncated chunk in " + path);
        if (std::memcmp(id, "fmt ", 4) == 0) {
            if (len < 16) throw std::runtime_error("read_wav: malformed fmt chunk");
            format = read_u16(bytes.data() + body);
            channels = read_u16(bytes.data() + body + 2);
            rate = read_u32(bytes.data() + body + 4);
            bits = read_u16(bytes.data() + body + 14);
        } else if (std::memcmp(id, "data", 4) == 0) {
            data = bytes.data() + body;
            data_len = len;
        }
        pos = body + len + (len & 1);  // chunks are word-aligned
    }

    if (!data) throw std::runtime_error("read_wav: no data chunk in " + path);
    if (format != 1 || bits != 16)
        throw std::runtime_error("read_wav: " + path + " is not 16-bit PCM");
    if (channels != 1) throw std::runtime_error("read_wav: " + path + " is not mono");

    Waveform w;
    w.sample_rate = static_cast<int>(rate);
    const size_t n = data_len / 2;
    w.samples.resize(n);
    for (size_t i = 0; i < n; ++i) {
        const int16_t s = static_cast<int16_t>(data[2 * i] | (data[2 * i + 1] << 8));
        w.samples[i] = static_cast<float>(s) / 32768.0f;
    }
    if (w.samples.empty()) throw std::runtime_error("read_wav: " + path + " has no samples");
    return w;
}

void write_wav(const std::string& path, const Waveform& w) {
    const uint32_t n = static_cast<uint32_t>(w.samples.size());
    const uint32_t data_bytes = n * 2;
    std::vector<uint8_t> out;
    out.reserve(44 + data_bytes);
    out.insert(out.end(), {'R', 'I', 'F', 'F'});
    put_u32(out, 36 + data_bytes);
    out.insert(out.end(), {'W', 'A', 'V', 'E', 'f', 'm', 't', ' '});
    put_u32(out, 16);
    put_u16(out, 1);  // PCM
    put_u16(out, 1);  // mono
    put_u32(out, static_cast<uint32_t>(w.sample_rate));
    put_u32(out, static_cast<uint32_t>(w.sample_rate) * 2);
    put_u16(out, 2);
    put_u16(out, 16);
    out.insert(out.end(), {'d', 'a', 't', 'a'});
    put_u32(out, data_bytes);
    for (uint32_t i = 0; i < n; ++i) {
        const float clamped = std::clamp(w.samples[i], -1.0f, 1.0f);
        const int16_t s = static_cast<int16_t>(std::lrint(clamped * 32767.0f));
        out.push_back(static_cast<uint8_t>(s & 0xff));
        out.push_back(static_cast<uint8_t>((s >> 8) & 0xff));
    }
    std::ofstream f(path, std::ios::binary);
    if (!f) throw std::runtime_error("write_wav: cannot open " + path);
    f.write(reinterpret_cast<const char*>(out.data()), static_cast<std::streamsize>(out.size()));
    if (!f) throw std::runtime_error("write_wav: write failed for " + path);
}

}  // namespace avcap
