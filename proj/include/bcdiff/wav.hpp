#ifndef BCDIFF_WAV_HPP
#define BCDIFF_WAV_HPP

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <string>
#include <vector>

#include "bcdiff/dsp.hpp"

namespace bcdiff::wav {

enum class SampleFormat { PCM16, FLOAT32 };

namespace detail {

inline void put_u16(std::vector<unsigned char>& b, std::uint16_t v) {
    b.push_back(static_cast<unsigned char>(v & 0xFF));
    b.push_back(static_cast<unsigned char>(v >> 8));
}

inline void put_u32(std::vector<unsigned char>& b, std::uint32_t v) {
    for (int i = 0; i < 4; ++i) b.push_back(static_cast<unsigned char>((v >> (8 * i)) & 0xFF));
}

inline std::uint16_t get_u16(const unsigned char* p) {
    return static_cast<std::uint16_t>(p[0] | (p[1] << 8));
}

inline std::uint32_t get_u32(const unsigned char* p) {
    return static_cast<std::uint32_t>(p[0]) | (static_cast<std::uint32_t>(p[1]) << 8) |
           (static_cast<std::uint32_t>(p[2]) << 16) | (static_cast<std::uint32_t>(p[3]) << 24);
}

}  // namespace detail

// Mono PCM16 or IEEE float32 RIFF/WAVE. Unknown chunks are skipped;
// multichannel files are rejected outright.
inline dsp::Waveform read_wav(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    require(f.good(), "read_wav: cannot open " + path);
    std::vector<unsigned char> data((std::istreambuf_iterator<char>(f)),
                                    std::istreambuf_iterator<char>());
    require(data.size() >= 12, "read_wav: " + path + " is too small to be a WAV file");
    require(std::memcmp(data.data(), "RIFF", 4) == 0 && std::memcmp(data.data() + 8, "WAVE", 4) == 0,
            "read_wav: " + path + " is not a RIFF/WAVE file");

    std::uint16_t format = 0, channels = 0, bits = 0;
    std::uint32_t sample_rate = 0;
    bool have_fmt = false;
    const unsigned char* payload = nullptr;
    std::size_t payload_len = 0;

    std::size_t pos = 12;
    while (pos + 8 <= data.size()) {
        const unsigned char* hdr = data.data() + pos;
        const std::uint32_t chunk_len = detail::get_u32(hdr + 4);
        const std::size_t body = pos + 8;
        require(body + chunk_len <= data.size(), "read_wav: truncated chunk in " + path);
        if (std::memcmp(hdr, "fmt ", 4) == 0) {
            require(chunk_len >= 16, "read_wav: malformed fmt chunk in " + path);
            format = detail::get_u16(data.data() + body);
            channels = detail::get_u16(data.data() + body + 2);
            sample_rate = detail::get_u32(data.data() + body + 4);
            bits = detail::get_u16(data.data() + body + 14);
            have_fmt = true;
        } else if (std::memcmp(hdr, "data", 4) == 0) {
            payload = data.data() + body;
            payload_len = chunk_len;
        }
        pos = body + chunk_len + (chunk_len % 2);  // chunks are word aligned
    }
    require(have_fmt, "read_wav: missing fmt chunk in " + path);
    require(payload != nullptr, "read_wav: missing data chunk in " + path);
    require(channels == 1,
            "read_wav: " + path + " has " + str(channels) + " channels, only mono is supported");

    dsp::Waveform w;
    w.sample_rate = static_cast<int>(sample_rate);
    if (format == 1 && bits == 16) {
        const std::size_t n = payload_len / 2;
        w.samples.resize(n);
        for (std::size_t i = 0; i < n; ++i) {
            const std::int16_t v =
                static_cast<std::int16_t>(detail::get_u16(payload + 2 * i));
            w.samples[i] = static_cast<double>(v) / 32768.0;
        }
    } else if (format == 3 && bits == 32) {
        const std::size_t n = payload_len / 4;
        w.samples.resize(n);
        for (std::size_t i = 0; i < n; ++i) {
            const std::uint32_t u = detail::get_u32(payload + 4 * i);
            float v;
            std::memcpy(&v, &u, 4);
            w.samples[i] = static_cast<double>(v);
        }
    } else {
        fail("read_wav: " + path + " uses unsupported format " + str(format) + "/" + str(bits) +
             " bits (PCM16 or float32 required)");
    }
    return w;
}

inline void write_wav(const std::string& path, const dsp::Waveform& w,
                      SampleFormat fmt = SampleFormat::PCM16) {
    require(dsp::all_finite(w), "write_wav: non-finite sample");
    const std::size_t n = w.samples.size();
    const int bytes_per = fmt == SampleFormat::PCM16 ? 2 : 4;
    const std::uint32_t data_len = static_cast<std::uint32_t>(n * bytes_per);

    std::vector<unsigned char> out;
    out.reserve(44 + data_len);
    out.insert(out.end(), {'R', 'I', 'F', 'F'});
    detail::put_u32(out, 36 + data_len);
    out.insert(out.end(), {'W', 'A', 'V', 'E'});
    out.insert(out.end(), {'f', 'm', 't', ' '});
    detail::put_u32(out, 16);
    detail::put_u16(out, fmt == SampleFormat::PCM16 ? 1 : 3);
    detail::put_u16(out, 1);
    detail::put_u32(out, static_cast<std::uint32_t>(w.sample_rate));
    detail::put_u32(out, static_cast<std::uint32_t>(w.sample_rate * bytes_per));
    detail::put_u16(out, static_cast<std::uint16_t>(bytes_per));
    detail::put_u16(out, fmt == SampleFormat::PCM16 ? 16 : 32);
    out.insert(out.end(), {'d', 'a', 't', 'a'});
    detail::put_u32(out, data_len);

    if (fmt == SampleFormat::PCM16) {
        for (double s : w.samples) {
            const long v = std::lrint(std::clamp(s, -1.0, 1.0) * 32768.0);
            const std::int16_t q = static_cast<std::int16_t>(std::clamp<long>(v, -32768, 32767));
            detail::put_u16(out, static_cast<std::uint16_t>(q));
        }
    } else {
        for (double s : w.samples) {
            const float v = static_cast<float>(s);
            std::uint32_t u;
            std::memcpy(&u, &v, 4);
            detail::put_u32(out, u);
        }
    }

    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    require(f.good(), "write_wav: cannot open " + path + " for writing");
    f.write(reinterpret_cast<const char*>(out.data()), static_cast<std::streamsize>(out.size()));
    require(f.good(), "write_wav: write failed for " + path);
}

}  // namespace bcdiff::wav

#endif  // BCDIFF_WAV_HPP
