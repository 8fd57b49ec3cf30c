#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <complex>
#include <filesystem>
#include <fstream>
#include <numbers>
#include <vector>

#include "bcdiff/dsp.hpp"
#include "bcdiff/wav.hpp"

using namespace bcdiff;
using namespace bcdiff::dsp;
using Catch::Approx;
using Catch::Matchers::ContainsSubstring;

namespace {

Waveform random_wave(int n, Rng& rng, int sample_rate = 16000) {
    Waveform w;
    w.sample_rate = sample_rate;
    w.samples.resize(static_cast<std::size_t>(n));
    for (double& s : w.samples) s = rng.uniform(-0.9, 0.9);
    return w;
}

// Harmonic stack with a slow envelope, crudely speech-shaped.
Waveform voiced_wave(int n, int sample_rate = 16000) {
    Waveform w;
    w.sample_rate = sample_rate;
    w.samples.resize(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i) {
        const double t = static_cast<double>(i) / sample_rate;
        double v = 0.0;
        for (int h = 1; h <= 6; ++h)
            v += std::sin(2.0 * std::numbers::pi * 140.0 * h * t) / h;
        w.samples[static_cast<std::size_t>(i)] = 0.3 * v * (0.5 + 0.5 * std::sin(2.0 * std::numbers::pi * 3.0 * t));
    }
    return w;
}

double rel_l2(const std::vector<double>& a, const std::vector<double>& b) {
    REQUIRE(a.size() == b.size());
    double num = 0.0, den = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        num += (a[i] - b[i]) * (a[i] - b[i]);
        den += b[i] * b[i];
    }
    return std::sqrt(num / den);
}

StftConfig identity_cfg(int window_len, int hop) {
    StftConfig cfg;
    cfg.window_len = window_len;
    cfg.hop = hop;
    cfg.compress_exponent = 1.0;
    cfg.compress_scale = 1.0;
    return cfg;
}

int test_reflect(int j, int n) {
    const int period = 2 * n - 2;
    j %= period;
    if (j < 0) j += period;
    return j < n ? j : period - j;
}

std::filesystem::path temp_wav(const std::string& name) {
    return std::filesystem::temp_directory_path() / name;
}

}  // namespace

TEST_CASE("stft config validation and bin counts") {
    StftConfig cfg;
    REQUIRE_NOTHROW(cfg.validate());
    CHECK(cfg.freq_bins() == 256);

    StftConfig toy = identity_cfg(126, 32);
    CHECK(toy.freq_bins() == 64);

    cfg = StftConfig{};
    cfg.window_len = 511;
    CHECK_THROWS_AS(cfg.validate(), Error);
    cfg = StftConfig{};
    cfg.hop = 0;
    CHECK_THROWS_AS(cfg.validate(), Error);
    cfg = StftConfig{};
    cfg.hop = 600;
    CHECK_THROWS_AS(cfg.validate(), Error);
    cfg = StftConfig{};
    cfg.compress_exponent = 0.0;
    CHECK_THROWS_AS(cfg.validate(), Error);
    cfg = StftConfig{};
    cfg.compress_scale = -1.0;
    CHECK_THROWS_AS(cfg.validate(), Error);
}

TEST_CASE("stft matches a direct windowed DFT") {
    Rng rng(101);
    const Waveform w = random_wave(40, rng);
    const StftConfig cfg = identity_cfg(16, 4);
    const ComplexSpectrogram S = stft(w, cfg);

    const int W = cfg.window_len, H = cfg.hop, P = W / 2;
    const int L = static_cast<int>(w.samples.size());
    REQUIRE(S.rows() == 9);
    REQUIRE(S.cols() == 1 + L / H);
    const std::vector<double> win = periodic_hann(W);

    for (int k = 0; k < S.cols(); ++k) {
        for (int b = 0; b < S.rows(); ++b) {
            std::complex<double> acc(0.0, 0.0);
            for (int i = 0; i < W; ++i) {
                const double x = w.samples[static_cast<std::size_t>(
                    test_reflect(k * H - P + i, L))];
                const double ph = -2.0 * std::numbers::pi * b * i / W;
                acc += win[static_cast<std::size_t>(i)] * x *
                       std::complex<double>(std::cos(ph), std::sin(ph));
            }
            CHECK(std::abs(S(b, k) - acc) < 1e-10 * (1.0 + std::abs(acc)));
        }
    }
}

TEST_CASE("stft shapes follow the configured geometry") {
    Rng rng(102);
    const Waveform w = random_wave(16384, rng);
    StftConfig cfg;
    const ComplexSpectrogram S = stft(w, cfg);
    CHECK(S.rows() == 256);
    CHECK(S.cols() == 1 + 16384 / 128);

    const Waveform tiny = random_wave(100, rng);
    CHECK_THROWS_WITH(stft(tiny, cfg), ContainsSubstring("shorter than window"));

    Waveform bad = random_wave(1024, rng);
    bad.samples[5] = std::nan("");
    CHECK_THROWS_WITH(stft(bad, cfg), ContainsSubstring("non-finite"));
}

TEST_CASE("zero waveform maps to a zero spectrogram and back") {
    Waveform w;
    w.samples.assign(4096, 0.0);
    StftConfig cfg;
    const ComplexSpectrogram S = stft(w, cfg);
    CHECK(S.norm() == 0.0);
    const Waveform back = istft(S, cfg, 4096);
    double m = 0.0;
    for (double s : back.samples) m = std::max(m, std::abs(s));
    CHECK(m == 0.0);
}

TEST_CASE("bin-centered sinusoid concentrates energy around its bin") {
    StftConfig cfg = identity_cfg(510, 128);
    const int sr = 16000;
    const int bin = 40;
    const double freq = static_cast<double>(bin) * sr / cfg.window_len;
    Waveform w;
    w.sample_rate = sr;
    w.samples.resize(8192);
    for (std::size_t i = 0; i < w.samples.size(); ++i)
        w.samples[i] = std::sin(2.0 * std::numbers::pi * freq * static_cast<double>(i) / sr);

    const ComplexSpectrogram S = stft(w, cfg);
    // Interior frame, fully inside the signal so reflection plays no role.
    const int k = 20;
    REQUIRE(k * cfg.hop - cfg.window_len / 2 >= 0);
    double total = 0.0, lobe = 0.0;
    for (int b = 0; b < S.rows(); ++b) {
        const double e = std::norm(S(b, k));
        total += e;
        // The taper spreads a pure tone over its main lobe, one bin each side.
        if (std::abs(b - bin) <= 1) lobe += e;
    }
    CHECK(lobe / total > 0.9);
    // The center bin alone dominates every other single bin.
    for (int b = 0; b < S.rows(); ++b)
        if (b != bin) CHECK(std::norm(S(b, k)) < std::norm(S(bin, k)));
}

TEST_CASE("magnitude compression is invertible and optional") {
    Rng rng(103);
    ComplexSpectrogram x(32, 10);
    for (Eigen::Index j = 0; j < x.cols(); ++j)
        for (Eigen::Index i = 0; i < x.rows(); ++i) x(i, j) = rng.complex_normal();
    x(0, 0) = 0.0;

    StftConfig cfg;  // alpha 0.5, c 0.15
    const ComplexSpectrogram y = compress_magnitude(x, cfg);
    const ComplexSpectrogram back = decompress_magnitude(y, cfg);
    for (Eigen::Index j = 0; j < x.cols(); ++j)
        for (Eigen::Index i = 0; i < x.rows(); ++i) {
            const double mag = std::abs(x(i, j));
            CHECK(std::abs(back(i, j) - x(i, j)) <= 1e-10 * (1.0 + mag));
        }
    CHECK(y(0, 0) == std::complex<double>(0.0, 0.0));

    // Compression shrinks the dynamic range toward the diffusion noise scale.
    CHECK(std::abs(y(1, 1)) == Approx(0.15 * std::sqrt(std::abs(x(1, 1)))));

    StftConfig ident = identity_cfg(510, 128);
    const ComplexSpectrogram same = compress_magnitude(x, ident);
    CHECK((same - x).norm() == 0.0);
}

TEST_CASE("uncompressed stft is linear") {
    Rng rng(104);
    const Waveform w1 = random_wave(3000, rng);
    const Waveform w2 = random_wave(3000, rng);
    Waveform mix;
    mix.samples.resize(3000);
    const double a = 0.7, b = -1.3;
    for (std::size_t i = 0; i < mix.samples.size(); ++i)
        mix.samples[i] = a * w1.samples[i] + b * w2.samples[i];

    const StftConfig cfg = identity_cfg(510, 128);
    const ComplexSpectrogram S1 = stft(w1, cfg);
    const ComplexSpectrogram S2 = stft(w2, cfg);
    const ComplexSpectrogram Sm = stft(mix, cfg);
    CHECK((Sm - (a * S1 + b * S2)).norm() < 1e-9 * Sm.norm());
}

TEST_CASE("windowed frame energy and spectrogram energy agree per Parseval") {
    Rng rng(105);
    const StftConfig cfg = identity_cfg(510, 128);
    const int W = cfg.window_len, H = cfg.hop, P = W / 2;
    const std::vector<double> win = periodic_hann(W);

    for (int trial = 0; trial < 3; ++trial) {
        const Waveform w = random_wave(4000 + 777 * trial, rng);
        const int L = static_cast<int>(w.samples.size());
        const ComplexSpectrogram S = stft(w, cfg);

        double frame_energy = 0.0;
        for (int k = 0; k < S.cols(); ++k)
            for (int i = 0; i < W; ++i) {
                const double v = win[static_cast<std::size_t>(i)] *
                                 w.samples[static_cast<std::size_t>(
                                     test_reflect(k * H - P + i, L))];
                frame_energy += v * v;
            }

        double spec_energy = 0.0;
        for (int k = 0; k < S.cols(); ++k)
            for (int b = 0; b < S.rows(); ++b) {
                const double weight = (b == 0 || b == S.rows() - 1) ? 1.0 : 2.0;
                spec_energy += weight * std::norm(S(b, k));
            }
        // One-sided bins double-count everything except DC and Nyquist; the
        // unnormalized transform then scales energy by the window length.
        CHECK(spec_energy / frame_energy == Approx(static_cast<double>(W)).epsilon(1e-9));
    }
}

TEST_CASE("istft inverts stft on noise and on voiced signals") {
    Rng rng(106);
    StftConfig cfg;  // compression active

    const Waveform noise = random_wave(8192, rng);
    const Waveform noise_rt = istft(stft(noise, cfg), cfg, 8192);
    CHECK(rel_l2(noise_rt.samples, noise.samples) < 1e-6);

    const Waveform voiced = voiced_wave(12000);
    const Waveform voiced_rt = istft(stft(voiced, cfg), cfg, 12000);
    CHECK(rel_l2(voiced_rt.samples, voiced.samples) < 1e-6);

    const StftConfig ident = identity_cfg(510, 128);
    const Waveform ident_rt = istft(stft(voiced, ident), ident, 12000);
    CHECK(rel_l2(ident_rt.samples, voiced.samples) < 1e-10);

    const StftConfig toy = identity_cfg(126, 32);
    const Waveform toy_rt = istft(stft(voiced, toy), toy, 12000);
    CHECK(rel_l2(toy_rt.samples, voiced.samples) < 1e-10);
}

TEST_CASE("istft rejects impossible requests") {
    Rng rng(107);
    StftConfig cfg;
    const Waveform w = random_wave(4096, rng);
    const ComplexSpectrogram S = stft(w, cfg);

    ComplexSpectrogram wrong_bins = S.topRows(100);
    CHECK_THROWS_WITH(istft(wrong_bins, cfg, 4096), ContainsSubstring("bins"));
    CHECK_THROWS_WITH(istft(S, cfg, 100000), ContainsSubstring("cover fewer"));
    CHECK_THROWS_AS(istft(S, cfg, 0), Error);

    // Hop equal to the window length leaves zero-weight samples at the
    // frame seams, which the normalization must refuse to divide through.
    const StftConfig degenerate = identity_cfg(16, 16);
    Waveform short_w = random_wave(64, rng);
    const ComplexSpectrogram D = stft(short_w, degenerate);
    CHECK_THROWS_WITH(istft(D, degenerate, 64), ContainsSubstring("normalization"));
}

TEST_CASE("training fit crops, pads, and stays put at the target width") {
    Rng rng(108);
    ComplexSpectrogram S(8, 300);
    for (Eigen::Index j = 0; j < S.cols(); ++j)
        for (Eigen::Index i = 0; i < S.rows(); ++i) S(i, j) = rng.complex_normal();

    ComplexSpectrogram exact = S.leftCols(256);
    Rng r1(1);
    const FramedExample id = fit_frames_train(exact, 256, r1);
    CHECK(id.offset == 0);
    CHECK(id.n_valid == 256);
    CHECK((id.frames - exact).norm() == 0.0);

    Rng r2(2);
    const FramedExample crop = fit_frames_train(S, 256, r2);
    CHECK(crop.n_valid == 256);
    CHECK(crop.offset >= 0);
    CHECK(crop.offset <= 44);
    CHECK((crop.frames - S.middleCols(crop.offset, 256)).norm() == 0.0);

    Rng r2b(2);
    const FramedExample crop_again = fit_frames_train(S, 256, r2b);
    CHECK(crop_again.offset == crop.offset);

    bool saw_other = false;
    for (int seed = 3; seed < 23; ++seed) {
        Rng r(static_cast<std::uint64_t>(seed));
        if (fit_frames_train(S, 256, r).offset != crop.offset) saw_other = true;
    }
    CHECK(saw_other);

    ComplexSpectrogram narrow = S.leftCols(100);
    Rng r3(3);
    const FramedExample pad = fit_frames_train(narrow, 256, r3);
    CHECK(pad.n_valid == 100);
    CHECK((pad.frames.leftCols(100) - narrow).norm() == 0.0);
    CHECK(pad.frames.rightCols(156).norm() == 0.0);
}

TEST_CASE("chunked inference reassembles to the original under an identity model") {
    Rng rng(109);

    auto roundtrip = [&](int t_orig, int target, int overlap) {
        ComplexSpectrogram S(8, t_orig);
        for (Eigen::Index j = 0; j < S.cols(); ++j)
            for (Eigen::Index i = 0; i < S.rows(); ++i) S(i, j) = rng.complex_normal();
        const ChunkPlan plan = plan_chunks(t_orig, target, overlap);
        const std::vector<FramedExample> chunks = cut_chunks(S, plan);
        std::vector<ComplexSpectrogram> processed;
        for (const auto& c : chunks) processed.push_back(c.frames);
        const ComplexSpectrogram merged = merge_chunks(processed, plan);
        REQUIRE(merged.cols() == t_orig);
        CHECK((merged - S).norm() == 0.0);
        return plan;
    };

    const ChunkPlan two = roundtrip(300, 256, 64);
    REQUIRE(two.starts.size() == 2);
    CHECK(two.starts[0] == 0);
    CHECK(two.starts[1] == 44);

    const ChunkPlan several = roundtrip(700, 256, 64);
    REQUIRE(several.starts.size() == 4);
    CHECK(several.starts.back() == 444);

    const ChunkPlan padded = roundtrip(100, 256, 64);
    REQUIRE(padded.starts.size() == 1);

    roundtrip(256, 256, 64);

    CHECK_THROWS_AS(plan_chunks(300, 256, 256), Error);
    CHECK_THROWS_AS(plan_chunks(300, 256, -1), Error);
    CHECK_THROWS_AS(plan_chunks(0, 256, 64), Error);
}

TEST_CASE("peak normalization hits the target and leaves silence alone") {
    Waveform w;
    w.samples = {0.1, -0.4, 0.2};
    const double k = normalize_peak(w, 0.95);
    CHECK(k == Approx(0.95 / 0.4));
    CHECK(std::abs(w.samples[1]) == Approx(0.95));

    Waveform silent;
    silent.samples.assign(16, 0.0);
    CHECK(normalize_peak(silent) == 1.0);
    for (double s : silent.samples) CHECK(s == 0.0);
}

TEST_CASE("wav io round trips both sample formats") {
    Rng rng(110);
    Waveform w = random_wave(2000, rng, 4000);

    const auto p16 = temp_wav("bcdiff_test_pcm16.wav");
    wav::write_wav(p16.string(), w, wav::SampleFormat::PCM16);
    const Waveform r16 = wav::read_wav(p16.string());
    REQUIRE(r16.samples.size() == w.samples.size());
    CHECK(r16.sample_rate == 4000);
    double max_err = 0.0;
    for (std::size_t i = 0; i < w.samples.size(); ++i)
        max_err = std::max(max_err, std::abs(r16.samples[i] - w.samples[i]));
    CHECK(max_err <= 1.0 / 32768.0);

    const auto p32 = temp_wav("bcdiff_test_f32.wav");
    wav::write_wav(p32.string(), w, wav::SampleFormat::FLOAT32);
    const Waveform r32 = wav::read_wav(p32.string());
    REQUIRE(r32.samples.size() == w.samples.size());
    max_err = 0.0;
    for (std::size_t i = 0; i < w.samples.size(); ++i)
        max_err = std::max(max_err, std::abs(r32.samples[i] - w.samples[i]));
    CHECK(max_err <= 1e-7);

    std::filesystem::remove(p16);
    std::filesystem::remove(p32);
}

TEST_CASE("wav reader rejects what it cannot represent") {
    // Stereo PCM16 file built by hand.
    std::vector<unsigned char> stereo = {'R', 'I', 'F', 'F', 0, 0, 0, 0, 'W', 'A', 'V', 'E'};
    auto put16 = [&](std::uint16_t v) {
        stereo.push_back(static_cast<unsigned char>(v & 0xFF));
        stereo.push_back(static_cast<unsigned char>(v >> 8));
    };
    auto put32 = [&](std::uint32_t v) {
        for (int i = 0; i < 4; ++i) stereo.push_back(static_cast<unsigned char>((v >> (8 * i)) & 0xFF));
    };
    stereo.insert(stereo.end(), {'f', 'm', 't', ' '});
    put32(16);
    put16(1);
    put16(2);  // two channels
    put32(16000);
    put32(64000);
    put16(4);
    put16(16);
    stereo.insert(stereo.end(), {'d', 'a', 't', 'a'});
    put32(8);
    for (int i = 0; i < 8; ++i) stereo.push_back(0);
    const std::uint32_t riff_len = static_cast<std::uint32_t>(stereo.size() - 8);
    for (int i = 0; i < 4; ++i)
        stereo[static_cast<std::size_t>(4 + i)] =
            static_cast<unsigned char>((riff_len >> (8 * i)) & 0xFF);

    const auto pstereo = temp_wav("bcdiff_test_stereo.wav");
    {
        std::ofstream f(pstereo, std::ios::binary);
        f.write(reinterpret_cast<const char*>(stereo.data()),
                static_cast<std::streamsize>(stereo.size()));
    }
    CHECK_THROWS_WITH(wav::read_wav(pstereo.string()), ContainsSubstring("mono"));
    std::filesystem::remove(pstereo);

    const auto pjunk = temp_wav("bcdiff_test_junk.wav");
    {
        std::ofstream f(pjunk, std::ios::binary);
        f << "this is not audio";
    }
    CHECK_THROWS_WITH(wav::read_wav(pjunk.string()), ContainsSubstring("RIFF"));
    std::filesystem::remove(pjunk);

    CHECK_THROWS_WITH(wav::read_wav("/nonexistent/nowhere.wav"), ContainsSubstring("cannot open"));
}

TEST_CASE("wav reader skips unknown chunks before the audio payload") {
    Rng rng(111);
    Waveform w = random_wave(64, rng);
    const auto plain = temp_wav("bcdiff_test_plain.wav");
    wav::write_wav(plain.string(), w, wav::SampleFormat::FLOAT32);

    std::ifstream in(plain, std::ios::binary);
    std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(in)),
                                     std::istreambuf_iterator<char>());
    in.close();
    // Splice a LIST chunk with an odd payload length between fmt and data.
    std::vector<unsigned char> extra = {'L', 'I', 'S', 'T', 5, 0, 0, 0, 'I', 'N', 'F', 'O', 'x', 0};
    std::vector<unsigned char> patched(bytes.begin(), bytes.begin() + 36);
    patched.insert(patched.end(), extra.begin(), extra.end());
    patched.insert(patched.end(), bytes.begin() + 36, bytes.end());
    const std::uint32_t riff_len = static_cast<std::uint32_t>(patched.size() - 8);
    for (int i = 0; i < 4; ++i)
        patched[static_cast<std::size_t>(4 + i)] =
            static_cast<unsigned char>((riff_len >> (8 * i)) & 0xFF);

    const auto spliced = temp_wav("bcdiff_test_spliced.wav");
    {
        std::ofstream f(spliced, std::ios::binary);
        f.write(reinterpret_cast<const char*>(patched.data()),
                static_cast<std::streamsize>(patched.size()));
    }
    const Waveform r = wav::read_wav(spliced.string());
    REQUIRE(r.samples.size() == w.samples.size());
    double max_err = 0.0;
    for (std::size_t i = 0; i < w.samples.size(); ++i)
        max_err = std::max(max_err, std::abs(r.samples[i] - w.samples[i]));
    CHECK(max_err <= 1e-7);
    std::filesystem::remove(plain);
    std::filesystem::remove(spliced);
}
