#ifndef BCDIFF_DATAGEN_HPP
#define BCDIFF_DATAGEN_HPP

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <numbers>
#include <string>
#include <vector>

#include <json.hpp>

#include "bcdiff/dsp.hpp"
#include "bcdiff/wav.hpp"

namespace bcdiff::datagen {

struct UtterancePair {
    dsp::Waveform air;
    dsp::Waveform bone;
    std::string speaker_id;
    std::string utterance_id;
};

struct MixtureSample {
    UtterancePair pair;
    std::string noise_id;
    double target_snr_db = 0.0;
    dsp::Waveform mixture;
    std::int64_t noise_offset = 0;  // crop start in the noise source
};

inline double signal_power(const dsp::Waveform& w) {
    require(!w.samples.empty(), "signal_power: empty waveform");
    double acc = 0.0;
    for (double s : w.samples) acc += s * s;
    return acc / static_cast<double>(w.samples.size());
}

// ---------------------------------------------------------------------------
// SNR mixing

struct Mixture {
    dsp::Waveform mixture;
    double noise_scale = 0.0;
    std::int64_t noise_offset = 0;
};

// mixture = clean + k * noise_crop with k chosen so the realized SNR equals
// snr_db exactly (power measured over the whole utterance).
inline Mixture mix_at_snr_offset(const dsp::Waveform& clean, const dsp::Waveform& noise,
                                 double snr_db, std::int64_t offset) {
    require(clean.sample_rate == noise.sample_rate,
            "mix_at_snr: sample rate mismatch (" + str(clean.sample_rate) + " vs " +
                str(noise.sample_rate) + ")");
    const std::int64_t n = static_cast<std::int64_t>(clean.samples.size());
    const std::int64_t m = static_cast<std::int64_t>(noise.samples.size());
    require(n >= 1, "mix_at_snr: empty clean signal");
    require(m >= n, "mix_at_snr: noise (" + str(m) + " samples) shorter than clean (" + str(n) +
                        " samples)");
    require(offset >= 0 && offset + n <= m, "mix_at_snr: crop offset out of range");

    const double p_clean = signal_power(clean);
    require(p_clean > 0.0, "mix_at_snr: silent clean signal");
    double p_noise = 0.0;
    for (std::int64_t i = 0; i < n; ++i) {
        const double v = noise.samples[static_cast<std::size_t>(offset + i)];
        p_noise += v * v;
    }
    p_noise /= static_cast<double>(n);
    require(p_noise > 0.0, "mix_at_snr: silent noise crop");

    const double k = std::sqrt(p_clean / (p_noise * std::pow(10.0, snr_db / 10.0)));
    Mixture out;
    out.noise_scale = k;
    out.noise_offset = offset;
    out.mixture.sample_rate = clean.sample_rate;
    out.mixture.samples.resize(static_cast<std::size_t>(n));
    for (std::int64_t i = 0; i < n; ++i)
        out.mixture.samples[static_cast<std::size_t>(i)] =
            clean.samples[static_cast<std::size_t>(i)] +
            k * noise.samples[static_cast<std::size_t>(offset + i)];
    return out;
}

inline Mixture mix_at_snr(const dsp::Waveform& clean, const dsp::Waveform& noise, double snr_db,
                          Rng& rng) {
    const std::int64_t slack =
        static_cast<std::int64_t>(noise.samples.size()) -
        static_cast<std::int64_t>(clean.samples.size());
    require(slack >= 0, "mix_at_snr: noise shorter than clean");
    const std::int64_t offset = slack == 0 ? 0 : rng.uniform_int(slack + 1);
    return mix_at_snr_offset(clean, noise, snr_db, offset);
}

// ---------------------------------------------------------------------------
// Bone-channel filter: 4th-order Butterworth lowpass as two biquad sections,
// run forward and backward for zero phase.

namespace detail {

struct Biquad {
    double b0, b1, b2, a1, a2;

    void apply(std::vector<double>& x) const {
        double z1 = 0.0, z2 = 0.0;
        for (double& v : x) {
            const double in = v;
            const double out = b0 * in + z1;
            z1 = b1 * in - a1 * out + z2;
            z2 = b2 * in - a2 * out;
            v = out;
        }
    }
};

inline Biquad lowpass_biquad(double cutoff_hz, double sample_rate, double q) {
    require(cutoff_hz > 0.0 && cutoff_hz < 0.5 * sample_rate,
            "lowpass_biquad: cutoff must lie below Nyquist");
    const double w0 = 2.0 * std::numbers::pi * cutoff_hz / sample_rate;
    const double alpha = std::sin(w0) / (2.0 * q);
    const double c = std::cos(w0);
    const double a0 = 1.0 + alpha;
    Biquad f;
    f.b0 = (1.0 - c) / 2.0 / a0;
    f.b1 = (1.0 - c) / a0;
    f.b2 = f.b0;
    f.a1 = -2.0 * c / a0;
    f.a2 = (1.0 - alpha) / a0;
    return f;
}

// Butterworth pole pair Q values for a 4th-order cascade.
inline std::vector<Biquad> butterworth4_lowpass(double cutoff_hz, double sample_rate) {
    return {lowpass_biquad(cutoff_hz, sample_rate, 0.54119610),
            lowpass_biquad(cutoff_hz, sample_rate, 1.30656296)};
}

inline void filtfilt(std::vector<double>& x, const std::vector<Biquad>& sections) {
    for (const Biquad& s : sections) s.apply(x);
    std::reverse(x.begin(), x.end());
    for (const Biquad& s : sections) s.apply(x);
    std::reverse(x.begin(), x.end());
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Synthetic paired utterances

struct SynthConfig {
    double bone_cutoff_hz = 1000.0;
    double bone_attenuation_db = 3.0;
    double bone_self_noise = 7e-4;  // sensor noise std relative to full scale
    double peak = 0.7;
};

namespace detail {

// Voiced surrogate: pitch random walk, harmonic stack with formant-like
// spectral tilt, breath noise, and a syllabic on/off envelope with pauses.
inline std::vector<double> synth_voice(Rng& rng, int n, int sample_rate) {
    const double nyq = 0.5 * sample_rate;
    const double f_max = std::min(3500.0, 0.9 * nyq);

    // Two formant-like resonance centers shape the harmonic amplitudes.
    const double f1 = rng.uniform(280.0, std::min(750.0, 0.4 * nyq));
    const double f2 = rng.uniform(std::min(900.0, 0.45 * nyq), std::min(1900.0, 0.8 * nyq));
    const auto formant_gain = [&](double f) {
        const double g1 = 1.0 / (1.0 + std::pow((f - f1) / 150.0, 2.0));
        const double g2 = 0.6 / (1.0 + std::pow((f - f2) / 220.0, 2.0));
        return 0.15 + g1 + g2;
    };

    // Syllable gating: alternating voiced runs and pauses with 20 ms ramps.
    std::vector<double> env(static_cast<std::size_t>(n), 0.0);
    const int ramp = sample_rate / 50;
    int pos = 0;
    bool voiced = true;
    while (pos < n) {
        const int dur = voiced
                            ? static_cast<int>(rng.uniform(0.15, 0.40) * sample_rate)
                            : static_cast<int>(rng.uniform(0.05, 0.20) * sample_rate);
        if (voiced) {
            const int end = std::min(n, pos + dur);
            const double level = rng.uniform(0.6, 1.0);
            for (int i = pos; i < end; ++i) {
                double g = 1.0;
                if (i - pos < ramp) g = (i - pos + 1.0) / ramp;
                if (end - i < ramp) g = std::min(g, (end - i) / static_cast<double>(ramp));
                env[static_cast<std::size_t>(i)] = level * g;
            }
        }
        pos += dur;
        voiced = !voiced;
    }

    double f0 = rng.uniform(110.0, 220.0);
    std::vector<double> phase(16, 0.0);
    for (double& p : phase) p = rng.uniform(0.0, 2.0 * std::numbers::pi);

    std::vector<double> x(static_cast<std::size_t>(n), 0.0);
    const double dt = 1.0 / sample_rate;
    for (int i = 0; i < n; ++i) {
        // Slow pitch random walk clamped to a speech-like range.
        f0 += rng.normal() * 0.35;
        f0 = std::clamp(f0, 80.0, 300.0);
        double v = 0.0;
        for (int h = 1; h <= static_cast<int>(phase.size()); ++h) {
            const double fh = h * f0;
            if (fh > f_max) break;
            std::size_t hi = static_cast<std::size_t>(h - 1);
            phase[hi] += 2.0 * std::numbers::pi * fh * dt;
            v += formant_gain(fh) / h * std::sin(phase[hi]);
        }
        const double breath = 0.03 * rng.normal();
        x[static_cast<std::size_t>(i)] = env[static_cast<std::size_t>(i)] * (v + breath);
    }
    return x;
}

}  // namespace detail

// Air channel is the voiced surrogate; bone channel is the same signal
// through a zero-phase lowpass with 3 dB attenuation plus weak sensor noise,
// so the two stay sample-aligned by construction.
inline UtterancePair synth_pair(Rng& rng, double duration_s, int sample_rate,
                                const SynthConfig& cfg = SynthConfig{}) {
    require(duration_s >= 1.0 && duration_s <= 5.0,
            "synth_pair: duration must lie in [1, 5] s, got " + str(duration_s));
    require(sample_rate >= 2000, "synth_pair: sample rate too low");
    require(cfg.bone_cutoff_hz < 0.5 * sample_rate,
            "synth_pair: bone cutoff above Nyquist");

    const int n = static_cast<int>(std::lround(duration_s * sample_rate));
    UtterancePair pair;
    pair.air.sample_rate = sample_rate;
    pair.air.samples = detail::synth_voice(rng, n, sample_rate);
    dsp::normalize_peak(pair.air, cfg.peak);

    pair.bone.sample_rate = sample_rate;
    pair.bone.samples = pair.air.samples;
    detail::filtfilt(pair.bone.samples,
                     detail::butterworth4_lowpass(cfg.bone_cutoff_hz, sample_rate));
    const double att = std::pow(10.0, -cfg.bone_attenuation_db / 20.0);
    for (double& s : pair.bone.samples) s = att * s + cfg.bone_self_noise * rng.normal();
    return pair;
}

// ---------------------------------------------------------------------------
// Noise sources

// Paul Kellet's pink filter over white noise, peak normalized.
inline dsp::Waveform pink_noise(Rng& rng, int n, int sample_rate) {
    require(n >= 1, "pink_noise: length must be >= 1");
    dsp::Waveform w;
    w.sample_rate = sample_rate;
    w.samples.resize(static_cast<std::size_t>(n));
    double b0 = 0, b1 = 0, b2 = 0, b3 = 0, b4 = 0, b5 = 0, b6 = 0;
    for (int i = 0; i < n; ++i) {
        const double white = rng.normal();
        b0 = 0.99886 * b0 + white * 0.0555179;
        b1 = 0.99332 * b1 + white * 0.0750759;
        b2 = 0.96900 * b2 + white * 0.1538520;
        b3 = 0.86650 * b3 + white * 0.3104856;
        b4 = 0.55000 * b4 + white * 0.5329522;
        b5 = -0.7616 * b5 - white * 0.0168980;
        w.samples[static_cast<std::size_t>(i)] =
            0.11 * (b0 + b1 + b2 + b3 + b4 + b5 + b6 + white * 0.5362);
        b6 = white * 0.115926;
    }
    dsp::normalize_peak(w, 0.9);
    return w;
}

// Several overlapping voiced surrogates, peak normalized.
inline dsp::Waveform babble_noise(Rng& rng, int n, int sample_rate, int n_talkers = 6) {
    require(n >= 1, "babble_noise: length must be >= 1");
    require(n_talkers >= 2, "babble_noise: need at least 2 talkers");
    dsp::Waveform w;
    w.sample_rate = sample_rate;
    w.samples.assign(static_cast<std::size_t>(n), 0.0);
    const Rng base(rng.next_u64());
    for (int t = 0; t < n_talkers; ++t) {
        Rng talker = base.fork("babble." + str(t));
        const std::vector<double> v = detail::synth_voice(talker, n, sample_rate);
        for (int i = 0; i < n; ++i) w.samples[static_cast<std::size_t>(i)] += v[static_cast<std::size_t>(i)];
    }
    dsp::normalize_peak(w, 0.9);
    return w;
}

inline dsp::Waveform white_noise(Rng& rng, int n, int sample_rate) {
    require(n >= 1, "white_noise: length must be >= 1");
    dsp::Waveform w;
    w.sample_rate = sample_rate;
    w.samples.resize(static_cast<std::size_t>(n));
    for (double& s : w.samples) s = 0.3 * rng.normal();
    return w;
}

struct NoiseSource {
    std::string id;
    dsp::Waveform wave;
};

// Every mono WAV in a directory, sorted by filename for stable ordering.
inline std::vector<NoiseSource> load_noise_dir(const std::string& dir) {
    namespace fs = std::filesystem;
    require(fs::is_directory(dir), "load_noise_dir: not a directory: " + dir);
    std::vector<fs::path> files;
    for (const auto& e : fs::directory_iterator(dir))
        if (e.is_regular_file() && e.path().extension() == ".wav") files.push_back(e.path());
    std::sort(files.begin(), files.end());
    std::vector<NoiseSource> out;
    out.reserve(files.size());
    for (const auto& p : files)
        out.push_back({p.stem().string(), wav::read_wav(p.string())});
    return out;
}

// ---------------------------------------------------------------------------
// Test subsets: per-center SNR draws plus a manifest for exact reruns

struct SubsetEntry {
    std::string utterance_id;
    std::string noise_id;
    std::int64_t noise_offset = 0;
    double snr_db = 0.0;
};

struct TestSubset {
    double center_db = 0.0;
    std::vector<SubsetEntry> entries;
    std::vector<MixtureSample> samples;
};

inline const std::vector<double>& default_subset_centers() {
    static const std::vector<double> centers = {-10.0, -5.0, 0.0, 5.0, 15.0};
    return centers;
}

namespace detail {

inline const NoiseSource& noise_by_id(const std::vector<NoiseSource>& noises,
                                      const std::string& id) {
    for (const auto& n : noises)
        if (n.id == id) return n;
    fail("unknown noise source '" + id + "'");
}

inline MixtureSample realize_entry(const UtterancePair& pair, const NoiseSource& noise,
                                   const SubsetEntry& e) {
    MixtureSample s;
    s.pair = pair;
    s.noise_id = e.noise_id;
    s.target_snr_db = e.snr_db;
    s.noise_offset = e.noise_offset;
    s.mixture = mix_at_snr_offset(pair.air, noise.wave, e.snr_db, e.noise_offset).mixture;
    return s;
}

}  // namespace detail

// One subset per center; every pair appears once per subset with an SNR
// drawn from N(center, sigma^2) and a random noise source and crop.
inline std::vector<TestSubset> make_test_subsets(
    const std::vector<UtterancePair>& pairs, const std::vector<NoiseSource>& noises,
    Rng& rng, const std::vector<double>& centers = default_subset_centers(),
    double sigma = 1.0) {
    require(!pairs.empty(), "make_test_subsets: no utterance pairs");
    require(!noises.empty(), "make_test_subsets: no noise sources");
    require(sigma >= 0.0, "make_test_subsets: sigma must be nonnegative");
    require(!centers.empty(), "make_test_subsets: no centers");

    std::vector<TestSubset> subsets;
    subsets.reserve(centers.size());
    for (double center : centers) {
        TestSubset subset;
        subset.center_db = center;
        for (const auto& pair : pairs) {
            SubsetEntry e;
            e.utterance_id = pair.utterance_id;
            e.snr_db = center + sigma * rng.normal();
            const auto& noise =
                noises[static_cast<std::size_t>(rng.uniform_int(
                    static_cast<std::int64_t>(noises.size())))];
            e.noise_id = noise.id;
            const std::int64_t slack = static_cast<std::int64_t>(noise.wave.samples.size()) -
                                       static_cast<std::int64_t>(pair.air.samples.size());
            require(slack >= 0, "make_test_subsets: noise '" + noise.id +
                                    "' shorter than utterance " + pair.utterance_id);
            e.noise_offset = slack == 0 ? 0 : rng.uniform_int(slack + 1);
            subset.samples.push_back(detail::realize_entry(pair, noise, e));
            subset.entries.push_back(std::move(e));
        }
        subsets.push_back(std::move(subset));
    }
    return subsets;
}

inline void write_subset_manifest(const std::string& path,
                                  const std::vector<TestSubset>& subsets, double sigma) {
    nlohmann::json j;
    j["kind"] = "test-subset-manifest";
    j["version"] = 1;
    j["sigma"] = sigma;
    nlohmann::json arr = nlohmann::json::array();
    for (const auto& s : subsets) {
        nlohmann::json js;
        js["center_db"] = s.center_db;
        nlohmann::json entries = nlohmann::json::array();
        for (const auto& e : s.entries)
            entries.push_back({{"utterance_id", e.utterance_id},
                               {"noise_id", e.noise_id},
                               {"noise_offset", e.noise_offset},
                               {"snr_db", e.snr_db}});
        js["entries"] = std::move(entries);
        arr.push_back(std::move(js));
    }
    j["subsets"] = std::move(arr);
    std::ofstream f(path, std::ios::trunc);
    require(f.good(), "write_subset_manifest: cannot open " + path);
    f << j.dump(2) << "\n";
    require(f.good(), "write_subset_manifest: write failed for " + path);
}

// Rebuilds the exact subsets a manifest describes; no randomness involved.
inline std::vector<TestSubset> replay_test_subsets(const std::vector<UtterancePair>& pairs,
                                                   const std::vector<NoiseSource>& noises,
                                                   const std::string& manifest_path) {
    std::ifstream f(manifest_path);
    require(f.good(), "replay_test_subsets: cannot open " + manifest_path);
    nlohmann::json j;
    try {
        f >> j;
    } catch (const nlohmann::json::exception& e) {
        fail("replay_test_subsets: bad manifest " + manifest_path + ": " + e.what());
    }
    require(j.value("kind", "") == "test-subset-manifest",
            "replay_test_subsets: " + manifest_path + " is not a subset manifest");

    const auto pair_by_id = [&](const std::string& id) -> const UtterancePair& {
        for (const auto& p : pairs)
            if (p.utterance_id == id) return p;
        fail("replay_test_subsets: unknown utterance '" + id + "'");
    };

    std::vector<TestSubset> subsets;
    for (const auto& js : j.at("subsets")) {
        TestSubset subset;
        subset.center_db = js.at("center_db").get<double>();
        for (const auto& je : js.at("entries")) {
            SubsetEntry e;
            e.utterance_id = je.at("utterance_id").get<std::string>();
            e.noise_id = je.at("noise_id").get<std::string>();
            e.noise_offset = je.at("noise_offset").get<std::int64_t>();
            e.snr_db = je.at("snr_db").get<double>();
            subset.samples.push_back(detail::realize_entry(
                pair_by_id(e.utterance_id), detail::noise_by_id(noises, e.noise_id), e));
            subset.entries.push_back(std::move(e));
        }
        subsets.push_back(std::move(subset));
    }
    return subsets;
}

// ---------------------------------------------------------------------------
// Paired corpus on disk
//
// Layout: <root>/speakers/<speaker>/<utt>_air.wav + <utt>_bone.wav, with
// optional <root>/splits/{train,val,test}.txt listing speaker ids one per
// line. Without a splits directory every speaker belongs to every split.

enum class Split { TRAIN, VAL, TEST };

inline const char* split_name(Split s) {
    switch (s) {
        case Split::TRAIN: return "train";
        case Split::VAL: return "val";
        default: return "test";
    }
}

inline Split parse_split(const std::string& s) {
    if (s == "train") return Split::TRAIN;
    if (s == "val") return Split::VAL;
    if (s == "test") return Split::TEST;
    fail("unknown split '" + s + "' (expected train|val|test)");
}

struct CorpusLoadResult {
    std::vector<UtterancePair> pairs;
    std::vector<std::string> warnings;
};

inline CorpusLoadResult load_paired_corpus(const std::string& root, Split split) {
    namespace fs = std::filesystem;
    CorpusLoadResult out;
    const fs::path speakers_dir = fs::path(root) / "speakers";
    if (!fs::is_directory(speakers_dir)) return out;

    std::vector<std::string> speaker_ids;
    const fs::path split_file = fs::path(root) / "splits" / (std::string(split_name(split)) + ".txt");
    if (fs::is_directory(fs::path(root) / "splits")) {
        require(fs::is_regular_file(split_file),
                "load_paired_corpus: missing split manifest " + split_file.string());
        std::ifstream f(split_file);
        std::string line;
        while (std::getline(f, line)) {
            while (!line.empty() && (line.back() == '\r' || line.back() == ' ')) line.pop_back();
            if (!line.empty()) speaker_ids.push_back(line);
        }
        std::sort(speaker_ids.begin(), speaker_ids.end());
    } else {
        for (const auto& e : fs::directory_iterator(speakers_dir))
            if (e.is_directory()) speaker_ids.push_back(e.path().filename().string());
        std::sort(speaker_ids.begin(), speaker_ids.end());
    }

    for (const std::string& speaker : speaker_ids) {
        const fs::path dir = speakers_dir / speaker;
        if (!fs::is_directory(dir)) {
            out.warnings.push_back("speaker '" + speaker + "' listed but missing on disk");
            continue;
        }
        std::vector<std::string> air_ids, bone_ids;
        for (const auto& e : fs::directory_iterator(dir)) {
            if (!e.is_regular_file() || e.path().extension() != ".wav") continue;
            const std::string stem = e.path().stem().string();
            if (stem.size() > 4 && stem.ends_with("_air"))
                air_ids.push_back(stem.substr(0, stem.size() - 4));
            else if (stem.size() > 5 && stem.ends_with("_bone"))
                bone_ids.push_back(stem.substr(0, stem.size() - 5));
        }
        std::sort(air_ids.begin(), air_ids.end());
        std::sort(bone_ids.begin(), bone_ids.end());

        for (const std::string& id : air_ids) {
            if (!std::binary_search(bone_ids.begin(), bone_ids.end(), id)) {
                out.warnings.push_back("orphan air file " + speaker + "/" + id +
                                       "_air.wav has no bone mate, skipped");
                continue;
            }
            UtterancePair pair;
            pair.speaker_id = speaker;
            pair.utterance_id = speaker + "/" + id;
            pair.air = wav::read_wav((dir / (id + "_air.wav")).string());
            pair.bone = wav::read_wav((dir / (id + "_bone.wav")).string());
            if (pair.air.samples.size() != pair.bone.samples.size() ||
                pair.air.sample_rate != pair.bone.sample_rate) {
                out.warnings.push_back("pair " + pair.utterance_id +
                                       " air/bone length or rate mismatch, rejected");
                continue;
            }
            out.pairs.push_back(std::move(pair));
        }
        for (const std::string& id : bone_ids)
            if (!std::binary_search(air_ids.begin(), air_ids.end(), id))
                out.warnings.push_back("orphan bone file " + speaker + "/" + id +
                                       "_bone.wav has no air mate, skipped");
    }
    return out;
}

}  // namespace bcdiff::datagen

#endif  // BCDIFF_DATAGEN_HPP
