#ifndef BCDIFF_PIPELINE_HPP
#define BCDIFF_PIPELINE_HPP

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "bcdiff/checkpoint.hpp"
#include "bcdiff/datagen.hpp"
#include "bcdiff/dsp.hpp"
#include "bcdiff/sampler.hpp"
#include "bcdiff/trainer.hpp"
#include "bcdiff/wav.hpp"

namespace bcdiff::pipeline {

// ---------------------------------------------------------------------------
// Level alignment
//
// The mixture is scaled to a fixed peak and the same factor is applied to the
// conditioner (and, during training, the clean target), so relative levels
// between the three signals survive and the network always sees one input
// scale. Enhancement divides the factor back out of the estimate.

inline constexpr double kNormPeak = 0.95;

inline double align_levels(dsp::Waveform& mixture, dsp::Waveform* bone,
                           dsp::Waveform* clean = nullptr, double peak = kNormPeak) {
    const double factor = dsp::normalize_peak(mixture, peak);
    if (bone != nullptr)
        for (double& s : bone->samples) s *= factor;
    if (clean != nullptr)
        for (double& s : clean->samples) s *= factor;
    return factor;
}

// ---------------------------------------------------------------------------
// Training stream: random pair + noise + SNR -> aligned spectrogram crops

struct StreamConfig {
    dsp::StftConfig stft;
    int crop_frames = 256;  // must match the model's input width
    double snr_lo_db = -5.0;
    double snr_hi_db = 20.0;

    void validate() const {
        stft.validate();
        require(crop_frames >= 1, "StreamConfig: crop_frames must be >= 1");
        require(snr_lo_db <= snr_hi_db, "StreamConfig: snr_lo_db > snr_hi_db");
    }
};

// Same crop window across target, mixture and conditioner.
inline TrainSample crop_triple(const TrainSample& full, int target, Rng& rng) {
    require(full.x0.cols() == full.y.cols() && full.x0.cols() == full.yc.cols(),
            "crop_triple: frame count mismatch");
    const int t_orig = static_cast<int>(full.x0.cols());
    TrainSample out;
    if (t_orig <= target) {
        out.x0 = ComplexSpectrogram::Zero(full.x0.rows(), target);
        out.y = ComplexSpectrogram::Zero(full.y.rows(), target);
        out.yc = ComplexSpectrogram::Zero(full.yc.rows(), target);
        out.x0.leftCols(t_orig) = full.x0;
        out.y.leftCols(t_orig) = full.y;
        out.yc.leftCols(t_orig) = full.yc;
        return out;
    }
    const int off = static_cast<int>(rng.uniform_int(t_orig - target + 1));
    out.x0 = full.x0.middleCols(off, target);
    out.y = full.y.middleCols(off, target);
    out.yc = full.yc.middleCols(off, target);
    return out;
}

class TrainStream {
public:
    TrainStream(std::vector<datagen::UtterancePair> pairs,
                std::vector<datagen::NoiseSource> noises, const StreamConfig& cfg,
                std::uint64_t seed)
        : pairs_(std::move(pairs)), noises_(std::move(noises)), cfg_(cfg),
          rng_(derive_seed(seed, "train-stream")) {
        cfg_.validate();
        require(!pairs_.empty(), "TrainStream: no utterance pairs");
        require(!noises_.empty(), "TrainStream: no noise sources");
    }

    TrainSample next() {
        const auto& pair =
            pairs_[static_cast<std::size_t>(rng_.uniform_int(
                static_cast<std::int64_t>(pairs_.size())))];
        const auto& noise =
            noises_[static_cast<std::size_t>(rng_.uniform_int(
                static_cast<std::int64_t>(noises_.size())))];
        const double snr = rng_.uniform(cfg_.snr_lo_db, cfg_.snr_hi_db);

        dsp::Waveform mixture = datagen::mix_at_snr(pair.air, noise.wave, snr, rng_).mixture;
        dsp::Waveform clean = pair.air;
        dsp::Waveform bone = pair.bone;
        align_levels(mixture, &bone, &clean);

        TrainSample full;
        full.x0 = dsp::stft(clean, cfg_.stft);
        full.y = dsp::stft(mixture, cfg_.stft);
        full.yc = dsp::stft(bone, cfg_.stft);
        return crop_triple(full, cfg_.crop_frames, rng_);
    }

    std::vector<TrainSample> next_batch(int n) {
        std::vector<TrainSample> batch;
        batch.reserve(static_cast<std::size_t>(n));
        for (int i = 0; i < n; ++i) batch.push_back(next());
        return batch;
    }

private:
    std::vector<datagen::UtterancePair> pairs_;
    std::vector<datagen::NoiseSource> noises_;
    StreamConfig cfg_;
    Rng rng_;
};

// ---------------------------------------------------------------------------
// Enhancement: chunked sampling over a full utterance

struct EnhanceStats {
    long score_calls = 0;
    long corrector_skips = 0;
    int chunks = 0;
};

template <typename T>
dsp::Waveform enhance_waveform(ScoreModel<T>& model, const dsp::Waveform& noisy,
                               const dsp::Waveform& bone, const dsp::StftConfig& stft_cfg,
                               const sampler::SamplerConfig& sampler_cfg,
                               EnhanceStats* stats = nullptr, int overlap_frames = 8) {
    require(noisy.samples.size() == bone.samples.size(),
            "enhance_waveform: noisy/bone length mismatch");
    require(noisy.sample_rate == bone.sample_rate,
            "enhance_waveform: noisy/bone sample rate mismatch");
    require(stft_cfg.freq_bins() == model.config().input_height,
            "enhance_waveform: stft bins (" + str(stft_cfg.freq_bins()) +
                ") do not match model input height (" + str(model.config().input_height) + ")");

    dsp::Waveform mixture = noisy;
    dsp::Waveform cond = bone;
    const double factor = align_levels(mixture, &cond);

    const ComplexSpectrogram y = dsp::stft(mixture, stft_cfg);
    const ComplexSpectrogram yc = dsp::stft(cond, stft_cfg);

    const int target = model.config().input_width;
    const dsp::ChunkPlan plan =
        dsp::plan_chunks(static_cast<int>(y.cols()), target, overlap_frames);
    const auto y_chunks = dsp::cut_chunks(y, plan);
    const auto yc_chunks = dsp::cut_chunks(yc, plan);

    const ScoreFn score_fn = [&model](const ComplexSpectrogram& xt, const ComplexSpectrogram& my,
                                      const ComplexSpectrogram& myc, double t) {
        return model.score(xt, my, myc, t);
    };

    std::vector<ComplexSpectrogram> out_chunks(y_chunks.size());
    for (std::size_t i = 0; i < y_chunks.size(); ++i) {
        sampler::SamplerConfig scfg = sampler_cfg;
        scfg.seed = derive_seed(sampler_cfg.seed, "chunk:" + str(i));
        const sampler::SampleResult res =
            scfg.mode == sampler::Mode::PC
                ? sampler::pc_sample(score_fn, y_chunks[i].frames, yc_chunks[i].frames, scfg,
                                     model.sde_params())
                : sampler::ode_sample(score_fn, y_chunks[i].frames, yc_chunks[i].frames, scfg,
                                      model.sde_params());
        out_chunks[i] = res.x0_hat;
        if (stats != nullptr) {
            stats->score_calls += res.score_calls;
            stats->corrector_skips += res.corrector_skips;
            ++stats->chunks;
        }
    }

    const ComplexSpectrogram merged = dsp::merge_chunks(out_chunks, plan);
    dsp::Waveform out = dsp::istft(merged, stft_cfg, noisy.samples.size(), noisy.sample_rate);
    for (double& s : out.samples) s /= factor;
    return out;
}

// ---------------------------------------------------------------------------
// Synthetic corpus generation on disk

struct SynthDataConfig {
    int sample_rate = 16000;
    int n_speakers = 6;
    int utts_per_speaker = 4;
    double dur_lo_s = 1.0;
    double dur_hi_s = 3.0;
    double noise_duration_s = 6.0;
    int train_speakers = 4;
    int val_speakers = 1;  // the rest go to test
    datagen::SynthConfig voice;
    std::uint64_t seed = 0;

    void validate() const {
        require(sample_rate >= 2000, "SynthDataConfig: sample rate too low");
        require(n_speakers >= 1, "SynthDataConfig: need at least one speaker");
        require(utts_per_speaker >= 1, "SynthDataConfig: need at least one utterance");
        require(dur_lo_s >= 1.0 && dur_hi_s <= 5.0 && dur_lo_s <= dur_hi_s,
                "SynthDataConfig: durations must lie in [1, 5] s");
        require(noise_duration_s > dur_hi_s,
                "SynthDataConfig: noises must outlast the longest utterance");
        require(train_speakers + val_speakers <= n_speakers,
                "SynthDataConfig: split sizes exceed speaker count");
    }
};

struct SynthDataSummary {
    int n_pairs = 0;
    int n_noises = 0;
    std::vector<std::string> speakers;
};

inline std::string speaker_tag(int i) {
    char buf[16];
    std::snprintf(buf, sizeof buf, "spk%03d", i);
    return buf;
}

inline std::string utt_tag(int i) {
    char buf[16];
    std::snprintf(buf, sizeof buf, "utt%03d", i);
    return buf;
}

// Every utterance derives its own seed from (master seed, utterance id), so
// the corpus content does not depend on generation order.
inline SynthDataSummary synth_data(const std::string& out_dir, const SynthDataConfig& cfg) {
    namespace fs = std::filesystem;
    cfg.validate();
    SynthDataSummary sum;

    fs::create_directories(fs::path(out_dir) / "speakers");
    fs::create_directories(fs::path(out_dir) / "splits");
    fs::create_directories(fs::path(out_dir) / "noise");

    std::ofstream train_f(fs::path(out_dir) / "splits" / "train.txt");
    std::ofstream val_f(fs::path(out_dir) / "splits" / "val.txt");
    std::ofstream test_f(fs::path(out_dir) / "splits" / "test.txt");

    for (int s = 0; s < cfg.n_speakers; ++s) {
        const std::string speaker = speaker_tag(s);
        sum.speakers.push_back(speaker);
        (s < cfg.train_speakers          ? train_f
         : s < cfg.train_speakers + cfg.val_speakers ? val_f
                                                     : test_f)
            << speaker << "\n";
        const fs::path dir = fs::path(out_dir) / "speakers" / speaker;
        fs::create_directories(dir);
        for (int u = 0; u < cfg.utts_per_speaker; ++u) {
            const std::string utt_id = speaker + "/" + utt_tag(u);
            Rng rng(derive_seed(cfg.seed, utt_id));
            const double dur = rng.uniform(cfg.dur_lo_s, cfg.dur_hi_s);
            const datagen::UtterancePair pair =
                datagen::synth_pair(rng, dur, cfg.sample_rate, cfg.voice);
            wav::write_wav((dir / (utt_tag(u) + "_air.wav")).string(), pair.air,
                           wav::SampleFormat::FLOAT32);
            wav::write_wav((dir / (utt_tag(u) + "_bone.wav")).string(), pair.bone,
                           wav::SampleFormat::FLOAT32);
            ++sum.n_pairs;
        }
    }

    const int n_len = static_cast<int>(std::lround(cfg.noise_duration_s * cfg.sample_rate));
    {
        Rng rng(derive_seed(cfg.seed, "noise/pink"));
        wav::write_wav((fs::path(out_dir) / "noise" / "pink.wav").string(),
                       datagen::pink_noise(rng, n_len, cfg.sample_rate),
                       wav::SampleFormat::FLOAT32);
        ++sum.n_noises;
    }
    {
        Rng rng(derive_seed(cfg.seed, "noise/babble"));
        wav::write_wav((fs::path(out_dir) / "noise" / "babble.wav").string(),
                       datagen::babble_noise(rng, n_len, cfg.sample_rate),
                       wav::SampleFormat::FLOAT32);
        ++sum.n_noises;
    }

    nlohmann::json manifest;
    manifest["kind"] = "synth-data-manifest";
    manifest["version"] = 1;
    manifest["seed"] = cfg.seed;
    manifest["sample_rate"] = cfg.sample_rate;
    manifest["n_speakers"] = cfg.n_speakers;
    manifest["utts_per_speaker"] = cfg.utts_per_speaker;
    manifest["n_noises"] = sum.n_noises;
    std::ofstream mf(fs::path(out_dir) / "manifest.json", std::ios::trunc);
    mf << manifest.dump(2) << "\n";
    require(mf.good(), "synth_data: cannot write manifest");
    return sum;
}

// ---------------------------------------------------------------------------
// Training driver

struct TrainRunConfig {
    ScoreModelConfig model;
    sde::SdeParams process;
    dsp::StftConfig stft;
    TrainConfig trainer;
    int sample_rate = 16000;
    double snr_lo_db = -5.0;
    double snr_hi_db = 20.0;
    int val_every = 100;
    std::string out_dir;

    void validate() const {
        model.validate();
        process.validate();
        stft.validate();
        trainer.validate();
        require(stft.freq_bins() == model.input_height,
                "TrainRunConfig: stft bins != model input height");
        require(val_every >= 1, "TrainRunConfig: val_every must be >= 1");
        require(!out_dir.empty(), "TrainRunConfig: out_dir required");
    }
};

struct TrainRunResult {
    std::string best_checkpoint;
    std::vector<int> val_steps;
    std::vector<double> val_losses;
    double final_train_loss = 0.0;
    int skipped_steps = 0;
};

namespace detail {

// Fixed validation set: deterministic crops cycled over the val pairs.
inline std::vector<TrainSample> build_val_set(const std::vector<datagen::UtterancePair>& pairs,
                                              const std::vector<datagen::NoiseSource>& noises,
                                              const StreamConfig& scfg, int n,
                                              std::uint64_t seed) {
    TrainStream stream(pairs, noises, scfg, derive_seed(seed, "val-stream"));
    return stream.next_batch(n);
}

inline void copy_file_bytes(const std::string& from, const std::string& to) {
    std::ifstream in(from, std::ios::binary);
    require(in.good(), "copy_file_bytes: cannot open " + from);
    std::ofstream out(to, std::ios::binary | std::ios::trunc);
    require(out.good(), "copy_file_bytes: cannot open " + to);
    out << in.rdbuf();
    require(out.good(), "copy_file_bytes: write failed for " + to);
}

}  // namespace detail

// Trains a score model on a paired corpus, validating and checkpointing every
// val_every steps. The returned best checkpoint is the round with the lowest
// validation loss (later round wins ties).
template <typename T = float>
TrainRunResult train_model(const std::vector<datagen::UtterancePair>& train_pairs,
                           const std::vector<datagen::UtterancePair>& val_pairs,
                           const std::vector<datagen::NoiseSource>& noises,
                           const TrainRunConfig& cfg,
                           std::ostream* log = nullptr) {
    namespace fs = std::filesystem;
    cfg.validate();
    require(!val_pairs.empty(), "train_model: no validation pairs");
    fs::create_directories(cfg.out_dir);

    StreamConfig scfg;
    scfg.stft = cfg.stft;
    scfg.crop_frames = cfg.model.input_width;
    scfg.snr_lo_db = cfg.snr_lo_db;
    scfg.snr_hi_db = cfg.snr_hi_db;

    ScoreModel<T> model(cfg.model, cfg.process, derive_seed(cfg.trainer.seed, "model-init"));
    Trainer<T> trainer(model, cfg.trainer);
    TrainStream stream(train_pairs, noises, scfg, cfg.trainer.seed);
    const std::vector<TrainSample> val_set = detail::build_val_set(
        val_pairs, noises, scfg, cfg.trainer.val_utterances, cfg.trainer.seed);

    ckpt::CheckpointMeta meta;
    meta.model = cfg.model;
    meta.process = cfg.process;
    meta.stft = cfg.stft;
    meta.sample_rate = cfg.sample_rate;

    std::ofstream log_csv(fs::path(cfg.out_dir) / "train_log.csv", std::ios::trunc);
    log_csv << "step,train_loss,val_loss\n";

    TrainRunResult result;
    std::vector<std::string> round_paths;
    double window_loss = 0.0;
    int window_n = 0;

    // The same validation seed every round makes losses comparable across
    // rounds: identical t draws and perturbations, only the weights change.
    const std::uint64_t val_seed = derive_seed(cfg.trainer.seed, "val-draws");
    ScoreModel<T> ema_model(cfg.model, cfg.process, 0);

    for (int step = 1; step <= cfg.trainer.max_steps; ++step) {
        const double loss = trainer.train_step(stream.next_batch(cfg.trainer.batch_size));
        window_loss += loss;
        ++window_n;
        result.final_train_loss = loss;

        if (step % cfg.val_every == 0 || step == cfg.trainer.max_steps) {
            trainer.apply_ema(ema_model);
            Rng val_rng(val_seed);
            const ScoreFn fn = [&ema_model](const ComplexSpectrogram& xt,
                                            const ComplexSpectrogram& y,
                                            const ComplexSpectrogram& yc, double t) {
                return ema_model.score(xt, y, yc, t);
            };
            const double val_loss =
                dsm_loss(fn, val_set, cfg.process, cfg.trainer.loss_weighting, val_rng);

            char name[48];
            std::snprintf(name, sizeof name, "ckpt_step%06d.ckpt", step);
            const std::string path = (fs::path(cfg.out_dir) / name).string();
            meta.step = step;
            ckpt::save_checkpoint<T>(path, model, meta, &trainer.ema());

            result.val_steps.push_back(step);
            result.val_losses.push_back(val_loss);
            round_paths.push_back(path);

            const double train_avg = window_loss / std::max(1, window_n);
            log_csv << step << "," << train_avg << "," << val_loss << "\n";
            if (log != nullptr)
                *log << "step " << step << "  train " << train_avg << "  val " << val_loss
                     << "\n";
            window_loss = 0.0;
            window_n = 0;
        }
    }

    std::vector<double> scores;
    scores.reserve(result.val_losses.size());
    for (double v : result.val_losses) scores.push_back(-v);
    const std::size_t best = select_checkpoint(scores);
    result.best_checkpoint = (fs::path(cfg.out_dir) / "best.ckpt").string();
    detail::copy_file_bytes(round_paths[best], result.best_checkpoint);
    result.skipped_steps = trainer.skipped_steps();
    return result;
}

// ---------------------------------------------------------------------------
// Forward-SDE verification: Euler-Maruyama cloud vs the analytic kernel

struct SdeVerifyConfig {
    sde::SdeParams process;
    int n_paths = 2000;
    int em_steps = 500;
    int rows = 4;
    int cols = 4;
    std::vector<double> checkpoints = {0.25, 0.5, 0.75, 1.0};
    std::uint64_t seed = 1;
    double mean_se_mult = 3.0;   // tolerance on the empirical mean, in standard errors
    double std_rel_tol = 0.02;   // relative tolerance on the empirical std

    void validate() const {
        process.validate();
        require(n_paths >= 100, "SdeVerifyConfig: n_paths must be >= 100");
        require(em_steps >= 10, "SdeVerifyConfig: em_steps must be >= 10");
        require(rows >= 1 && cols >= 1, "SdeVerifyConfig: state must be nonempty");
        require(!checkpoints.empty(), "SdeVerifyConfig: no checkpoints");
        for (double t : checkpoints)
            require(t > 0.0 && t <= 1.0, "SdeVerifyConfig: checkpoints must lie in (0, 1]");
    }
};

struct SdeVerifyRow {
    double t = 0.0;
    double mean_abs_err = 0.0;
    double mean_tol = 0.0;
    double emp_std = 0.0;
    double analytic_std = 0.0;
    double std_rel_err = 0.0;
    bool pass = false;
};

// Simulates the forward SDE with Euler-Maruyama from a fixed (x0, y) and
// compares the path cloud's mean and spread against the closed-form kernel
// at each checkpoint time.
inline std::vector<SdeVerifyRow> verify_sde(const SdeVerifyConfig& cfg) {
    cfg.validate();
    Rng master(cfg.seed);
    Rng init = master.fork("init");
    ComplexSpectrogram x0(cfg.rows, cfg.cols), y(cfg.rows, cfg.cols);
    for (int r = 0; r < cfg.rows; ++r)
        for (int c = 0; c < cfg.cols; ++c) {
            x0(r, c) = init.complex_normal();
            y(r, c) = x0(r, c) + 0.5 * init.complex_normal();
        }

    // Checkpoint times snapped onto the EM grid.
    std::vector<int> check_steps;
    for (double t : cfg.checkpoints) {
        int k = static_cast<int>(std::lround(t * cfg.em_steps));
        k = std::max(1, std::min(cfg.em_steps, k));
        check_steps.push_back(k);
    }

    const double dt = 1.0 / cfg.em_steps;
    const std::size_t entries = static_cast<std::size_t>(cfg.rows) * cfg.cols;
    const std::size_t n_checks = cfg.checkpoints.size();

    // Per-entry running sums at each checkpoint: complex sum and |.|^2 sum.
    std::vector<std::vector<std::complex<double>>> s1(
        n_checks, std::vector<std::complex<double>>(entries, 0.0));
    std::vector<std::vector<double>> s2(n_checks, std::vector<double>(entries, 0.0));

    for (int p = 0; p < cfg.n_paths; ++p) {
        Rng rng = master.fork("path:" + str(p));
        ComplexSpectrogram x = x0;
        for (int k = 1; k <= cfg.em_steps; ++k) {
            const double t_here = (k - 1) * dt;
            const double g = sde::diffusion_coeff(t_here, cfg.process);
            const double gs = g * std::sqrt(dt);
            for (int r = 0; r < cfg.rows; ++r)
                for (int c = 0; c < cfg.cols; ++c)
                    x(r, c) += cfg.process.gamma * (y(r, c) - x(r, c)) * dt +
                               gs * rng.complex_normal();
            for (std::size_t ci = 0; ci < n_checks; ++ci) {
                if (check_steps[ci] != k) continue;
                std::size_t e = 0;
                for (int r = 0; r < cfg.rows; ++r)
                    for (int c = 0; c < cfg.cols; ++c, ++e) {
                        s1[ci][e] += x(r, c);
                        s2[ci][e] += std::norm(x(r, c));
                    }
            }
        }
    }

    std::vector<SdeVerifyRow> out;
    for (std::size_t ci = 0; ci < n_checks; ++ci) {
        SdeVerifyRow row;
        row.t = static_cast<double>(check_steps[ci]) * dt;
        const ComplexSpectrogram mu = sde::perturbation_mean(x0, y, row.t, cfg.process);
        row.analytic_std = sde::perturbation_std(row.t, cfg.process);

        double err_acc = 0.0, var_acc = 0.0;
        std::size_t e = 0;
        for (int r = 0; r < cfg.rows; ++r)
            for (int c = 0; c < cfg.cols; ++c, ++e) {
                const std::complex<double> m = s1[ci][e] / static_cast<double>(cfg.n_paths);
                err_acc += std::abs(m - mu(r, c));
                var_acc += s2[ci][e] / static_cast<double>(cfg.n_paths) - std::norm(m);
            }
        row.mean_abs_err = err_acc / static_cast<double>(entries);
        row.mean_tol = cfg.mean_se_mult * row.analytic_std / std::sqrt(cfg.n_paths);
        row.emp_std = std::sqrt(var_acc / static_cast<double>(entries));
        row.std_rel_err = std::abs(row.emp_std - row.analytic_std) / row.analytic_std;
        row.pass = row.mean_abs_err < row.mean_tol && row.std_rel_err < cfg.std_rel_tol;
        out.push_back(row);
    }
    return out;
}

inline void write_sde_verify_csv(const std::string& path,
                                 const std::vector<SdeVerifyRow>& rows) {
    std::ofstream f(path, std::ios::trunc);
    require(f.good(), "write_sde_verify_csv: cannot open " + path);
    f << "# bcdiff-sde-verify-csv v1\n";
    f << "t,mean_abs_err,mean_tol,emp_std,analytic_std,std_rel_err,pass\n";
    char buf[256];
    for (const auto& r : rows) {
        std::snprintf(buf, sizeof buf, "%.17g,%.17g,%.17g,%.17g,%.17g,%.17g,%d\n", r.t,
                      r.mean_abs_err, r.mean_tol, r.emp_std, r.analytic_std, r.std_rel_err,
                      r.pass ? 1 : 0);
        f << buf;
    }
    require(f.good(), "write_sde_verify_csv: write failed for " + path);
}

// FNV-1a over a file's bytes; used to stamp reports with the checkpoint they
// came from.
inline std::string file_hash_hex(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    require(f.good(), "file_hash_hex: cannot open " + path);
    std::uint64_t h = 1469598103934665603ull;
    char chunk[4096];
    while (f.read(chunk, sizeof chunk) || f.gcount() > 0) {
        for (std::streamsize i = 0; i < f.gcount(); ++i) {
            h ^= static_cast<unsigned char>(chunk[i]);
            h *= 1099511628211ull;
        }
        if (f.eof()) break;
    }
    char buf[24];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
    return buf;
}

}  // namespace bcdiff::pipeline

#endif  // BCDIFF_PIPELINE_HPP
