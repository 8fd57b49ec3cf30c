// Batch command line for the bone-conduction diffusion enhancer. Subcommands
// cover the whole pipeline: corpus synthesis, training, single-file
// enhancement, subset evaluation, forward-process verification, and the
// step-count sweep.
//
// Exit codes: 0 success, 1 runtime failure (diagnostic on stderr), 2 bad
// flags or usage.
#include <cstdint>
#include <filesystem>
#include <iostream>
#include <memory>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "bcdiff/checkpoint.hpp"
#include "bcdiff/datagen.hpp"
#include "bcdiff/eval.hpp"
#include "bcdiff/pipeline.hpp"
#include "bcdiff/wav.hpp"

namespace {

using namespace bcdiff;

std::vector<double> parse_double_list(const std::string& s) {
    std::vector<double> out;
    std::istringstream in(s);
    std::string tok;
    while (std::getline(in, tok, ',')) {
        if (tok.empty()) continue;
        out.push_back(std::stod(tok));
    }
    require(!out.empty(), "empty list: " + s);
    return out;
}

std::vector<int> parse_int_list(const std::string& s) {
    std::vector<int> out;
    for (double v : parse_double_list(s)) out.push_back(static_cast<int>(v));
    return out;
}

void print_warnings(const std::vector<std::string>& warnings) {
    for (const auto& w : warnings) std::cerr << "warning: " << w << "\n";
}

void print_aggregates(const eval::EvalReport& report) {
    std::printf("%-8s %-14s %10s %10s %6s\n", "subset", "metric", "mean", "std", "count");
    for (const auto& a : report.aggregates())
        std::printf("%-8s %-14s %10.3f %10.3f %6d\n", a.subset.c_str(), a.metric.c_str(),
                    a.mean, a.stddev, a.count);
    int failed = 0;
    for (const auto& r : report.rows) failed += r.failed ? 1 : 0;
    if (failed > 0) std::printf("failed rows: %d (excluded from aggregates)\n", failed);
}

// Sampling runs on the EMA shadow when the checkpoint carries one.
ScoreModel<float>& inference_net(ckpt::LoadedCheckpoint<float>& loaded) {
    return loaded.ema_model ? *loaded.ema_model : *loaded.model;
}

// --------------------------------------------------------------------------
// synth-data

struct SynthArgs {
    std::string out;
    pipeline::SynthDataConfig cfg;
};

int run_synth_data(const SynthArgs& a) {
    const pipeline::SynthDataSummary sum = pipeline::synth_data(a.out, a.cfg);
    std::printf("wrote %d utterance pairs over %d speakers and %d noises to %s\n",
                sum.n_pairs, static_cast<int>(sum.speakers.size()), sum.n_noises,
                a.out.c_str());
    return 0;
}

// --------------------------------------------------------------------------
// train

struct TrainArgs {
    std::string data;
    std::string out;
    std::string strategy = "ic";
    std::string size = "toy";
    int window = 0;  // 0 = pick by model size
    int hop = 0;
    int frames = 0;
    pipeline::TrainRunConfig cfg;
};

int run_train(const TrainArgs& a) {
    TrainArgs args = a;
    args.cfg.model = ScoreModelConfig::preset(parse_strategy(args.strategy),
                                              parse_size(args.size));
    const bool toy = args.cfg.model.size == ModelSize::TOY;
    args.cfg.stft.window_len = args.window > 0 ? args.window : (toy ? 126 : 510);
    args.cfg.stft.hop = args.hop > 0 ? args.hop : (toy ? 32 : 128);
    const int frames = args.frames > 0 ? args.frames : (toy ? 64 : 256);
    args.cfg.stft.n_frames_target = frames;
    args.cfg.model.input_height = args.cfg.stft.freq_bins();
    args.cfg.model.input_width = frames;
    args.cfg.out_dir = args.out;

    const auto train = datagen::load_paired_corpus(args.data, datagen::Split::TRAIN);
    const auto val = datagen::load_paired_corpus(args.data, datagen::Split::VAL);
    print_warnings(train.warnings);
    require(!train.pairs.empty(), "no training utterances under " + args.data);
    require(!val.pairs.empty(), "no validation utterances under " + args.data);
    const auto noises = datagen::load_noise_dir(args.data + "/noise");
    require(!noises.empty(), "no noise files under " + args.data + "/noise");
    args.cfg.sample_rate = train.pairs.front().air.sample_rate;

    const pipeline::TrainRunResult res = pipeline::train_model<float>(
        train.pairs, val.pairs, noises, args.cfg, &std::cout);
    std::printf("final train loss %.6f, best checkpoint %s\n", res.final_train_loss,
                res.best_checkpoint.c_str());
    if (res.skipped_steps > 0)
        std::printf("skipped %d steps on non-finite gradients\n", res.skipped_steps);
    return 0;
}

// --------------------------------------------------------------------------
// enhance

struct EnhanceArgs {
    std::string in;
    std::string bone;
    std::string ckpt;
    std::string out;
    sampler::SamplerConfig sampler;
    std::string mode = "pc";
    bool float32 = false;
};

int run_enhance(const EnhanceArgs& a) {
    auto loaded = ckpt::load_checkpoint<float>(a.ckpt);
    ScoreModel<float>& net = inference_net(loaded);

    const dsp::Waveform noisy = wav::read_wav(a.in);
    dsp::Waveform bone;
    if (!a.bone.empty()) {
        bone = wav::read_wav(a.bone);
    } else {
        require(loaded.meta.model.strategy == Strategy::MIX,
                "checkpoint strategy " +
                    std::string(strategy_name(loaded.meta.model.strategy)) +
                    " needs --bone (only mix runs from the mixture alone)");
        bone.sample_rate = noisy.sample_rate;
        bone.samples.assign(noisy.samples.size(), 0.0);
    }

    sampler::SamplerConfig scfg = a.sampler;
    scfg.mode = sampler::parse_mode(a.mode);
    pipeline::EnhanceStats stats;
    const dsp::Waveform est =
        pipeline::enhance_waveform(net, noisy, bone, loaded.meta.stft, scfg, &stats);
    wav::write_wav(a.out, est,
                   a.float32 ? wav::SampleFormat::FLOAT32 : wav::SampleFormat::PCM16);
    std::printf("wrote %s (%zu samples, %d chunks, %ld score calls)\n", a.out.c_str(),
                est.samples.size(), stats.chunks, stats.score_calls);
    return 0;
}

// --------------------------------------------------------------------------
// evaluate

struct EvaluateArgs {
    std::string ckpt;
    std::string data;
    std::string noise;
    std::string estimates;
    std::string references;
    std::string out;
    std::string centers_csv;
    double snr_sigma = 1.0;
    sampler::SamplerConfig sampler;
    std::string mode = "pc";
    std::uint64_t seed = 0;
    int window = 0;
    int hop = 0;
};

int run_evaluate_dirs(const EvaluateArgs& a) {
    dsp::StftConfig stft;
    if (a.window > 0) stft.window_len = a.window;
    if (a.hop > 0) stft.hop = a.hop;
    const eval::EvalReport report =
        eval::evaluate_directories(a.estimates, a.references, stft);
    eval::write_eval_csv(a.out, report);
    print_aggregates(report);
    std::printf("wrote %s\n", a.out.c_str());
    return report.has_failures() ? 1 : 0;
}

int run_evaluate(const EvaluateArgs& a) {
    if (!a.estimates.empty() || !a.references.empty()) {
        require(!a.estimates.empty() && !a.references.empty(),
                "--estimates and --references go together");
        return run_evaluate_dirs(a);
    }
    require(!a.ckpt.empty() && !a.data.empty(),
            "model mode needs --ckpt and --data (or use --estimates/--references)");

    auto loaded = ckpt::load_checkpoint<float>(a.ckpt);
    ScoreModel<float>& net = inference_net(loaded);

    const auto test = datagen::load_paired_corpus(a.data, datagen::Split::TEST);
    print_warnings(test.warnings);
    require(!test.pairs.empty(), "no test utterances under " + a.data);
    const std::string noise_dir = a.noise.empty() ? a.data + "/noise" : a.noise;
    const auto noises = datagen::load_noise_dir(noise_dir);
    require(!noises.empty(), "no noise files under " + noise_dir);

    const std::vector<double> centers = a.centers_csv.empty()
                                            ? datagen::default_subset_centers()
                                            : parse_double_list(a.centers_csv);
    Rng rng(derive_seed(a.seed, "subsets"));
    const auto subsets =
        datagen::make_test_subsets(test.pairs, noises, rng, centers, a.snr_sigma);

    std::filesystem::create_directories(a.out);
    datagen::write_subset_manifest(a.out + "/subsets.json", subsets, a.snr_sigma);

    sampler::SamplerConfig scfg = a.sampler;
    scfg.mode = sampler::parse_mode(a.mode);
    eval::EvalConfig ecfg;
    ecfg.seed = a.seed;
    ecfg.stft = loaded.meta.stft;
    ecfg.hooks = eval::external_hooks_from_env();
    ecfg.work_dir = a.out + "/hook_scratch";
    if (!ecfg.hooks.empty()) std::filesystem::create_directories(ecfg.work_dir);

    eval::EvalReport report = eval::evaluate_subsets(
        subsets, eval::make_model_enhancer(net, loaded.meta.stft, scfg), ecfg);
    report.checkpoint_hash = pipeline::file_hash_hex(a.ckpt);
    report.sampler_desc =
        std::string(sampler::mode_name(scfg.mode)) + "-n" + str(scfg.n_steps);
    eval::write_eval_csv(a.out + "/eval.csv", report);
    print_aggregates(report);
    std::printf("wrote %s/eval.csv and %s/subsets.json\n", a.out.c_str(), a.out.c_str());
    return report.has_failures() ? 1 : 0;
}

// --------------------------------------------------------------------------
// verify-sde

struct VerifySdeArgs {
    std::string out;
    pipeline::SdeVerifyConfig cfg;
    std::string checkpoints_csv;
};

int run_verify_sde(const VerifySdeArgs& a) {
    pipeline::SdeVerifyConfig cfg = a.cfg;
    if (!a.checkpoints_csv.empty()) cfg.checkpoints = parse_double_list(a.checkpoints_csv);
    const auto rows = pipeline::verify_sde(cfg);
    if (!a.out.empty()) pipeline::write_sde_verify_csv(a.out, rows);

    std::printf("%6s %14s %14s %12s %12s %12s %6s\n", "t", "mean_abs_err", "mean_tol",
                "emp_std", "analytic_std", "std_rel_err", "pass");
    bool all_pass = true;
    for (const auto& r : rows) {
        std::printf("%6.3f %14.6g %14.6g %12.6g %12.6g %12.6g %6s\n", r.t, r.mean_abs_err,
                    r.mean_tol, r.emp_std, r.analytic_std, r.std_rel_err,
                    r.pass ? "yes" : "NO");
        all_pass = all_pass && r.pass;
    }
    if (!a.out.empty()) std::printf("wrote %s\n", a.out.c_str());
    if (!all_pass) {
        std::cerr << "verify-sde: simulated moments left tolerance\n";
        return 1;
    }
    return 0;
}

// --------------------------------------------------------------------------
// sweep-steps

struct SweepArgs {
    std::string ckpt;
    std::string data;
    std::string noise;
    std::string out;
    std::string n_csv;
    double snr = -5.0;
    double snr_sigma = 1.0;
    sampler::SamplerConfig sampler;
    std::string mode = "pc";
    std::uint64_t seed = 0;
};

int run_sweep(const SweepArgs& a) {
    auto loaded = ckpt::load_checkpoint<float>(a.ckpt);
    ScoreModel<float>& net = inference_net(loaded);

    const auto test = datagen::load_paired_corpus(a.data, datagen::Split::TEST);
    print_warnings(test.warnings);
    require(!test.pairs.empty(), "no test utterances under " + a.data);
    const std::string noise_dir = a.noise.empty() ? a.data + "/noise" : a.noise;
    const auto noises = datagen::load_noise_dir(noise_dir);
    require(!noises.empty(), "no noise files under " + noise_dir);

    Rng rng(derive_seed(a.seed, "subsets"));
    const auto subsets =
        datagen::make_test_subsets(test.pairs, noises, rng, {a.snr}, a.snr_sigma);

    const std::vector<int> n_list =
        a.n_csv.empty() ? eval::default_sweep_steps() : parse_int_list(a.n_csv);
    sampler::SamplerConfig scfg = a.sampler;
    scfg.mode = sampler::parse_mode(a.mode);
    eval::EvalConfig ecfg;
    ecfg.seed = a.seed;
    ecfg.stft = loaded.meta.stft;

    const auto rows = eval::sweep_steps(
        subsets.front().samples,
        eval::make_model_enhancer_factory(net, loaded.meta.stft, scfg), n_list, ecfg);
    eval::write_sweep_csv(a.out + ".csv", rows);
    eval::write_sweep_svg(a.out + ".svg", rows);

    std::printf("%6s %12s %-14s %10s %10s %6s %6s\n", "n", "score_calls", "metric", "mean",
                "std", "count", "failed");
    for (const auto& r : rows)
        std::printf("%6d %12ld %-14s %10.3f %10.3f %6d %6d\n", r.n_steps, r.score_calls,
                    r.metric.c_str(), r.mean, r.stddev, r.count, r.failed);
    std::printf("wrote %s.csv and %s.svg\n", a.out.c_str(), a.out.c_str());
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Bone-conduction guided diffusion speech enhancement"};
    app.require_subcommand(1);

    SynthArgs synth;
    CLI::App* sc = app.add_subcommand("synth-data", "Generate a synthetic paired corpus");
    sc->add_option("--out", synth.out, "Output corpus directory")->required();
    sc->add_option("--sample-rate", synth.cfg.sample_rate, "Sample rate in Hz");
    sc->add_option("--speakers", synth.cfg.n_speakers, "Number of synthetic speakers");
    sc->add_option("--utts", synth.cfg.utts_per_speaker, "Utterances per speaker");
    sc->add_option("--dur-lo", synth.cfg.dur_lo_s, "Shortest utterance in seconds");
    sc->add_option("--dur-hi", synth.cfg.dur_hi_s, "Longest utterance in seconds");
    sc->add_option("--noise-duration", synth.cfg.noise_duration_s,
                   "Noise file length in seconds");
    sc->add_option("--train-speakers", synth.cfg.train_speakers, "Speakers in train split");
    sc->add_option("--val-speakers", synth.cfg.val_speakers,
                   "Speakers in val split (rest go to test)");
    sc->add_option("--bone-cutoff", synth.cfg.voice.bone_cutoff_hz,
                   "Bone channel lowpass cutoff in Hz");
    sc->add_option("--seed", synth.cfg.seed, "Master seed");

    TrainArgs train;
    CLI::App* tr = app.add_subcommand("train", "Train a score model on a paired corpus");
    tr->add_option("--data", train.data, "Corpus root (speakers/, splits/, noise/)")
        ->required();
    tr->add_option("--out", train.out, "Run directory for checkpoints and logs")->required();
    tr->add_option("--strategy", train.strategy, "Conditioning: ic, dc, or mix");
    tr->add_option("--size", train.size, "Model size: toy, s, or l");
    tr->add_option("--steps", train.cfg.trainer.max_steps, "Optimization steps");
    tr->add_option("--batch", train.cfg.trainer.batch_size, "Batch size");
    tr->add_option("--lr", train.cfg.trainer.learning_rate, "Adam learning rate");
    tr->add_option("--ema", train.cfg.trainer.ema_decay, "EMA decay for the weight shadow");
    tr->add_option("--grad-clip", train.cfg.trainer.grad_clip,
                   "Global gradient-norm clip (0 = off)");
    tr->add_option("--val-every", train.cfg.val_every, "Steps between validation rounds");
    tr->add_option("--val-utterances", train.cfg.trainer.val_utterances,
                   "Validation draws per round");
    tr->add_option("--window", train.window, "STFT window length in samples");
    tr->add_option("--hop", train.hop, "STFT hop in samples");
    tr->add_option("--frames", train.frames, "Spectrogram frames per training crop");
    tr->add_option("--snr-lo", train.cfg.snr_lo_db, "Lowest training mixture SNR in dB");
    tr->add_option("--snr-hi", train.cfg.snr_hi_db, "Highest training mixture SNR in dB");
    tr->add_option("--gamma", train.cfg.process.gamma, "Drift stiffness");
    tr->add_option("--sigma-min", train.cfg.process.sigma_min, "Noise scale at t=0");
    tr->add_option("--sigma-max", train.cfg.process.sigma_max, "Noise scale at t=1");
    tr->add_option("--seed", train.cfg.trainer.seed, "Master seed");

    EnhanceArgs enh;
    CLI::App* en = app.add_subcommand("enhance", "Enhance one noisy WAV file");
    en->add_option("--in", enh.in, "Noisy input WAV")->required();
    en->add_option("--bone", enh.bone, "Bone-conduction WAV (required unless mix strategy)");
    en->add_option("--ckpt", enh.ckpt, "Model checkpoint")->required();
    en->add_option("--out", enh.out, "Output WAV path")->required();
    en->add_option("--steps", enh.sampler.n_steps, "Reverse steps N");
    en->add_option("--mode", enh.mode, "Sampler: pc or ode");
    en->add_option("--corrector-steps", enh.sampler.corrector_steps,
                   "Langevin steps per predictor step");
    en->add_option("--corrector-snr", enh.sampler.corrector_snr, "Langevin step-size ratio");
    en->add_option("--seed", enh.sampler.seed, "Sampling seed");
    en->add_flag("--float32", enh.float32, "Write 32-bit float samples instead of PCM16");

    EvaluateArgs ev;
    CLI::App* ex = app.add_subcommand(
        "evaluate", "Score a model over SNR subsets, or compare two WAV directories");
    ex->add_option("--ckpt", ev.ckpt, "Model checkpoint (model mode)");
    ex->add_option("--data", ev.data, "Corpus root; test split is evaluated");
    ex->add_option("--noise", ev.noise, "Noise directory (default <data>/noise)");
    ex->add_option("--out", ev.out, "Report directory (model mode) or CSV path (directory mode)");
    ex->add_option("--estimates", ev.estimates, "Directory of estimate WAVs (directory mode)");
    ex->add_option("--references", ev.references, "Directory of reference WAVs");
    ex->add_option("--centers", ev.centers_csv, "Subset SNR centers in dB, comma separated");
    ex->add_option("--snr-sigma", ev.snr_sigma, "Per-utterance SNR spread around each center");
    ex->add_option("--steps", ev.sampler.n_steps, "Reverse steps N");
    ex->add_option("--mode", ev.mode, "Sampler: pc or ode");
    ex->add_option("--window", ev.window, "STFT window for the spectral metric (directory mode)");
    ex->add_option("--hop", ev.hop, "STFT hop for the spectral metric (directory mode)");
    ex->add_option("--seed", ev.seed, "Evaluation seed");

    VerifySdeArgs vs;
    CLI::App* vd = app.add_subcommand(
        "verify-sde", "Check the closed-form forward kernel against Euler-Maruyama");
    vd->add_option("--out", vs.out, "CSV output path");
    vd->add_option("--paths", vs.cfg.n_paths, "Monte-Carlo paths");
    vd->add_option("--em-steps", vs.cfg.em_steps, "Integrator steps over [0,1]");
    vd->add_option("--rows", vs.cfg.rows, "State rows");
    vd->add_option("--cols", vs.cfg.cols, "State columns");
    vd->add_option("--checkpoints", vs.checkpoints_csv, "Times to compare, comma separated");
    vd->add_option("--gamma", vs.cfg.process.gamma, "Drift stiffness");
    vd->add_option("--sigma-min", vs.cfg.process.sigma_min, "Noise scale at t=0");
    vd->add_option("--sigma-max", vs.cfg.process.sigma_max, "Noise scale at t=1");
    vd->add_option("--mean-se-mult", vs.cfg.mean_se_mult,
                   "Mean tolerance in standard errors");
    vd->add_option("--std-rel-tol", vs.cfg.std_rel_tol, "Relative tolerance on the std");
    vd->add_option("--seed", vs.cfg.seed, "Simulation seed");

    SweepArgs sw;
    CLI::App* sp = app.add_subcommand("sweep-steps",
                                      "Metric vs reverse-step count on a test subset");
    sp->add_option("--ckpt", sw.ckpt, "Model checkpoint")->required();
    sp->add_option("--data", sw.data, "Corpus root; test split is swept")->required();
    sp->add_option("--noise", sw.noise, "Noise directory (default <data>/noise)");
    sp->add_option("--out", sw.out, "Output prefix; writes <prefix>.csv and <prefix>.svg")
        ->required();
    sp->add_option("--n", sw.n_csv, "Step counts, comma separated");
    sp->add_option("--snr", sw.snr, "Subset SNR center in dB");
    sp->add_option("--snr-sigma", sw.snr_sigma, "Per-utterance SNR spread");
    sp->add_option("--mode", sw.mode, "Sampler: pc or ode");
    sp->add_option("--seed", sw.seed, "Evaluation seed");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        if (e.get_exit_code() == static_cast<int>(CLI::ExitCodes::Success))
            return app.exit(e);  // --help lands here
        app.exit(e);
        return 2;
    }

    try {
        if (sc->parsed()) return run_synth_data(synth);
        if (tr->parsed()) return run_train(train);
        if (en->parsed()) return run_enhance(enh);
        if (ex->parsed()) return run_evaluate(ev);
        if (vd->parsed()) return run_verify_sde(vs);
        if (sp->parsed()) return run_sweep(sw);
    } catch (const std::exception& e) {
        std::cerr << "bcdiff: " << e.what() << "\n";
        return 1;
    }
    return 2;
}
