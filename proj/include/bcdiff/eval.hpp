#ifndef BCDIFF_EVAL_HPP
#define BCDIFF_EVAL_HPP

#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <string>
#include <vector>

#include "bcdiff/datagen.hpp"
#include "bcdiff/metrics.hpp"
#include "bcdiff/pipeline.hpp"
#include "bcdiff/sampler.hpp"

namespace bcdiff::eval {

// Round-trip exact formatting so CSV consumers can reproduce aggregates from
// the rows bit for bit.
inline std::string fmt_g17(double v) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

inline std::string subset_label(double center_db) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%gdB", center_db);
    return buf;
}

// ---------------------------------------------------------------------------
// Report structure

struct EvalRow {
    std::string subset;  // "0dB", "-5dB", ... or "all" for direct comparisons
    std::string utterance_id;
    std::string noise_id;
    double snr_db = 0.0;
    bool failed = false;
    std::string error;
    std::vector<std::pair<std::string, double>> metrics;  // insertion order kept
};

struct EvalAggregate {
    std::string subset;
    std::string metric;
    int count = 0;
    double mean = 0.0;
    double stddev = 0.0;
};

struct EvalReport {
    std::string checkpoint_hash = "-";
    std::string sampler_desc = "-";
    std::uint64_t seed = 0;
    std::vector<EvalRow> rows;

    bool has_failures() const {
        for (const auto& r : rows)
            if (r.failed) return true;
        return false;
    }

    // Mean and sample std over the non-failed rows, accumulated in row order
    // so a consumer replaying the rows lands on the same doubles.
    std::vector<EvalAggregate> aggregates() const {
        std::vector<EvalAggregate> out;
        const auto slot = [&out](const std::string& subset,
                                 const std::string& metric) -> EvalAggregate& {
            for (auto& a : out)
                if (a.subset == subset && a.metric == metric) return a;
            out.push_back({subset, metric, 0, 0.0, 0.0});
            return out.back();
        };
        for (const auto& r : rows) {
            if (r.failed) continue;
            for (const auto& [name, value] : r.metrics) {
                EvalAggregate& a = slot(r.subset, name);
                ++a.count;
                a.mean += value;
            }
        }
        for (auto& a : out) a.mean /= a.count;
        for (const auto& r : rows) {
            if (r.failed) continue;
            for (const auto& [name, value] : r.metrics) {
                EvalAggregate& a = slot(r.subset, name);
                const double d = value - a.mean;
                a.stddev += d * d;
            }
        }
        for (auto& a : out)
            a.stddev = a.count > 1 ? std::sqrt(a.stddev / (a.count - 1)) : 0.0;
        return out;
    }
};

inline void write_eval_csv(const std::string& path, const EvalReport& report) {
    std::ofstream f(path, std::ios::trunc);
    require(f.good(), "write_eval_csv: cannot open " + path);
    f << "# bcdiff-eval-csv v1\n";
    f << "# checkpoint=" << report.checkpoint_hash << "\n";
    f << "# sampler=" << report.sampler_desc << "\n";
    f << "# seed=" << report.seed << "\n";
    f << "kind,subset,utterance_id,noise_id,snr_db,metric,value,stddev,count,failed,error\n";
    for (const auto& r : report.rows) {
        if (r.failed) {
            f << "row," << r.subset << "," << r.utterance_id << "," << r.noise_id << ","
              << fmt_g17(r.snr_db) << ",,,,,1," << r.error << "\n";
            continue;
        }
        for (const auto& [name, value] : r.metrics)
            f << "row," << r.subset << "," << r.utterance_id << "," << r.noise_id << ","
              << fmt_g17(r.snr_db) << "," << name << "," << fmt_g17(value) << ",,,0,\n";
    }
    for (const auto& a : report.aggregates())
        f << "agg," << a.subset << ",,,," << a.metric << "," << fmt_g17(a.mean) << ","
          << fmt_g17(a.stddev) << "," << a.count << ",,\n";
    require(f.good(), "write_eval_csv: write failed for " + path);
}

// ---------------------------------------------------------------------------
// External metric hooks
//
// PESQ / POLQA / ESTOI are licensed or live in external reference code, so
// they are not reimplemented here. If an environment variable points at an
// executable, it is invoked as `<bin> <reference.wav> <estimate.wav>` and
// must print one number; the score joins the per-utterance metrics.

struct ExternalMetricHook {
    std::string name;
    std::string bin;
};

inline std::vector<ExternalMetricHook> external_hooks_from_env() {
    std::vector<ExternalMetricHook> hooks;
    const std::pair<const char*, const char*> vars[] = {
        {"pesq", "BCDIFF_PESQ_BIN"}, {"polqa", "BCDIFF_POLQA_BIN"},
        {"estoi", "BCDIFF_ESTOI_BIN"}};
    for (const auto& [name, var] : vars) {
        const char* v = std::getenv(var);
        if (v != nullptr && *v != '\0') hooks.push_back({name, v});
    }
    return hooks;
}

inline double run_external_metric(const std::string& bin, const std::string& ref_wav,
                                  const std::string& est_wav) {
    const std::string cmd = bin + " '" + ref_wav + "' '" + est_wav + "' 2>/dev/null";
    FILE* p = popen(cmd.c_str(), "r");
    require(p != nullptr, "run_external_metric: cannot launch " + bin);
    char buf[256];
    std::string out;
    while (std::fgets(buf, sizeof buf, p) != nullptr) out += buf;
    const int rc = pclose(p);
    require(rc == 0, "run_external_metric: " + bin + " exited with status " + str(rc));
    try {
        return std::stod(out);
    } catch (const std::exception&) {
        fail("run_external_metric: unparseable output from " + bin + ": '" + out + "'");
    }
}

// ---------------------------------------------------------------------------
// Subset evaluation

// An enhancer maps one mixture to an estimate; the model-backed one wraps
// the chunked sampler, tests can substitute anything. score_calls counts one
// sampler pass (utterances span several chunks, each one full pass).
struct EnhanceOutcome {
    dsp::Waveform estimate;
    long score_calls = 0;
};

using Enhancer =
    std::function<EnhanceOutcome(const datagen::MixtureSample&, std::uint64_t utt_seed)>;

template <typename T>
Enhancer make_model_enhancer(ScoreModel<T>& model, const dsp::StftConfig& stft_cfg,
                             const sampler::SamplerConfig& sampler_cfg) {
    return [&model, stft_cfg, sampler_cfg](const datagen::MixtureSample& s,
                                           std::uint64_t utt_seed) {
        sampler::SamplerConfig scfg = sampler_cfg;
        scfg.seed = utt_seed;
        pipeline::EnhanceStats stats;
        EnhanceOutcome out;
        out.estimate =
            pipeline::enhance_waveform(model, s.mixture, s.pair.bone, stft_cfg, scfg, &stats);
        out.score_calls = stats.chunks > 0 ? stats.score_calls / stats.chunks : 0;
        return out;
    };
}

struct EvalConfig {
    std::uint64_t seed = 0;
    dsp::StftConfig stft;  // used by the log-spectral distance
    std::vector<ExternalMetricHook> hooks;
    std::string work_dir;  // scratch space for external-hook WAVs
};

namespace detail {

inline std::string sanitize_id(const std::string& id) {
    std::string s = id;
    for (char& c : s)
        if (c == '/' || c == '\\' || c == ' ') c = '_';
    return s;
}

}  // namespace detail

// Enhances every mixture in every subset and scores it against the clean air
// reference. Rows also carry the unprocessed mixture's scores so reports can
// show the improvement. Enhancer failures flag the row and leave aggregates
// to the surviving rows.
inline EvalReport evaluate_subsets(const std::vector<datagen::TestSubset>& subsets,
                                   const Enhancer& enhance, const EvalConfig& cfg) {
    EvalReport report;
    report.seed = cfg.seed;
    for (const auto& subset : subsets) {
        const std::string label = subset_label(subset.center_db);
        std::vector<EvalRow> rows(subset.samples.size());
        parallel_for(static_cast<std::int64_t>(subset.samples.size()), [&](std::int64_t i) {
            const datagen::MixtureSample& s = subset.samples[static_cast<std::size_t>(i)];
            EvalRow& row = rows[static_cast<std::size_t>(i)];
            row.subset = label;
            row.utterance_id = s.pair.utterance_id;
            row.noise_id = s.noise_id;
            row.snr_db = s.target_snr_db;
            try {
                const EnhanceOutcome out =
                    enhance(s, derive_seed(cfg.seed, s.pair.utterance_id));
                row.metrics.emplace_back("si_sdr",
                                         metrics::si_sdr(out.estimate, s.pair.air));
                row.metrics.emplace_back("si_sdr_noisy",
                                         metrics::si_sdr(s.mixture, s.pair.air));
                row.metrics.emplace_back(
                    "lsd", metrics::log_spectral_distance(out.estimate, s.pair.air, cfg.stft));
                row.metrics.emplace_back(
                    "lsd_noisy",
                    metrics::log_spectral_distance(s.mixture, s.pair.air, cfg.stft));
                for (const auto& hook : cfg.hooks) {
                    require(!cfg.work_dir.empty(),
                            "evaluate_subsets: external hooks need a work_dir");
                    const std::string tag =
                        detail::sanitize_id(label + "_" + s.pair.utterance_id);
                    const std::string ref_p = cfg.work_dir + "/" + tag + "_ref.wav";
                    const std::string est_p = cfg.work_dir + "/" + tag + "_est.wav";
                    wav::write_wav(ref_p, s.pair.air, wav::SampleFormat::FLOAT32);
                    wav::write_wav(est_p, out.estimate, wav::SampleFormat::FLOAT32);
                    row.metrics.emplace_back(hook.name,
                                             run_external_metric(hook.bin, ref_p, est_p));
                }
            } catch (const std::exception& e) {
                row.failed = true;
                row.error = e.what();
                row.metrics.clear();
            }
        });
        for (auto& r : rows) report.rows.push_back(std::move(r));
    }
    return report;
}

// Direct estimate-vs-reference comparison over two directories of WAV files
// matched by filename. No model involved.
inline EvalReport evaluate_directories(const std::string& est_dir, const std::string& ref_dir,
                                       const dsp::StftConfig& stft_cfg) {
    namespace fs = std::filesystem;
    require(fs::is_directory(est_dir), "evaluate_directories: not a directory: " + est_dir);
    require(fs::is_directory(ref_dir), "evaluate_directories: not a directory: " + ref_dir);

    std::vector<std::string> names;
    for (const auto& e : fs::directory_iterator(est_dir))
        if (e.is_regular_file() && e.path().extension() == ".wav")
            names.push_back(e.path().filename().string());
    std::sort(names.begin(), names.end());
    require(!names.empty(), "evaluate_directories: no .wav files in " + est_dir);

    EvalReport report;
    for (const auto& name : names) {
        EvalRow row;
        row.subset = "all";
        row.utterance_id = name;
        const fs::path ref_p = fs::path(ref_dir) / name;
        try {
            require(fs::is_regular_file(ref_p),
                    "no reference for " + name + " in " + ref_dir);
            const dsp::Waveform est = wav::read_wav((fs::path(est_dir) / name).string());
            const dsp::Waveform ref = wav::read_wav(ref_p.string());
            row.metrics.emplace_back("si_sdr", metrics::si_sdr(est, ref));
            row.metrics.emplace_back("lsd",
                                     metrics::log_spectral_distance(est, ref, stft_cfg));
        } catch (const std::exception& e) {
            row.failed = true;
            row.error = e.what();
            row.metrics.clear();
        }
        report.rows.push_back(std::move(row));
    }
    return report;
}

// ---------------------------------------------------------------------------
// Step-count sweep

inline const std::vector<int>& default_sweep_steps() {
    static const std::vector<int> ns = {2, 5, 10, 20, 30, 40, 60, 80};
    return ns;
}

struct SweepRow {
    int n_steps = 0;
    long score_calls = 0;
    std::string metric;
    double mean = 0.0;
    double stddev = 0.0;
    int count = 0;
    int failed = 0;
};

// The factory yields an enhancer configured for a given step count; the
// model-backed factory rebuilds the sampler config, tests can fake it.
using EnhancerFactory = std::function<Enhancer(int n_steps)>;

template <typename T>
EnhancerFactory make_model_enhancer_factory(ScoreModel<T>& model,
                                            const dsp::StftConfig& stft_cfg,
                                            const sampler::SamplerConfig& base_cfg) {
    return [&model, stft_cfg, base_cfg](int n_steps) {
        sampler::SamplerConfig scfg = base_cfg;
        scfg.n_steps = n_steps;
        return make_model_enhancer(model, stft_cfg, scfg);
    };
}

// Enhances the whole sample list once per step count and aggregates each
// metric. Per-utterance seeds fold in the step count, so every N stands on
// its own reproducible draw.
inline std::vector<SweepRow> sweep_steps(const std::vector<datagen::MixtureSample>& samples,
                                         const EnhancerFactory& factory,
                                         const std::vector<int>& n_list,
                                         const EvalConfig& cfg) {
    require(!samples.empty(), "sweep_steps: no samples");
    require(!n_list.empty(), "sweep_steps: empty step list");

    std::vector<SweepRow> rows;
    for (int n : n_list) {
        require(n >= 1, "sweep_steps: step counts must be >= 1");
        const Enhancer enhance = factory(n);

        struct Slot {
            bool failed = false;
            long calls = 0;
            double si_sdr = 0.0, lsd = 0.0;
        };
        std::vector<Slot> slots(samples.size());
        parallel_for(static_cast<std::int64_t>(samples.size()), [&](std::int64_t i) {
            const auto& s = samples[static_cast<std::size_t>(i)];
            Slot& slot = slots[static_cast<std::size_t>(i)];
            try {
                const EnhanceOutcome out = enhance(
                    s, derive_seed(cfg.seed, s.pair.utterance_id + "#n=" + str(n)));
                slot.calls = out.score_calls;
                slot.si_sdr = metrics::si_sdr(out.estimate, s.pair.air);
                slot.lsd = metrics::log_spectral_distance(out.estimate, s.pair.air, cfg.stft);
            } catch (const std::exception&) {
                slot.failed = true;
            }
        });

        int failed = 0;
        long calls = 0;
        std::vector<double> si, lsd;
        for (const Slot& s : slots) {
            if (s.failed) {
                ++failed;
                continue;
            }
            if (calls == 0) calls = s.calls;
            si.push_back(s.si_sdr);
            lsd.push_back(s.lsd);
        }
        const auto emit = [&](const std::string& metric, const std::vector<double>& vals) {
            SweepRow r;
            r.n_steps = n;
            r.score_calls = calls;
            r.metric = metric;
            r.count = static_cast<int>(vals.size());
            r.failed = failed;
            for (double v : vals) r.mean += v;
            if (!vals.empty()) r.mean /= static_cast<double>(vals.size());
            for (double v : vals) r.stddev += (v - r.mean) * (v - r.mean);
            r.stddev = vals.size() > 1
                           ? std::sqrt(r.stddev / static_cast<double>(vals.size() - 1))
                           : 0.0;
            rows.push_back(std::move(r));
        };
        emit("si_sdr", si);
        emit("lsd", lsd);
    }
    return rows;
}

inline void write_sweep_csv(const std::string& path, const std::vector<SweepRow>& rows) {
    std::ofstream f(path, std::ios::trunc);
    require(f.good(), "write_sweep_csv: cannot open " + path);
    f << "# bcdiff-sweep-csv v1\n";
    f << "n_steps,score_calls,metric,mean,stddev,count,failed\n";
    for (const auto& r : rows)
        f << r.n_steps << "," << r.score_calls << "," << r.metric << "," << fmt_g17(r.mean)
          << "," << fmt_g17(r.stddev) << "," << r.count << "," << r.failed << "\n";
    require(f.good(), "write_sweep_csv: write failed for " + path);
}

// One panel per metric, mean vs step count with a dot per sweep point.
inline void write_sweep_svg(const std::string& path, const std::vector<SweepRow>& rows) {
    require(!rows.empty(), "write_sweep_svg: no rows");
    std::vector<std::string> metric_names;
    for (const auto& r : rows)
        if (std::find(metric_names.begin(), metric_names.end(), r.metric) ==
            metric_names.end())
            metric_names.push_back(r.metric);

    const int panel_w = 560, panel_h = 240, margin = 50;
    const int width = panel_w + 2 * margin;
    const int height = static_cast<int>(metric_names.size()) * (panel_h + margin) + margin;

    std::ofstream f(path, std::ios::trunc);
    require(f.good(), "write_sweep_svg: cannot open " + path);
    f << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << width << "\" height=\""
      << height << "\" viewBox=\"0 0 " << width << " " << height << "\">\n";
    f << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";

    char buf[256];
    for (std::size_t mi = 0; mi < metric_names.size(); ++mi) {
        const std::string& metric = metric_names[mi];
        std::vector<const SweepRow*> pts;
        for (const auto& r : rows)
            if (r.metric == metric) pts.push_back(&r);

        double lo = pts[0]->mean, hi = pts[0]->mean;
        int n_lo = pts[0]->n_steps, n_hi = pts[0]->n_steps;
        for (const auto* p : pts) {
            lo = std::min(lo, p->mean);
            hi = std::max(hi, p->mean);
            n_lo = std::min(n_lo, p->n_steps);
            n_hi = std::max(n_hi, p->n_steps);
        }
        if (hi - lo < 1e-9) hi = lo + 1.0;
        if (n_hi == n_lo) n_hi = n_lo + 1;

        const int top = margin + static_cast<int>(mi) * (panel_h + margin);
        const auto px = [&](int n) {
            return margin + (static_cast<double>(n - n_lo) / (n_hi - n_lo)) * panel_w;
        };
        const auto py = [&](double v) {
            return top + panel_h - ((v - lo) / (hi - lo)) * panel_h;
        };

        f << "<rect x=\"" << margin << "\" y=\"" << top << "\" width=\"" << panel_w
          << "\" height=\"" << panel_h
          << "\" fill=\"none\" stroke=\"black\" stroke-width=\"1\"/>\n";
        f << "<text x=\"" << margin << "\" y=\"" << top - 8 << "\" font-size=\"14\">"
          << metric << " vs sampler steps</text>\n";

        f << "<polyline fill=\"none\" stroke=\"steelblue\" stroke-width=\"2\" points=\"";
        for (const auto* p : pts) {
            std::snprintf(buf, sizeof buf, "%.2f,%.2f ", px(p->n_steps), py(p->mean));
            f << buf;
        }
        f << "\"/>\n";
        for (const auto* p : pts) {
            std::snprintf(buf, sizeof buf,
                          "<circle cx=\"%.2f\" cy=\"%.2f\" r=\"3\" fill=\"steelblue\"/>\n",
                          px(p->n_steps), py(p->mean));
            f << buf;
            std::snprintf(buf, sizeof buf,
                          "<text x=\"%.2f\" y=\"%d\" font-size=\"10\" text-anchor=\"middle\">"
                          "%d</text>\n",
                          px(p->n_steps), top + panel_h + 14, p->n_steps);
            f << buf;
        }
        std::snprintf(buf, sizeof buf,
                      "<text x=\"%d\" y=\"%d\" font-size=\"10\">%.3g</text>\n", 4,
                      top + panel_h, lo);
        f << buf;
        std::snprintf(buf, sizeof buf,
                      "<text x=\"%d\" y=\"%d\" font-size=\"10\">%.3g</text>\n", 4, top + 10,
                      hi);
        f << buf;
    }
    f << "</svg>\n";
    require(f.good(), "write_sweep_svg: write failed for " + path);
}

}  // namespace bcdiff::eval

#endif  // BCDIFF_EVAL_HPP
