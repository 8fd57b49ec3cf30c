#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <vector>

#include "bcdiff/eval.hpp"

using namespace bcdiff;
using namespace bcdiff::eval;
using Catch::Approx;
using Catch::Matchers::ContainsSubstring;

namespace {

dsp::Waveform noise_wave(int n, std::uint64_t seed, int rate = 16000) {
    Rng rng(seed);
    dsp::Waveform w;
    w.sample_rate = rate;
    w.samples.resize(static_cast<std::size_t>(n));
    for (double& s : w.samples) s = rng.normal();
    return w;
}

struct Fixture {
    std::vector<datagen::UtterancePair> pairs;
    std::vector<datagen::NoiseSource> noises;
    std::vector<datagen::TestSubset> subsets;
};

Fixture make_fixture(int n_pairs = 4, const std::vector<double>& centers = {0.0, 5.0}) {
    Fixture f;
    Rng rng(404);
    for (int i = 0; i < n_pairs; ++i) {
        datagen::UtterancePair p;
        p.speaker_id = "s";
        p.utterance_id = "s/u" + str(i);
        p.air = noise_wave(2000, 1000 + static_cast<std::uint64_t>(i));
        p.bone = p.air;
        f.pairs.push_back(std::move(p));
    }
    f.noises.push_back({"white", noise_wave(5000, 77)});
    Rng subset_rng(9);
    f.subsets = datagen::make_test_subsets(f.pairs, f.noises, subset_rng, centers, 1.0);
    return f;
}

std::string read_file(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    REQUIRE(f.good());
    std::ostringstream os;
    os << f.rdbuf();
    return os.str();
}

std::vector<std::string> split_csv(const std::string& line) {
    std::vector<std::string> out;
    std::string cur;
    for (char c : line) {
        if (c == ',') {
            out.push_back(cur);
            cur.clear();
        } else {
            cur += c;
        }
    }
    out.push_back(cur);
    return out;
}

std::filesystem::path work_dir(const std::string& tag) {
    const auto p = std::filesystem::current_path() / ("bcdiff_eval_" + tag);
    std::filesystem::remove_all(p);
    std::filesystem::create_directories(p);
    return p;
}

Enhancer identity_enhancer() {
    return [](const datagen::MixtureSample& s, std::uint64_t) {
        return EnhanceOutcome{s.pair.air, 120};
    };
}

Enhancer passthrough_enhancer() {
    return [](const datagen::MixtureSample& s, std::uint64_t) {
        return EnhanceOutcome{s.mixture, 120};
    };
}

}  // namespace

TEST_CASE("evaluate_subsets caps SI-SDR when the enhancer returns the reference") {
    const Fixture f = make_fixture();
    EvalConfig cfg;
    const EvalReport report = evaluate_subsets(f.subsets, identity_enhancer(), cfg);

    REQUIRE(report.rows.size() == f.subsets.size() * f.pairs.size());
    for (const auto& row : report.rows) {
        REQUIRE_FALSE(row.failed);
        bool saw_si = false, saw_lsd = false;
        for (const auto& [name, value] : row.metrics) {
            if (name == "si_sdr") {
                CHECK(value == metrics::kSiSdrCapDb);
                saw_si = true;
            }
            if (name == "lsd") {
                CHECK(value == 0.0);
                saw_lsd = true;
            }
        }
        CHECK(saw_si);
        CHECK(saw_lsd);
    }
}

TEST_CASE("evaluate_subsets rows trace back to manifest entries") {
    const Fixture f = make_fixture();
    EvalConfig cfg;
    const EvalReport report = evaluate_subsets(f.subsets, passthrough_enhancer(), cfg);

    for (const auto& row : report.rows) {
        bool found = false;
        for (const auto& subset : f.subsets) {
            if (subset_label(subset.center_db) != row.subset) continue;
            for (const auto& e : subset.entries)
                if (e.utterance_id == row.utterance_id && e.noise_id == row.noise_id &&
                    e.snr_db == row.snr_db)
                    found = true;
        }
        CHECK(found);
    }

    SECTION("pass-through scores equal the mixture's own scores") {
        for (const auto& row : report.rows) {
            double est = 0.0, noisy = 1.0;
            for (const auto& [name, value] : row.metrics) {
                if (name == "si_sdr") est = value;
                if (name == "si_sdr_noisy") noisy = value;
            }
            CHECK(est == noisy);
        }
    }
}

TEST_CASE("evaluate_subsets flags enhancer failures and keeps aggregates") {
    const Fixture f = make_fixture(4, {0.0});
    const Enhancer flaky = [](const datagen::MixtureSample& s, std::uint64_t) {
        if (s.pair.utterance_id == "s/u2") fail("sampler blew up");
        return EnhanceOutcome{s.pair.air, 120};
    };
    EvalConfig cfg;
    const EvalReport report = evaluate_subsets(f.subsets, flaky, cfg);

    CHECK(report.has_failures());
    int failed = 0;
    for (const auto& row : report.rows)
        if (row.failed) {
            ++failed;
            CHECK(row.utterance_id == "s/u2");
            CHECK_THAT(row.error, ContainsSubstring("blew up"));
            CHECK(row.metrics.empty());
        }
    CHECK(failed == 1);

    for (const auto& agg : report.aggregates())
        CHECK(agg.count == 3);
}

TEST_CASE("eval CSV is byte-stable and aggregates recompute from rows") {
    const Fixture f = make_fixture();
    EvalConfig cfg;
    cfg.seed = 31;
    EvalReport report = evaluate_subsets(f.subsets, passthrough_enhancer(), cfg);
    report.checkpoint_hash = "deadbeef00000000";
    report.sampler_desc = "pc n=60 c=1";

    const auto dir = work_dir("csv");
    const std::string p1 = (dir / "a.csv").string();
    const std::string p2 = (dir / "b.csv").string();
    write_eval_csv(p1, report);
    write_eval_csv(p2, report);
    CHECK(read_file(p1) == read_file(p2));

    // A second evaluation pass produces the same bytes end to end.
    EvalReport again = evaluate_subsets(f.subsets, passthrough_enhancer(), cfg);
    again.checkpoint_hash = report.checkpoint_hash;
    again.sampler_desc = report.sampler_desc;
    const std::string p3 = (dir / "c.csv").string();
    write_eval_csv(p3, again);
    CHECK(read_file(p1) == read_file(p3));

    // Recompute each aggregate mean from the row lines alone.
    std::istringstream is(read_file(p1));
    std::string line;
    std::map<std::string, std::vector<double>> by_key;
    std::map<std::string, std::pair<double, int>> agg;
    while (std::getline(is, line)) {
        if (line.empty() || line[0] == '#' || line.rfind("kind,", 0) == 0) continue;
        const auto cols = split_csv(line);
        REQUIRE(cols.size() == 11);
        const std::string key = cols[1] + "|" + cols[5];
        if (cols[0] == "row" && cols[9] == "0")
            by_key[key].push_back(std::stod(cols[6]));
        else if (cols[0] == "agg")
            agg[key] = {std::stod(cols[6]), std::stoi(cols[8])};
    }
    REQUIRE_FALSE(agg.empty());
    for (const auto& [key, stat] : agg) {
        REQUIRE(by_key.count(key) == 1);
        const auto& vals = by_key[key];
        CHECK(static_cast<int>(vals.size()) == stat.second);
        double mean = 0.0;
        for (double v : vals) mean += v;
        mean /= vals.size();
        CHECK(mean == stat.first);
    }
    std::filesystem::remove_all(dir);
}

TEST_CASE("external metric hooks merge scores") {
    const Fixture f = make_fixture(2, {0.0});
    const auto dir = work_dir("hooks");

    const std::string script = (dir / "fake_pesq.sh").string();
    std::ofstream(script) << "#!/bin/sh\necho 3.25\n";
    std::filesystem::permissions(script, std::filesystem::perms::owner_all);

    EvalConfig cfg;
    cfg.hooks = {{"pesq", script}};
    cfg.work_dir = dir.string();
    const EvalReport report = evaluate_subsets(f.subsets, identity_enhancer(), cfg);

    for (const auto& row : report.rows) {
        REQUIRE_FALSE(row.failed);
        bool saw = false;
        for (const auto& [name, value] : row.metrics)
            if (name == "pesq") {
                CHECK(value == Approx(3.25));
                saw = true;
            }
        CHECK(saw);
    }

    SECTION("unparseable tool output flags the row") {
        const std::string bad = (dir / "bad_tool.sh").string();
        std::ofstream(bad) << "#!/bin/sh\necho not-a-number\n";
        std::filesystem::permissions(bad, std::filesystem::perms::owner_all);
        EvalConfig bad_cfg;
        bad_cfg.hooks = {{"pesq", bad}};
        bad_cfg.work_dir = dir.string();
        const EvalReport r = evaluate_subsets(f.subsets, identity_enhancer(), bad_cfg);
        CHECK(r.has_failures());
        for (const auto& row : r.rows) CHECK_THAT(row.error, ContainsSubstring("unparseable"));
    }

    SECTION("env discovery picks up configured variables") {
        setenv("BCDIFF_PESQ_BIN", script.c_str(), 1);
        unsetenv("BCDIFF_POLQA_BIN");
        unsetenv("BCDIFF_ESTOI_BIN");
        const auto hooks = external_hooks_from_env();
        REQUIRE(hooks.size() == 1);
        CHECK(hooks[0].name == "pesq");
        CHECK(hooks[0].bin == script);
        unsetenv("BCDIFF_PESQ_BIN");
    }
    std::filesystem::remove_all(dir);
}

TEST_CASE("evaluate_directories") {
    const auto dir = work_dir("dirs");
    namespace fs = std::filesystem;
    fs::create_directories(dir / "est");
    fs::create_directories(dir / "ref");

    for (int i = 0; i < 3; ++i) {
        const auto w = noise_wave(1500, 600 + static_cast<std::uint64_t>(i));
        wav::write_wav((dir / "est" / ("u" + str(i) + ".wav")).string(), w,
                       wav::SampleFormat::FLOAT32);
        wav::write_wav((dir / "ref" / ("u" + str(i) + ".wav")).string(), w,
                       wav::SampleFormat::FLOAT32);
    }

    SECTION("identical directories report capped SI-SDR on every row") {
        const EvalReport r =
            evaluate_directories((dir / "est").string(), (dir / "ref").string(),
                                 dsp::StftConfig{});
        REQUIRE(r.rows.size() == 3);
        for (const auto& row : r.rows) {
            REQUIRE_FALSE(row.failed);
            CHECK(row.subset == "all");
            for (const auto& [name, value] : row.metrics) {
                if (name == "si_sdr") CHECK(value == metrics::kSiSdrCapDb);
                if (name == "lsd") CHECK(value == 0.0);
            }
        }
    }

    SECTION("a missing reference flags that row only") {
        wav::write_wav((dir / "est" / "extra.wav").string(), noise_wave(900, 5),
                       wav::SampleFormat::FLOAT32);
        const EvalReport r =
            evaluate_directories((dir / "est").string(), (dir / "ref").string(),
                                 dsp::StftConfig{});
        REQUIRE(r.rows.size() == 4);
        int failed = 0;
        for (const auto& row : r.rows)
            if (row.failed) {
                ++failed;
                CHECK(row.utterance_id == "extra.wav");
                CHECK_THAT(row.error, ContainsSubstring("no reference"));
            }
        CHECK(failed == 1);
    }

    SECTION("an empty estimate directory is an error") {
        fs::create_directories(dir / "none");
        CHECK_THROWS_WITH(evaluate_directories((dir / "none").string(),
                                               (dir / "ref").string(), dsp::StftConfig{}),
                          ContainsSubstring("no .wav files"));
    }
    std::filesystem::remove_all(dir);
}

TEST_CASE("sweep_steps aggregates per step count") {
    const Fixture f = make_fixture(5, {0.0});
    std::vector<datagen::MixtureSample> samples = f.subsets[0].samples;

    // Fake enhancer family: the estimate closes a 1/n fraction of the gap to
    // the clean signal, so quality must rise with n.
    const EnhancerFactory factory = [](int n) {
        return [n](const datagen::MixtureSample& s, std::uint64_t) {
            dsp::Waveform est = s.pair.air;
            for (std::size_t i = 0; i < est.samples.size(); ++i)
                est.samples[i] += (s.mixture.samples[i] - est.samples[i]) / n;
            return EnhanceOutcome{est, 2L * n};
        };
    };

    EvalConfig cfg;
    const std::vector<int> n_list = {2, 5, 10, 20};
    const auto rows = sweep_steps(samples, factory, n_list, cfg);

    REQUIRE(rows.size() == n_list.size() * 2);
    std::vector<double> si_means, lsd_means;
    for (std::size_t i = 0; i < n_list.size(); ++i) {
        const auto& si = rows[2 * i];
        const auto& lsd = rows[2 * i + 1];
        CHECK(si.metric == "si_sdr");
        CHECK(lsd.metric == "lsd");
        CHECK(si.n_steps == n_list[i]);
        CHECK(si.score_calls == 2L * n_list[i]);
        CHECK(si.count == 5);
        CHECK(si.failed == 0);
        si_means.push_back(si.mean);
        lsd_means.push_back(lsd.mean);
    }
    for (std::size_t i = 1; i < si_means.size(); ++i) {
        CHECK(si_means[i] > si_means[i - 1]);
        CHECK(lsd_means[i] < lsd_means[i - 1]);
    }

    SECTION("CSV and SVG are deterministic") {
        const auto dir = work_dir("sweep");
        const std::string c1 = (dir / "s1.csv").string();
        const std::string c2 = (dir / "s2.csv").string();
        write_sweep_csv(c1, rows);
        write_sweep_csv(c2, rows);
        CHECK(read_file(c1) == read_file(c2));
        std::istringstream is(read_file(c1));
        std::string line;
        int data_lines = 0;
        while (std::getline(is, line))
            if (!line.empty() && line[0] != '#' && line.rfind("n_steps", 0) != 0)
                ++data_lines;
        CHECK(data_lines == static_cast<int>(n_list.size()) * 2);

        const std::string s1 = (dir / "p1.svg").string();
        const std::string s2 = (dir / "p2.svg").string();
        write_sweep_svg(s1, rows);
        write_sweep_svg(s2, rows);
        const std::string svg = read_file(s1);
        CHECK(svg == read_file(s2));
        CHECK_THAT(svg, ContainsSubstring("<svg"));
        CHECK_THAT(svg, ContainsSubstring("polyline"));
        CHECK_THAT(svg, ContainsSubstring("si_sdr vs sampler steps"));
        CHECK_THAT(svg, ContainsSubstring("lsd vs sampler steps"));
        std::filesystem::remove_all(dir);
    }

    SECTION("failures are excluded per step count") {
        const EnhancerFactory flaky = [](int n) {
            return [n](const datagen::MixtureSample& s, std::uint64_t) {
                if (s.pair.utterance_id == "s/u0") fail("diverged");
                return EnhanceOutcome{s.pair.air, 2L * n};
            };
        };
        const auto r = sweep_steps(samples, flaky, {3}, cfg);
        REQUIRE(r.size() == 2);
        CHECK(r[0].count == 4);
        CHECK(r[0].failed == 1);
    }
}
