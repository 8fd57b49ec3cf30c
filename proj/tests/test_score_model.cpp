#include <catch2/catch_amalgamated.hpp>

#include <cmath>

#include "bcdiff/score_model.hpp"
#include "gradcheck.hpp"

using namespace bcdiff;
using namespace bcdiff::nn;
using bcdiff::testutil::check_param_grads;
using Catch::Approx;

namespace {

ComplexSpectrogram random_spec(int rows, int cols, Rng& rng, double scale = 1.0) {
    ComplexSpectrogram m(rows, cols);
    for (Eigen::Index j = 0; j < m.cols(); ++j)
        for (Eigen::Index i = 0; i < m.rows(); ++i) m(i, j) = scale * rng.complex_normal();
    return m;
}

sde::SdeParams default_sde() { return sde::SdeParams{}; }

}  // namespace

TEST_CASE("toy models build and preserve spectrogram shape") {
    for (Strategy s : {Strategy::IC, Strategy::DC, Strategy::MIX}) {
        ScoreModelConfig cfg = ScoreModelConfig::preset(s, ModelSize::TOY);
        ScoreModel<double> model(cfg, default_sde(), 100);
        Rng rng(101);
        const ComplexSpectrogram xt = random_spec(64, 64, rng);
        const ComplexSpectrogram y = random_spec(64, 64, rng);
        const ComplexSpectrogram yc = random_spec(64, 64, rng);
        const ComplexSpectrogram out = model.score(xt, y, yc, 0.5);
        REQUIRE(out.rows() == 64);
        REQUIRE(out.cols() == 64);
        CHECK(all_finite(out));
    }
}

TEST_CASE("forward rejects bad shapes and out-of-range time") {
    ScoreModelConfig cfg = ScoreModelConfig::preset(Strategy::IC, ModelSize::TOY);
    ScoreModel<double> model(cfg, default_sde(), 1);
    Rng rng(2);
    const ComplexSpectrogram ok = random_spec(64, 64, rng);
    const ComplexSpectrogram bad = random_spec(32, 64, rng);
    CHECK_THROWS_AS(model.score(bad, ok, ok, 0.5), Error);
    CHECK_THROWS_AS(model.score(ok, ok, ok, 0.001), Error);  // below t_eps
    CHECK_THROWS_AS(model.score(ok, ok, ok, 1.5), Error);
}

TEST_CASE("forward stays finite for large-magnitude inputs") {
    ScoreModelConfig cfg = ScoreModelConfig::preset(Strategy::IC, ModelSize::TOY);
    ScoreModel<double> model(cfg, default_sde(), 7);
    Rng rng(8);
    const ComplexSpectrogram xt = random_spec(64, 64, rng, 1e3);
    const ComplexSpectrogram y = random_spec(64, 64, rng, 1e3);
    const ComplexSpectrogram yc = random_spec(64, 64, rng, 1e3);
    CHECK(all_finite(model.score(xt, y, yc, 0.9)));
}

TEST_CASE("identical inputs give bit-identical outputs") {
    ScoreModelConfig cfg = ScoreModelConfig::preset(Strategy::DC, ModelSize::TOY);
    ScoreModel<double> model(cfg, default_sde(), 3);
    Rng rng(4);
    const ComplexSpectrogram xt = random_spec(64, 64, rng);
    const ComplexSpectrogram y = random_spec(64, 64, rng);
    const ComplexSpectrogram yc = random_spec(64, 64, rng);
    const ComplexSpectrogram a = model.score(xt, y, yc, 0.4);
    const ComplexSpectrogram b = model.score(xt, y, yc, 0.4);
    CHECK(a == b);
}

TEST_CASE("models built from the same seed are identical, different seeds differ") {
    ScoreModelConfig cfg = ScoreModelConfig::preset(Strategy::IC, ModelSize::TOY);
    ScoreModel<double> a(cfg, default_sde(), 42);
    ScoreModel<double> b(cfg, default_sde(), 42);
    ScoreModel<double> c(cfg, default_sde(), 43);
    REQUIRE(a.params().count() == b.params().count());
    bool same = true, differ = false;
    for (std::size_t i = 0; i < a.params().count(); ++i) {
        same = same && a.params().at(i).value == b.params().at(i).value;
        differ = differ || a.params().at(i).value != c.params().at(i).value;
    }
    CHECK(same);
    CHECK(differ);
}

TEST_CASE("parameter counts follow the strategy and size ordering") {
    // Count-only sizing: no weight allocation, so the full-size variants are
    // cheap to interrogate.
    for (ModelSize size : {ModelSize::TOY, ModelSize::S, ModelSize::L}) {
        const auto ic = ScoreModel<double>::param_count(ScoreModelConfig::preset(Strategy::IC, size));
        const auto dc = ScoreModel<double>::param_count(ScoreModelConfig::preset(Strategy::DC, size));
        INFO("size " << size_name(size) << ": IC " << ic << " DC " << dc);
        CHECK(dc > ic);
    }
    for (Strategy s : {Strategy::IC, Strategy::DC}) {
        const auto small = ScoreModel<double>::param_count(ScoreModelConfig::preset(s, ModelSize::S));
        const auto large = ScoreModel<double>::param_count(ScoreModelConfig::preset(s, ModelSize::L));
        CHECK(small < large);
        // Halved feature maps and depth 1 cut the count by more than 2x.
        CHECK(large > 2 * small);
    }
}

TEST_CASE("IC costs exactly the widened stem over the mixture-only baseline") {
    for (ModelSize size : {ModelSize::TOY, ModelSize::S, ModelSize::L}) {
        ScoreModelConfig ic = ScoreModelConfig::preset(Strategy::IC, size);
        ScoreModelConfig mix = ScoreModelConfig::preset(Strategy::MIX, size);
        const auto d = ScoreModel<double>::param_count(ic) - ScoreModel<double>::param_count(mix);
        // Two extra input planes times a 3x3 kernel times the stem width.
        CHECK(d == 2LL * 3 * 3 * (ic.base_channels * ic.channel_mult[0]));
    }
}

TEST_CASE("DC reduce convolutions restore the baseline concat width") {
    ScoreModelConfig cfg = ScoreModelConfig::preset(Strategy::DC, ModelSize::TOY);
    ScoreModel<double> model(cfg, default_sde(), 5);
    const int ch0 = cfg.base_channels * cfg.channel_mult[0];
    const int ch1 = cfg.base_channels * cfg.channel_mult[1];
    const int ch2 = cfg.base_channels * cfg.channel_mult[2];
    auto* r0 = model.params().find("dec.0.reduce.w");
    auto* r1 = model.params().find("dec.1.reduce.w");
    REQUIRE(r0 != nullptr);
    REQUIRE(r1 != nullptr);
    // [out, in, 1, 1]: out == skip + upsampled widths; in additionally
    // carries the condition features.
    CHECK(r0->shape[0] == ch0 + ch1);
    CHECK(r0->shape[1] == ch0 + ch1 + cfg.cond_channels[0]);
    CHECK(r1->shape[0] == ch1 + ch2);
    CHECK(r1->shape[1] == ch1 + ch2 + cfg.cond_channels[1]);
}

TEST_CASE("conditioning input reaches the output for both strategies") {
    Rng rng(9);
    const ComplexSpectrogram xt = random_spec(64, 64, rng);
    const ComplexSpectrogram y = random_spec(64, 64, rng);
    const ComplexSpectrogram yc = random_spec(64, 64, rng);
    const ComplexSpectrogram zeros = ComplexSpectrogram::Zero(64, 64);

    for (Strategy s : {Strategy::IC, Strategy::DC}) {
        ScoreModelConfig cfg = ScoreModelConfig::preset(s, ModelSize::TOY);
        ScoreModel<double> model(cfg, default_sde(), 10);
        const ComplexSpectrogram with_c = model.score(xt, y, yc, 0.5);
        const ComplexSpectrogram without_c = model.score(xt, y, zeros, 0.5);
        INFO(strategy_name(s));
        CHECK((with_c - without_c).norm() > 1e-10);
    }

    SECTION("gradient with respect to y_c is nonzero") {
        for (Strategy s : {Strategy::IC, Strategy::DC}) {
            ScoreModelConfig cfg = ScoreModelConfig::preset(s, ModelSize::TOY);
            ScoreModel<double> model(cfg, default_sde(), 11);
            Tape<double> tape;
            const int xtn = tape.input(planes_from_complex<double>(xt));
            const int yn = tape.input(planes_from_complex<double>(y));
            const int ycn = tape.input(planes_from_complex<double>(yc));
            const int out = model.forward(tape, xtn, yn, ycn, 0.5);
            model.params().zero_grad();
            tape.backward(tape.sum_squares(out));
            double gnorm = 0.0;
            for (double g : tape.grad(ycn).v) gnorm += g * g;
            INFO(strategy_name(s));
            CHECK(std::sqrt(gnorm) > 1e-12);
        }
    }

    SECTION("mixture-only build ignores y_c entirely") {
        ScoreModelConfig cfg = ScoreModelConfig::preset(Strategy::MIX, ModelSize::TOY);
        ScoreModel<double> model(cfg, default_sde(), 12);
        CHECK(model.score(xt, y, yc, 0.5) == model.score(xt, y, zeros, 0.5));
    }
}

TEST_CASE("zeroing the condition projections disconnects y_c in DC") {
    ScoreModelConfig cfg = ScoreModelConfig::preset(Strategy::DC, ModelSize::TOY);
    ScoreModel<double> model(cfg, default_sde(), 13);
    for (int r = 0; r < cfg.n_resolutions - 1; ++r) {
        auto* w = model.params().find("cond.proj." + str(r) + ".w");
        auto* b = model.params().find("cond.proj." + str(r) + ".b");
        REQUIRE(w != nullptr);
        std::fill(w->value.begin(), w->value.end(), 0.0);
        std::fill(b->value.begin(), b->value.end(), 0.0);
    }
    Rng rng(14);
    const ComplexSpectrogram xt = random_spec(64, 64, rng);
    const ComplexSpectrogram y = random_spec(64, 64, rng);
    const ComplexSpectrogram yc = random_spec(64, 64, rng);
    const ComplexSpectrogram zeros = ComplexSpectrogram::Zero(64, 64);
    CHECK(model.score(xt, y, yc, 0.5) == model.score(xt, y, zeros, 0.5));
}

TEST_CASE("time features are nondegenerate, continuous and deterministic") {
    ScoreModelConfig cfg = ScoreModelConfig::preset(Strategy::IC, ModelSize::TOY);
    ScoreModel<double> model(cfg, default_sde(), 15);
    const auto e0 = model.time_features(0.0);
    const auto e1 = model.time_features(1.0);
    REQUIRE(e0.size() == static_cast<std::size_t>(cfg.time_embed_dim));
    double diff = 0.0;
    for (std::size_t i = 0; i < e0.size(); ++i) diff += std::abs(e0[i] - e1[i]);
    CHECK(diff > 1e-6);

    // Continuity in t.
    double prev_gap = 1e9;
    for (double delta : {1e-2, 1e-4, 1e-6}) {
        const auto a = model.time_features(0.5);
        const auto b = model.time_features(0.5 + delta);
        double gap = 0.0;
        for (std::size_t i = 0; i < a.size(); ++i) gap += (a[i] - b[i]) * (a[i] - b[i]);
        gap = std::sqrt(gap);
        CHECK(gap < prev_gap);
        prev_gap = gap;
    }
    // The random-Fourier frequencies make the embedding steep (Lipschitz
    // constant in the hundreds) but still continuous.
    CHECK(prev_gap < 5e-2);

    CHECK(model.time_features(0.37) == model.time_features(0.37));
}

TEST_CASE("complex plane packing round trips") {
    Rng rng(16);
    const ComplexSpectrogram s = random_spec(5, 7, rng);
    const auto planes = planes_from_complex<double>(s);
    REQUIRE(planes.c == 2);
    REQUIRE(planes.h == 5);
    REQUIRE(planes.w == 7);
    CHECK(complex_from_planes(planes) == s);
}

TEST_CASE("analytic gradients match finite differences through the full network") {
    // Both strategies, double precision, entries sampled from every layer
    // family including the condition encoder and the 1x1 reductions.
    for (Strategy strat : {Strategy::IC, Strategy::DC}) {
        ScoreModelConfig cfg = ScoreModelConfig::preset(strat, ModelSize::TOY);
        cfg.input_height = cfg.input_width = 16;  // keep the FD loop affordable
        cfg.output_init_scale = 1.0;              // exercise the output convs with real signal
        ScoreModel<double> model(cfg, default_sde(), 17);

        Rng rng(18);
        const auto xt = planes_from_complex<double>(random_spec(16, 16, rng));
        const auto y = planes_from_complex<double>(random_spec(16, 16, rng));
        const auto yc = planes_from_complex<double>(random_spec(16, 16, rng));
        auto target = planes_from_complex<double>(random_spec(16, 16, rng));
        const double t_time = 0.5;

        auto loss = [&] {
            Tape<double> tape;
            const int out = model.forward(tape, tape.input(xt), tape.input(y), tape.input(yc),
                                          t_time);
            return tape.val(tape.sum_squares(tape.add(out, tape.input(target), 1.0, -1.0))).v[0];
        };

        model.params().zero_grad();
        {
            Tape<double> tape;
            const int out = model.forward(tape, tape.input(xt), tape.input(y), tape.input(yc),
                                          t_time);
            tape.backward(tape.sum_squares(tape.add(out, tape.input(target), 1.0, -1.0)));
        }

        std::vector<Param<double>*> sampled;
        auto& ps = model.params();
        Rng pick(19);
        // One entry from every fourth parameter plus the families the
        // conditioning path depends on, so nothing is structurally skipped.
        for (std::size_t i = 0; i < ps.count(); i += 4) sampled.push_back(&ps.at(i));
        for (const char* name : {"stem.w", "head.conv.w", "temb.mlp0.w", "mid.0.affine.w"})
            sampled.push_back(ps.find(name));
        if (strat == Strategy::DC)
            for (const char* name :
                 {"cond.stem.w", "cond.proj.0.w", "cond.proj.1.w", "dec.0.reduce.w",
                  "dec.1.reduce.w", "cond.block.1.conv1.w"})
                sampled.push_back(ps.find(name));
        for (auto* p : sampled) REQUIRE(p != nullptr);

        auto res = check_param_grads(sampled, loss, pick, 2, 1e-5);
        INFO(strategy_name(strat) << ": " << res.checked << " entries, worst " << res.worst);
        CHECK(res.checked >= 60);
        CHECK(res.max_rel_err < 1e-4);
    }
}
