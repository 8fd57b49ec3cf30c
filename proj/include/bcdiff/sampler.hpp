#ifndef BCDIFF_SAMPLER_HPP
#define BCDIFF_SAMPLER_HPP

#include <cstdio>
#include <utility>
#include <vector>

#include "bcdiff/sde.hpp"
#include "bcdiff/spectrogram.hpp"

namespace bcdiff::sampler {

enum class Mode { PC, ODE };

inline const char* mode_name(Mode m) { return m == Mode::PC ? "pc" : "ode"; }

inline Mode parse_mode(const std::string& s) {
    if (s == "pc") return Mode::PC;
    if (s == "ode") return Mode::ODE;
    fail("unknown sampler mode '" + s + "' (expected pc|ode)");
}

struct SamplerConfig {
    int n_steps = 60;
    Mode mode = Mode::PC;
    int corrector_steps = 1;     // annealed Langevin steps after each predictor
    double corrector_snr = 0.5;  // step-size ratio r
    std::uint64_t seed = 0;
    bool deterministic_prior = false;  // start from y instead of y + sigma(1) z
    bool final_mean_step = false;      // one extra noise-free predictor at the end
    bool record_trajectory = false;    // keep (t, ||x||) per step for debugging

    void validate() const {
        require(n_steps >= 1, "SamplerConfig: n_steps must be >= 1");
        require(corrector_steps >= 0, "SamplerConfig: corrector_steps must be >= 0");
        require(corrector_snr > 0.0, "SamplerConfig: corrector_snr must be positive");
    }
};

struct SampleResult {
    ComplexSpectrogram x0_hat;
    int score_calls = 0;
    int corrector_skips = 0;
    std::vector<std::pair<double, double>> trajectory;  // (t, ||x||)
};

// One reverse-time Euler-Maruyama step from t to t - dt:
//   x' = x - gamma (y - x) dt + g(t)^2 score dt [+ g(t) sqrt(dt) z].
// Undoing the forward drift means stepping against gamma (y - x); the score
// term pulls toward the data mode. stochastic=false gives the noise-free
// (mean) step used by the optional final denoise.
inline ComplexSpectrogram predictor_step(const ComplexSpectrogram& x, const ComplexSpectrogram& y,
                                         const ComplexSpectrogram& score, double t, double dt,
                                         const sde::SdeParams& p, Rng& rng,
                                         bool stochastic = true) {
    require(dt > 0.0, "predictor_step: dt must be positive");
    require(t - dt >= -1e-12, "predictor_step: step would cross t=0");
    require_same_shape(x, y, "predictor_step");
    require_same_shape(x, score, "predictor_step");
    const double g = sde::diffusion_coeff(t, p);
    ComplexSpectrogram out = x - p.gamma * (y - x) * dt + (g * g * dt) * score;
    if (stochastic) {
        const double amp = g * std::sqrt(dt);
        for (Eigen::Index j = 0; j < out.cols(); ++j)
            for (Eigen::Index i = 0; i < out.rows(); ++i) out(i, j) += amp * rng.complex_normal();
    }
    return out;
}

// One annealed Langevin correction at fixed t with signal-to-noise ratio r:
//   eps = 2 (r ||z|| / ||s||)^2,  x' = x + eps s + sqrt(2 eps) z.
// A zero score leaves x unchanged (the step size is undefined there).
inline ComplexSpectrogram corrector_step(const ComplexSpectrogram& x,
                                         const ComplexSpectrogram& score, double r, Rng& rng,
                                         bool* skipped = nullptr) {
    require(r > 0.0, "corrector_step: snr ratio must be positive");
    require_same_shape(x, score, "corrector_step");
    ComplexSpectrogram z(x.rows(), x.cols());
    for (Eigen::Index j = 0; j < z.cols(); ++j)
        for (Eigen::Index i = 0; i < z.rows(); ++i) z(i, j) = rng.complex_normal();
    const double s_norm = score.norm();
    if (s_norm == 0.0) {
        if (skipped) *skipped = true;
        std::fprintf(stderr, "corrector_step: zero score norm, skipping correction\n");
        return x;
    }
    if (skipped) *skipped = false;
    const double eps = 2.0 * std::pow(r * z.norm() / s_norm, 2.0);
    return x + eps * score + std::sqrt(2.0 * eps) * z;
}

namespace detail {

inline void check_state(const ComplexSpectrogram& x, double t, int step, const char* what) {
    if (!all_finite(x))
        fail(std::string(what) + ": non-finite state at step " + str(step) + ", t=" + str(t));
}

inline ComplexSpectrogram draw_prior(const ComplexSpectrogram& y, const sde::SdeParams& p,
                                     const SamplerConfig& cfg, Rng& rng) {
    if (cfg.deterministic_prior) return y;
    const double sd = sde::perturbation_std(1.0, p);
    ComplexSpectrogram x = y;
    for (Eigen::Index j = 0; j < x.cols(); ++j)
        for (Eigen::Index i = 0; i < x.rows(); ++i) x(i, j) += sd * rng.complex_normal();
    return x;
}

}  // namespace detail

// Predictor-corrector reverse diffusion from the mixture-centered prior
// x_1 ~ N(y, sigma(1)^2 I) down a uniform grid to t_eps. Each of the N
// predictor steps is followed by corrector_steps Langevin corrections at the
// post-step time, so the default configuration spends exactly 2 score calls
// per step.
inline SampleResult pc_sample(const ScoreFn& score_fn, const ComplexSpectrogram& y,
                              const ComplexSpectrogram& yc, const SamplerConfig& cfg,
                              const sde::SdeParams& p) {
    cfg.validate();
    p.validate();
    Rng rng(cfg.seed);
    SampleResult res;
    ComplexSpectrogram x = detail::draw_prior(y, p, cfg, rng);
    const int N = cfg.n_steps;
    const double dt = (1.0 - p.t_eps) / N;

    for (int i = 0; i < N; ++i) {
        const double t = 1.0 - i * dt;
        const double t_next = i + 1 == N ? p.t_eps : t - dt;  // guard rounding at the end
        const ComplexSpectrogram s = score_fn(x, y, yc, t);
        ++res.score_calls;
        x = predictor_step(x, y, s, t, t - t_next, p, rng);
        detail::check_state(x, t_next, i, "pc_sample(predictor)");
        for (int c = 0; c < cfg.corrector_steps; ++c) {
            const ComplexSpectrogram sc = score_fn(x, y, yc, t_next);
            ++res.score_calls;
            bool skipped = false;
            x = corrector_step(x, sc, cfg.corrector_snr, rng, &skipped);
            if (skipped) ++res.corrector_skips;
            detail::check_state(x, t_next, i, "pc_sample(corrector)");
        }
        if (cfg.record_trajectory) res.trajectory.emplace_back(t_next, x.norm());
    }
    if (cfg.final_mean_step) {
        const ComplexSpectrogram s = score_fn(x, y, yc, p.t_eps);
        ++res.score_calls;
        x = predictor_step(x, y, s, p.t_eps, p.t_eps, p, rng, /*stochastic=*/false);
        detail::check_state(x, 0.0, N, "pc_sample(final mean)");
    }
    res.x0_hat = std::move(x);
    return res;
}

// Probability-flow ODE sharing the SDE's marginals:
//   dx = [gamma (y - x) - 1/2 g(t)^2 s(x, t)] dt,
// integrated backwards with Euler steps. Fully deterministic once the prior
// is fixed; with deterministic_prior there is no randomness at all.
inline SampleResult ode_sample(const ScoreFn& score_fn, const ComplexSpectrogram& y,
                               const ComplexSpectrogram& yc, const SamplerConfig& cfg,
                               const sde::SdeParams& p) {
    cfg.validate();
    p.validate();
    Rng rng(cfg.seed);
    SampleResult res;
    ComplexSpectrogram x = detail::draw_prior(y, p, cfg, rng);
    const int N = cfg.n_steps;
    const double dt = (1.0 - p.t_eps) / N;

    for (int i = 0; i < N; ++i) {
        const double t = 1.0 - i * dt;
        const double t_next = i + 1 == N ? p.t_eps : t - dt;
        const double step = t - t_next;
        const ComplexSpectrogram s = score_fn(x, y, yc, t);
        ++res.score_calls;
        const double g = sde::diffusion_coeff(t, p);
        x = x - p.gamma * (y - x) * step + (0.5 * g * g * step) * s;
        detail::check_state(x, t_next, i, "ode_sample");
        if (cfg.record_trajectory) res.trajectory.emplace_back(t_next, x.norm());
    }
    if (cfg.final_mean_step) {
        const ComplexSpectrogram s = score_fn(x, y, yc, p.t_eps);
        ++res.score_calls;
        const double g = sde::diffusion_coeff(p.t_eps, p);
        x = x - p.gamma * (y - x) * p.t_eps + (0.5 * g * g * p.t_eps) * s;
        detail::check_state(x, 0.0, N, "ode_sample(final mean)");
    }
    res.x0_hat = std::move(x);
    return res;
}

// Analytic conditional score for a known clean spectrogram; the oracle that
// recovery tests run the samplers against.
inline ScoreFn oracle_score(const ComplexSpectrogram& x0, const sde::SdeParams& p) {
    return [x0, p](const ComplexSpectrogram& xt, const ComplexSpectrogram& y,
                   const ComplexSpectrogram&, double t) {
        const ComplexSpectrogram mu = sde::perturbation_mean(x0, y, t, p);
        return sde::gaussian_score(xt, mu, sde::perturbation_std(t, p));
    };
}

}  // namespace bcdiff::sampler

#endif  // BCDIFF_SAMPLER_HPP
