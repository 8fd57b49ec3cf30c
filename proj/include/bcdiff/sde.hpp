#ifndef BCDIFF_SDE_HPP
#define BCDIFF_SDE_HPP

#include <cmath>
#include <complex>
#include <vector>

#include "bcdiff/core.hpp"
#include "bcdiff/random.hpp"
#include "bcdiff/spectrogram.hpp"

namespace bcdiff::sde {

// Forward process: dx_t = gamma * (y - x_t) dt + g(t) dW_t on t in [0, 1].
// The drift pulls the state mean from clean speech x0 towards the noisy
// mixture y; the diffusion coefficient grows geometrically from sigma_min
// to sigma_max.
struct SdeParams {
    double gamma = 1.5;      // stiffness of the mean reversion towards y
    double sigma_min = 0.05;
    double sigma_max = 0.5;
    double t_eps = 0.03;     // smallest process time used in training/sampling

    void validate() const {
        require(gamma > 0.0, "SdeParams: gamma must be positive");
        require(sigma_min > 0.0, "SdeParams: sigma_min must be positive");
        require(sigma_max > sigma_min,
                "SdeParams: sigma_max must exceed sigma_min (log of the ratio must be positive)");
        require(t_eps > 0.0 && t_eps < 1.0, "SdeParams: t_eps must lie in (0,1)");
    }
};

// Drift f(x, y) = gamma * (y - x), elementwise. Works for scalars, complex
// scalars and spectrogram matrices alike.
template <typename State>
State drift(const State& x, const State& y, const SdeParams& p) {
    return p.gamma * (y - x);
}

inline ComplexSpectrogram drift(const ComplexSpectrogram& x, const ComplexSpectrogram& y,
                                const SdeParams& p) {
    require_same_shape(x, y, "drift");
    return (p.gamma * (y - x)).eval();
}

// Diffusion coefficient g(t) = sigma_min * (sigma_max/sigma_min)^t *
// sqrt(2 log(sigma_max/sigma_min)); monotonically increasing on [0,1].
inline double diffusion_coeff(double t, const SdeParams& p) {
    p.validate();
    const double ratio = p.sigma_max / p.sigma_min;
    return p.sigma_min * std::pow(ratio, t) * std::sqrt(2.0 * std::log(ratio));
}

// Mean of the perturbation kernel p_0t: the solution of
// d mu/dt = gamma * (y - mu), mu(0) = x0, i.e.
//   mu(t) = exp(-gamma t) x0 + (1 - exp(-gamma t)) y.
template <typename State>
State perturbation_mean(const State& x0, const State& y, double t, const SdeParams& p) {
    const double decay = std::exp(-p.gamma * t);
    return decay * x0 + (1.0 - decay) * y;
}

inline ComplexSpectrogram perturbation_mean(const ComplexSpectrogram& x0,
                                            const ComplexSpectrogram& y, double t,
                                            const SdeParams& p) {
    require_same_shape(x0, y, "perturbation_mean");
    const double decay = std::exp(-p.gamma * t);
    return (decay * x0 + (1.0 - decay) * y).eval();
}

// Standard deviation of the perturbation kernel, shared across all bins.
// The Ito isometry for the linear SDE above gives
//   sigma(t)^2 = int_0^t exp(-2 gamma (t-s)) g(s)^2 ds
//              = sigma_min^2 * log(k) / (gamma + log k) * (k^{2t} - e^{-2 gamma t}),
// with k = sigma_max / sigma_min. Validated against the Euler-Maruyama
// oracle below rather than against any published expression.
inline double perturbation_var(double t, const SdeParams& p) {
    const double logk = std::log(p.sigma_max / p.sigma_min);
    const double k2t = std::pow(p.sigma_max / p.sigma_min, 2.0 * t);
    return p.sigma_min * p.sigma_min * logk / (p.gamma + logk) *
           (k2t - std::exp(-2.0 * p.gamma * t));
}

inline double perturbation_std(double t, const SdeParams& p) {
    p.validate();
    const double v = perturbation_var(t, p);
    return v <= 0.0 ? 0.0 : std::sqrt(v);
}

// Score of a circularly-symmetric complex Gaussian with per-entry variance
// stddev^2: -(x - mean) / stddev^2. This is both the regression target of
// denoising score matching and the analytic stand-in model in sampler tests.
template <typename State>
State gaussian_score(const State& x, const State& mean, double stddev) {
    require(stddev > 0.0, "gaussian_score: stddev must be positive");
    return -(x - mean) / (stddev * stddev);
}

inline ComplexSpectrogram gaussian_score(const ComplexSpectrogram& x,
                                         const ComplexSpectrogram& mean, double stddev) {
    require(stddev > 0.0, "gaussian_score: stddev must be positive");
    require_same_shape(x, mean, "gaussian_score");
    return (-(x - mean) / (stddev * stddev)).eval();
}

// Draw x_t ~ p_0t(. | x0, y) = mean + stddev * z, z per-entry standard
// complex normal. Returns z as well so losses can be reparameterized.
struct SampleXt {
    ComplexSpectrogram xt;
    ComplexSpectrogram z;
    double mean_decay = 0.0;  // exp(-gamma t), handy for diagnostics
    double stddev = 0.0;
};

inline SampleXt sample_xt(const ComplexSpectrogram& x0, const ComplexSpectrogram& y, double t,
                          const SdeParams& p, Rng& rng) {
    p.validate();
    require_same_shape(x0, y, "sample_xt");
    require(t >= p.t_eps && t <= 1.0,
            "sample_xt: t=" + str(t) + " outside [t_eps=" + str(p.t_eps) + ", 1]");
    SampleXt out;
    out.mean_decay = std::exp(-p.gamma * t);
    out.stddev = perturbation_std(t, p);
    out.z.resize(x0.rows(), x0.cols());
    for (Eigen::Index j = 0; j < x0.cols(); ++j)
        for (Eigen::Index i = 0; i < x0.rows(); ++i) out.z(i, j) = rng.complex_normal();
    out.xt = perturbation_mean(x0, y, t, p) + out.stddev * out.z;
    return out;
}

// Euler-Maruyama simulation of the forward SDE on a uniform grid over [0,1].
// This is the independent oracle the closed-form kernel is validated against;
// it never calls perturbation_mean / perturbation_std.
template <typename State>
std::vector<State> euler_maruyama_forward(const State& x0, const State& y, int n_steps,
                                          const SdeParams& p, Rng& rng) {
    p.validate();
    require(n_steps >= 1, "euler_maruyama_forward: n_steps must be >= 1");
    const double dt = 1.0 / n_steps;
    const double sqrt_dt = std::sqrt(dt);
    std::vector<State> traj;
    traj.reserve(static_cast<std::size_t>(n_steps) + 1);
    traj.push_back(x0);
    State x = x0;
    for (int i = 0; i < n_steps; ++i) {
        const double t = i * dt;
        const double g = diffusion_coeff(t, p);
        x = x + p.gamma * (y - x) * dt + (g * sqrt_dt) * rng.complex_normal();
        traj.push_back(x);
    }
    return traj;
}

inline std::vector<ComplexSpectrogram> euler_maruyama_forward(const ComplexSpectrogram& x0,
                                                              const ComplexSpectrogram& y,
                                                              int n_steps, const SdeParams& p,
                                                              Rng& rng) {
    p.validate();
    require_same_shape(x0, y, "euler_maruyama_forward");
    require(n_steps >= 1, "euler_maruyama_forward: n_steps must be >= 1");
    const double dt = 1.0 / n_steps;
    const double sqrt_dt = std::sqrt(dt);
    std::vector<ComplexSpectrogram> traj;
    traj.reserve(static_cast<std::size_t>(n_steps) + 1);
    traj.push_back(x0);
    ComplexSpectrogram x = x0;
    ComplexSpectrogram z(x0.rows(), x0.cols());
    for (int i = 0; i < n_steps; ++i) {
        const double t = i * dt;
        const double g = diffusion_coeff(t, p);
        for (Eigen::Index c = 0; c < z.cols(); ++c)
            for (Eigen::Index r = 0; r < z.rows(); ++r) z(r, c) = rng.complex_normal();
        x = x + p.gamma * (y - x) * dt + (g * sqrt_dt) * z;
        traj.push_back(x);
    }
    return traj;
}

// Ensemble moments of the scalar forward process at selected snapshot times,
// estimated by Monte-Carlo over many Euler-Maruyama paths. Paths are sharded
// into fixed chunks with per-chunk seeds derived from the master seed and
// reduced in chunk order, so results do not depend on the worker count.
struct EnsembleMoments {
    std::vector<double> times;
    std::vector<std::complex<double>> mean;
    std::vector<double> stddev;              // per-entry complex std
    std::vector<double> mean_standard_error; // sqrt(var / n): 1-sigma radius of the mean estimate
    std::int64_t n_paths = 0;
};

inline EnsembleMoments ensemble_moments(std::complex<double> x0, std::complex<double> y,
                                        const SdeParams& p, std::int64_t n_paths, int n_steps,
                                        const std::vector<double>& snapshot_ts,
                                        std::uint64_t seed) {
    p.validate();
    require(n_paths >= 2, "ensemble_moments: need at least 2 paths");
    require(n_steps >= 1, "ensemble_moments: n_steps must be >= 1");

    const double dt = 1.0 / n_steps;
    const double sqrt_dt = std::sqrt(dt);

    // Map snapshot times onto grid indices (nearest step).
    std::vector<int> snap_idx(snapshot_ts.size());
    for (std::size_t k = 0; k < snapshot_ts.size(); ++k) {
        const double t = snapshot_ts[k];
        require(t >= 0.0 && t <= 1.0, "ensemble_moments: snapshot time outside [0,1]");
        snap_idx[k] = static_cast<int>(std::lround(t * n_steps));
    }

    // Precompute g(t) on the grid once.
    std::vector<double> g_grid(static_cast<std::size_t>(n_steps));
    for (int i = 0; i < n_steps; ++i) g_grid[static_cast<std::size_t>(i)] = diffusion_coeff(i * dt, p);

    struct Acc {
        std::vector<std::complex<double>> s1;
        std::vector<double> s2;
    };
    const std::int64_t chunk_size = 4096;
    const std::int64_t n_chunks = (n_paths + chunk_size - 1) / chunk_size;
    std::vector<Acc> accs(static_cast<std::size_t>(n_chunks));

    parallel_for(n_chunks, [&](std::int64_t c) {
        Acc acc;
        acc.s1.assign(snapshot_ts.size(), {0.0, 0.0});
        acc.s2.assign(snapshot_ts.size(), 0.0);
        Rng rng(derive_seed(seed, static_cast<std::uint64_t>(c)));
        const std::int64_t lo = c * chunk_size;
        const std::int64_t hi = std::min(n_paths, lo + chunk_size);
        for (std::int64_t pth = lo; pth < hi; ++pth) {
            std::complex<double> x = x0;
            int next_snap = 0;
            // snapshot index 0 may be t=0 itself
            while (next_snap < static_cast<int>(snap_idx.size()) &&
                   snap_idx[static_cast<std::size_t>(next_snap)] == 0) {
                acc.s1[static_cast<std::size_t>(next_snap)] += x;
                acc.s2[static_cast<std::size_t>(next_snap)] += std::norm(x);
                ++next_snap;
            }
            for (int i = 0; i < n_steps; ++i) {
                x += p.gamma * (y - x) * dt + (g_grid[static_cast<std::size_t>(i)] * sqrt_dt) *
                                                  rng.complex_normal();
                while (next_snap < static_cast<int>(snap_idx.size()) &&
                       snap_idx[static_cast<std::size_t>(next_snap)] == i + 1) {
                    acc.s1[static_cast<std::size_t>(next_snap)] += x;
                    acc.s2[static_cast<std::size_t>(next_snap)] += std::norm(x);
                    ++next_snap;
                }
            }
        }
        accs[static_cast<std::size_t>(c)] = std::move(acc);
    });

    EnsembleMoments out;
    out.times = snapshot_ts;
    out.n_paths = n_paths;
    out.mean.resize(snapshot_ts.size());
    out.stddev.resize(snapshot_ts.size());
    out.mean_standard_error.resize(snapshot_ts.size());
    for (std::size_t k = 0; k < snapshot_ts.size(); ++k) {
        std::complex<double> s1{0.0, 0.0};
        double s2 = 0.0;
        for (const Acc& a : accs) {  // fixed chunk order
            s1 += a.s1[k];
            s2 += a.s2[k];
        }
        const double n = static_cast<double>(n_paths);
        const std::complex<double> m = s1 / n;
        const double var = std::max(0.0, s2 / n - std::norm(m));
        out.mean[k] = m;
        out.stddev[k] = std::sqrt(var);
        out.mean_standard_error[k] = std::sqrt(var / n);
    }
    return out;
}

}  // namespace bcdiff::sde

#endif  // BCDIFF_SDE_HPP
