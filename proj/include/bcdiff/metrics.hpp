#ifndef BCDIFF_METRICS_HPP
#define BCDIFF_METRICS_HPP

#include <cmath>
#include <string>

#include "bcdiff/dsp.hpp"

namespace bcdiff::metrics {

// Clamp for ratios that blow up on (near-)identical signals; keeps CSV
// aggregates finite. The floor mirrors it for orthogonal estimates.
inline constexpr double kSiSdrCapDb = 100.0;

// Scale-invariant SDR: project the estimate onto the reference, then compare
// the projected target against the residual.
inline double si_sdr(const dsp::Waveform& estimate, const dsp::Waveform& reference) {
    require(estimate.samples.size() == reference.samples.size(),
            "si_sdr: length mismatch (" + str(estimate.samples.size()) + " vs " +
                str(reference.samples.size()) + ")");
    require(!reference.samples.empty(), "si_sdr: empty reference");

    double rr = 0.0, er = 0.0;
    for (std::size_t i = 0; i < reference.samples.size(); ++i) {
        rr += reference.samples[i] * reference.samples[i];
        er += estimate.samples[i] * reference.samples[i];
    }
    require(rr > 0.0, "si_sdr: zero reference");

    const double alpha = er / rr;
    const double target = alpha * alpha * rr;
    double residual = 0.0;
    for (std::size_t i = 0; i < reference.samples.size(); ++i) {
        const double d = estimate.samples[i] - alpha * reference.samples[i];
        residual += d * d;
    }
    if (target <= 0.0) return -kSiSdrCapDb;
    if (residual <= 0.0) return kSiSdrCapDb;
    const double db = 10.0 * std::log10(target / residual);
    return std::clamp(db, -kSiSdrCapDb, kSiSdrCapDb);
}

// RMS over frames and bins of the log-magnitude gap in dB, on uncompressed
// spectrograms. Magnitudes are floored so silence cannot produce infinities.
inline double log_spectral_distance(const dsp::Waveform& estimate,
                                    const dsp::Waveform& reference,
                                    const dsp::StftConfig& stft_cfg = dsp::StftConfig{},
                                    double floor = 1e-12) {
    require(estimate.samples.size() == reference.samples.size(),
            "log_spectral_distance: length mismatch");
    require(estimate.sample_rate == reference.sample_rate,
            "log_spectral_distance: sample rate mismatch");
    dsp::StftConfig cfg = stft_cfg;
    cfg.compress_exponent = 1.0;
    cfg.compress_scale = 1.0;

    const ComplexSpectrogram se = dsp::stft(estimate, cfg);
    const ComplexSpectrogram sr = dsp::stft(reference, cfg);
    double acc = 0.0;
    for (int f = 0; f < se.rows(); ++f) {
        for (int t = 0; t < se.cols(); ++t) {
            const double me = std::max(std::abs(se(f, t)), floor);
            const double mr = std::max(std::abs(sr(f, t)), floor);
            const double d = 20.0 * (std::log10(me) - std::log10(mr));
            acc += d * d;
        }
    }
    return std::sqrt(acc / static_cast<double>(se.size()));
}

}  // namespace bcdiff::metrics

#endif  // BCDIFF_METRICS_HPP
