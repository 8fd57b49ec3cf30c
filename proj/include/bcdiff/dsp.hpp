#ifndef BCDIFF_DSP_HPP
#define BCDIFF_DSP_HPP

#include <algorithm>
#include <cmath>
#include <complex>
#include <cstring>
#include <mutex>
#include <numbers>
#include <string>
#include <vector>

#include <fftw3.h>

#include "bcdiff/random.hpp"
#include "bcdiff/spectrogram.hpp"

namespace bcdiff::dsp {

struct Waveform {
    std::vector<double> samples;
    int sample_rate = 16000;

    double duration_s() const {
        return static_cast<double>(samples.size()) / sample_rate;
    }
};

inline bool all_finite(const Waveform& w) {
    for (double s : w.samples)
        if (!std::isfinite(s)) return false;
    return true;
}

// Scales so the peak magnitude hits `peak`; silence is left alone.
// Returns the factor applied.
inline double normalize_peak(Waveform& w, double peak = 0.95) {
    require(peak > 0.0, "normalize_peak: peak must be positive");
    double m = 0.0;
    for (double s : w.samples) m = std::max(m, std::abs(s));
    if (m == 0.0) return 1.0;
    const double k = peak / m;
    for (double& s : w.samples) s *= k;
    return k;
}

// Front-end geometry. Window 510 with hop 128 gives the 256 one-sided bins
// the score network expects; the toy pipeline shrinks both.
struct StftConfig {
    int window_len = 510;
    int hop = 128;
    int n_frames_target = 256;
    // Elementwise magnitude compression c * |X|^alpha before the model and
    // its inverse after. alpha=1, c=1 switches it off.
    double compress_exponent = 0.5;
    double compress_scale = 0.15;

    int freq_bins() const { return window_len / 2 + 1; }

    void validate() const {
        require(window_len >= 4, "StftConfig: window_len must be >= 4");
        require(window_len % 2 == 0, "StftConfig: window_len must be even");
        require(hop >= 1, "StftConfig: hop must be >= 1");
        require(hop <= window_len, "StftConfig: hop must not exceed window_len");
        require(n_frames_target >= 1, "StftConfig: n_frames_target must be >= 1");
        require(compress_exponent > 0.0 && compress_exponent <= 1.0,
                "StftConfig: compress_exponent must lie in (0, 1]");
        require(compress_scale > 0.0, "StftConfig: compress_scale must be positive");
    }
};

inline std::vector<double> periodic_hann(int n) {
    require(n >= 1, "periodic_hann: length must be >= 1");
    std::vector<double> w(n);
    for (int i = 0; i < n; ++i) w[i] = 0.5 * (1.0 - std::cos(2.0 * std::numbers::pi * i / n));
    return w;
}

// c |X|^alpha e^{i angle(X)} elementwise; exact passthrough in identity mode.
inline ComplexSpectrogram compress_magnitude(const ComplexSpectrogram& x, const StftConfig& cfg) {
    if (cfg.compress_exponent == 1.0 && cfg.compress_scale == 1.0) return x;
    ComplexSpectrogram out(x.rows(), x.cols());
    for (Eigen::Index j = 0; j < x.cols(); ++j)
        for (Eigen::Index i = 0; i < x.rows(); ++i) {
            const std::complex<double> v = x(i, j);
            const double mag = std::abs(v);
            if (mag == 0.0) {
                out(i, j) = 0.0;
            } else if (cfg.compress_exponent == 1.0) {
                out(i, j) = cfg.compress_scale * v;
            } else {
                out(i, j) =
                    cfg.compress_scale * std::pow(mag, cfg.compress_exponent) * (v / mag);
            }
        }
    return out;
}

inline ComplexSpectrogram decompress_magnitude(const ComplexSpectrogram& x,
                                               const StftConfig& cfg) {
    if (cfg.compress_exponent == 1.0 && cfg.compress_scale == 1.0) return x;
    ComplexSpectrogram out(x.rows(), x.cols());
    for (Eigen::Index j = 0; j < x.cols(); ++j)
        for (Eigen::Index i = 0; i < x.rows(); ++i) {
            const std::complex<double> v = x(i, j);
            const double mag = std::abs(v);
            if (mag == 0.0) {
                out(i, j) = 0.0;
            } else if (cfg.compress_exponent == 1.0) {
                out(i, j) = v / cfg.compress_scale;
            } else {
                out(i, j) = std::pow(mag / cfg.compress_scale, 1.0 / cfg.compress_exponent) *
                            (v / mag);
            }
        }
    return out;
}

namespace detail {

// Thin wrapper over FFTW's real transforms. Plan creation is not thread
// safe, so it happens under a process-wide mutex; execution stays on the
// instance's own buffers and each caller owns its instance.
class RealFft {
  public:
    explicit RealFft(int n) : n_(n) {
        require(n >= 2, "RealFft: size must be >= 2");
        std::lock_guard<std::mutex> lock(plan_mutex());
        real_ = fftw_alloc_real(static_cast<std::size_t>(n));
        cplx_ = fftw_alloc_complex(static_cast<std::size_t>(n / 2 + 1));
        require(real_ != nullptr && cplx_ != nullptr, "RealFft: allocation failed");
        fwd_ = fftw_plan_dft_r2c_1d(n, real_, cplx_, FFTW_ESTIMATE);
        inv_ = fftw_plan_dft_c2r_1d(n, cplx_, real_, FFTW_ESTIMATE);
        require(fwd_ != nullptr && inv_ != nullptr, "RealFft: planning failed");
    }

    ~RealFft() {
        std::lock_guard<std::mutex> lock(plan_mutex());
        fftw_destroy_plan(fwd_);
        fftw_destroy_plan(inv_);
        fftw_free(real_);
        fftw_free(cplx_);
    }

    RealFft(const RealFft&) = delete;
    RealFft& operator=(const RealFft&) = delete;

    // Unnormalized forward transform, n reals -> n/2+1 complex bins.
    void forward(const double* in, std::complex<double>* out) {
        std::memcpy(real_, in, sizeof(double) * static_cast<std::size_t>(n_));
        fftw_execute(fwd_);
        std::memcpy(out, cplx_, sizeof(fftw_complex) * static_cast<std::size_t>(n_ / 2 + 1));
    }

    // Inverse with 1/n normalization so inverse(forward(x)) == x.
    void inverse(const std::complex<double>* in, double* out) {
        std::memcpy(cplx_, in, sizeof(fftw_complex) * static_cast<std::size_t>(n_ / 2 + 1));
        fftw_execute(inv_);
        const double k = 1.0 / n_;
        for (int i = 0; i < n_; ++i) out[i] = real_[i] * k;
    }

  private:
    static std::mutex& plan_mutex() {
        static std::mutex m;
        return m;
    }

    int n_;
    double* real_;
    fftw_complex* cplx_;
    fftw_plan fwd_, inv_;
};

// Index into a signal of length n under reflection (no edge repeat).
inline int reflect_index(int j, int n) {
    if (n == 1) return 0;
    const int period = 2 * n - 2;
    j %= period;
    if (j < 0) j += period;
    return j < n ? j : period - j;
}

}  // namespace detail

// Centered STFT with reflect padding: frame k covers padded samples
// [k*hop, k*hop + window_len) and the padded signal adds window_len/2
// reflected samples on each side. Frames = 1 + floor(len/hop).
// Output is freq_bins x frames with the configured compression applied.
inline ComplexSpectrogram stft(const Waveform& w, const StftConfig& cfg) {
    cfg.validate();
    const int len = static_cast<int>(w.samples.size());
    require(len >= cfg.window_len,
            "stft: input length " + str(len) + " shorter than window " + str(cfg.window_len));
    require(all_finite(w), "stft: non-finite sample in input");

    const int W = cfg.window_len;
    const int H = cfg.hop;
    const int P = W / 2;
    const int bins = cfg.freq_bins();
    const int frames = 1 + len / H;
    const std::vector<double> win = periodic_hann(W);

    detail::RealFft fft(W);
    std::vector<double> frame(static_cast<std::size_t>(W));
    std::vector<std::complex<double>> spec(static_cast<std::size_t>(bins));
    ComplexSpectrogram out(bins, frames);
    for (int k = 0; k < frames; ++k) {
        const int start = k * H - P;
        for (int i = 0; i < W; ++i)
            frame[static_cast<std::size_t>(i)] =
                win[static_cast<std::size_t>(i)] *
                w.samples[static_cast<std::size_t>(detail::reflect_index(start + i, len))];
        fft.forward(frame.data(), spec.data());
        for (int b = 0; b < bins; ++b) out(b, k) = spec[static_cast<std::size_t>(b)];
    }
    return compress_magnitude(out, cfg);
}

// Least-squares weighted overlap-add inverse: accumulate w * frame and w^2,
// divide where the squared-window mass is positive. Exact on unmodified
// frames for any window/hop combination with full coverage.
inline Waveform istft(const ComplexSpectrogram& spec, const StftConfig& cfg, int out_len,
                      int sample_rate = 16000) {
    cfg.validate();
    require(out_len >= 1, "istft: out_len must be >= 1");
    require(spec.rows() == cfg.freq_bins(),
            "istft: expected " + str(cfg.freq_bins()) + " bins, got " + str(spec.rows()));
    const int W = cfg.window_len;
    const int H = cfg.hop;
    const int P = W / 2;
    const int frames = static_cast<int>(spec.cols());
    require(P + out_len <= (frames - 1) * H + W,
            "istft: " + str(frames) + " frames cover fewer than " + str(out_len) + " samples");

    const ComplexSpectrogram raw = decompress_magnitude(spec, cfg);
    const std::vector<double> win = periodic_hann(W);
    const int padded_len = (frames - 1) * H + W;
    std::vector<double> acc(static_cast<std::size_t>(padded_len), 0.0);
    std::vector<double> den(static_cast<std::size_t>(padded_len), 0.0);

    detail::RealFft fft(W);
    std::vector<std::complex<double>> bins_buf(static_cast<std::size_t>(cfg.freq_bins()));
    std::vector<double> frame(static_cast<std::size_t>(W));
    for (int k = 0; k < frames; ++k) {
        for (int b = 0; b < cfg.freq_bins(); ++b) bins_buf[static_cast<std::size_t>(b)] = raw(b, k);
        fft.inverse(bins_buf.data(), frame.data());
        const int base = k * H;
        for (int i = 0; i < W; ++i) {
            acc[static_cast<std::size_t>(base + i)] +=
                win[static_cast<std::size_t>(i)] * frame[static_cast<std::size_t>(i)];
            den[static_cast<std::size_t>(base + i)] +=
                win[static_cast<std::size_t>(i)] * win[static_cast<std::size_t>(i)];
        }
    }

    Waveform out;
    out.sample_rate = sample_rate;
    out.samples.resize(static_cast<std::size_t>(out_len));
    for (int m = 0; m < out_len; ++m) {
        const double d = den[static_cast<std::size_t>(P + m)];
        if (d <= 1e-12)
            fail("istft: zero overlap-add normalization at sample " + str(m) +
                 " (degenerate window/hop)");
        out.samples[static_cast<std::size_t>(m)] = acc[static_cast<std::size_t>(P + m)] / d;
    }
    return out;
}

// A fixed-width view of a spectrogram for the model: the frame payload plus
// how many of its frames are real and where they came from.
struct FramedExample {
    ComplexSpectrogram frames;
    int n_valid = 0;  // leading frames that are actual signal, rest are padding
    int offset = 0;   // frame index in the source the crop starts at
};

// Training-side fit: random crop when over-long (seeded), zero-pad with a
// valid-frame count when short, identity at the target width.
inline FramedExample fit_frames_train(const ComplexSpectrogram& spec, int target, Rng& rng) {
    require(target >= 1, "fit_frames_train: target must be >= 1");
    const int T = static_cast<int>(spec.cols());
    require(T >= 1, "fit_frames_train: empty spectrogram");
    FramedExample out;
    if (T == target) {
        out.frames = spec;
        out.n_valid = T;
        out.offset = 0;
    } else if (T > target) {
        out.offset = static_cast<int>(rng.uniform_int(T - target + 1));
        out.frames = spec.middleCols(out.offset, target);
        out.n_valid = target;
    } else {
        out.frames = ComplexSpectrogram::Zero(spec.rows(), target);
        out.frames.leftCols(T) = spec;
        out.n_valid = T;
        out.offset = 0;
    }
    return out;
}

// Inference-side fit: cover the timeline with fixed-width chunks that
// overlap, so processed chunks can be cross-faded back together.
struct ChunkPlan {
    int target = 0;
    int t_orig = 0;
    std::vector<int> starts;  // chunk c covers frames [starts[c], starts[c]+target)
};

inline ChunkPlan plan_chunks(int t_orig, int target, int overlap) {
    require(target >= 1, "plan_chunks: target must be >= 1");
    require(t_orig >= 1, "plan_chunks: empty spectrogram");
    require(overlap >= 0 && overlap < target, "plan_chunks: overlap must lie in [0, target)");
    ChunkPlan plan;
    plan.target = target;
    plan.t_orig = t_orig;
    if (t_orig <= target) {
        plan.starts.push_back(0);
        return plan;
    }
    const int step = target - overlap;
    for (int s = 0;; s += step) {
        if (s + target >= t_orig) {
            plan.starts.push_back(t_orig - target);
            break;
        }
        plan.starts.push_back(s);
    }
    return plan;
}

inline std::vector<FramedExample> cut_chunks(const ComplexSpectrogram& spec,
                                             const ChunkPlan& plan) {
    require(static_cast<int>(spec.cols()) == plan.t_orig, "cut_chunks: plan/spectrogram mismatch");
    std::vector<FramedExample> chunks;
    chunks.reserve(plan.starts.size());
    for (int s : plan.starts) {
        FramedExample ex;
        ex.offset = s;
        if (plan.t_orig <= plan.target) {
            ex.frames = ComplexSpectrogram::Zero(spec.rows(), plan.target);
            ex.frames.leftCols(plan.t_orig) = spec;
            ex.n_valid = plan.t_orig;
        } else {
            ex.frames = spec.middleCols(s, plan.target);
            ex.n_valid = plan.target;
        }
        chunks.push_back(std::move(ex));
    }
    return chunks;
}

// Reassembles processed chunks onto the original timeline. Where two
// consecutive chunks overlap, a linear ramp fades the left one out and the
// right one in; identical chunk contents therefore reproduce the source
// exactly regardless of the ramp.
inline ComplexSpectrogram merge_chunks(const std::vector<ComplexSpectrogram>& chunks,
                                       const ChunkPlan& plan) {
    require(chunks.size() == plan.starts.size(), "merge_chunks: chunk count mismatch");
    require(!chunks.empty(), "merge_chunks: no chunks");
    const Eigen::Index bins = chunks.front().rows();
    for (const auto& c : chunks) {
        require(c.rows() == bins && static_cast<int>(c.cols()) == plan.target,
                "merge_chunks: chunk shape mismatch");
    }
    if (plan.t_orig <= plan.target) return chunks.front().leftCols(plan.t_orig);

    ComplexSpectrogram out(bins, plan.t_orig);
    int written = 0;  // frames [0, written) are final
    for (std::size_t c = 0; c < chunks.size(); ++c) {
        const int s = plan.starts[c];
        const int overlap_here = written - s;
        if (overlap_here > 0) {
            // written-overlap region fades between the accumulated result
            // and this chunk: out + (chunk - out) * ramp.
            for (int i = 0; i < overlap_here; ++i) {
                const double ramp = (i + 1.0) / (overlap_here + 1.0);
                for (Eigen::Index b = 0; b < bins; ++b) {
                    const std::complex<double> a = out(b, s + i);
                    const std::complex<double> v = chunks[c](b, i);
                    out(b, s + i) = a + (v - a) * ramp;
                }
            }
        }
        const int fresh_from = std::max(overlap_here, 0);
        for (int i = fresh_from; i < plan.target; ++i) out.col(s + i) = chunks[c].col(i);
        written = s + plan.target;
    }
    return out;
}

}  // namespace bcdiff::dsp

#endif  // BCDIFF_DSP_HPP
