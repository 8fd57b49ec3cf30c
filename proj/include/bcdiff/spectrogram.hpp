#ifndef BCDIFF_SPECTROGRAM_HPP
#define BCDIFF_SPECTROGRAM_HPP

#include <cmath>
#include <complex>
#include <functional>

#include <Eigen/Dense>

#include "bcdiff/core.hpp"

namespace bcdiff {

// Complex STFT frame matrix, frequency bins x frames. Houses the clean
// spectrogram x0, the process state x_t, the noisy mixture y and the
// bone-conducted conditioner y_c.
using ComplexSpectrogram = Eigen::MatrixXcd;

// Conditional score estimate s(x_t, y, y_c, t); backed by a trained network
// or by the analytic kernel score in oracle tests.
using ScoreFn = std::function<ComplexSpectrogram(
    const ComplexSpectrogram& xt, const ComplexSpectrogram& y, const ComplexSpectrogram& yc,
    double t)>;

// One-sided bin count of the default front-end (window 510).
inline constexpr int kDefaultFreqBins = 256;

inline bool all_finite(const ComplexSpectrogram& s) {
    for (Eigen::Index j = 0; j < s.cols(); ++j)
        for (Eigen::Index i = 0; i < s.rows(); ++i) {
            const auto& v = s(i, j);
            if (!std::isfinite(v.real()) || !std::isfinite(v.imag())) return false;
        }
    return true;
}

inline void require_same_shape(const ComplexSpectrogram& a, const ComplexSpectrogram& b,
                               const char* what) {
    if (a.rows() != b.rows() || a.cols() != b.cols()) {
        fail(std::string(what) + ": shape mismatch (" + str(a.rows()) + "x" + str(a.cols()) +
             " vs " + str(b.rows()) + "x" + str(b.cols()) + ")");
    }
}

inline double frob_norm(const ComplexSpectrogram& s) { return s.norm(); }

}  // namespace bcdiff

#endif  // BCDIFF_SPECTROGRAM_HPP
