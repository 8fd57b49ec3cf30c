#ifndef BCDIFF_NN_TENSOR_HPP
#define BCDIFF_NN_TENSOR_HPP

#include <cstdint>
#include <vector>

#include <Eigen/Core>

#include "bcdiff/core.hpp"

namespace bcdiff::nn {

// All tensor and parameter storage shares one fixed allocation alignment.
// Eigen picks SIMD kernels (and thus summation order) based on pointer
// alignment, so run-to-run bit determinism needs every buffer to sit on the
// same boundary.
template <typename T>
using AlignedVec = std::vector<T, Eigen::aligned_allocator<T>>;

// Dense activation tensor, channels x height x width, row-major planes.
// Vectors (time embeddings etc.) are carried as [n, 1, 1].
template <typename T>
struct Tensor {
    int c = 0, h = 0, w = 0;
    AlignedVec<T> v;

    Tensor() = default;
    Tensor(int c_, int h_, int w_)
        : c(c_), h(h_), w(w_), v(static_cast<std::size_t>(c_) * h_ * w_, T(0)) {
        require(c_ > 0 && h_ > 0 && w_ > 0, "Tensor: dims must be positive");
    }

    static Tensor vec(const std::vector<T>& data) {
        Tensor t;
        t.c = static_cast<int>(data.size());
        t.h = t.w = 1;
        t.v.assign(data.begin(), data.end());
        return t;
    }

    std::int64_t size() const { return static_cast<std::int64_t>(c) * h * w; }
    int plane_size() const { return h * w; }

    T* plane(int ci) { return v.data() + static_cast<std::size_t>(ci) * h * w; }
    const T* plane(int ci) const { return v.data() + static_cast<std::size_t>(ci) * h * w; }

    T& at(int ci, int hi, int wi) {
        return v[(static_cast<std::size_t>(ci) * h + hi) * w + wi];
    }
    T at(int ci, int hi, int wi) const {
        return v[(static_cast<std::size_t>(ci) * h + hi) * w + wi];
    }

    bool same_shape(const Tensor& o) const { return c == o.c && h == o.h && w == o.w; }
    std::string shape_str() const { return str(c) + "x" + str(h) + "x" + str(w); }

    void fill(T x) { std::fill(v.begin(), v.end(), x); }
};

}  // namespace bcdiff::nn

#endif  // BCDIFF_NN_TENSOR_HPP
