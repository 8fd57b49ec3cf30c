#ifndef BCDIFF_NN_TAPE_HPP
#define BCDIFF_NN_TAPE_HPP

#include <cmath>
#include <functional>
#include <memory>
#include <vector>

#include <Eigen/Dense>

#include "bcdiff/nn/param.hpp"
#include "bcdiff/nn/tensor.hpp"

namespace bcdiff::nn {

// Reverse-mode autodiff over a linear tape of tensor nodes. Each op records
// its output value plus a closure that routes the output gradient to the
// inputs (and into Param::grad for learnable layers). backward() walks the
// closures in reverse creation order, so a node may be consumed any number
// of times and gradients simply accumulate.
//
// The tape owns activations for one network evaluation; batches are handled
// by building one tape per sample and letting parameter gradients accumulate
// across tapes.
template <typename T>
class Tape {
public:
    using MatR = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
    using Vec = Eigen::Matrix<T, Eigen::Dynamic, 1>;

    const Tensor<T>& val(int id) const { return nodes_[check(id)].val; }
    const Tensor<T>& grad(int id) const { return nodes_[check(id)].grad; }
    std::size_t node_count() const { return nodes_.size(); }

    // Leaf holding external data. Its gradient is still tracked so callers
    // can read d(loss)/d(input), e.g. for conditioning sensitivity checks.
    int input(Tensor<T> x) {
        return push(std::move(x), nullptr);
    }

    // y = conv(x, w) + b with stride 1 and zero padding k/2 (odd k), so the
    // spatial size is preserved. w shape [out_c, in_c, k, k], b shape [out_c].
    // Lowered to a GEMM over the im2col matrix; the backward pass reuses the
    // cached column matrix for the weight gradient and scatters the data
    // gradient back with col2im.
    int conv2d(int x, Param<T>& w, Param<T>& b, int k) {
        const Tensor<T>& xin = val(x);
        require(k % 2 == 1, "conv2d: kernel must be odd");
        require(w.shape.size() == 4 && w.shape[2] == k && w.shape[3] == k,
                "conv2d: weight shape mismatch for " + w.name);
        const int in_c = w.shape[1], out_c = w.shape[0];
        require(xin.c == in_c, "conv2d: input has " + str(xin.c) + " channels, " + w.name +
                                   " expects " + str(in_c));
        require(static_cast<std::int64_t>(b.shape.size()) == 1 && b.shape[0] == out_c,
                "conv2d: bias shape mismatch for " + b.name);

        const int H = xin.h, W = xin.w, pad = k / 2;
        const int K = in_c * k * k, N = H * W;
        auto col = std::make_shared<MatR>(K, N);
        im2col(xin, k, pad, *col);

        Tensor<T> out(out_c, H, W);
        Eigen::Map<const MatR> Wm(w.value.data(), out_c, K);
        Eigen::Map<MatR> Ym(out.v.data(), out_c, N);
        Ym.noalias() = Wm * (*col);
        for (int oc = 0; oc < out_c; ++oc) {
            T* p = out.plane(oc);
            const T bias = b.value[static_cast<std::size_t>(oc)];
            for (int i = 0; i < N; ++i) p[i] += bias;
        }

        return push(std::move(out), [this, x, &w, &b, k, col](const Tensor<T>& g) {
            const int out_c = w.shape[0], in_c = w.shape[1];
            const int H = g.h, W = g.w, N = H * W, K = in_c * k * k;
            Eigen::Map<const MatR> Gm(g.v.data(), out_c, N);
            Eigen::Map<MatR> dWm(w.grad.data(), out_c, K);
            dWm.noalias() += Gm * col->transpose();
            for (int oc = 0; oc < out_c; ++oc)
                b.grad[static_cast<std::size_t>(oc)] += Gm.row(oc).sum();
            Eigen::Map<const MatR> Wm(w.value.data(), out_c, K);
            MatR dcol(K, N);
            dcol.noalias() = Wm.transpose() * Gm;
            col2im(dcol, k, k / 2, nodes_[static_cast<std::size_t>(x)].grad);
        });
    }

    // y = W x + b over a vector node [n,1,1]. w shape [out_n, in_n].
    int linear(int x, Param<T>& w, Param<T>& b) {
        const Tensor<T>& xin = val(x);
        require(w.shape.size() == 2, "linear: weight shape mismatch for " + w.name);
        const int out_n = w.shape[0], in_n = w.shape[1];
        require(xin.size() == in_n, "linear: input size " + str(xin.size()) + ", " + w.name +
                                        " expects " + str(in_n));
        Tensor<T> out(out_n, 1, 1);
        Eigen::Map<const MatR> Wm(w.value.data(), out_n, in_n);
        Eigen::Map<const Vec> xv(xin.v.data(), in_n);
        Eigen::Map<const Vec> bv(b.value.data(), out_n);
        Eigen::Map<Vec> yv(out.v.data(), out_n);
        yv.noalias() = Wm * xv + bv;

        return push(std::move(out), [this, x, &w, &b](const Tensor<T>& g) {
            const int out_n = w.shape[0], in_n = w.shape[1];
            const Tensor<T>& xin = nodes_[static_cast<std::size_t>(x)].val;
            Eigen::Map<const Vec> gv(g.v.data(), out_n);
            Eigen::Map<const Vec> xv(xin.v.data(), in_n);
            Eigen::Map<MatR> dWm(w.grad.data(), out_n, in_n);
            dWm.noalias() += gv * xv.transpose();
            Eigen::Map<Vec> dbv(b.grad.data(), out_n);
            dbv.noalias() += gv;
            Eigen::Map<const MatR> Wm(w.value.data(), out_n, in_n);
            Eigen::Map<Vec> dxv(nodes_[static_cast<std::size_t>(x)].grad.v.data(), in_n);
            dxv.noalias() += Wm.transpose() * gv;
        });
    }

    // Group normalization with learned per-channel gain/bias. Statistics are
    // computed over each group of channels jointly with the spatial dims.
    int group_norm(int x, Param<T>& gamma, Param<T>& beta, int groups, T eps = T(1e-5)) {
        const Tensor<T>& xin = val(x);
        require(groups >= 1 && xin.c % groups == 0,
                "group_norm: channels " + str(xin.c) + " not divisible by groups " + str(groups));
        require(gamma.shape.size() == 1 && gamma.shape[0] == xin.c,
                "group_norm: gamma shape mismatch for " + gamma.name);
        const int cpg = xin.c / groups, plane = xin.plane_size();
        const std::int64_t n = static_cast<std::int64_t>(cpg) * plane;

        Tensor<T> out(xin.c, xin.h, xin.w);
        auto stats = std::make_shared<std::vector<T>>(static_cast<std::size_t>(groups) * 2);
        for (int gi = 0; gi < groups; ++gi) {
            const T* src = xin.plane(gi * cpg);
            double s1 = 0.0, s2 = 0.0;
            for (std::int64_t i = 0; i < n; ++i) {
                s1 += static_cast<double>(src[i]);
                s2 += static_cast<double>(src[i]) * src[i];
            }
            const double mean = s1 / static_cast<double>(n);
            const double var = std::max(0.0, s2 / static_cast<double>(n) - mean * mean);
            const T inv_std = static_cast<T>(1.0 / std::sqrt(var + static_cast<double>(eps)));
            (*stats)[static_cast<std::size_t>(gi) * 2] = static_cast<T>(mean);
            (*stats)[static_cast<std::size_t>(gi) * 2 + 1] = inv_std;
            for (int cc = 0; cc < cpg; ++cc) {
                const int ch = gi * cpg + cc;
                const T* xp = xin.plane(ch);
                T* yp = out.plane(ch);
                const T gch = gamma.value[static_cast<std::size_t>(ch)];
                const T bch = beta.value[static_cast<std::size_t>(ch)];
                for (int i = 0; i < plane; ++i)
                    yp[i] = gch * (xp[i] - static_cast<T>(mean)) * inv_std + bch;
            }
        }

        return push(std::move(out), [this, x, &gamma, &beta, groups, stats](const Tensor<T>& g) {
            const Tensor<T>& xin = nodes_[static_cast<std::size_t>(x)].val;
            Tensor<T>& dx = nodes_[static_cast<std::size_t>(x)].grad;
            const int cpg = xin.c / groups, plane = xin.plane_size();
            const std::int64_t n = static_cast<std::int64_t>(cpg) * plane;
            for (int gi = 0; gi < groups; ++gi) {
                const T mean = (*stats)[static_cast<std::size_t>(gi) * 2];
                const T inv_std = (*stats)[static_cast<std::size_t>(gi) * 2 + 1];
                // Accumulate the two reduction terms of the normalization
                // backward pass: mean of d_xhat and mean of d_xhat * xhat.
                double sum_dxh = 0.0, sum_dxh_xh = 0.0;
                for (int cc = 0; cc < cpg; ++cc) {
                    const int ch = gi * cpg + cc;
                    const T* xp = xin.plane(ch);
                    const T* gp = g.plane(ch);
                    const T gch = gamma.value[static_cast<std::size_t>(ch)];
                    double dgamma = 0.0, dbeta = 0.0;
                    for (int i = 0; i < plane; ++i) {
                        const T xh = (xp[i] - mean) * inv_std;
                        const T dxh = gp[i] * gch;
                        dgamma += static_cast<double>(gp[i]) * xh;
                        dbeta += static_cast<double>(gp[i]);
                        sum_dxh += static_cast<double>(dxh);
                        sum_dxh_xh += static_cast<double>(dxh) * xh;
                    }
                    gamma.grad[static_cast<std::size_t>(ch)] += static_cast<T>(dgamma);
                    beta.grad[static_cast<std::size_t>(ch)] += static_cast<T>(dbeta);
                }
                const T m_dxh = static_cast<T>(sum_dxh / static_cast<double>(n));
                const T m_dxh_xh = static_cast<T>(sum_dxh_xh / static_cast<double>(n));
                for (int cc = 0; cc < cpg; ++cc) {
                    const int ch = gi * cpg + cc;
                    const T* xp = xin.plane(ch);
                    const T* gp = g.plane(ch);
                    T* dp = dx.plane(ch);
                    const T gch = gamma.value[static_cast<std::size_t>(ch)];
                    for (int i = 0; i < plane; ++i) {
                        const T xh = (xp[i] - mean) * inv_std;
                        const T dxh = gp[i] * gch;
                        dp[i] += (dxh - m_dxh - xh * m_dxh_xh) * inv_std;
                    }
                }
            }
        });
    }

    // y = x * sigmoid(x)
    int silu(int x) {
        const Tensor<T>& xin = val(x);
        Tensor<T> out(xin.c, xin.h, xin.w);
        for (std::int64_t i = 0; i < xin.size(); ++i) {
            const T s = sigmoid(xin.v[static_cast<std::size_t>(i)]);
            out.v[static_cast<std::size_t>(i)] = xin.v[static_cast<std::size_t>(i)] * s;
        }
        return push(std::move(out), [this, x](const Tensor<T>& g) {
            const Tensor<T>& xin = nodes_[static_cast<std::size_t>(x)].val;
            Tensor<T>& dx = nodes_[static_cast<std::size_t>(x)].grad;
            for (std::int64_t i = 0; i < xin.size(); ++i) {
                const std::size_t k = static_cast<std::size_t>(i);
                const T s = sigmoid(xin.v[k]);
                dx.v[k] += g.v[k] * s * (T(1) + xin.v[k] * (T(1) - s));
            }
        });
    }

    // y = ca * a + cb * b, elementwise; covers plain addition, subtraction
    // and the (a + b) / sqrt(2) residual merge.
    int add(int a, int b, T ca = T(1), T cb = T(1)) {
        const Tensor<T>& av = val(a);
        const Tensor<T>& bv = val(b);
        require(av.same_shape(bv),
                "add: shape mismatch " + av.shape_str() + " vs " + bv.shape_str());
        Tensor<T> out(av.c, av.h, av.w);
        for (std::int64_t i = 0; i < av.size(); ++i) {
            const std::size_t k = static_cast<std::size_t>(i);
            out.v[k] = ca * av.v[k] + cb * bv.v[k];
        }
        return push(std::move(out), [this, a, b, ca, cb](const Tensor<T>& g) {
            Tensor<T>& da = nodes_[static_cast<std::size_t>(a)].grad;
            Tensor<T>& db = nodes_[static_cast<std::size_t>(b)].grad;
            for (std::int64_t i = 0; i < g.size(); ++i) {
                const std::size_t k = static_cast<std::size_t>(i);
                da.v[k] += ca * g.v[k];
                db.v[k] += cb * g.v[k];
            }
        });
    }

    int scale(int x, T s) {
        const Tensor<T>& xin = val(x);
        Tensor<T> out(xin.c, xin.h, xin.w);
        for (std::int64_t i = 0; i < xin.size(); ++i)
            out.v[static_cast<std::size_t>(i)] = s * xin.v[static_cast<std::size_t>(i)];
        return push(std::move(out), [this, x, s](const Tensor<T>& g) {
            Tensor<T>& dx = nodes_[static_cast<std::size_t>(x)].grad;
            for (std::int64_t i = 0; i < g.size(); ++i)
                dx.v[static_cast<std::size_t>(i)] += s * g.v[static_cast<std::size_t>(i)];
        });
    }

    // Per-channel affine modulation from a conditioning vector of length 2C:
    // y[c] = x[c] * (1 + a[c]) + a[C + c]. Routes the time embedding into a
    // residual block as a scale plus a shift.
    int film(int x, int affine) {
        const Tensor<T>& xin = val(x);
        const Tensor<T>& av = val(affine);
        require(av.size() == 2 * xin.c,
                "film: conditioning length " + str(av.size()) + " != 2*channels " + str(2 * xin.c));
        Tensor<T> out(xin.c, xin.h, xin.w);
        const int plane = xin.plane_size();
        for (int ch = 0; ch < xin.c; ++ch) {
            const T sc = T(1) + av.v[static_cast<std::size_t>(ch)];
            const T sh = av.v[static_cast<std::size_t>(xin.c + ch)];
            const T* xp = xin.plane(ch);
            T* yp = out.plane(ch);
            for (int i = 0; i < plane; ++i) yp[i] = xp[i] * sc + sh;
        }
        return push(std::move(out), [this, x, affine](const Tensor<T>& g) {
            const Tensor<T>& xin = nodes_[static_cast<std::size_t>(x)].val;
            const Tensor<T>& av = nodes_[static_cast<std::size_t>(affine)].val;
            Tensor<T>& dx = nodes_[static_cast<std::size_t>(x)].grad;
            Tensor<T>& da = nodes_[static_cast<std::size_t>(affine)].grad;
            const int plane = xin.plane_size();
            for (int ch = 0; ch < xin.c; ++ch) {
                const T sc = T(1) + av.v[static_cast<std::size_t>(ch)];
                const T* xp = xin.plane(ch);
                const T* gp = g.plane(ch);
                T* dp = dx.plane(ch);
                double dsc = 0.0, dsh = 0.0;
                for (int i = 0; i < plane; ++i) {
                    dp[i] += gp[i] * sc;
                    dsc += static_cast<double>(gp[i]) * xp[i];
                    dsh += static_cast<double>(gp[i]);
                }
                da.v[static_cast<std::size_t>(ch)] += static_cast<T>(dsc);
                da.v[static_cast<std::size_t>(xin.c + ch)] += static_cast<T>(dsh);
            }
        });
    }

    // 2x2 mean pooling, stride 2. Requires even spatial dims.
    int avgpool2(int x) {
        const Tensor<T>& xin = val(x);
        require(xin.h % 2 == 0 && xin.w % 2 == 0,
                "avgpool2: odd spatial dims " + xin.shape_str());
        Tensor<T> out(xin.c, xin.h / 2, xin.w / 2);
        for (int ch = 0; ch < xin.c; ++ch) {
            const T* xp = xin.plane(ch);
            T* yp = out.plane(ch);
            for (int i = 0; i < out.h; ++i)
                for (int j = 0; j < out.w; ++j) {
                    const T* r0 = xp + (2 * i) * xin.w + 2 * j;
                    const T* r1 = r0 + xin.w;
                    yp[i * out.w + j] = (r0[0] + r0[1] + r1[0] + r1[1]) * T(0.25);
                }
        }
        return push(std::move(out), [this, x](const Tensor<T>& g) {
            Tensor<T>& dx = nodes_[static_cast<std::size_t>(x)].grad;
            for (int ch = 0; ch < dx.c; ++ch) {
                T* dp = dx.plane(ch);
                const T* gp = g.plane(ch);
                for (int i = 0; i < g.h; ++i)
                    for (int j = 0; j < g.w; ++j) {
                        const T v = gp[i * g.w + j] * T(0.25);
                        T* r0 = dp + (2 * i) * dx.w + 2 * j;
                        T* r1 = r0 + dx.w;
                        r0[0] += v;
                        r0[1] += v;
                        r1[0] += v;
                        r1[1] += v;
                    }
            }
        });
    }

    // Nearest-neighbor 2x upsampling.
    int upsample2(int x) {
        const Tensor<T>& xin = val(x);
        Tensor<T> out(xin.c, xin.h * 2, xin.w * 2);
        for (int ch = 0; ch < xin.c; ++ch) {
            const T* xp = xin.plane(ch);
            T* yp = out.plane(ch);
            for (int i = 0; i < xin.h; ++i)
                for (int j = 0; j < xin.w; ++j) {
                    const T v = xp[i * xin.w + j];
                    T* r0 = yp + (2 * i) * out.w + 2 * j;
                    T* r1 = r0 + out.w;
                    r0[0] = v;
                    r0[1] = v;
                    r1[0] = v;
                    r1[1] = v;
                }
        }
        return push(std::move(out), [this, x](const Tensor<T>& g) {
            Tensor<T>& dx = nodes_[static_cast<std::size_t>(x)].grad;
            for (int ch = 0; ch < dx.c; ++ch) {
                T* dp = dx.plane(ch);
                const T* gp = g.plane(ch);
                for (int i = 0; i < dx.h; ++i)
                    for (int j = 0; j < dx.w; ++j) {
                        const T* r0 = gp + (2 * i) * g.w + 2 * j;
                        const T* r1 = r0 + g.w;
                        dp[i * dx.w + j] += r0[0] + r0[1] + r1[0] + r1[1];
                    }
            }
        });
    }

    // Channel concatenation of two or more nodes with equal spatial dims.
    int concat(const std::vector<int>& xs) {
        require(!xs.empty(), "concat: no inputs");
        int total_c = 0;
        const Tensor<T>& first = val(xs[0]);
        for (int id : xs) {
            const Tensor<T>& t = val(id);
            require(t.h == first.h && t.w == first.w,
                    "concat: spatial mismatch " + t.shape_str() + " vs " + first.shape_str());
            total_c += t.c;
        }
        Tensor<T> out(total_c, first.h, first.w);
        int at = 0;
        for (int id : xs) {
            const Tensor<T>& t = val(id);
            std::copy(t.v.begin(), t.v.end(), out.plane(at));
            at += t.c;
        }
        return push(std::move(out), [this, xs](const Tensor<T>& g) {
            int at = 0;
            for (int id : xs) {
                Tensor<T>& dx = nodes_[static_cast<std::size_t>(id)].grad;
                const T* gp = g.plane(at);
                for (std::int64_t i = 0; i < dx.size(); ++i)
                    dx.v[static_cast<std::size_t>(i)] += gp[i];
                at += dx.c;
            }
        });
    }

    // Scalar node: sum of squares of all entries. The usual loss head.
    int sum_squares(int x) {
        const Tensor<T>& xin = val(x);
        double acc = 0.0;
        for (std::int64_t i = 0; i < xin.size(); ++i) {
            const double v = static_cast<double>(xin.v[static_cast<std::size_t>(i)]);
            acc += v * v;
        }
        Tensor<T> out(1, 1, 1);
        out.v[0] = static_cast<T>(acc);
        return push(std::move(out), [this, x](const Tensor<T>& g) {
            const Tensor<T>& xin = nodes_[static_cast<std::size_t>(x)].val;
            Tensor<T>& dx = nodes_[static_cast<std::size_t>(x)].grad;
            const T g0 = g.v[0];
            for (std::int64_t i = 0; i < xin.size(); ++i) {
                const std::size_t k = static_cast<std::size_t>(i);
                dx.v[k] += T(2) * xin.v[k] * g0;
            }
        });
    }

    // Seeds the scalar node with gradient 1 and runs every recorded backward
    // closure in reverse creation order.
    void backward(int loss) {
        require(val(loss).size() == 1, "backward: loss node must be scalar");
        nodes_[static_cast<std::size_t>(loss)].grad.v[0] = T(1);
        for (int i = loss; i >= 0; --i) {
            auto& node = nodes_[static_cast<std::size_t>(i)];
            if (node.back) node.back(node.grad);
        }
    }

private:
    struct Node {
        Tensor<T> val;
        Tensor<T> grad;
        std::function<void(const Tensor<T>&)> back;
    };

    static T sigmoid(T x) { return T(1) / (T(1) + std::exp(-x)); }

    int check(int id) const {
        require(id >= 0 && id < static_cast<int>(nodes_.size()), "Tape: bad node id");
        return id;
    }

    int push(Tensor<T> v, std::function<void(const Tensor<T>&)> back) {
        Node n;
        n.grad = Tensor<T>(v.c, v.h, v.w);
        n.val = std::move(v);
        n.back = std::move(back);
        nodes_.push_back(std::move(n));
        return static_cast<int>(nodes_.size()) - 1;
    }

    void im2col(const Tensor<T>& x, int k, int pad, MatR& col) const {
        const int H = x.h, W = x.w;
        for (int ic = 0; ic < x.c; ++ic) {
            const T* xp = x.plane(ic);
            for (int ky = 0; ky < k; ++ky)
                for (int kx = 0; kx < k; ++kx) {
                    const int row = (ic * k + ky) * k + kx;
                    T* dst = col.data() + static_cast<std::size_t>(row) * H * W;
                    for (int oy = 0; oy < H; ++oy) {
                        const int iy = oy + ky - pad;
                        if (iy < 0 || iy >= H) {
                            std::fill(dst + oy * W, dst + (oy + 1) * W, T(0));
                            continue;
                        }
                        const T* src = xp + iy * W;
                        for (int ox = 0; ox < W; ++ox) {
                            const int ix = ox + kx - pad;
                            dst[oy * W + ox] = (ix < 0 || ix >= W) ? T(0) : src[ix];
                        }
                    }
                }
        }
    }

    void col2im(const MatR& col, int k, int pad, Tensor<T>& dx) const {
        const int H = dx.h, W = dx.w;
        for (int ic = 0; ic < dx.c; ++ic) {
            T* dp = dx.plane(ic);
            for (int ky = 0; ky < k; ++ky)
                for (int kx = 0; kx < k; ++kx) {
                    const int row = (ic * k + ky) * k + kx;
                    const T* src = col.data() + static_cast<std::size_t>(row) * H * W;
                    for (int oy = 0; oy < H; ++oy) {
                        const int iy = oy + ky - pad;
                        if (iy < 0 || iy >= H) continue;
                        T* dst = dp + iy * W;
                        for (int ox = 0; ox < W; ++ox) {
                            const int ix = ox + kx - pad;
                            if (ix >= 0 && ix < W) dst[ix] += src[oy * W + ox];
                        }
                    }
                }
        }
    }

    std::vector<Node> nodes_;
};

}  // namespace bcdiff::nn

#endif  // BCDIFF_NN_TAPE_HPP
