#ifndef BCDIFF_NN_LAYERS_HPP
#define BCDIFF_NN_LAYERS_HPP

#include <numbers>
#include <string>

#include "bcdiff/nn/param.hpp"
#include "bcdiff/nn/tape.hpp"

namespace bcdiff::nn {

// Largest group count <= 8 that divides the channel count.
inline int norm_groups(int channels) {
    for (int g = 8; g >= 1; --g)
        if (channels % g == 0) return g;
    return 1;
}

template <typename T>
struct Conv2d {
    Param<T>* w = nullptr;
    Param<T>* b = nullptr;
    int k = 3;

    static Conv2d build(ParamStore<T>& ps, const std::string& name, int in_c, int out_c, int k,
                        Rng& rng, double init_scale = 1.0) {
        Conv2d l;
        l.k = k;
        l.w = &ps.create(name + ".w", {out_c, in_c, k, k});
        l.b = &ps.create(name + ".b", {out_c});
        init_normal(*l.w, static_cast<std::int64_t>(in_c) * k * k, init_scale, rng);
        return l;
    }
    int apply(Tape<T>& t, int x) const { return t.conv2d(x, *w, *b, k); }
};

template <typename T>
struct Linear {
    Param<T>* w = nullptr;
    Param<T>* b = nullptr;

    static Linear build(ParamStore<T>& ps, const std::string& name, int in_n, int out_n, Rng& rng,
                        double init_scale = 1.0) {
        Linear l;
        l.w = &ps.create(name + ".w", {out_n, in_n});
        l.b = &ps.create(name + ".b", {out_n});
        init_normal(*l.w, in_n, init_scale, rng);
        return l;
    }
    int apply(Tape<T>& t, int x) const { return t.linear(x, *w, *b); }
};

template <typename T>
struct GroupNorm {
    Param<T>* g = nullptr;
    Param<T>* b = nullptr;
    int groups = 1;

    static GroupNorm build(ParamStore<T>& ps, const std::string& name, int channels) {
        GroupNorm l;
        l.g = &ps.create(name + ".g", {channels});
        l.b = &ps.create(name + ".b", {channels});
        l.groups = norm_groups(channels);
        init_constant(*l.g, T(1));
        return l;
    }
    int apply(Tape<T>& t, int x) const { return t.group_norm(x, *g, *b, groups); }
};

enum class Resample { none, down, up };

// BigGAN-flavored residual block: pre-activation norm, optional 2x resample
// on both branches, two 3x3 convolutions, and a per-channel scale/shift
// driven by the time embedding. The second convolution starts near zero
// (out_init_scale) so a fresh block is close to an identity-plus-skip map.
template <typename T>
struct ResBlock {
    GroupNorm<T> gn1, gn2;
    Conv2d<T> conv1, conv2;
    Linear<T> affine;  // time embedding -> [scale | shift], length 2*out_c
    Conv2d<T> skip;    // 1x1, present when shape changes
    bool has_skip = false;
    Resample resample = Resample::none;
    int in_c = 0, out_c = 0;

    static ResBlock build(ParamStore<T>& ps, const std::string& name, int in_c, int out_c,
                          int temb_dim, Resample rs, Rng& rng, double out_init_scale) {
        ResBlock blk;
        blk.in_c = in_c;
        blk.out_c = out_c;
        blk.resample = rs;
        blk.gn1 = GroupNorm<T>::build(ps, name + ".gn1", in_c);
        blk.conv1 = Conv2d<T>::build(ps, name + ".conv1", in_c, out_c, 3, rng);
        blk.affine = Linear<T>::build(ps, name + ".affine", temb_dim, 2 * out_c, rng);
        blk.gn2 = GroupNorm<T>::build(ps, name + ".gn2", out_c);
        blk.conv2 = Conv2d<T>::build(ps, name + ".conv2", out_c, out_c, 3, rng, out_init_scale);
        blk.has_skip = in_c != out_c || rs != Resample::none;
        if (blk.has_skip) blk.skip = Conv2d<T>::build(ps, name + ".skip", in_c, out_c, 1, rng);
        return blk;
    }

    int apply(Tape<T>& t, int x, int temb_act) const {
        int h = gn1.apply(t, x);
        h = t.silu(h);
        h = apply_resample(t, h);
        h = conv1.apply(t, h);
        h = t.film(h, affine.apply(t, temb_act));
        h = gn2.apply(t, h);
        h = t.silu(h);
        h = conv2.apply(t, h);
        int xs = apply_resample(t, x);
        if (has_skip) xs = skip.apply(t, xs);
        const T s = static_cast<T>(1.0 / std::numbers::sqrt2);
        return t.add(xs, h, s, s);
    }

private:
    int apply_resample(Tape<T>& t, int x) const {
        if (resample == Resample::down) return t.avgpool2(x);
        if (resample == Resample::up) return t.upsample2(x);
        return x;
    }
};

}  // namespace bcdiff::nn

#endif  // BCDIFF_NN_LAYERS_HPP
