#ifndef BCDIFF_SCORE_MODEL_HPP
#define BCDIFF_SCORE_MODEL_HPP

#include <map>
#include <numbers>
#include <string>
#include <vector>

#include "bcdiff/nn/layers.hpp"
#include "bcdiff/sde.hpp"
#include "bcdiff/spectrogram.hpp"

namespace bcdiff {

// How the bone-conducted spectrogram y_c enters the network.
//   IC  - y_c concatenated with (x_t, y) at the input, 6 real planes total.
//   DC  - separate time-conditioned encoder over y_c injects features into
//         every decoder resolution through 1x1 projections.
//   MIX - mixture-only baseline (x_t, y), 4 planes, no bone input. Exists to
//         measure what the extra input planes / encoder cost in parameters.
enum class Strategy { IC, DC, MIX };

enum class ModelSize { S, L, TOY };

inline const char* strategy_name(Strategy s) {
    switch (s) {
        case Strategy::IC: return "ic";
        case Strategy::DC: return "dc";
        case Strategy::MIX: return "mix";
    }
    fail("strategy_name: bad enum");
}

inline const char* size_name(ModelSize s) {
    switch (s) {
        case ModelSize::S: return "s";
        case ModelSize::L: return "l";
        case ModelSize::TOY: return "toy";
    }
    fail("size_name: bad enum");
}

inline Strategy parse_strategy(const std::string& s) {
    if (s == "ic") return Strategy::IC;
    if (s == "dc") return Strategy::DC;
    if (s == "mix") return Strategy::MIX;
    fail("unknown strategy '" + s + "' (expected ic|dc|mix)");
}

inline ModelSize parse_size(const std::string& s) {
    if (s == "s") return ModelSize::S;
    if (s == "l") return ModelSize::L;
    if (s == "toy") return ModelSize::TOY;
    fail("unknown model size '" + s + "' (expected s|l|toy)");
}

struct ScoreModelConfig {
    Strategy strategy = Strategy::IC;
    ModelSize size = ModelSize::TOY;
    int base_channels = 16;
    int n_resolutions = 3;
    int resnet_depth = 1;
    int time_embed_dim = 64;
    int input_height = 64;
    int input_width = 64;
    std::vector<int> channel_mult = {1, 2, 2};  // length n_resolutions
    std::vector<int> cond_channels = {16, 32};  // length n_resolutions-1, DC only
    double output_init_scale = 1e-3;            // near-zero start for output convs

    static ScoreModelConfig preset(Strategy strat, ModelSize size) {
        ScoreModelConfig c;
        c.strategy = strat;
        c.size = size;
        switch (size) {
            case ModelSize::L:
                c.base_channels = 128;
                c.n_resolutions = 4;
                c.resnet_depth = 2;
                c.time_embed_dim = 512;
                c.input_height = c.input_width = 256;
                c.channel_mult = {1, 2, 2, 2};
                c.cond_channels = {32, 64, 64};
                break;
            case ModelSize::S:
                // Half the feature maps of L and single-depth residual
                // stacks; the condition-encoder plan stays the same as L.
                c.base_channels = 64;
                c.n_resolutions = 4;
                c.resnet_depth = 1;
                c.time_embed_dim = 256;
                c.input_height = c.input_width = 256;
                c.channel_mult = {1, 2, 2, 2};
                c.cond_channels = {32, 64, 64};
                break;
            case ModelSize::TOY:
                c.base_channels = 16;
                c.n_resolutions = 3;
                c.resnet_depth = 1;
                c.time_embed_dim = 64;
                c.input_height = c.input_width = 64;
                c.channel_mult = {1, 2, 2};
                c.cond_channels = {16, 32};
                break;
        }
        return c;
    }

    int input_planes() const { return strategy == Strategy::IC ? 6 : 4; }

    void validate() const {
        require(base_channels > 0, "ScoreModelConfig: base_channels must be positive");
        require(n_resolutions >= 2, "ScoreModelConfig: need at least 2 resolutions");
        require(resnet_depth >= 1, "ScoreModelConfig: resnet_depth must be >= 1");
        require(time_embed_dim >= 2 && time_embed_dim % 2 == 0,
                "ScoreModelConfig: time_embed_dim must be even and >= 2");
        require(static_cast<int>(channel_mult.size()) == n_resolutions,
                "ScoreModelConfig: channel_mult length " + str(channel_mult.size()) +
                    " != n_resolutions " + str(n_resolutions));
        for (int m : channel_mult) require(m >= 1, "ScoreModelConfig: channel_mult entries >= 1");
        if (strategy == Strategy::DC) {
            require(static_cast<int>(cond_channels.size()) == n_resolutions - 1,
                    "ScoreModelConfig: condition channel plan length " + str(cond_channels.size()) +
                        " != n_resolutions-1 " + str(n_resolutions - 1));
            for (int cch : cond_channels)
                require(cch >= 1, "ScoreModelConfig: cond_channels entries >= 1");
        }
        const int div = 1 << (n_resolutions - 1);
        require(input_height % div == 0 && input_width % div == 0,
                "ScoreModelConfig: input " + str(input_height) + "x" + str(input_width) +
                    " not divisible by 2^" + str(n_resolutions - 1));
        if (size == ModelSize::S) {
            // The S variant is defined relative to L: half the feature maps,
            // residual depth 1.
            require(base_channels == 64 && resnet_depth == 1,
                    "ScoreModelConfig: size S requires base_channels 64 and resnet_depth 1");
        }
        require(output_init_scale > 0.0, "ScoreModelConfig: output_init_scale must be positive");
    }

    std::map<std::string, std::string> to_kv() const {
        std::map<std::string, std::string> kv;
        kv["strategy"] = strategy_name(strategy);
        kv["size"] = size_name(size);
        kv["base_channels"] = str(base_channels);
        kv["n_resolutions"] = str(n_resolutions);
        kv["resnet_depth"] = str(resnet_depth);
        kv["time_embed_dim"] = str(time_embed_dim);
        kv["input_height"] = str(input_height);
        kv["input_width"] = str(input_width);
        std::string mult, cond;
        for (std::size_t i = 0; i < channel_mult.size(); ++i)
            mult += (i ? "," : "") + str(channel_mult[i]);
        for (std::size_t i = 0; i < cond_channels.size(); ++i)
            cond += (i ? "," : "") + str(cond_channels[i]);
        kv["channel_mult"] = mult;
        kv["cond_channels"] = cond;
        kv["output_init_scale"] = str(output_init_scale);
        return kv;
    }

    static ScoreModelConfig from_kv(const std::map<std::string, std::string>& kv) {
        ScoreModelConfig c;
        auto get = [&](const std::string& key) -> const std::string& {
            auto it = kv.find(key);
            require(it != kv.end(), "model config: missing key '" + key + "'");
            return it->second;
        };
        auto parse_ints = [](const std::string& s) {
            std::vector<int> out;
            std::string cur;
            for (char ch : s) {
                if (ch == ',') {
                    out.push_back(std::stoi(cur));
                    cur.clear();
                } else {
                    cur += ch;
                }
            }
            if (!cur.empty()) out.push_back(std::stoi(cur));
            return out;
        };
        c.strategy = parse_strategy(get("strategy"));
        c.size = parse_size(get("size"));
        c.base_channels = std::stoi(get("base_channels"));
        c.n_resolutions = std::stoi(get("n_resolutions"));
        c.resnet_depth = std::stoi(get("resnet_depth"));
        c.time_embed_dim = std::stoi(get("time_embed_dim"));
        c.input_height = std::stoi(get("input_height"));
        c.input_width = std::stoi(get("input_width"));
        c.channel_mult = parse_ints(get("channel_mult"));
        c.cond_channels = parse_ints(get("cond_channels"));
        if (kv.count("output_init_scale")) c.output_init_scale = std::stod(get("output_init_scale"));
        c.validate();
        return c;
    }
};

// Real-plane packing of complex spectrograms at the network boundary:
// plane 0 carries the real part, plane 1 the imaginary part.
template <typename T>
nn::Tensor<T> planes_from_complex(const ComplexSpectrogram& s) {
    nn::Tensor<T> t(2, static_cast<int>(s.rows()), static_cast<int>(s.cols()));
    for (Eigen::Index j = 0; j < s.cols(); ++j)
        for (Eigen::Index i = 0; i < s.rows(); ++i) {
            t.at(0, static_cast<int>(i), static_cast<int>(j)) = static_cast<T>(s(i, j).real());
            t.at(1, static_cast<int>(i), static_cast<int>(j)) = static_cast<T>(s(i, j).imag());
        }
    return t;
}

template <typename T>
ComplexSpectrogram complex_from_planes(const nn::Tensor<T>& t) {
    require(t.c == 2, "complex_from_planes: expected 2 planes, got " + str(t.c));
    ComplexSpectrogram s(t.h, t.w);
    for (int j = 0; j < t.w; ++j)
        for (int i = 0; i < t.h; ++i)
            s(i, j) = {static_cast<double>(t.at(0, i, j)), static_cast<double>(t.at(1, i, j))};
    return s;
}

// Multi-resolution U-Net estimating the conditional score
// s_theta(x_t, y, y_c, t). Complex spectrograms enter as stacked real planes;
// the network output (2 planes) is divided by sigma(t), so the raw network
// learns to predict -z regardless of the noise level.
template <typename T>
class ScoreModel {
public:
    ScoreModel(const ScoreModelConfig& cfg, const sde::SdeParams& sde_params, std::uint64_t seed)
        : cfg_(cfg), sde_(sde_params) {
        cfg_.validate();
        sde_.validate();
        Rng rng(seed);
        fourier_w_.resize(static_cast<std::size_t>(cfg_.time_embed_dim / 2));
        for (auto& w : fourier_w_) w = static_cast<T>(rng.normal() * 16.0);
        layers_ = build_layers(cfg_, store_, rng);
    }

    ScoreModel(const ScoreModel&) = delete;
    ScoreModel& operator=(const ScoreModel&) = delete;

    static std::int64_t param_count(const ScoreModelConfig& cfg) {
        cfg.validate();
        nn::ParamStore<T> counting(true);
        Rng rng(0);
        build_layers(cfg, counting, rng);
        return counting.total_size();
    }

    const ScoreModelConfig& config() const { return cfg_; }
    const sde::SdeParams& sde_params() const { return sde_; }
    nn::ParamStore<T>& params() { return store_; }
    const nn::ParamStore<T>& params() const { return store_; }
    std::int64_t param_count() const { return store_.total_size(); }
    std::vector<T>& fourier_buffer() { return fourier_w_; }
    const std::vector<T>& fourier_buffer() const { return fourier_w_; }

    // Random-Fourier features of log-scaled time; the learned 2-layer MLP on
    // top of these is part of the network graph itself.
    std::vector<T> time_features(double t) const {
        const double u = std::log(std::max(t, 1e-6));
        std::vector<T> feat(static_cast<std::size_t>(cfg_.time_embed_dim));
        for (std::size_t i = 0; i < fourier_w_.size(); ++i) {
            const double arg = 2.0 * std::numbers::pi * static_cast<double>(fourier_w_[i]) * u;
            feat[2 * i] = static_cast<T>(std::sin(arg));
            feat[2 * i + 1] = static_cast<T>(std::cos(arg));
        }
        return feat;
    }

    // Builds the full network onto the tape. xt/y/yc are 2-plane input nodes
    // of the configured spatial size; MIX ignores yc. Returns the 2-plane
    // score estimate node.
    int forward(nn::Tape<T>& tape, int xt, int y, int yc, double t) {
        require(t >= sde_.t_eps && t <= 1.0,
                "ScoreModel::forward: t=" + str(t) + " outside [t_eps, 1]");
        check_planes(tape, xt, "x_t");
        check_planes(tape, y, "y");
        if (cfg_.strategy != Strategy::MIX) check_planes(tape, yc, "y_c");

        const double sigma = sde::perturbation_std(t, sde_);
        const int R = cfg_.n_resolutions;

        const int feat = tape.input(nn::Tensor<T>::vec(time_features(t)));
        const int temb = layers_.mlp1.apply(tape, tape.silu(layers_.mlp0.apply(tape, feat)));
        const int temb_act = tape.silu(temb);

        int h = cfg_.strategy == Strategy::IC ? tape.concat({xt, y, yc}) : tape.concat({xt, y});
        h = layers_.stem.apply(tape, h);

        std::vector<int> skips(static_cast<std::size_t>(R), -1);
        for (int r = 0; r < R; ++r) {
            const auto& level = layers_.enc[static_cast<std::size_t>(r)];
            for (const auto& blk : level.blocks) h = blk.apply(tape, h, temb_act);
            skips[static_cast<std::size_t>(r)] = h;
            if (level.has_down) h = level.down.apply(tape, h, temb_act);
        }
        h = layers_.mid0.apply(tape, h, temb_act);
        h = layers_.mid1.apply(tape, h, temb_act);

        std::vector<int> cond(static_cast<std::size_t>(R - 1), -1);
        if (cfg_.strategy == Strategy::DC) {
            int c = layers_.cond_stem.apply(tape, yc);
            for (int r = 0; r < R - 1; ++r) {
                c = layers_.cond_blocks[static_cast<std::size_t>(r)].apply(tape, c, temb_act);
                cond[static_cast<std::size_t>(r)] =
                    layers_.cond_proj[static_cast<std::size_t>(r)].apply(tape, c);
            }
        }

        for (int r = R - 2; r >= 0; --r) {
            const auto& level = layers_.dec[static_cast<std::size_t>(r)];
            h = level.up.apply(tape, h, temb_act);
            if (cfg_.strategy == Strategy::DC) {
                const int merged =
                    tape.concat({skips[static_cast<std::size_t>(r)],
                                 cond[static_cast<std::size_t>(r)], h});
                h = level.reduce.apply(tape, merged);
            } else {
                h = tape.concat({skips[static_cast<std::size_t>(r)], h});
            }
            for (const auto& blk : level.blocks) h = blk.apply(tape, h, temb_act);
        }

        h = layers_.head_gn.apply(tape, h);
        h = tape.silu(h);
        h = layers_.head_conv.apply(tape, h);
        return tape.scale(h, static_cast<T>(1.0 / sigma));
    }

    // Inference convenience on complex matrices; gradients are discarded.
    ComplexSpectrogram score(const ComplexSpectrogram& xt, const ComplexSpectrogram& y,
                             const ComplexSpectrogram& yc, double t) {
        nn::Tape<T> tape;
        const int xtn = tape.input(planes_from_complex<T>(xt));
        const int yn = tape.input(planes_from_complex<T>(y));
        const int ycn = cfg_.strategy == Strategy::MIX ? xtn  // unused
                                                       : tape.input(planes_from_complex<T>(yc));
        const int out = forward(tape, xtn, yn, ycn, t);
        return complex_from_planes(tape.val(out));
    }

private:
    struct Level {
        std::vector<nn::ResBlock<T>> blocks;
        nn::ResBlock<T> down;
        bool has_down = false;
    };
    struct DecLevel {
        nn::ResBlock<T> up;
        nn::Conv2d<T> reduce;  // DC only: 1x1 back to the baseline concat width
        std::vector<nn::ResBlock<T>> blocks;
    };
    struct Layers {
        nn::Linear<T> mlp0, mlp1;
        nn::Conv2d<T> stem;
        std::vector<Level> enc;
        nn::ResBlock<T> mid0, mid1;
        nn::Conv2d<T> cond_stem;
        std::vector<nn::ResBlock<T>> cond_blocks;
        std::vector<nn::Conv2d<T>> cond_proj;
        std::vector<DecLevel> dec;
        nn::GroupNorm<T> head_gn;
        nn::Conv2d<T> head_conv;
    };

    static Layers build_layers(const ScoreModelConfig& cfg, nn::ParamStore<T>& ps, Rng& rng) {
        using namespace nn;
        Layers L;
        const int R = cfg.n_resolutions;
        const int temb = cfg.time_embed_dim;
        std::vector<int> ch(static_cast<std::size_t>(R));
        for (int r = 0; r < R; ++r)
            ch[static_cast<std::size_t>(r)] = cfg.base_channels * cfg.channel_mult[static_cast<std::size_t>(r)];

        L.mlp0 = Linear<T>::build(ps, "temb.mlp0", temb, temb, rng);
        L.mlp1 = Linear<T>::build(ps, "temb.mlp1", temb, temb, rng);
        L.stem = Conv2d<T>::build(ps, "stem", cfg.input_planes(), ch[0], 3, rng);

        int cur = ch[0];
        for (int r = 0; r < R; ++r) {
            Level level;
            for (int d = 0; d < cfg.resnet_depth; ++d) {
                const int in_c = d == 0 ? cur : ch[static_cast<std::size_t>(r)];
                level.blocks.push_back(ResBlock<T>::build(
                    ps, "enc." + str(r) + ".block." + str(d), in_c, ch[static_cast<std::size_t>(r)],
                    temb, Resample::none, rng, cfg.output_init_scale));
            }
            cur = ch[static_cast<std::size_t>(r)];
            if (r < R - 1) {
                level.down = ResBlock<T>::build(ps, "enc." + str(r) + ".down", cur, cur, temb,
                                                Resample::down, rng, cfg.output_init_scale);
                level.has_down = true;
            }
            L.enc.push_back(std::move(level));
        }

        const int deep = ch[static_cast<std::size_t>(R - 1)];
        L.mid0 = ResBlock<T>::build(ps, "mid.0", deep, deep, temb, Resample::none, rng,
                                    cfg.output_init_scale);
        L.mid1 = ResBlock<T>::build(ps, "mid.1", deep, deep, temb, Resample::none, rng,
                                    cfg.output_init_scale);

        if (cfg.strategy == Strategy::DC) {
            const auto& cc = cfg.cond_channels;
            L.cond_stem = Conv2d<T>::build(ps, "cond.stem", 2, cc[0], 3, rng);
            for (int r = 0; r < R - 1; ++r) {
                const int in_c = r == 0 ? cc[0] : cc[static_cast<std::size_t>(r - 1)];
                const Resample rs = r == 0 ? Resample::none : Resample::down;
                L.cond_blocks.push_back(ResBlock<T>::build(ps, "cond.block." + str(r), in_c,
                                                           cc[static_cast<std::size_t>(r)], temb, rs,
                                                           rng, cfg.output_init_scale));
                L.cond_proj.push_back(Conv2d<T>::build(ps, "cond.proj." + str(r),
                                                       cc[static_cast<std::size_t>(r)],
                                                       cc[static_cast<std::size_t>(r)], 1, rng));
            }
        }

        L.dec.resize(static_cast<std::size_t>(R - 1));
        for (int r = R - 2; r >= 0; --r) {
            DecLevel level;
            const int up_c = ch[static_cast<std::size_t>(r + 1)];
            level.up = ResBlock<T>::build(ps, "dec." + str(r) + ".up", up_c, up_c, temb,
                                          Resample::up, rng, cfg.output_init_scale);
            const int baseline = ch[static_cast<std::size_t>(r)] + up_c;
            if (cfg.strategy == Strategy::DC) {
                const int merged = baseline + cfg.cond_channels[static_cast<std::size_t>(r)];
                level.reduce =
                    Conv2d<T>::build(ps, "dec." + str(r) + ".reduce", merged, baseline, 1, rng);
            }
            for (int d = 0; d < cfg.resnet_depth; ++d) {
                const int in_c = d == 0 ? baseline : ch[static_cast<std::size_t>(r)];
                level.blocks.push_back(ResBlock<T>::build(
                    ps, "dec." + str(r) + ".block." + str(d), in_c, ch[static_cast<std::size_t>(r)],
                    temb, Resample::none, rng, cfg.output_init_scale));
            }
            L.dec[static_cast<std::size_t>(r)] = std::move(level);
        }

        L.head_gn = GroupNorm<T>::build(ps, "head.gn", ch[0]);
        L.head_conv =
            Conv2d<T>::build(ps, "head.conv", ch[0], 2, 3, rng, cfg.output_init_scale);
        return L;
    }

    void check_planes(nn::Tape<T>& tape, int node, const char* what) const {
        const nn::Tensor<T>& v = tape.val(node);
        require(v.c == 2 && v.h == cfg_.input_height && v.w == cfg_.input_width,
                std::string("ScoreModel::forward: ") + what + " has shape " + v.shape_str() +
                    ", expected 2x" + str(cfg_.input_height) + "x" + str(cfg_.input_width));
    }

    ScoreModelConfig cfg_;
    sde::SdeParams sde_;
    nn::ParamStore<T> store_;
    std::vector<T> fourier_w_;
    Layers layers_;
};

}  // namespace bcdiff

#endif  // BCDIFF_SCORE_MODEL_HPP
