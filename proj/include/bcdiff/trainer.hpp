#ifndef BCDIFF_TRAINER_HPP
#define BCDIFF_TRAINER_HPP

#include <functional>
#include <vector>

#include "bcdiff/score_model.hpp"
#include "bcdiff/sde.hpp"

namespace bcdiff {

// Weighting of the score-matching regression residual.
//   UNWEIGHTED    - literal squared error against the analytic kernel score;
//                   the target -z/sigma blows up as t -> t_eps.
//   SIGMA_SQUARED - ||sigma * s_theta + z||^2. Same minimizer, bounded
//                   magnitude; the default for actual training.
enum class LossWeighting { UNWEIGHTED, SIGMA_SQUARED };

inline const char* loss_weighting_name(LossWeighting w) {
    return w == LossWeighting::UNWEIGHTED ? "unweighted" : "sigma_squared";
}

inline LossWeighting parse_loss_weighting(const std::string& s) {
    if (s == "unweighted") return LossWeighting::UNWEIGHTED;
    if (s == "sigma_squared") return LossWeighting::SIGMA_SQUARED;
    fail("unknown loss weighting '" + s + "'");
}

struct TrainConfig {
    int batch_size = 8;
    double learning_rate = 1e-4;
    double adam_beta1 = 0.9;
    double adam_beta2 = 0.999;
    double adam_eps = 1e-8;
    double ema_decay = 0.999;
    int max_steps = 1000;
    LossWeighting loss_weighting = LossWeighting::SIGMA_SQUARED;
    int val_utterances = 20;
    std::uint64_t seed = 0;
    bool strict_finite = false;  // abort on non-finite gradients instead of skipping the step
    double grad_clip = 0.0;      // global-norm clip; 0 disables

    void validate() const {
        require(batch_size >= 1, "TrainConfig: batch_size must be >= 1");
        require(learning_rate > 0.0, "TrainConfig: learning_rate must be positive");
        require(ema_decay > 0.9 && ema_decay < 1.0, "TrainConfig: ema_decay must lie in (0.9, 1)");
        require(max_steps >= 1, "TrainConfig: max_steps must be >= 1");
        require(val_utterances >= 1, "TrainConfig: val_utterances must be >= 1");
        require(grad_clip >= 0.0, "TrainConfig: grad_clip must be >= 0");
    }
};

// One training example: clean spectrogram, noisy mixture, bone conditioner.
struct TrainSample {
    ComplexSpectrogram x0;
    ComplexSpectrogram y;
    ComplexSpectrogram yc;
};

// One randomized evaluation point of the score-matching objective:
// t ~ U(t_eps, 1) and x_t drawn from the perturbation kernel.
struct DsmDraw {
    double t = 0.0;
    double sigma = 0.0;
    ComplexSpectrogram mean;
    ComplexSpectrogram xt;
    ComplexSpectrogram z;
};

inline DsmDraw draw_dsm_point(const ComplexSpectrogram& x0, const ComplexSpectrogram& y,
                              const sde::SdeParams& p, Rng& rng) {
    DsmDraw d;
    d.t = rng.uniform(p.t_eps, 1.0);
    const auto s = sde::sample_xt(x0, y, d.t, p, rng);
    d.sigma = s.stddev;
    d.mean = sde::perturbation_mean(x0, y, d.t, p);
    d.xt = s.xt;
    d.z = s.z;
    return d;
}

// Squared residual (summed over all complex entries) of a score estimate at
// one draw. The unweighted target is computed through gaussian_score, the
// same expression an analytic stand-in model evaluates, so substituting that
// model produces an exact zero rather than a rounding-level one.
inline double dsm_residual(const ComplexSpectrogram& score_est, const DsmDraw& d,
                           LossWeighting weighting) {
    require_same_shape(score_est, d.xt, "dsm_residual");
    if (weighting == LossWeighting::UNWEIGHTED) {
        const ComplexSpectrogram target = sde::gaussian_score(d.xt, d.mean, d.sigma);
        return (score_est - target).squaredNorm();
    }
    return (d.sigma * score_est + d.z).squaredNorm();
}

// Mean score-matching loss of an arbitrary score function over a batch.
// Used for evaluation and for oracle substitution tests; the trainable path
// below computes the identical quantity through the autodiff graph.
inline double dsm_loss(const ScoreFn& score_fn, const std::vector<TrainSample>& batch,
                       const sde::SdeParams& p, LossWeighting weighting, Rng& rng) {
    require(!batch.empty(), "dsm_loss: empty batch");
    double acc = 0.0;
    for (const TrainSample& s : batch) {
        const DsmDraw d = draw_dsm_point(s.x0, s.y, p, rng);
        acc += dsm_residual(score_fn(d.xt, s.y, s.yc, d.t), d, weighting);
    }
    const double loss = acc / static_cast<double>(batch.size());
    require(std::isfinite(loss), "dsm_loss: non-finite loss");
    return loss;
}

// Returns the index of the best validation round, ties broken by the later
// step (the more-trained weights).
inline std::size_t select_checkpoint(const std::vector<double>& val_scores) {
    require(!val_scores.empty(), "select_checkpoint: empty history");
    std::size_t best = 0;
    for (std::size_t i = 1; i < val_scores.size(); ++i)
        if (val_scores[i] >= val_scores[best]) best = i;
    return best;
}

// Adam optimizer + EMA shadow over a model's parameter store. The EMA shadow
// starts equal to the weights and after every applied step moves as
// ema <- decay * ema + (1 - decay) * w.
template <typename T>
class Trainer {
public:
    Trainer(ScoreModel<T>& model, const TrainConfig& cfg)
        : model_(model), cfg_(cfg), rng_(derive_seed(cfg.seed, "trainer")) {
        cfg_.validate();
        auto& ps = model_.params();
        m_.resize(ps.count());
        v_.resize(ps.count());
        ema_.resize(ps.count());
        for (std::size_t i = 0; i < ps.count(); ++i) {
            m_[i].assign(ps.at(i).value.size(), T(0));
            v_[i].assign(ps.at(i).value.size(), T(0));
            ema_[i] = ps.at(i).value;
        }
    }

    int step() const { return step_; }
    int skipped_steps() const { return skipped_; }
    const std::vector<nn::AlignedVec<T>>& ema() const { return ema_; }
    Rng& rng() { return rng_; }

    // One optimization step on a batch. Returns the batch loss. Non-finite
    // losses abort with the offending draw's diagnostics; non-finite
    // gradients skip the parameter update (strict mode aborts instead).
    double train_step(const std::vector<TrainSample>& batch) {
        require(!batch.empty(), "train_step: empty batch");
        auto& ps = model_.params();
        ps.zero_grad();

        double loss_acc = 0.0;
        for (const TrainSample& s : batch) {
            const DsmDraw d = draw_dsm_point(s.x0, s.y, model_.sde_params(), rng_);

            nn::Tape<T> tape;
            const int xtn = tape.input(planes_from_complex<T>(d.xt));
            const int yn = tape.input(planes_from_complex<T>(s.y));
            const int ycn = model_.config().strategy == Strategy::MIX
                                ? xtn
                                : tape.input(planes_from_complex<T>(s.yc));
            const int out = model_.forward(tape, xtn, yn, ycn, d.t);

            int loss_node;
            if (cfg_.loss_weighting == LossWeighting::UNWEIGHTED) {
                const ComplexSpectrogram target = sde::gaussian_score(d.xt, d.mean, d.sigma);
                const int tn = tape.input(planes_from_complex<T>(target));
                loss_node = tape.sum_squares(tape.add(out, tn, T(1), T(-1)));
            } else {
                const int zn = tape.input(planes_from_complex<T>(d.z));
                loss_node =
                    tape.sum_squares(tape.add(tape.scale(out, static_cast<T>(d.sigma)), zn));
            }
            const double sample_loss = static_cast<double>(tape.val(loss_node).v[0]);
            if (!std::isfinite(sample_loss))
                fail("train_step: non-finite loss at t=" + str(d.t) + " sigma=" + str(d.sigma));
            loss_acc += sample_loss;
            tape.backward(loss_node);
        }
        const double loss = loss_acc / static_cast<double>(batch.size());
        ps.scale_grad(static_cast<T>(1.0 / static_cast<double>(batch.size())));

        if (!ps.grads_finite()) {
            if (cfg_.strict_finite) fail("train_step: non-finite gradient at step " + str(step_));
            ++skipped_;
            ++step_;
            return loss;
        }
        if (cfg_.grad_clip > 0.0) clip_gradients();
        apply_adam();
        update_ema();
        ++step_;
        return loss;
    }

    // Copies the EMA shadow into a model with an identical parameter layout
    // (typically a fresh instance of the same config, used for sampling).
    void apply_ema(ScoreModel<T>& target) const {
        auto& tp = target.params();
        require(tp.count() == ema_.size(), "apply_ema: parameter layout mismatch");
        for (std::size_t i = 0; i < ema_.size(); ++i) {
            require(tp.at(i).value.size() == ema_[i].size(),
                    "apply_ema: size mismatch at " + tp.at(i).name);
            tp.at(i).value = ema_[i];
        }
        target.fourier_buffer() = model_.fourier_buffer();
    }

private:
    void clip_gradients() {
        auto& ps = model_.params();
        double norm2 = 0.0;
        for (std::size_t i = 0; i < ps.count(); ++i)
            for (T g : ps.at(i).grad) norm2 += static_cast<double>(g) * g;
        const double norm = std::sqrt(norm2);
        if (norm <= cfg_.grad_clip) return;
        const T s = static_cast<T>(cfg_.grad_clip / norm);
        ps.scale_grad(s);
    }

    void apply_adam() {
        auto& ps = model_.params();
        const double t = static_cast<double>(step_ - skipped_) + 1.0;
        const double bc1 = 1.0 - std::pow(cfg_.adam_beta1, t);
        const double bc2 = 1.0 - std::pow(cfg_.adam_beta2, t);
        const T b1 = static_cast<T>(cfg_.adam_beta1), b2 = static_cast<T>(cfg_.adam_beta2);
        for (std::size_t i = 0; i < ps.count(); ++i) {
            auto& p = ps.at(i);
            for (std::size_t k = 0; k < p.value.size(); ++k) {
                const T g = p.grad[k];
                m_[i][k] = b1 * m_[i][k] + (T(1) - b1) * g;
                v_[i][k] = b2 * v_[i][k] + (T(1) - b2) * g * g;
                const double mhat = static_cast<double>(m_[i][k]) / bc1;
                const double vhat = static_cast<double>(v_[i][k]) / bc2;
                p.value[k] -= static_cast<T>(cfg_.learning_rate * mhat /
                                             (std::sqrt(vhat) + cfg_.adam_eps));
            }
        }
    }

    void update_ema() {
        auto& ps = model_.params();
        const T d = static_cast<T>(cfg_.ema_decay);
        for (std::size_t i = 0; i < ps.count(); ++i) {
            const auto& w = ps.at(i).value;
            for (std::size_t k = 0; k < w.size(); ++k)
                ema_[i][k] = d * ema_[i][k] + (T(1) - d) * w[k];
        }
    }

    ScoreModel<T>& model_;
    TrainConfig cfg_;
    Rng rng_;
    int step_ = 0;
    int skipped_ = 0;
    std::vector<nn::AlignedVec<T>> m_, v_, ema_;
};

}  // namespace bcdiff

#endif  // BCDIFF_TRAINER_HPP
