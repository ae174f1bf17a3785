#include "dgad/schedule.hpp"

#include <cmath>

namespace dgad {

NoiseSchedule make_linear_schedule(int steps, double beta_start, double beta_end) {
    if (steps < 2) throw std::invalid_argument("make_linear_schedule: T must be >= 2");
    if (!(beta_start > 0.0) || !(beta_start <= beta_end) || !(beta_end < 1.0))
        throw std::invalid_argument("make_linear_schedule: need 0 < beta_start <= beta_end < 1");
    NoiseSchedule s;
    s.steps = steps;
    s.beta.resize(static_cast<std::size_t>(steps));
    s.alpha.resize(static_cast<std::size_t>(steps));
    s.alpha_bar.resize(static_cast<std::size_t>(steps));
    double prod = 1.0;
    for (int t = 0; t < steps; ++t) {
        const double b = beta_start + (beta_end - beta_start) * static_cast<double>(t) / (steps - 1);
        s.beta[static_cast<std::size_t>(t)] = b;
        s.alpha[static_cast<std::size_t>(t)] = 1.0 - b;
        prod *= 1.0 - b;
        s.alpha_bar[static_cast<std::size_t>(t)] = prod;
    }
    return s;
}

template <typename T>
TensorT<T> add_noise(const TensorT<T>& f_tgt, const TensorT<T>& eps, int t, const NoiseSchedule& s) {
    require_same_shape(f_tgt, eps, "add_noise");
    if (t < 0 || t >= s.steps) throw std::invalid_argument("add_noise: t out of range");
    const T wa = static_cast<T>(std::sqrt(s.alpha_bar[static_cast<std::size_t>(t)]));
    const T we = static_cast<T>(std::sqrt(1.0 - s.alpha_bar[static_cast<std::size_t>(t)]));
    TensorT<T> out;
    out.shape = f_tgt.shape;
    out.data.resize(f_tgt.numel());
    for (std::size_t i = 0; i < out.numel(); ++i) out.data[i] = wa * f_tgt.data[i] + we * eps.data[i];
    return out;
}

template <typename T>
TensorT<T> cfg_combine(const TensorT<T>& eps_uncond, const TensorT<T>& eps_cond, double scale) {
    require_same_shape(eps_uncond, eps_cond, "cfg_combine");
    TensorT<T> out;
    out.shape = eps_uncond.shape;
    out.data.resize(eps_uncond.numel());
    const T sc = static_cast<T>(scale);
    for (std::size_t i = 0; i < out.numel(); ++i)
        out.data[i] = eps_uncond.data[i] + sc * (eps_cond.data[i] - eps_uncond.data[i]);
    return out;
}

template <typename T>
TensorT<T> sampler_step_between(const TensorT<T>& x_t, const TensorT<T>& eps_pred, int t, int t_prev,
                                const NoiseSchedule& s, SamplerMode mode, SplitMix64& rng,
                                double x0_clip) {
    require_same_shape(x_t, eps_pred, "sampler_step");
    if (t < 0 || t >= s.steps || t_prev >= t)
        throw std::invalid_argument("sampler_step: bad timestep pair");
    const double ab_t = s.alpha_bar_at(t);
    const double ab_p = s.alpha_bar_at(t_prev);
    const double sqrt_ab_t = std::sqrt(ab_t);
    const double sqrt_one_minus_ab_t = std::sqrt(1.0 - ab_t);

    TensorT<T> out;
    out.shape = x_t.shape;
    out.data.resize(x_t.numel());

    if (mode == SamplerMode::Ddim) {
        const double wa = std::sqrt(ab_p);
        const double we = std::sqrt(1.0 - ab_p);
        for (std::size_t i = 0; i < out.numel(); ++i) {
            double x0 = (x_t.data[i] - sqrt_one_minus_ab_t * eps_pred.data[i]) / sqrt_ab_t;
            x0 = std::min(std::max(x0, -x0_clip), x0_clip);
            out.data[i] = static_cast<T>(wa * x0 + we * eps_pred.data[i]);
        }
        return out;
    }

    // DDPM posterior: mean from predicted x0 and x_t, variance
    // (1-abar_prev)/(1-abar_t) * (1 - abar_t/abar_prev). With t_prev = t-1
    // this is beta_t * (1-abar_{t-1}) / (1-abar_t); it vanishes at the final
    // step (abar_prev = 1), so no noise is added there.
    const double alpha_step = ab_t / ab_p;
    const double beta_step = 1.0 - alpha_step;
    const double coef_x0 = std::sqrt(ab_p) * beta_step / (1.0 - ab_t);
    const double coef_xt = std::sqrt(alpha_step) * (1.0 - ab_p) / (1.0 - ab_t);
    const double sigma = std::sqrt(std::max(0.0, (1.0 - ab_p) / (1.0 - ab_t) * beta_step));
    for (std::size_t i = 0; i < out.numel(); ++i) {
        double x0 = (x_t.data[i] - sqrt_one_minus_ab_t * eps_pred.data[i]) / sqrt_ab_t;
        x0 = std::min(std::max(x0, -x0_clip), x0_clip);
        double v = coef_x0 * x0 + coef_xt * x_t.data[i];
        if (sigma > 0.0) v += sigma * rng.normal();
        out.data[i] = static_cast<T>(v);
    }
    return out;
}

template <typename T>
TensorT<T> sampler_step(const TensorT<T>& x_t, const TensorT<T>& eps_pred, int t,
                        const NoiseSchedule& s, SamplerMode mode, SplitMix64& rng, double x0_clip) {
    return sampler_step_between(x_t, eps_pred, t, t - 1, s, mode, rng, x0_clip);
}

std::vector<int> sampler_timesteps(int schedule_steps, int sample_steps) {
    if (sample_steps < 1) throw std::invalid_argument("sampler_timesteps: need steps >= 1");
    if (sample_steps > schedule_steps) sample_steps = schedule_steps;
    std::vector<int> ts;
    ts.reserve(static_cast<std::size_t>(sample_steps));
    if (sample_steps == 1) {
        ts.push_back(schedule_steps - 1);
        return ts;
    }
    int prev = -1;
    for (int k = sample_steps - 1; k >= 0; --k) {
        int t = static_cast<int>(static_cast<long long>(k) * (schedule_steps - 1) / (sample_steps - 1));
        if (t != prev) ts.push_back(t);
        prev = t;
    }
    return ts;  // descending, ends at 0
}

#define DGAD_INSTANTIATE_SCHED(T)                                                                   \
    template TensorT<T> add_noise<T>(const TensorT<T>&, const TensorT<T>&, int, const NoiseSchedule&); \
    template TensorT<T> cfg_combine<T>(const TensorT<T>&, const TensorT<T>&, double);               \
    template TensorT<T> sampler_step_between<T>(const TensorT<T>&, const TensorT<T>&, int, int,     \
                                                const NoiseSchedule&, SamplerMode, SplitMix64&,     \
                                                double);                                            \
    template TensorT<T> sampler_step<T>(const TensorT<T>&, const TensorT<T>&, int,                  \
                                        const NoiseSchedule&, SamplerMode, SplitMix64&, double);

DGAD_INSTANTIATE_SCHED(float)
DGAD_INSTANTIATE_SCHED(double)
#undef DGAD_INSTANTIATE_SCHED

}  // namespace dgad
