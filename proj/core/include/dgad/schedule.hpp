#pragma once

#include <vector>

#include "dgad/rng.hpp"
#include "dgad/tensor.hpp"

namespace dgad {

/// Per-timestep variance tables for the forward noising process.
struct NoiseSchedule {
    int steps = 0;                  // T
    std::vector<double> beta;       // beta[t], linear, non-decreasing
    std::vector<double> alpha;      // 1 - beta[t]
    std::vector<double> alpha_bar;  // running product, strictly decreasing

    double alpha_bar_at(int t) const { return t < 0 ? 1.0 : alpha_bar.at(static_cast<std::size_t>(t)); }
};

NoiseSchedule make_linear_schedule(int steps, double beta_start, double beta_end);

/// sqrt(abar_t) * f_tgt + sqrt(1 - abar_t) * eps
template <typename T>
TensorT<T> add_noise(const TensorT<T>& f_tgt, const TensorT<T>& eps, int t, const NoiseSchedule& s);

/// eps_uncond + scale * (eps_cond - eps_uncond)
template <typename T>
TensorT<T> cfg_combine(const TensorT<T>& eps_uncond, const TensorT<T>& eps_cond, double scale);

enum class SamplerMode { Ddpm, Ddim };

/// One reverse step from t to t_prev (t_prev = -1 finishes at the clean
/// sample). DDIM is the deterministic eta=0 update with the predicted clean
/// latent clipped to [-x0_clip, x0_clip]; DDPM adds posterior noise from rng.
template <typename T>
TensorT<T> sampler_step_between(const TensorT<T>& x_t, const TensorT<T>& eps_pred, int t, int t_prev,
                                const NoiseSchedule& s, SamplerMode mode, SplitMix64& rng,
                                double x0_clip = 3.0);

/// Single-step form: t -> t-1.
template <typename T>
TensorT<T> sampler_step(const TensorT<T>& x_t, const TensorT<T>& eps_pred, int t,
                        const NoiseSchedule& s, SamplerMode mode, SplitMix64& rng,
                        double x0_clip = 3.0);

/// Descending timesteps for an n-step reverse pass over a T-step schedule,
/// endpoints included.
std::vector<int> sampler_timesteps(int schedule_steps, int sample_steps);

}  // namespace dgad
