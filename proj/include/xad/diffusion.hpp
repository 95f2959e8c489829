#ifndef XAD_DIFFUSION_HPP
#define XAD_DIFFUSION_HPP

#include <optional>
#include <vector>

#include "xad/tensor.hpp"

namespace xad {

// DDPM timesteps are indexed 0..T-1 internally; "timestep T" in prose is
// index T-1. Schedules and closed forms are computed in double.
struct NoiseSchedule {
    int timesteps = 0;
    std::vector<double> beta;
    std::vector<double> alpha;      // 1 - beta
    std::vector<double> alpha_bar;  // cumulative product of alpha

    double sqrt_alpha_bar(int t) const;
    double sqrt_one_minus_alpha_bar(int t) const;
    void check_t(int t) const;
};

enum class SamplerKind { kDdpmStochastic, kDdimDeterministic };

NoiseSchedule make_linear_schedule(int timesteps, double beta_start, double beta_end);

// z_t = sqrt(abar_t) z0 + sqrt(1 - abar_t) eps
Tensor q_sample(const Tensor& z0, int t, const Tensor& eps, const NoiseSchedule& sched);

// Mean squared error between prediction and target (tensor-level; the
// tape's mse op is the differentiable twin used in training).
double epsilon_loss(const Tensor& eps_pred, const Tensor& eps);

// One reverse step from level t to t-1. DDPM needs noise for t > 0; DDIM
// (eta = 0) must not be given any. At t = 0 returns the predicted z0.
Tensor reverse_step(const Tensor& model_eps, const Tensor& z_t, int t, const NoiseSchedule& sched,
                    SamplerKind kind, const std::optional<Tensor>& noise = std::nullopt);

// Predicted clean latent from (z_t, eps) — the closed-form inversion of
// q_sample, shared by both samplers.
Tensor predict_z0(const Tensor& model_eps, const Tensor& z_t, int t, const NoiseSchedule& sched);

}  // namespace xad

#endif
