#include "xad/diffusion.hpp"

#include <cmath>
#include <stdexcept>

namespace xad {

void NoiseSchedule::check_t(int t) const {
    if (t < 0 || t >= timesteps)
        throw std::runtime_error("timestep " + std::to_string(t) + " outside [0, " +
                                 std::to_string(timesteps) + ")");
}

double NoiseSchedule::sqrt_alpha_bar(int t) const {
    check_t(t);
    return std::sqrt(alpha_bar[static_cast<size_t>(t)]);
}

double NoiseSchedule::sqrt_one_minus_alpha_bar(int t) const {
    check_t(t);
    return std::sqrt(1.0 - alpha_bar[static_cast<size_t>(t)]);
}

NoiseSchedule make_linear_schedule(int timesteps, double beta_start, double beta_end) {
    if (timesteps < 2) throw std::runtime_error("schedule: need at least 2 timesteps");
    if (!(beta_start > 0.0) || !(beta_start <= beta_end) || !(beta_end < 1.0))
        throw std::runtime_error("schedule: need 0 < beta_start <= beta_end < 1");
    NoiseSchedule s;
    s.timesteps = timesteps;
    s.beta.resize(static_cast<size_t>(timesteps));
    s.alpha.resize(static_cast<size_t>(timesteps));
    s.alpha_bar.resize(static_cast<size_t>(timesteps));
    double prod = 1.0;
    for (int t = 0; t < timesteps; ++t) {
        double frac = timesteps == 1 ? 0.0 : static_cast<double>(t) / (timesteps - 1);
        double b = beta_start + (beta_end - beta_start) * frac;
        s.beta[static_cast<size_t>(t)] = b;
        s.alpha[static_cast<size_t>(t)] = 1.0 - b;
        prod *= 1.0 - b;
        s.alpha_bar[static_cast<size_t>(t)] = prod;
    }
    return s;
}

Tensor q_sample(const Tensor& z0, int t, const Tensor& eps, const NoiseSchedule& sched) {
    sched.check_t(t);
    if (!same_shape(z0.shape, eps.shape))
        throw std::runtime_error("q_sample: shape mismatch " + shape_str(z0.shape) + " vs " +
                                 shape_str(eps.shape));
    float a = static_cast<float>(sched.sqrt_alpha_bar(t));
    float b = static_cast<float>(sched.sqrt_one_minus_alpha_bar(t));
    Tensor out(z0.shape);
    for (int64_t i = 0; i < out.numel(); ++i) out[i] = a * z0[i] + b * eps[i];
    return out;
}

double epsilon_loss(const Tensor& eps_pred, const Tensor& eps) {
    if (!same_shape(eps_pred.shape, eps.shape))
        throw std::runtime_error("epsilon_loss: shape mismatch " + shape_str(eps_pred.shape) + " vs " +
                                 shape_str(eps.shape));
    double acc = 0;
    for (int64_t i = 0; i < eps.numel(); ++i) {
        double d = static_cast<double>(eps_pred[i]) - eps[i];
        acc += d * d;
    }
    return acc / static_cast<double>(eps.numel());
}

Tensor predict_z0(const Tensor& model_eps, const Tensor& z_t, int t, const NoiseSchedule& sched) {
    sched.check_t(t);
    double sa = sched.sqrt_alpha_bar(t);
    double sb = sched.sqrt_one_minus_alpha_bar(t);
    Tensor out(z_t.shape);
    for (int64_t i = 0; i < out.numel(); ++i)
        out[i] = static_cast<float>((z_t[i] - sb * model_eps[i]) / sa);
    return out;
}

Tensor reverse_step(const Tensor& model_eps, const Tensor& z_t, int t, const NoiseSchedule& sched,
                    SamplerKind kind, const std::optional<Tensor>& noise) {
    sched.check_t(t);
    if (!same_shape(model_eps.shape, z_t.shape))
        throw std::runtime_error("reverse_step: shape mismatch " + shape_str(model_eps.shape) + " vs " +
                                 shape_str(z_t.shape));
    if (t == 0) return predict_z0(model_eps, z_t, 0, sched);

    if (kind == SamplerKind::kDdimDeterministic) {
        if (noise.has_value()) throw std::runtime_error("reverse_step: DDIM (eta=0) takes no noise");
        Tensor z0 = predict_z0(model_eps, z_t, t, sched);
        double sa_prev = sched.sqrt_alpha_bar(t - 1);
        double sb_prev = sched.sqrt_one_minus_alpha_bar(t - 1);
        Tensor out(z_t.shape);
        for (int64_t i = 0; i < out.numel(); ++i)
            out[i] = static_cast<float>(sa_prev * z0[i] + sb_prev * model_eps[i]);
        return out;
    }

    // DDPM ancestral step: posterior mean plus sigma_t * noise with
    // sigma_t^2 = beta_tilde_t = (1 - abar_{t-1}) / (1 - abar_t) * beta_t.
    if (!noise.has_value())
        throw std::runtime_error("reverse_step: stochastic step at t=" + std::to_string(t) +
                                 " requires noise");
    if (!same_shape(noise->shape, z_t.shape))
        throw std::runtime_error("reverse_step: noise shape mismatch");
    double beta_t = sched.beta[static_cast<size_t>(t)];
    double abar_t = sched.alpha_bar[static_cast<size_t>(t)];
    double abar_prev = sched.alpha_bar[static_cast<size_t>(t - 1)];
    double inv_sqrt_alpha = 1.0 / std::sqrt(sched.alpha[static_cast<size_t>(t)]);
    double coef = beta_t / std::sqrt(1.0 - abar_t);
    double sigma = std::sqrt((1.0 - abar_prev) / (1.0 - abar_t) * beta_t);
    Tensor out(z_t.shape);
    const Tensor& nz = *noise;
    for (int64_t i = 0; i < out.numel(); ++i)
        out[i] = static_cast<float>(inv_sqrt_alpha * (z_t[i] - coef * model_eps[i]) + sigma * nz[i]);
    return out;
}

}  // namespace xad
