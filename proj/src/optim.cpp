#include "xad/optim.hpp"

#include <cmath>
#include <stdexcept>

namespace xad {

AdamW::AdamW(ParamStore& store, std::vector<std::string> param_names, double lr, double beta1,
             double beta2, double weight_decay, double eps)
    : store_(store), names_(std::move(param_names)), lr_(lr), beta1_(beta1), beta2_(beta2),
      wd_(weight_decay), eps_(eps) {
    if (lr <= 0) throw std::runtime_error("adamw: lr must be positive");
    for (const auto& n : names_) {
        if (!store_.trainable(n))
            throw std::runtime_error("adamw: parameter " + n + " is frozen");
        const Tensor& t = store_.at(n);
        m_[n] = Tensor(t.shape);
        v_[n] = Tensor(t.shape);
    }
}

void AdamW::step(const std::map<std::string, Tensor>& grads) {
    ++step_count_;
    double bc1 = 1.0 - std::pow(beta1_, step_count_);
    double bc2 = 1.0 - std::pow(beta2_, step_count_);
    for (const auto& name : names_) {
        auto git = grads.find(name);
        if (git == grads.end()) continue;  // parameter not reached this step
        Tensor& w = store_.at(name);
        const Tensor& g = git->second;
        if (!same_shape(w.shape, g.shape))
            throw std::runtime_error("adamw: gradient shape mismatch for " + name);
        Tensor& m = m_[name];
        Tensor& v = v_[name];
        for (int64_t i = 0; i < w.numel(); ++i) {
            double gi = g[i];
            double mi = beta1_ * m[i] + (1.0 - beta1_) * gi;
            double vi = beta2_ * v[i] + (1.0 - beta2_) * gi * gi;
            m[i] = static_cast<float>(mi);
            v[i] = static_cast<float>(vi);
            double mhat = mi / bc1;
            double vhat = vi / bc2;
            double upd = mhat / (std::sqrt(vhat) + eps_) + wd_ * w[i];
            w[i] = static_cast<float>(w[i] - lr_ * upd);
        }
    }
}

}  // namespace xad
