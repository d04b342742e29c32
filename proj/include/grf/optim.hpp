#pragma once

#include <cmath>
#include <vector>

#include "grf/param.hpp"

namespace grf {

struct TrainConfig {
    int epochs = 100;
    int patience = 20;
    int batch_size = 32;
    double weight_decay = 1e-2;
    double clip_norm = 1.0;
    double lr_max = 1e-3;
    double lr_min = 1e-6;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    uint64_t seed = 0;

    void validate() const {
        if (epochs < 1) throw ConfigError("epochs must be >= 1");
        if (patience < 1) throw ConfigError("patience must be >= 1");
        if (patience > epochs) throw ConfigError("patience must not exceed epochs");
        if (batch_size < 1) throw ConfigError("batch_size must be >= 1");
        if (weight_decay < 0) throw ConfigError("weight_decay must be non-negative");
        if (clip_norm <= 0) throw ConfigError("clip_norm must be positive");
        if (lr_max < 0 || lr_min < 0 || lr_min > lr_max)
            throw ConfigError("need 0 <= lr_min <= lr_max");
        if (beta1 < 0 || beta1 >= 1 || beta2 < 0 || beta2 >= 1)
            throw ConfigError("betas must lie in [0, 1)");
        if (eps <= 0) throw ConfigError("eps must be positive");
    }
};

// Cosine annealing from lr_max down to lr_min over T_total steps; past the
// horizon the rate stays at lr_min.
inline double cosine_lr(long long t, long long T_total, double lr_max, double lr_min) {
    if (T_total < 1 || t >= T_total) return lr_min;
    if (t < 0) t = 0;
    const double pi = 3.14159265358979323846;
    return lr_min + 0.5 * (lr_max - lr_min) * (1.0 + std::cos(pi * double(t) / double(T_total)));
}

// Scales all gradients so their global L2 norm is at most max_norm.
// Returns the pre-clip norm.
template <typename S>
double clip_grad_norm(ParamStore<S>& ps, double max_norm) {
    double sq = 0.0;
    for (const auto& p : ps.all())
        for (int64_t i = 0; i < p->grad.numel(); ++i) sq += double(p->grad[i]) * double(p->grad[i]);
    const double norm = std::sqrt(sq);
    if (norm > max_norm && norm > 0.0) {
        const S scale = static_cast<S>(max_norm / norm);
        for (const auto& p : ps.all())
            for (int64_t i = 0; i < p->grad.numel(); ++i) p->grad[i] *= scale;
    }
    return norm;
}

// AdamW: decoupled weight decay applied directly to the parameter before
// the bias-corrected Adam update.
template <typename S>
class AdamW {
public:
    AdamW(ParamStore<S>& ps, const TrainConfig& tc) : ps_(ps), tc_(tc) {
        for (const auto& p : ps.all()) {
            m_.push_back(Tensor<S>::zeros(p->value.shape()));
            v_.push_back(Tensor<S>::zeros(p->value.shape()));
        }
    }

    long long steps_taken() const { return t_; }

    void step(double lr) {
        ++t_;
        const double bc1 = 1.0 - std::pow(tc_.beta1, double(t_));
        const double bc2 = 1.0 - std::pow(tc_.beta2, double(t_));
        const auto& params = ps_.all();
        for (size_t pi = 0; pi < params.size(); ++pi) {
            auto& p = *params[pi];
            Tensor<S>& m = m_[pi];
            Tensor<S>& v = v_[pi];
            for (int64_t i = 0; i < p.value.numel(); ++i) {
                p.value[i] -= static_cast<S>(lr * tc_.weight_decay) * p.value[i];
                const double g = double(p.grad[i]);
                m[i] = static_cast<S>(tc_.beta1 * double(m[i]) + (1.0 - tc_.beta1) * g);
                v[i] = static_cast<S>(tc_.beta2 * double(v[i]) + (1.0 - tc_.beta2) * g * g);
                const double m_hat = double(m[i]) / bc1;
                const double v_hat = double(v[i]) / bc2;
                p.value[i] -= static_cast<S>(lr * m_hat / (std::sqrt(v_hat) + tc_.eps));
            }
        }
    }

private:
    ParamStore<S>& ps_;
    TrainConfig tc_;
    std::vector<Tensor<S>> m_, v_;
    long long t_ = 0;
};

}  // namespace grf
