#pragma once

#include <cmath>
#include <cstdint>
#include <vector>

#include "vlkd/transformer.hpp"

namespace vlkd {

struct AdamConfig {
    double beta1 = 0.99;
    double beta2 = 0.999;
    double eps = 1e-6;
    double weight_decay = 0.01;
};

// Decoupled-weight-decay Adam over a fixed parameter list. Decay applies
// only to entries registered with decay=true (weight matrices; temperatures,
// norm parameters and biases are excluded at registration time).
template <typename T>
class AdamW {
public:
    AdamW(ParamList<T> params, AdamConfig cfg) : params_(std::move(params)), cfg_(cfg) {
        for (const auto& p : params_) {
            m_.emplace_back(p.tensor->v.size(), T(0));
            v_.emplace_back(p.tensor->v.size(), T(0));
        }
    }

    int64_t step_count() const { return step_; }
    const ParamList<T>& params() const { return params_; }

    void step(double lr) {
        ++step_;
        const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(step_));
        const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(step_));
        for (size_t pi = 0; pi < params_.size(); ++pi) {
            auto& p = params_[pi];
            if (p.frozen)
                throw InvariantViolation("optimizer update touched frozen parameter '" + p.name + "'");
            p.tensor->ensure_grad();
            auto& m = m_[pi];
            auto& v = v_[pi];
            for (size_t i = 0; i < p.tensor->v.size(); ++i) {
                const double g = static_cast<double>(p.tensor->g[i]);
                if (std::isnan(g))
                    throw TrainingError("NaN gradient in parameter '" + p.name + "' at optimizer step " +
                                        std::to_string(step_));
                const double mi = cfg_.beta1 * static_cast<double>(m[i]) + (1.0 - cfg_.beta1) * g;
                const double vi = cfg_.beta2 * static_cast<double>(v[i]) + (1.0 - cfg_.beta2) * g * g;
                m[i] = static_cast<T>(mi);
                v[i] = static_cast<T>(vi);
                const double mhat = mi / bc1;
                const double vhat = vi / bc2;
                double update = mhat / (std::sqrt(vhat) + cfg_.eps);
                if (p.decay) update += cfg_.weight_decay * static_cast<double>(p.tensor->v[i]);
                p.tensor->v[i] -= static_cast<T>(lr * update);
            }
        }
    }

    void zero_grad() {
        for (auto& p : params_) p.tensor->zero_grad();
    }

private:
    ParamList<T> params_;
    AdamConfig cfg_;
    int64_t step_ = 0;
    std::vector<std::vector<T>> m_, v_;
};

// Linear ramp to `base` over the first ceil(warmup_fraction * total) steps,
// then linear decay to zero at `total`.
inline double lr_at(int64_t step, int64_t total, double base, double warmup_fraction) {
    if (total <= 0) throw ContractError("lr_at: total_steps must be positive");
    if (step < 0 || step > total)
        throw ContractError("lr_at: step " + std::to_string(step) + " outside [0," + std::to_string(total) + "]");
    const int64_t warm =
        std::max<int64_t>(1, static_cast<int64_t>(std::ceil(warmup_fraction * static_cast<double>(total))));
    if (step <= warm) return base * static_cast<double>(step) / static_cast<double>(warm);
    return base * static_cast<double>(total - step) / static_cast<double>(total - warm);
}

// Global L2-norm clipping over the whole trainable set; returns the observed
// norm before any scaling.
template <typename T>
double clip_grad_norm(const ParamList<T>& params, double max_norm) {
    if (!(max_norm > 0.0)) throw ContractError("clip_grad_norm: max_norm must be positive");
    double sq = 0.0;
    for (const auto& p : params)
        for (T g : p.tensor->g) sq += static_cast<double>(g) * static_cast<double>(g);
    const double norm = std::sqrt(sq);
    if (norm > max_norm) {
        const T s = static_cast<T>(max_norm / norm);
        for (const auto& p : params)
            for (auto& g : p.tensor->g) g *= s;
    }
    return norm;
}

} // namespace vlkd
