#pragma once

#include <cmath>
#include <cstdint>
#include <vector>

#include "generaser/common.hpp"

namespace generaser {

// Adam with bias correction. An optional freeze mask limits updates (and
// moment tracking) to a parameter subset, e.g. the fusion layers in stage 2.
template <typename S>
class Adam {
public:
    explicit Adam(std::size_t n, double lr = 1e-3, double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8)
        : lr_(lr), beta1_(beta1), beta2_(beta2), eps_(eps), m_(n, 0.0), v_(n, 0.0) {}

    void set_freeze_mask(std::vector<std::uint8_t> trainable) {
        if (!trainable.empty() && trainable.size() != m_.size()) {
            throw ShapeError("freeze mask size does not match parameter count");
        }
        trainable_ = std::move(trainable);
    }

    double learning_rate() const { return lr_; }
    std::int64_t step_count() const { return step_; }

    void step(std::vector<S>& params, const std::vector<S>& grads) {
        if (params.size() != m_.size() || grads.size() != m_.size()) {
            throw ShapeError("optimizer state does not match parameter count");
        }
        ++step_;
        const double bc1 = 1.0 - std::pow(beta1_, static_cast<double>(step_));
        const double bc2 = 1.0 - std::pow(beta2_, static_cast<double>(step_));
        for (std::size_t i = 0; i < params.size(); ++i) {
            if (!trainable_.empty() && trainable_[i] == 0) continue;
            const double g = static_cast<double>(grads[i]);
            m_[i] = beta1_ * m_[i] + (1.0 - beta1_) * g;
            v_[i] = beta2_ * v_[i] + (1.0 - beta2_) * g * g;
            const double mhat = m_[i] / bc1;
            const double vhat = v_[i] / bc2;
            params[i] -= static_cast<S>(lr_ * mhat / (std::sqrt(vhat) + eps_));
        }
    }

private:
    double lr_, beta1_, beta2_, eps_;
    std::int64_t step_ = 0;
    std::vector<double> m_, v_;
    std::vector<std::uint8_t> trainable_;
};

}  // namespace generaser
