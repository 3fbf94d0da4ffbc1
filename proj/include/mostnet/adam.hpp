#pragma once

#include <cmath>
#include <cstdint>
#include <vector>

#include "mostnet/layers.hpp"

namespace mostnet {

struct AdamOptions {
    double learning_rate = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double epsilon = 1e-8;
};

// Adam with bias correction. Parameters without a gradient this step are
// treated as having a zero gradient.
template <class T>
class Adam {
public:
    Adam() = default;
    Adam(ParamList<T> params, AdamOptions options) : params_(std::move(params)), options_(options) {
        for (const auto& [name, p] : params_) {
            m_.emplace_back(p.numel(), T(0));
            v_.emplace_back(p.numel(), T(0));
        }
    }

    void zero_grad() {
        for (auto& [name, p] : params_) p.zero_grad();
    }

    void step() {
        ++steps_;
        const double b1 = options_.beta1, b2 = options_.beta2;
        const T correction1 = static_cast<T>(1.0 - std::pow(b1, static_cast<double>(steps_)));
        const T correction2 = static_cast<T>(1.0 - std::pow(b2, static_cast<double>(steps_)));
        const T lr = static_cast<T>(options_.learning_rate), eps = static_cast<T>(options_.epsilon);
        const T tb1 = static_cast<T>(b1), tb2 = static_cast<T>(b2);
        for (std::size_t k = 0; k < params_.size(); ++k) {
            auto& p = params_[k].second;
            const auto g = p.grad();
            auto w = p.mutable_data();
            auto& m = m_[k];
            auto& v = v_[k];
            for (std::size_t i = 0; i < w.size(); ++i) {
                const T gi = g.empty() ? T(0) : g[i];
                m[i] = tb1 * m[i] + (T(1) - tb1) * gi;
                v[i] = tb2 * v[i] + (T(1) - tb2) * gi * gi;
                const T m_hat = m[i] / correction1;
                const T v_hat = v[i] / correction2;
                w[i] -= lr * m_hat / (std::sqrt(v_hat) + eps);
            }
        }
    }

    const ParamList<T>& params() const { return params_; }
    const AdamOptions& options() const { return options_; }
    std::uint64_t steps() const { return steps_; }
    void set_steps(std::uint64_t s) { steps_ = s; }
    std::vector<std::vector<T>>& first_moments() { return m_; }
    std::vector<std::vector<T>>& second_moments() { return v_; }
    const std::vector<std::vector<T>>& first_moments() const { return m_; }
    const std::vector<std::vector<T>>& second_moments() const { return v_; }

private:
    ParamList<T> params_;
    AdamOptions options_;
    std::vector<std::vector<T>> m_;
    std::vector<std::vector<T>> v_;
    std::uint64_t steps_ = 0;
};

}  // namespace mostnet
