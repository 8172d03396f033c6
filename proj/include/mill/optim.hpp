#pragma once

#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <vector>

namespace mill::optim {

/// Adam over a flat parameter vector.
template <class T>
struct Adam {
    double beta1 = 0.9;
    double beta2 = 0.999;
    double epsilon = 1e-8;
    std::int64_t t = 0;
    std::vector<T> m, v;

    void step(std::vector<T>& params, const std::vector<T>& grads, double lr) {
        if (grads.size() != params.size()) throw std::invalid_argument("Adam: gradient size mismatch");
        if (m.size() != params.size()) {
            m.assign(params.size(), T(0));
            v.assign(params.size(), T(0));
        }
        ++t;
        const double c1 = 1.0 - std::pow(beta1, static_cast<double>(t));
        const double c2 = 1.0 - std::pow(beta2, static_cast<double>(t));
        const T step_size = static_cast<T>(lr / c1);
        const T inv_c2 = static_cast<T>(1.0 / c2);
        const T b1 = static_cast<T>(beta1), b2 = static_cast<T>(beta2), eps = static_cast<T>(epsilon);
        for (std::size_t i = 0; i < params.size(); ++i) {
            const T g = grads[i];
            m[i] = b1 * m[i] + (T(1) - b1) * g;
            v[i] = b2 * v[i] + (T(1) - b2) * g * g;
            params[i] -= step_size * m[i] / (std::sqrt(v[i] * inv_c2) + eps);
        }
    }
};

/// Cosine decay from `base` at step 0 to `floor` at `total_steps`.
inline double cosine_lr(double base, double floor, std::int64_t step, std::int64_t total_steps) {
    if (total_steps <= 0) return base;
    const double t = std::min(1.0, static_cast<double>(step) / static_cast<double>(total_steps));
    return floor + 0.5 * (base - floor) * (1.0 + std::cos(3.14159265358979323846 * t));
}

}  // namespace mill::optim
