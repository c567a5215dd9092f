#pragma once

#include <cmath>
#include <vector>

#include "tsdiff/core.hpp"
#include "tsdiff/matrix.hpp"

namespace tsdiff {

// Noise schedule over T diffusion steps. beta/alpha use the external step
// vocabulary t = 1..T; alpha_bar(t) is defined for t = 0..T with
// alpha_bar(0) = 1 (empty product).
struct NoiseSchedule {
    std::vector<double> beta_vals;       // beta_vals[t-1] = beta_t
    std::vector<double> alpha_vals;      // 1 - beta_t
    std::vector<double> alpha_bar_vals;  // size T+1, cumulative product

    int steps() const { return static_cast<int>(beta_vals.size()); }

    double beta(int t) const {
        if (t < 1 || t > steps()) throw std::invalid_argument("beta: step out of range");
        return beta_vals[t - 1];
    }
    double alpha(int t) const {
        if (t < 1 || t > steps()) throw std::invalid_argument("alpha: step out of range");
        return alpha_vals[t - 1];
    }
    double alpha_bar(int t) const {
        if (t < 0 || t > steps()) throw std::invalid_argument("alpha_bar: step out of range");
        return alpha_bar_vals[t];
    }
};

inline NoiseSchedule build_schedule(const DiffusionConfig& cfg) {
    cfg.validate();
    const int T = cfg.T;
    NoiseSchedule s;
    s.beta_vals.resize(T);
    s.alpha_vals.resize(T);
    s.alpha_bar_vals.resize(T + 1);
    const double lo = cfg.beta_min, hi = cfg.beta_max;
    for (int t = 1; t <= T; ++t) {
        double b;
        if (t == 1) {
            b = lo;  // endpoints exact by construction
        } else if (t == T) {
            b = hi;
        } else {
            const double frac = static_cast<double>(t - 1) / (T - 1);
            if (cfg.schedule_kind == ScheduleKind::linear) {
                b = lo + frac * (hi - lo);
            } else {
                const double r = std::sqrt(lo) + frac * (std::sqrt(hi) - std::sqrt(lo));
                b = r * r;
            }
        }
        s.beta_vals[t - 1] = b;
        s.alpha_vals[t - 1] = 1.0 - b;
    }
    s.alpha_bar_vals[0] = 1.0;
    for (int t = 1; t <= T; ++t) s.alpha_bar_vals[t] = s.alpha_bar_vals[t - 1] * s.alpha_vals[t - 1];
    return s;
}

// Closed-form marginal of the forward chain:
//   x_t = sqrt(alpha_bar_t) x0 + sqrt(1 - alpha_bar_t) eps
// eps is caller-supplied so tests can drive it deterministically.
inline Matrix forward_noise(const Matrix& x0, int t, const NoiseSchedule& sched, const Matrix& eps) {
    if (t < 1 || t > sched.steps()) throw std::invalid_argument("forward_noise: step out of range");
    if (!x0.same_shape(eps)) throw std::invalid_argument("forward_noise: shape mismatch");
    const double ab = sched.alpha_bar(t);
    const double a = std::sqrt(ab);
    const double b = std::sqrt(1.0 - ab);
    Matrix out(x0.rows, x0.cols);
    for (std::size_t i = 0; i < x0.size(); ++i) out.data[i] = a * x0.data[i] + b * eps.data[i];
    return out;
}

}  // namespace tsdiff
