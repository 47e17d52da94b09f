#pragma once

#include <cmath>
#include <functional>
#include <vector>

#include "dsup/rng.hpp"
#include "dsup/tensor.hpp"

namespace dsup::testutil {

inline Tensor random_tensor(std::vector<int> shape, RngStream& rng, double lo = -1.0, double hi = 1.0) {
    Tensor t(std::move(shape));
    for (std::int64_t i = 0; i < t.size(); ++i) t[i] = static_cast<float>(rng.uniform(lo, hi));
    return t;
}

// Relative error with an absolute floor so near-zero gradients are compared
// on an absolute scale.
inline double rel_err(double a, double b, double floor_ = 1.0) {
    const double denom = std::max({std::abs(a), std::abs(b), floor_});
    return std::abs(a - b) / denom;
}

// Central finite difference of eval() with respect to *x.
inline double fd_central(float* x, double h, const std::function<double()>& eval) {
    const float saved = *x;
    *x = static_cast<float>(saved + h);
    const double lp = eval();
    *x = static_cast<float>(saved - h);
    const double lm = eval();
    *x = saved;
    return (lp - lm) / (2.0 * h);
}

// Central difference at step h, dividing by the step the float parameter
// actually realized. Probes where the h and h/8 estimates disagree straddle a
// relu kink (FD is meaningless there) and are reported as unusable.
inline bool fd_central_smooth(float* x, double h, const std::function<double()>& eval, double& out) {
    const float saved = *x;
    auto probe = [&](double step) {
        const float xp = static_cast<float>(saved + step);
        const float xm = static_cast<float>(saved - step);
        *x = xp;
        const double lp = eval();
        *x = xm;
        const double lm = eval();
        *x = saved;
        return (lp - lm) / (static_cast<double>(xp) - static_cast<double>(xm));
    };
    out = probe(h);
    const double refined = probe(h / 8.0);
    const double scale = std::max({std::abs(out), std::abs(refined), 1e-2});
    return std::abs(out - refined) / scale <= 5e-4;
}

} // namespace dsup::testutil
