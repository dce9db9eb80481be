#pragma once

#include <cmath>
#include <string>

#include "graphfuse/tensor.hpp"

namespace graphfuse {

// Central finite differences against reverse-mode gradients, double
// precision only. `f` maps the tensor to a scalar tensor and is re-run with
// perturbed entries; returns the max over coordinates of
// |g_ad - g_fd| / max(1, |g_ad|, |g_fd|).
template <typename F>
double grad_check(F&& f, const TensorPtr<double>& x, double h = 1e-5) {
    if (h < 1e-7 || h > 1e-4) {
        throw UsageError("grad_check: step " + std::to_string(h) + " outside [1e-7, 1e-4]");
    }
    x->requires_grad = true;
    x->ensure_grad();
    x->zero_grad();
    {
        TensorPtr<double> loss = f(x);
        if (loss->numel() != 1) throw UsageError("grad_check: f must return a scalar");
        backward(loss);
    }
    std::vector<double> g_ad = x->grad;

    double max_rel = 0.0;
    NoGradGuard no_grad;
    for (std::int64_t i = 0; i < x->numel(); ++i) {
        const double orig = x->data[i];
        x->data[i] = orig + h;
        const double up = f(x)->item();
        x->data[i] = orig - h;
        const double down = f(x)->item();
        x->data[i] = orig;
        if (!std::isfinite(up) || !std::isfinite(down)) {
            throw NumericError("grad_check: non-finite value at coordinate " + std::to_string(i));
        }
        const double fd = (up - down) / (2.0 * h);
        const double ad = g_ad[i];
        const double denom = std::max({1.0, std::fabs(ad), std::fabs(fd)});
        max_rel = std::max(max_rel, std::fabs(ad - fd) / denom);
    }
    return max_rel;
}

}  // namespace graphfuse
