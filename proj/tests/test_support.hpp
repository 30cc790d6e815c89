#pragma once

#include <cmath>
#include <functional>
#include <vector>

#include "xmodal/rng.hpp"
#include "xmodal/tensor.hpp"

namespace xmodal::testing {

inline Tensor random_tensor(Shape shape, Rng& rng, double lo = -1.0, double hi = 1.0,
                            bool requires_grad = true) {
    Tensor t = Tensor::zeros(std::move(shape), requires_grad);
    for (auto& v : t.values()) v = rng.uniform(lo, hi);
    return t;
}

struct GradCheckResult {
    double max_rel_error = 0.0;
    double max_abs_error = 0.0;
    std::size_t checked = 0;
};

// Central finite differences against tape gradients. `forward` must be pure:
// it re-evaluates the scalar loss from the current parameter values, with or
// without a tape.
inline GradCheckResult grad_check(const std::vector<Tensor>& params,
                                  const std::function<Tensor(Tape*)>& forward, double h = 1e-5) {
    Tape tape;
    Tensor loss = forward(&tape);
    for (const auto& p : params) const_cast<Tensor&>(p).zero_grad();
    tape.backward(loss);
    std::vector<std::vector<double>> analytic;
    for (const auto& p : params) {
        auto g = p.grad();
        analytic.emplace_back(g.begin(), g.end());
    }

    GradCheckResult result;
    for (std::size_t pi = 0; pi < params.size(); ++pi) {
        Tensor p = params[pi];
        auto vals = p.values();
        for (std::size_t i = 0; i < vals.size(); ++i) {
            const double saved = vals[i];
            vals[i] = saved + h;
            const double up = forward(nullptr).item();
            vals[i] = saved - h;
            const double down = forward(nullptr).item();
            vals[i] = saved;
            const double numeric = (up - down) / (2.0 * h);
            const double a = analytic[pi][i];
            const double abs_err = std::abs(a - numeric);
            const double scale = std::max(std::abs(a), std::abs(numeric));
            result.max_abs_error = std::max(result.max_abs_error, abs_err);
            if (scale > 1e-6) {
                result.max_rel_error = std::max(result.max_rel_error, abs_err / scale);
            } else if (abs_err > 1e-8) {
                result.max_rel_error = std::max(result.max_rel_error, 1.0);
            }
            ++result.checked;
        }
    }
    return result;
}

}  // namespace xmodal::testing
