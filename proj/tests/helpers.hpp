#pragma once

#include <functional>
#include <random>
#include <vector>

#include "dbd/autodiff.hpp"

namespace dbd::testing {

// Central finite differences against the analytic backward pass. `f` must
// rebuild the graph from the given variables on every call.
struct GradCheck {
    double max_rel_err = 0.0;
    double max_abs_err = 0.0;
    size_t checked = 0;
};

inline GradCheck grad_check(
    const std::function<ad::Variable(std::vector<ad::Variable>&)>& f,
    std::vector<Tensor> inputs, double h = 1e-6, size_t stride = 1) {
    std::vector<ad::Variable> vars;
    for (const auto& t : inputs) vars.emplace_back(t, /*requires_grad=*/true);
    ad::Variable loss = f(vars);
    ad::backward(loss);

    std::vector<Tensor> analytic;
    for (auto& v : vars)
        analytic.push_back(v.has_grad() ? v.grad() : zeros_like(v.value()));

    auto eval = [&](const std::vector<Tensor>& ts) {
        std::vector<ad::Variable> vs;
        for (const auto& t : ts) vs.emplace_back(t, false);
        return f(vs).value()[0];
    };

    GradCheck r;
    for (size_t vi = 0; vi < inputs.size(); ++vi) {
        for (size_t i = 0; i < inputs[vi].numel(); i += stride) {
            const double orig = inputs[vi][i];
            const double step = h * std::max(1.0, std::fabs(orig));
            inputs[vi][i] = orig + step;
            const double fp = eval(inputs);
            inputs[vi][i] = orig - step;
            const double fm = eval(inputs);
            inputs[vi][i] = orig;
            const double fd = (fp - fm) / (2.0 * step);
            const double a = analytic[vi][i];
            const double abs_err = std::fabs(a - fd);
            const double rel = abs_err / std::max(std::max(std::fabs(a), std::fabs(fd)), 1e-6);
            r.max_abs_err = std::max(r.max_abs_err, abs_err);
            r.max_rel_err = std::max(r.max_rel_err, rel);
            ++r.checked;
        }
    }
    return r;
}

inline Tensor random_tensor(int n, int c, int h, int w, std::mt19937_64& rng,
                            double lo = -1.0, double hi = 1.0) {
    Tensor t(n, c, h, w);
    std::uniform_real_distribution<double> d(lo, hi);
    for (size_t i = 0; i < t.numel(); ++i) t[i] = d(rng);
    return t;
}

// Random-weighted mean turns any tensor output into a well-scrambled scalar.
inline ad::Variable scalarize(const ad::Variable& y, std::uint64_t seed = 42) {
    std::mt19937_64 rng(seed);
    Tensor coeffs = random_tensor(y.value().n(), y.value().c(), y.value().h(),
                                  y.value().w(), rng, -1.0, 1.0);
    return ad::mean_all(ad::mul(y, ad::Variable(coeffs, false)));
}

}  // namespace dbd::testing
