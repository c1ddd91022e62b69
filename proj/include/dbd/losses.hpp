#pragma once

#include <array>
#include <vector>

#include "dbd/autodiff.hpp"

namespace dbd::losses {

struct LossWeights {
    std::array<double, 5> alpha = {1, 1, 1, 1, 1};  // per-level defocus weights
    std::array<double, 5> beta = {1, 1, 1, 1, 1};   // per-level depth weights
    double gamma = 0.1;                             // depth term weight
};

struct LossBreakdown {
    double defocus_final = 0.0;
    std::array<double, 5> defocus_sides{};
    double depth_final = 0.0;
    std::array<double, 5> depth_sides{};
    double total = 0.0;
};

// Class-balance weights of the weighted BCE. Counted per batch over all pixels
// with a 0.5 decision threshold; treated as constants in the gradient. A class
// with no ground-truth pixels keeps weight 1.
struct BceWeights {
    double positive = 1.0;
    double negative = 1.0;
};
BceWeights bce_weights(const Tensor& target, const Tensor& pred);

// Mean over pixels of  -(1 - TP/Np) * M log M'  - (1 - TN/Nn) * (1-M) log(1-M').
// Predictions are clamped to [1e-7, 1 - 1e-7]; the target must be exactly binary.
ad::Variable weighted_bce(const ad::Variable& pred, const Tensor& target);
// Same with externally frozen weights (the gradient path of the default form).
ad::Variable weighted_bce(const ad::Variable& pred, const Tensor& target, BceWeights w);

// Mean squared difference; resolution-invariant depth distillation term.
ad::Variable depth_l2(const ad::Variable& pred, const Tensor& teacher);

// Joint objective: defocus terms plus gamma-weighted depth terms. Side outputs
// must already be at ground-truth resolution. Empty depth sides (disabled depth
// head) zero the depth terms.
std::pair<ad::Variable, LossBreakdown> total_loss(
    const ad::Variable& defocus_final, const std::vector<ad::Variable>& defocus_sides,
    const ad::Variable& depth_final, const std::vector<ad::Variable>& depth_sides,
    const Tensor& mask, const Tensor& teacher, const LossWeights& w);

}  // namespace dbd::losses
