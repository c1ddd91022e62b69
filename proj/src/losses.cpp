#include "dbd/losses.hpp"

#include <cmath>
#include <stdexcept>

namespace dbd::losses {

using ad::Variable;

namespace {
constexpr double kEps = 1e-7;

void check_binary(const Tensor& target) {
    for (size_t i = 0; i < target.numel(); ++i)
        if (target[i] != 0.0 && target[i] != 1.0)
            throw std::invalid_argument("weighted_bce: target must be binary");
}
}  // namespace

BceWeights bce_weights(const Tensor& target, const Tensor& pred) {
    if (!target.same_shape(pred))
        throw std::invalid_argument("bce_weights: shape mismatch");
    long long tp = 0, tn = 0, np = 0, nn = 0;
    for (size_t i = 0; i < target.numel(); ++i) {
        if (target[i] == 1.0) {
            ++np;
            if (pred[i] > 0.5) ++tp;
        } else {
            ++nn;
            if (pred[i] <= 0.5) ++tn;
        }
    }
    BceWeights w;
    if (np > 0) w.positive = 1.0 - static_cast<double>(tp) / np;
    if (nn > 0) w.negative = 1.0 - static_cast<double>(tn) / nn;
    return w;
}

Variable weighted_bce(const Variable& pred, const Tensor& target, BceWeights w) {
    const Tensor& p = pred.value();
    if (!p.same_shape(target))
        throw std::invalid_argument("weighted_bce: prediction " + p.shape_str() +
                                    " vs target " + target.shape_str());
    check_binary(target);
    const size_t n = p.numel();
    double acc = 0.0;
    for (size_t i = 0; i < n; ++i) {
        const double pc = std::clamp(p[i], kEps, 1.0 - kEps);
        acc += -w.positive * target[i] * std::log(pc) -
               w.negative * (1.0 - target[i]) * std::log(1.0 - pc);
    }
    Tensor out = Tensor::scalar(acc / static_cast<double>(n));
    Tensor tgt = target;
    return ad::make_op(std::move(out), {pred}, [tgt, w, n](ad::Node& self) {
        if (!self.parents[0]->requires_grad) return;
        Tensor& d = self.parents[0]->ensure_grad();
        const Tensor& pv = self.parents[0]->value;
        const double g = self.grad[0] / static_cast<double>(n);
        for (size_t i = 0; i < pv.numel(); ++i) {
            if (pv[i] <= kEps || pv[i] >= 1.0 - kEps) continue;  // clamp region
            d[i] += g * (-w.positive * tgt[i] / pv[i] +
                         w.negative * (1.0 - tgt[i]) / (1.0 - pv[i]));
        }
    });
}

Variable weighted_bce(const Variable& pred, const Tensor& target) {
    return weighted_bce(pred, target, bce_weights(target, pred.value()));
}

Variable depth_l2(const Variable& pred, const Tensor& teacher) {
    const Tensor& p = pred.value();
    if (!p.same_shape(teacher))
        throw std::invalid_argument("depth_l2: prediction " + p.shape_str() +
                                    " vs teacher " + teacher.shape_str());
    const size_t n = p.numel();
    double acc = 0.0;
    for (size_t i = 0; i < n; ++i) {
        const double e = p[i] - teacher[i];
        acc += e * e;
    }
    Tensor out = Tensor::scalar(acc / static_cast<double>(n));
    Tensor t = teacher;
    return ad::make_op(std::move(out), {pred}, [t, n](ad::Node& self) {
        if (!self.parents[0]->requires_grad) return;
        Tensor& d = self.parents[0]->ensure_grad();
        const Tensor& pv = self.parents[0]->value;
        const double g = 2.0 * self.grad[0] / static_cast<double>(n);
        for (size_t i = 0; i < pv.numel(); ++i) d[i] += g * (pv[i] - t[i]);
    });
}

std::pair<Variable, LossBreakdown> total_loss(
    const Variable& defocus_final, const std::vector<Variable>& defocus_sides,
    const Variable& depth_final, const std::vector<Variable>& depth_sides,
    const Tensor& mask, const Tensor& teacher, const LossWeights& w) {
    if (defocus_sides.size() != 5)
        throw std::invalid_argument("total_loss: expected 5 defocus side outputs");
    if (!depth_sides.empty() && depth_sides.size() != 5)
        throw std::invalid_argument("total_loss: expected 0 or 5 depth side outputs");

    LossBreakdown bd;
    std::vector<Variable> terms;

    Variable df = weighted_bce(defocus_final, mask);
    bd.defocus_final = df.value()[0];
    terms.push_back(df);
    for (size_t k = 0; k < 5; ++k) {
        Variable s = weighted_bce(defocus_sides[k], mask);
        bd.defocus_sides[k] = s.value()[0];
        terms.push_back(ad::scale(s, w.alpha[k]));
    }

    if (!depth_sides.empty()) {
        std::vector<Variable> depth_terms;
        Variable dpf = depth_l2(depth_final, teacher);
        bd.depth_final = dpf.value()[0];
        depth_terms.push_back(dpf);
        for (size_t k = 0; k < 5; ++k) {
            Variable s = depth_l2(depth_sides[k], teacher);
            bd.depth_sides[k] = s.value()[0];
            depth_terms.push_back(ad::scale(s, w.beta[k]));
        }
        terms.push_back(ad::scale(ad::add_n(depth_terms), w.gamma));
    }

    Variable total = ad::add_n(terms);
    bd.total = total.value()[0];
    return {total, bd};
}

}  // namespace dbd::losses
