#pragma once

#include <vector>

#include "dbd/blocks.hpp"
#include "dbd/metrics.hpp"

namespace dbd::testing {

// Receptive field by impulse propagation through actual composed 1-D dilated
// convolutions (all-ones kernels, stride 1): the support width of the response
// is the input extent one output position depends on. Independent of the
// closed-form calculator.
inline int rf_impulse_oracle(const blocks::BranchSpec& spec) {
    if (spec.identity || spec.stages.empty()) return 1;
    int bound = 1;
    for (const auto& s : spec.stages) bound += s.kernel * s.dilation;  // generous
    const int len = 2 * bound + 1;
    std::vector<double> signal(len, 0.0);
    signal[bound] = 1.0;
    for (const auto& s : spec.stages) {
        std::vector<double> next(len, 0.0);
        const int half = (s.kernel - 1) / 2;
        for (int i = 0; i < len; ++i) {
            double acc = 0.0;
            for (int j = -half; j <= half; ++j) {
                const int src = i + j * s.dilation;
                if (src >= 0 && src < len) acc += signal[src];
            }
            next[i] = acc;
        }
        signal.swap(next);
    }
    int lo = len, hi = -1;
    for (int i = 0; i < len; ++i)
        if (signal[i] != 0.0) {
            lo = std::min(lo, i);
            hi = std::max(hi, i);
        }
    return hi - lo + 1;
}

// Pixel-loop reference metrics, deliberately naive.
struct LoopCounts {
    long long tp = 0, fp = 0, tn = 0, fn = 0;
};

inline LoopCounts loop_confusion(const Tensor& pred_bin, const Tensor& gt) {
    LoopCounts c;
    for (int n = 0; n < gt.n(); ++n)
        for (int ch = 0; ch < gt.c(); ++ch)
            for (int y = 0; y < gt.h(); ++y)
                for (int x = 0; x < gt.w(); ++x) {
                    const bool p = pred_bin.at(n, ch, y, x) > 0.5;
                    const bool g = gt.at(n, ch, y, x) > 0.5;
                    if (p && g)
                        ++c.tp;
                    else if (p)
                        ++c.fp;
                    else if (g)
                        ++c.fn;
                    else
                        ++c.tn;
                }
    return c;
}

inline double loop_mae(const Tensor& a, const Tensor& b) {
    double acc = 0.0;
    long long n = 0;
    for (int i = 0; i < static_cast<int>(a.numel()); ++i, ++n)
        acc += std::fabs(a[i] - b[i]);
    return acc / static_cast<double>(n);
}

inline metrics::PrecisionRecall loop_f_measure(const Tensor& pred_bin, const Tensor& gt,
                                               double beta_sq) {
    const LoopCounts c = loop_confusion(pred_bin, gt);
    metrics::PrecisionRecall r;
    r.precision = (c.tp + c.fp) > 0 ? double(c.tp) / double(c.tp + c.fp) : 0.0;
    r.recall = (c.tp + c.fn) > 0 ? double(c.tp) / double(c.tp + c.fn) : 0.0;
    const double den = beta_sq * r.precision + r.recall;
    r.f_beta = den > 0 ? (1 + beta_sq) * r.precision * r.recall / den : 0.0;
    return r;
}

inline Tensor loop_binarize_at(const Tensor& pred, double threshold) {
    Tensor out = zeros_like(pred);
    for (size_t i = 0; i < pred.numel(); ++i) out[i] = pred[i] > threshold ? 1.0 : 0.0;
    return out;
}

}  // namespace dbd::testing
