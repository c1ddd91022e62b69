#include "dbd/metrics.hpp"

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <set>

#include "dbd/data.hpp"
#include "dbd/image_io.hpp"

namespace dbd::metrics {

namespace {
constexpr double kThresholdEps = 1e-6;

void check_same_shape(const Tensor& a, const Tensor& b, const char* who) {
    if (!a.same_shape(b))
        throw std::invalid_argument(std::string(who) + ": shape mismatch " +
                                    a.shape_str() + " vs " + b.shape_str());
}

void check_range01(const Tensor& t, const char* who) {
    for (size_t i = 0; i < t.numel(); ++i)
        if (!(t[i] >= 0.0 && t[i] <= 1.0))
            throw std::invalid_argument(std::string(who) + ": values must be in [0,1]");
}

PrecisionRecall pr_from_counts(long long tp, long long fp, long long fn, double beta_sq) {
    PrecisionRecall r;
    r.precision = (tp + fp) > 0 ? static_cast<double>(tp) / (tp + fp) : 0.0;
    r.recall = (tp + fn) > 0 ? static_cast<double>(tp) / (tp + fn) : 0.0;
    const double den = beta_sq * r.precision + r.recall;
    r.f_beta = den > 0 ? (1.0 + beta_sq) * r.precision * r.recall / den : 0.0;
    return r;
}
}  // namespace

ConfusionCounts confusion(const Tensor& pred_binary, const Tensor& gt) {
    check_same_shape(pred_binary, gt, "confusion");
    ConfusionCounts c;
    for (size_t i = 0; i < gt.numel(); ++i) {
        const bool p = pred_binary[i] > 0.5;
        const bool g = gt[i] > 0.5;
        if (p && g)
            ++c.tp;
        else if (p && !g)
            ++c.fp;
        else if (!p && g)
            ++c.fn;
        else
            ++c.tn;
    }
    return c;
}

Tensor binarize_adaptive(const Tensor& pred) {
    if (pred.numel() == 0) throw std::invalid_argument("binarize_adaptive: empty map");
    check_range01(pred, "binarize_adaptive");
    const double t = std::min(1.5 * pred.mean(), 1.0 - kThresholdEps);
    Tensor out = zeros_like(pred);
    for (size_t i = 0; i < pred.numel(); ++i) out[i] = pred[i] > t ? 1.0 : 0.0;
    return out;
}

PrecisionRecall f_measure(const Tensor& pred_binary, const Tensor& gt, double beta_sq) {
    const ConfusionCounts c = confusion(pred_binary, gt);
    return pr_from_counts(c.tp, c.fp, c.fn, beta_sq);
}

double mae(const Tensor& pred, const Tensor& gt) {
    check_same_shape(pred, gt, "mae");
    double acc = 0.0;
    for (size_t i = 0; i < pred.numel(); ++i) acc += std::fabs(pred[i] - gt[i]);
    return acc / static_cast<double>(pred.numel());
}

PrCurve pr_curve(const std::vector<std::pair<Tensor, Tensor>>& pairs, bool pooled) {
    if (pairs.empty()) throw std::invalid_argument("pr_curve: empty sample set");
    PrCurve curve;
    curve.precision.assign(256, 0.0);
    curve.recall.assign(256, 0.0);
    std::vector<long long> tp(256), fp(256), fn(256);
    std::vector<long long> tp_all(256, 0), fp_all(256, 0), fn_all(256, 0);
    for (const auto& [pred, gt] : pairs) {
        check_same_shape(pred, gt, "pr_curve");
        check_range01(pred, "pr_curve");
        std::fill(tp.begin(), tp.end(), 0);
        std::fill(fp.begin(), fp.end(), 0);
        std::fill(fn.begin(), fn.end(), 0);
        // One pass: each pixel passes thresholds strictly below its value.
        for (size_t i = 0; i < pred.numel(); ++i) {
            // pred > t/255  <=>  t <= ceil(pred*255) - 1
            const int tmax = static_cast<int>(std::ceil(pred[i] * 255.0)) - 1;
            const bool g = gt[i] > 0.5;
            for (int t = 0; t < 256; ++t) {
                const bool p = t <= tmax;
                if (p && g)
                    ++tp[t];
                else if (p && !g)
                    ++fp[t];
                else if (!p && g)
                    ++fn[t];
            }
        }
        for (int t = 0; t < 256; ++t) {
            if (pooled) {
                tp_all[t] += tp[t];
                fp_all[t] += fp[t];
                fn_all[t] += fn[t];
            } else {
                const auto r = pr_from_counts(tp[t], fp[t], fn[t], 0.3);
                curve.precision[t] += r.precision;
                curve.recall[t] += r.recall;
            }
        }
    }
    for (int t = 0; t < 256; ++t) {
        if (pooled) {
            const auto r = pr_from_counts(tp_all[t], fp_all[t], fn_all[t], 0.3);
            curve.precision[t] = r.precision;
            curve.recall[t] = r.recall;
        } else {
            curve.precision[t] /= static_cast<double>(pairs.size());
            curve.recall[t] /= static_cast<double>(pairs.size());
        }
    }
    return curve;
}

MetricReport evaluate(const std::vector<std::pair<Tensor, Tensor>>& pairs, bool pooled_pr) {
    if (pairs.empty()) throw std::invalid_argument("evaluate: empty sample set");
    MetricReport rep;
    rep.n_images = static_cast<int>(pairs.size());
    rep.pooled_pr = pooled_pr;

    double psum = 0.0, rsum = 0.0, fsum = 0.0, msum = 0.0;
    for (const auto& [pred, gt] : pairs) {
        const Tensor bin = binarize_adaptive(pred);
        const PrecisionRecall pr = f_measure(bin, gt, rep.beta_sq);
        psum += pr.precision;
        rsum += pr.recall;
        fsum += pr.f_beta;
        msum += mae(pred, gt);
    }
    rep.precision = psum / pairs.size();
    rep.recall = rsum / pairs.size();
    rep.f_beta_per_image = fsum / pairs.size();
    const double den = rep.beta_sq * rep.precision + rep.recall;
    rep.f_beta = den > 0 ? (1.0 + rep.beta_sq) * rep.precision * rep.recall / den : 0.0;
    rep.mae = msum / pairs.size();

    PrCurve curve = pr_curve(pairs, pooled_pr);
    rep.precision_curve = std::move(curve.precision);
    rep.recall_curve = std::move(curve.recall);
    return rep;
}

MetricReport evaluate_dirs(const std::filesystem::path& pred_dir,
                           const std::filesystem::path& gt_dir, bool pooled_pr) {
    namespace fs = std::filesystem;
    auto scan = [](const fs::path& dir) {
        std::map<std::string, fs::path> out;
        if (!fs::exists(dir))
            throw std::runtime_error("evaluate_dirs: no such directory " + dir.string());
        for (const auto& e : fs::directory_iterator(dir))
            if (e.is_regular_file()) out.emplace(e.path().stem().string(), e.path());
        return out;
    };
    const auto preds = scan(pred_dir);
    const auto gts = scan(gt_dir);

    std::vector<std::string> unmatched;
    for (const auto& [stem, p] : preds)
        if (!gts.count(stem)) unmatched.push_back("pred:" + stem);
    for (const auto& [stem, p] : gts)
        if (!preds.count(stem)) unmatched.push_back("gt:" + stem);
    if (!unmatched.empty()) {
        std::string msg = "evaluate_dirs: unmatched stems:";
        for (const auto& s : unmatched) msg += " " + s;
        throw std::runtime_error(msg);
    }

    std::vector<std::pair<Tensor, Tensor>> pairs;
    pairs.reserve(preds.size());
    for (const auto& [stem, path] : preds) {
        Tensor pred = io::read_gray8(path);
        Tensor gt = io::read_mask(gts.at(stem));
        if (!pred.same_shape(gt))
            pred = data::resize_bilinear_map(pred, gt.h(), gt.w());
        pairs.emplace_back(std::move(pred), std::move(gt));
    }
    return evaluate(pairs, pooled_pr);
}

std::string to_json(const MetricReport& r) {
    nlohmann::json j;
    j["precision_curve"] = r.precision_curve;
    j["recall_curve"] = r.recall_curve;
    j["precision"] = r.precision;
    j["recall"] = r.recall;
    j["f_beta"] = r.f_beta;
    j["f_beta_per_image"] = r.f_beta_per_image;
    j["mae"] = r.mae;
    j["n_images"] = r.n_images;
    j["beta_sq"] = r.beta_sq;
    j["threshold_rule"] = r.threshold_rule;
    j["pooled_pr"] = r.pooled_pr;
    return j.dump(2);
}

MetricReport report_from_json(const std::string& text) {
    nlohmann::json j = nlohmann::json::parse(text);
    MetricReport r;
    r.precision_curve = j.at("precision_curve").get<std::vector<double>>();
    r.recall_curve = j.at("recall_curve").get<std::vector<double>>();
    r.precision = j.at("precision");
    r.recall = j.at("recall");
    r.f_beta = j.at("f_beta");
    r.f_beta_per_image = j.at("f_beta_per_image");
    r.mae = j.at("mae");
    r.n_images = j.at("n_images");
    r.beta_sq = j.at("beta_sq");
    r.threshold_rule = j.at("threshold_rule");
    r.pooled_pr = j.at("pooled_pr");
    return r;
}

void write_report(const std::filesystem::path& path, const MetricReport& report) {
    std::ofstream os(path);
    if (!os) throw std::runtime_error("write_report: cannot open " + path.string());
    os << to_json(report) << "\n";
}

MetricReport read_report(const std::filesystem::path& path) {
    std::ifstream is(path);
    if (!is) throw std::runtime_error("read_report: cannot open " + path.string());
    std::string text((std::istreambuf_iterator<char>(is)), std::istreambuf_iterator<char>());
    return report_from_json(text);
}

void write_pr_csv(const std::filesystem::path& path, const MetricReport& report) {
    std::ofstream os(path);
    if (!os) throw std::runtime_error("write_pr_csv: cannot open " + path.string());
    os.precision(17);  // rows carry the exact curve values
    os << "threshold,precision,recall\n";
    for (int t = 0; t < 256; ++t)
        os << t << "," << report.precision_curve[t] << "," << report.recall_curve[t]
           << "\n";
}

}  // namespace dbd::metrics
