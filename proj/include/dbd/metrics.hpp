#pragma once

#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include "dbd/tensor.hpp"

namespace dbd::metrics {

struct ConfusionCounts {
    long long tp = 0, fp = 0, tn = 0, fn = 0;
    long long total() const { return tp + fp + tn + fn; }
};
ConfusionCounts confusion(const Tensor& pred_binary, const Tensor& gt);

// Threshold at min(1.5 * mean, 1 - eps) so an all-high map stays all ones.
Tensor binarize_adaptive(const Tensor& pred);

struct PrecisionRecall {
    double precision = 0.0;
    double recall = 0.0;
    double f_beta = 0.0;
};
// Empty denominators (no positive predictions / no positive pixels) give 0.
PrecisionRecall f_measure(const Tensor& pred_binary, const Tensor& gt,
                          double beta_sq = 0.3);

double mae(const Tensor& pred, const Tensor& gt);

struct PrCurve {
    std::vector<double> precision;  // 256 entries, thresholds t/255
    std::vector<double> recall;
};
// Per-image precision/recall averaged across images at each integer threshold;
// `pooled` switches to dataset-pooled confusion counts instead.
PrCurve pr_curve(const std::vector<std::pair<Tensor, Tensor>>& pred_gt_pairs,
                 bool pooled = false);

struct MetricReport {
    std::vector<double> precision_curve;  // 256
    std::vector<double> recall_curve;     // 256
    double precision = 0.0;               // dataset mean over images
    double recall = 0.0;
    double f_beta = 0.0;                // from dataset-mean precision/recall (canonical)
    double f_beta_per_image = 0.0;      // mean of per-image F-beta, for reference
    double mae = 0.0;
    int n_images = 0;
    double beta_sq = 0.3;
    std::string threshold_rule = "adaptive:1.5*mean";
    bool pooled_pr = false;
};

MetricReport evaluate(const std::vector<std::pair<Tensor, Tensor>>& pred_gt_pairs,
                      bool pooled_pr = false);

// Matches prediction and ground-truth files by stem; unmatched stems are an
// error listing every offender. Predictions are resized to GT size if needed.
MetricReport evaluate_dirs(const std::filesystem::path& pred_dir,
                           const std::filesystem::path& gt_dir, bool pooled_pr = false);

std::string to_json(const MetricReport& report);
MetricReport report_from_json(const std::string& json_text);
void write_report(const std::filesystem::path& json_path, const MetricReport& report);
MetricReport read_report(const std::filesystem::path& json_path);

// 256 rows: threshold, precision, recall.
void write_pr_csv(const std::filesystem::path& csv_path, const MetricReport& report);

}  // namespace dbd::metrics
