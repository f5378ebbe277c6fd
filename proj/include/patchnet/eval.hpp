#pragma once

#include <optional>
#include <string>
#include <vector>

#include "json.hpp"
#include "patchnet/backbone.hpp"
#include "patchnet/dataset.hpp"
#include "patchnet/metrics.hpp"
#include "patchnet/saliency.hpp"

namespace patchnet {

enum class SaliencyMethod { patch_raw, patch_scaled, gradcam };

std::string saliency_method_name(SaliencyMethod m);
SaliencyMethod saliency_method_from_name(const std::string& name);

struct EvalOptions {
    SaliencyMethod method = SaliencyMethod::patch_raw;
    int shift_offset = 0;  // 0: use the patch side (single block map)
    int bootstrap_resamples = 1000;
    double ci_level = 0.95;
    uint64_t seed = 0;
    int threads = 1;
};

struct MetricWithCi {
    double point = 0.0;
    std::optional<BootstrapInterval> ci;
};

struct ClassEvalReport {
    std::string name;
    double threshold = 0.0;  // classification threshold from the validation split
    std::optional<MetricWithCi> auroc;
    std::optional<MetricWithCi> sensitivity;
    std::optional<MetricWithCi> specificity;
    std::optional<MetricWithCi> accuracy;
    std::optional<MetricWithCi> hit_rate;
    std::optional<MetricWithCi> miou_all;
    std::optional<MetricWithCi> miou_tp;
    int n_test = 0;
    int n_hit_cases = 0;
    int n_loc_cases = 0;  // TP + FP + FN
};

struct EvalReport {
    std::vector<ClassEvalReport> classes;
    std::optional<double> mean_auroc;
    std::optional<double> mean_sensitivity;
    std::optional<double> mean_specificity;
    std::optional<double> mean_accuracy;
    std::optional<double> mean_hit_rate;
    std::optional<double> mean_miou_all;
    std::optional<double> mean_miou_tp;
    double seg_threshold = 0.0;  // segmentation threshold from the validation split
    std::string method;
    int shift_offset = 0;
    int bootstrap_resamples = 0;
    uint64_t seed = 0;
};

// The full protocol: classification thresholds and the segmentation threshold
// are fitted on the validation split, all metrics are reported on the test
// split, and every per-class metric carries a percentile-bootstrap CI
// (resampling cases, bootstrap_resamples > 0 only).
EvalReport evaluate(const Dataset& dataset, const Backbone& model, const PatchGridSpec& grid,
                    const EvalOptions& options);

nlohmann::json report_to_json(const EvalReport& report);
// Aligned plain-text table: one row per class plus a Mean row, confidence
// intervals in brackets.
std::string report_to_table(const EvalReport& report);

}  // namespace patchnet
