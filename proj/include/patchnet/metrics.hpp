#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "patchnet/image.hpp"
#include "patchnet/saliency.hpp"

namespace patchnet {

// Rank-based (Mann-Whitney) AUROC; ties contribute 0.5. Throws when only one
// class is present.
double auroc(std::span<const double> scores, std::span<const uint8_t> labels);

struct ConfusionRates {
    double sensitivity = 0.0;
    double specificity = 0.0;
    double accuracy = 0.0;
};

// Decision rule: predicted positive iff score >= threshold. Throws when only
// one class is present.
ConfusionRates rates_at_threshold(std::span<const double> scores,
                                  std::span<const uint8_t> labels, double threshold);

// Maximizes sensitivity + specificity over the midpoints between consecutive
// distinct sorted scores plus -inf/+inf sentinels; ties break toward the
// higher (more specific) threshold.
double optimal_threshold(std::span<const double> scores, std::span<const uint8_t> labels);

struct HitRateCase {
    std::pair<int, int> point;  // (row, col), the most salient pixel
    Mask gt_mask;               // must be non-empty
};

double hit_rate(const std::vector<HitRateCase>& cases);

// |intersection| / |union|; both empty -> 1.0 by convention.
double iou(const Mask& pred, const Mask& gt);

enum class CaseCategory { TP, FP, FN, TN };

// One (sample, class) localization case. The category derives exactly from
// (gt nonempty, predicted positive); pred_mask is the thresholded saliency
// when the classifier said positive and empty otherwise.
struct LocalizationCase {
    std::string sample_id;
    int class_id = 0;
    bool gt_present = false;
    bool predicted_positive = false;
    Mask pred_mask;
    Mask gt_mask;

    CaseCategory category() const {
        if (gt_present) return predicted_positive ? CaseCategory::TP : CaseCategory::FN;
        return predicted_positive ? CaseCategory::FP : CaseCategory::TN;
    }
};

// Mean IoU over TP, FP and FN cases (TN excluded). Throws when no case
// qualifies.
double miou_all_cases(const std::vector<LocalizationCase>& cases);
// Mean IoU over TP cases only. Throws when no case qualifies.
double miou_tp_only(const std::vector<LocalizationCase>& cases);

// Per-case IoU values for the qualifying cases, in case order. These are what
// bootstrap resampling draws from.
std::vector<double> case_ious(const std::vector<LocalizationCase>& cases, bool tp_only);

struct SegThresholdCase {
    SaliencyMap map;
    bool predicted_positive = false;
    bool gt_present = false;
    Mask gt_mask;
    std::string sample_id;
    int class_id = 0;
};

// Sweeps 101 thresholds 0.00..1.00 maximizing miou_all_cases on the
// validation cases; ties break toward the lower threshold. Returns 0.0 when
// no case qualifies at any threshold.
double saliency_threshold_search(const std::vector<SegThresholdCase>& cases);

struct BootstrapInterval {
    double lo = 0.0;
    double hi = 0.0;
};

// Percentile bootstrap over case indices: `statistic` receives a resampled
// index multiset of size n_cases and returns the statistic or throws/NaNs for
// degenerate resamples (those are skipped). Returns nullopt when every
// resample was degenerate. Deterministic in (seed, resample index).
std::optional<BootstrapInterval> bootstrap_ci(
    size_t n_cases, const std::function<double(std::span<const size_t>)>& statistic,
    int n_resamples, double level, uint64_t seed);

// Convenience: bootstrap the mean of a value vector.
std::optional<BootstrapInterval> bootstrap_mean_ci(std::span<const double> values,
                                                   int n_resamples, double level, uint64_t seed);

}  // namespace patchnet
