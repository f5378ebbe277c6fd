#include "patchnet/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "patchnet/rng.hpp"

namespace patchnet {

namespace {

void check_scores_labels(std::span<const double> scores, std::span<const uint8_t> labels) {
    if (scores.size() != labels.size()) {
        throw ShapeError("scores and labels differ in length: " + std::to_string(scores.size()) +
                         " vs " + std::to_string(labels.size()));
    }
    if (scores.empty()) throw Error("empty score list");
    size_t pos = 0;
    for (uint8_t l : labels) pos += (l != 0);
    if (pos == 0 || pos == labels.size()) {
        throw Error("metric undefined: only one class present in labels");
    }
}

}  // namespace

double auroc(std::span<const double> scores, std::span<const uint8_t> labels) {
    check_scores_labels(scores, labels);
    const size_t n = scores.size();
    std::vector<size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(),
              [&](size_t a, size_t b) { return scores[a] < scores[b]; });

    // Midranks for tied groups, 1-based.
    std::vector<double> rank(n);
    size_t i = 0;
    while (i < n) {
        size_t j = i;
        while (j + 1 < n && scores[order[j + 1]] == scores[order[i]]) ++j;
        const double mid = (static_cast<double>(i + 1) + static_cast<double>(j + 1)) / 2.0;
        for (size_t k = i; k <= j; ++k) rank[order[k]] = mid;
        i = j + 1;
    }
    size_t n_pos = 0;
    double rank_sum_pos = 0.0;
    for (size_t k = 0; k < n; ++k) {
        if (labels[k]) {
            ++n_pos;
            rank_sum_pos += rank[k];
        }
    }
    const size_t n_neg = n - n_pos;
    const double u = rank_sum_pos - static_cast<double>(n_pos) * (n_pos + 1) / 2.0;
    return u / (static_cast<double>(n_pos) * static_cast<double>(n_neg));
}

ConfusionRates rates_at_threshold(std::span<const double> scores,
                                  std::span<const uint8_t> labels, double threshold) {
    check_scores_labels(scores, labels);
    size_t tp = 0, fp = 0, tn = 0, fn = 0;
    for (size_t i = 0; i < scores.size(); ++i) {
        const bool pred = scores[i] >= threshold;
        if (labels[i] && pred) ++tp;
        else if (labels[i]) ++fn;
        else if (pred) ++fp;
        else ++tn;
    }
    ConfusionRates r;
    r.sensitivity = static_cast<double>(tp) / (tp + fn);
    r.specificity = static_cast<double>(tn) / (tn + fp);
    r.accuracy = static_cast<double>(tp + tn) / scores.size();
    return r;
}

double optimal_threshold(std::span<const double> scores, std::span<const uint8_t> labels) {
    check_scores_labels(scores, labels);
    std::vector<double> distinct(scores.begin(), scores.end());
    std::sort(distinct.begin(), distinct.end());
    distinct.erase(std::unique(distinct.begin(), distinct.end()), distinct.end());

    std::vector<double> candidates;
    candidates.push_back(-std::numeric_limits<double>::infinity());
    for (size_t i = 0; i + 1 < distinct.size(); ++i) {
        candidates.push_back((distinct[i] + distinct[i + 1]) / 2.0);
    }
    candidates.push_back(std::numeric_limits<double>::infinity());

    double best_threshold = candidates.front();
    double best_j = -1.0;
    for (double t : candidates) {
        const ConfusionRates r = rates_at_threshold(scores, labels, t);
        const double j = r.sensitivity + r.specificity;
        if (j >= best_j) {  // >=: ties go to the higher threshold
            best_j = j;
            best_threshold = t;
        }
    }
    return best_threshold;
}

double hit_rate(const std::vector<HitRateCase>& cases) {
    if (cases.empty()) throw Error("hit_rate: empty case list");
    size_t hits = 0;
    for (const HitRateCase& c : cases) {
        if (!c.gt_mask.present() || !c.gt_mask.any()) {
            throw Error("hit_rate: case with empty ground-truth mask");
        }
        if (c.point.first < 0 || c.point.first >= c.gt_mask.side || c.point.second < 0 ||
            c.point.second >= c.gt_mask.side) {
            throw ShapeError("hit_rate: point outside the mask frame");
        }
        hits += c.gt_mask.at(c.point.first, c.point.second) != 0;
    }
    return static_cast<double>(hits) / cases.size();
}

double iou(const Mask& pred, const Mask& gt) {
    if (pred.side != gt.side) {
        throw ShapeError("iou: mask sides differ: " + std::to_string(pred.side) + " vs " +
                         std::to_string(gt.side));
    }
    size_t inter = 0, uni = 0;
    for (size_t i = 0; i < pred.px.size(); ++i) {
        const bool a = pred.px[i] != 0, b = gt.px[i] != 0;
        inter += (a && b);
        uni += (a || b);
    }
    if (uni == 0) return 1.0;  // both empty: perfect agreement
    return static_cast<double>(inter) / uni;
}

namespace {

// Pads an absent mask to an empty one of the given side so IoU applies.
Mask materialize(const Mask& m, int side) {
    return m.present() ? m : Mask::zeros(side);
}

int case_side(const LocalizationCase& c) {
    if (c.gt_mask.present()) return c.gt_mask.side;
    if (c.pred_mask.present()) return c.pred_mask.side;
    return 1;
}

}  // namespace

std::vector<double> case_ious(const std::vector<LocalizationCase>& cases, bool tp_only) {
    std::vector<double> values;
    for (const LocalizationCase& c : cases) {
        const CaseCategory cat = c.category();
        if (cat == CaseCategory::TN) continue;
        if (tp_only && cat != CaseCategory::TP) continue;
        const int side = case_side(c);
        values.push_back(iou(materialize(c.pred_mask, side), materialize(c.gt_mask, side)));
    }
    return values;
}

double miou_all_cases(const std::vector<LocalizationCase>& cases) {
    const std::vector<double> values = case_ious(cases, /*tp_only=*/false);
    if (values.empty()) throw Error("miou_all_cases: no TP/FP/FN cases to average");
    double s = 0.0;
    for (double v : values) s += v;
    return s / values.size();
}

double miou_tp_only(const std::vector<LocalizationCase>& cases) {
    const std::vector<double> values = case_ious(cases, /*tp_only=*/true);
    if (values.empty()) throw Error("miou_tp_only: no TP cases to average");
    double s = 0.0;
    for (double v : values) s += v;
    return s / values.size();
}

double saliency_threshold_search(const std::vector<SegThresholdCase>& cases) {
    double best_threshold = 0.0;
    double best_score = -1.0;
    for (int step = 0; step <= 100; ++step) {
        const double t = step / 100.0;
        std::vector<LocalizationCase> loc;
        loc.reserve(cases.size());
        for (const SegThresholdCase& c : cases) {
            LocalizationCase lc;
            lc.sample_id = c.sample_id;
            lc.class_id = c.class_id;
            lc.gt_present = c.gt_present;
            lc.predicted_positive = c.predicted_positive;
            lc.gt_mask = c.gt_mask;
            if (c.predicted_positive) lc.pred_mask = threshold_to_mask(c.map, t);
            loc.push_back(std::move(lc));
        }
        double score;
        try {
            score = miou_all_cases(loc);
        } catch (const Error&) {
            continue;  // nothing to average at this threshold
        }
        if (score > best_score) {  // strict: ties keep the lower threshold
            best_score = score;
            best_threshold = t;
        }
    }
    return best_threshold;
}

std::optional<BootstrapInterval> bootstrap_ci(
    size_t n_cases, const std::function<double(std::span<const size_t>)>& statistic,
    int n_resamples, double level, uint64_t seed) {
    if (n_cases == 0) throw Error("bootstrap_ci: empty sample");
    if (n_resamples < 1) throw ConfigError("bootstrap_ci: n_resamples must be >= 1");
    if (level <= 0.0 || level >= 1.0) throw ConfigError("bootstrap_ci: level must be in (0,1)");

    std::vector<double> stats;
    stats.reserve(n_resamples);
    std::vector<size_t> indices(n_cases);
    for (int r = 0; r < n_resamples; ++r) {
        Rng rng(Rng::key(seed, {0xB007, static_cast<uint64_t>(r)}));
        for (size_t i = 0; i < n_cases; ++i) indices[i] = rng.uniform_index(n_cases);
        double v;
        try {
            v = statistic(indices);
        } catch (const Error&) {
            continue;  // degenerate resample (e.g. single-class)
        }
        if (std::isfinite(v)) stats.push_back(v);
    }
    if (stats.empty()) return std::nullopt;
    std::sort(stats.begin(), stats.end());

    auto quantile = [&](double q) {
        const double pos = q * (stats.size() - 1);
        const size_t lo = static_cast<size_t>(std::floor(pos));
        const size_t hi = std::min(lo + 1, stats.size() - 1);
        const double frac = pos - lo;
        return (1.0 - frac) * stats[lo] + frac * stats[hi];
    };
    const double alpha = (1.0 - level) / 2.0;
    return BootstrapInterval{quantile(alpha), quantile(1.0 - alpha)};
}

std::optional<BootstrapInterval> bootstrap_mean_ci(std::span<const double> values,
                                                   int n_resamples, double level, uint64_t seed) {
    std::vector<double> copy(values.begin(), values.end());
    return bootstrap_ci(
        copy.size(),
        [&copy](std::span<const size_t> idx) {
            double s = 0.0;
            for (size_t i : idx) s += copy[i];
            return s / idx.size();
        },
        n_resamples, level, seed);
}

}  // namespace patchnet
