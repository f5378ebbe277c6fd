#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <algorithm>
#include <cmath>
#include <numeric>

#include "doctest.h"
#include "oracles.hpp"
#include "patchnet/metrics.hpp"
#include "patchnet/rng.hpp"

using namespace patchnet;

namespace {

Mask mask_from_bits(int side, const std::vector<int>& bits) {
    Mask m = Mask::zeros(side);
    for (size_t i = 0; i < bits.size(); ++i) m.px[i] = bits[i] ? 1 : 0;
    return m;
}

// A mask with exactly `area` pixels, positions drawn without replacement.
Mask random_mask_with_area(int side, size_t area, Rng& rng) {
    std::vector<size_t> idx(size_t(side) * side);
    std::iota(idx.begin(), idx.end(), 0);
    for (size_t i = idx.size(); i > 1; --i) std::swap(idx[i - 1], idx[rng.uniform_index(i)]);
    Mask m = Mask::zeros(side);
    for (size_t i = 0; i < area; ++i) m.px[idx[i]] = 1;
    return m;
}

}  // namespace

TEST_CASE("auroc: separable, chance-level, and fixed-instance values") {
    std::vector<double> sep = {0.1, 0.2, 0.8, 0.9};
    std::vector<uint8_t> lab = {0, 0, 1, 1};
    CHECK(auroc(sep, lab) == 1.0);

    // Scores independent of labels hover around 0.5.
    Rng rng(70);
    std::vector<double> scores(2000);
    std::vector<uint8_t> labels(2000);
    for (size_t i = 0; i < scores.size(); ++i) {
        scores[i] = rng.uniform();
        labels[i] = rng.uniform() < 0.5 ? 1 : 0;
    }
    CHECK(std::abs(auroc(scores, labels) - 0.5) < 0.05);

    // Fixed instance checked against the pairwise oracle.
    std::vector<double> s = {0.1, 0.4, 0.35, 0.8};
    std::vector<uint8_t> l = {0, 0, 1, 1};
    CHECK(std::abs(auroc(s, l) - oracles::pairwise_auroc(s, l)) <= 1e-12);
}

TEST_CASE("auroc equals pairwise brute force on random instances with ties") {
    Rng rng(71);
    for (int trial = 0; trial < 200; ++trial) {
        const size_t n = 2 + rng.uniform_index(49);
        std::vector<double> scores(n);
        std::vector<uint8_t> labels(n);
        bool has_pos = false, has_neg = false;
        for (size_t i = 0; i < n; ++i) {
            // Quantized scores generate plenty of ties.
            scores[i] = std::floor(rng.uniform() * 8.0) / 8.0;
            labels[i] = rng.uniform() < 0.5 ? 1 : 0;
            has_pos = has_pos || labels[i];
            has_neg = has_neg || !labels[i];
        }
        if (!has_pos || !has_neg) continue;
        CHECK(std::abs(auroc(scores, labels) - oracles::pairwise_auroc(scores, labels)) <= 1e-12);
    }
}

TEST_CASE("auroc is invariant under strictly increasing transforms") {
    Rng rng(72);
    std::vector<double> scores(40);
    std::vector<uint8_t> labels(40);
    for (size_t i = 0; i < scores.size(); ++i) {
        scores[i] = rng.normal();
        labels[i] = rng.uniform() < 0.4 ? 1 : 0;
    }
    labels[0] = 1;
    labels[1] = 0;
    const double base = auroc(scores, labels);
    std::vector<double> transformed = scores;
    for (double& v : transformed) v = std::exp(0.7 * v) + 2.0 * v;
    CHECK(auroc(transformed, labels) == base);
}

TEST_CASE("auroc rejects single-class inputs as an error, not NaN") {
    std::vector<double> s = {0.1, 0.2};
    std::vector<uint8_t> ones = {1, 1};
    CHECK_THROWS_AS(auroc(s, ones), Error);
    std::vector<uint8_t> zeros = {0, 0};
    CHECK_THROWS_AS(auroc(s, zeros), Error);
}

TEST_CASE("optimal_threshold: separable data returns the gap midpoint with J = 2") {
    std::vector<double> s = {0.1, 0.2, 0.7, 0.9};
    std::vector<uint8_t> l = {0, 0, 1, 1};
    const double t = optimal_threshold(s, l);
    CHECK(t == doctest::Approx(0.45));
    const ConfusionRates r = rates_at_threshold(s, l, t);
    CHECK(r.sensitivity + r.specificity == doctest::Approx(2.0));
}

TEST_CASE("optimal_threshold: all-equal scores degenerate to the +inf sentinel") {
    std::vector<double> s = {0.5, 0.5, 0.5, 0.5};
    std::vector<uint8_t> l = {0, 1, 0, 1};
    const double t = optimal_threshold(s, l);
    CHECK(std::isinf(t));
    CHECK(t > 0);
    // Predict-all-negative at the sentinel.
    const ConfusionRates r = rates_at_threshold(s, l, t);
    CHECK(r.sensitivity == 0.0);
    CHECK(r.specificity == 1.0);
}

TEST_CASE("optimal_threshold matches exhaustive search on random sets") {
    Rng rng(73);
    for (int trial = 0; trial < 100; ++trial) {
        std::vector<double> scores(20);
        std::vector<uint8_t> labels(20);
        for (size_t i = 0; i < scores.size(); ++i) {
            scores[i] = std::floor(rng.uniform() * 10.0) / 10.0;
            labels[i] = rng.uniform() < 0.5 ? 1 : 0;
        }
        labels[0] = 1;
        labels[1] = 0;
        const double chosen = optimal_threshold(scores, labels);

        // Exhaustive oracle over the same candidate family.
        std::vector<double> distinct(scores.begin(), scores.end());
        std::sort(distinct.begin(), distinct.end());
        distinct.erase(std::unique(distinct.begin(), distinct.end()), distinct.end());
        std::vector<double> candidates{-std::numeric_limits<double>::infinity()};
        for (size_t i = 0; i + 1 < distinct.size(); ++i) {
            candidates.push_back((distinct[i] + distinct[i + 1]) / 2.0);
        }
        candidates.push_back(std::numeric_limits<double>::infinity());
        double best = candidates.front(), best_j = -1.0;
        for (double t : candidates) {
            size_t tp = 0, fp = 0, tn = 0, fn = 0;
            for (size_t i = 0; i < scores.size(); ++i) {
                const bool pred = scores[i] >= t;
                if (labels[i] && pred) ++tp;
                else if (labels[i]) ++fn;
                else if (pred) ++fp;
                else ++tn;
            }
            const double j = double(tp) / (tp + fn) + double(tn) / (tn + fp);
            if (j >= best_j) {
                best_j = j;
                best = t;
            }
        }
        CHECK(chosen == best);
        const ConfusionRates r = rates_at_threshold(scores, labels, chosen);
        CHECK(r.sensitivity + r.specificity == doctest::Approx(best_j));
    }
}

TEST_CASE("hit_rate basics") {
    Mask full = Mask::zeros(4);
    for (auto& v : full.px) v = 1;
    std::vector<HitRateCase> all_in = {{{0, 0}, full}, {{3, 3}, full}};
    CHECK(hit_rate(all_in) == 1.0);  // full-image masks always hit

    Mask corner = mask_from_bits(2, {1, 0, 0, 0});
    std::vector<HitRateCase> mixed = {{{0, 0}, corner}, {{1, 1}, corner}};
    CHECK(hit_rate(mixed) == 0.5);

    CHECK_THROWS_AS(hit_rate({}), Error);
    Mask empty = Mask::zeros(2);
    std::vector<HitRateCase> bad = {{{0, 0}, empty}};
    CHECK_THROWS_AS(hit_rate(bad), Error);
}

TEST_CASE("hit_rate of random points approaches the mask area fraction") {
    Rng rng(74);
    const int side = 32;
    const size_t area = 154;  // fraction 0.150390625
    const double fraction = double(area) / (side * side);
    std::vector<HitRateCase> cases;
    cases.reserve(10000);
    for (int i = 0; i < 10000; ++i) {
        HitRateCase c;
        c.gt_mask = random_mask_with_area(side, area, rng);
        c.point = {static_cast<int>(rng.uniform_index(side)),
                   static_cast<int>(rng.uniform_index(side))};
        cases.push_back(std::move(c));
    }
    const double rate = hit_rate(cases);
    const double sigma = std::sqrt(fraction * (1.0 - fraction) / cases.size());
    CHECK(std::abs(rate - fraction) <= 3.0 * sigma);
}

TEST_CASE("iou hand cases and symmetry") {
    Mask a = mask_from_bits(2, {1, 1, 0, 0});
    Mask b = mask_from_bits(2, {1, 0, 1, 1});
    CHECK(iou(a, a) == 1.0);
    CHECK(iou(a, b) == doctest::Approx(0.25));  // 1 shared / 4 in union
    CHECK(iou(a, b) == iou(b, a));

    Mask disjoint = mask_from_bits(2, {0, 0, 1, 1});
    CHECK(iou(a, disjoint) == 0.0);
    Mask empty = Mask::zeros(2);
    CHECK(iou(empty, empty) == 1.0);
    CHECK(iou(a, empty) == 0.0);
    Mask other_side = Mask::zeros(3);
    CHECK_THROWS_AS(iou(a, other_side), ShapeError);
}

TEST_CASE("miou over categories: arithmetic and ordering") {
    // One TP with IoU 0.5 and one FN average to 0.25.
    LocalizationCase tp;
    tp.gt_present = true;
    tp.predicted_positive = true;
    tp.gt_mask = mask_from_bits(2, {1, 1, 0, 0});
    tp.pred_mask = mask_from_bits(2, {1, 0, 0, 0});  // IoU 1/2
    LocalizationCase fn;
    fn.gt_present = true;
    fn.predicted_positive = false;
    fn.gt_mask = mask_from_bits(2, {0, 1, 0, 0});

    std::vector<LocalizationCase> cases = {tp, fn};
    CHECK(miou_all_cases(cases) == doctest::Approx(0.25));
    CHECK(miou_tp_only(cases) == doctest::Approx(0.5));
    CHECK(miou_tp_only(cases) >= miou_all_cases(cases));

    // All TP with perfect masks.
    LocalizationCase perfect = tp;
    perfect.pred_mask = perfect.gt_mask;
    CHECK(miou_all_cases({perfect, perfect}) == 1.0);

    // FP with a non-empty prediction scores zero.
    LocalizationCase fp;
    fp.gt_present = false;
    fp.predicted_positive = true;
    fp.pred_mask = mask_from_bits(2, {1, 0, 0, 0});
    fp.gt_mask = Mask::zeros(2);
    CHECK(miou_all_cases({tp, fp}) == doctest::Approx(0.25));

    // TN cases are excluded entirely.
    LocalizationCase tn;
    tn.gt_present = false;
    tn.predicted_positive = false;
    tn.gt_mask = Mask::zeros(2);
    CHECK(miou_all_cases({tp, tn}) == doctest::Approx(0.5));
    CHECK_THROWS_AS(miou_all_cases({tn}), Error);
    CHECK_THROWS_AS(miou_tp_only({fn}), Error);
}

TEST_CASE("miou TP-only dominates all-cases whenever FP or FN are present") {
    Rng rng(75);
    for (int trial = 0; trial < 50; ++trial) {
        std::vector<LocalizationCase> cases;
        bool has_fp_or_fn = false;
        double tp_iou_sum = 0.0;
        const int n = 3 + static_cast<int>(rng.uniform_index(8));
        for (int i = 0; i < n; ++i) {
            LocalizationCase c;
            const double kind = rng.uniform();
            if (kind < 0.5) {
                c.gt_present = true;
                c.predicted_positive = true;
                c.gt_mask = random_mask_with_area(4, 4 + rng.uniform_index(5), rng);
                c.pred_mask = random_mask_with_area(4, 4 + rng.uniform_index(5), rng);
                tp_iou_sum += iou(c.pred_mask, c.gt_mask);
            } else if (kind < 0.75) {
                c.gt_present = true;
                c.predicted_positive = false;
                c.gt_mask = random_mask_with_area(4, 3, rng);
                has_fp_or_fn = true;
            } else {
                c.gt_present = false;
                c.predicted_positive = true;
                c.pred_mask = random_mask_with_area(4, 3, rng);  // non-empty prediction
                c.gt_mask = Mask::zeros(4);
                has_fp_or_fn = true;
            }
            cases.push_back(std::move(c));
        }
        double tp_only;
        try {
            tp_only = miou_tp_only(cases);
        } catch (const Error&) {
            continue;  // no TP drawn this trial
        }
        const double all = miou_all_cases(cases);
        CHECK(tp_only >= all);
        if (has_fp_or_fn && tp_iou_sum > 0.0) CHECK(tp_only > all);
    }
}

TEST_CASE("saliency_threshold_search recovers the ramp split point") {
    // One TP case: linear-ramp map, ground truth covering the upper half of
    // the normalized range. The best threshold is 0.5 within grid resolution.
    SegThresholdCase c;
    c.predicted_positive = true;
    c.gt_present = true;
    c.map.side = 10;
    c.map.values.resize(100);
    for (int y = 0; y < 10; ++y) {
        for (int x = 0; x < 10; ++x) c.map.at(y, x) = static_cast<double>(x) / 9.0;
    }
    c.gt_mask = Mask::zeros(10);
    for (int y = 0; y < 10; ++y) {
        for (int x = 5; x < 10; ++x) c.gt_mask.at(y, x) = 1;  // x/9 >= 0.5 -> x >= 5
    }
    const double t = saliency_threshold_search({c});
    CHECK(t >= 0.45);
    CHECK(t <= 0.56);

    // The chosen threshold is at least as good as any fixed grid threshold.
    auto miou_at = [&](double thr) {
        LocalizationCase lc;
        lc.gt_present = true;
        lc.predicted_positive = true;
        lc.gt_mask = c.gt_mask;
        lc.pred_mask = threshold_to_mask(c.map, thr);
        return miou_all_cases({lc});
    };
    const double chosen_score = miou_at(t);
    for (int step = 0; step <= 100; ++step) {
        CHECK(chosen_score >= miou_at(step / 100.0) - 1e-12);
    }
}

TEST_CASE("saliency_threshold_search with a flat objective keeps the lowest threshold") {
    // Only FP cases with non-empty predictions at every grid threshold: the
    // objective is identically zero, so the tie rule keeps 0.00.
    SegThresholdCase fp;
    fp.predicted_positive = true;
    fp.gt_present = false;
    fp.gt_mask = Mask::zeros(4);
    fp.map.side = 4;
    fp.map.values.resize(16);
    for (int i = 0; i < 16; ++i) fp.map.values[i] = i;
    CHECK(saliency_threshold_search({fp}) == 0.0);
}

TEST_CASE("bootstrap_ci: constant statistic, coin mean, determinism") {
    std::vector<double> constant(50, 0.8);
    auto ci = bootstrap_mean_ci(constant, 500, 0.95, 1);
    REQUIRE(ci.has_value());
    CHECK(ci->lo == ci->hi);  // degenerate interval (v, v)
    CHECK(ci->lo == doctest::Approx(0.8).epsilon(1e-14));

    // Fair coin, n=100: the 95% percentile interval lands near (0.40, 0.60).
    Rng rng(76);
    std::vector<double> coin(100);
    for (double& v : coin) v = rng.uniform() < 0.5 ? 1.0 : 0.0;
    auto coin_ci = bootstrap_mean_ci(coin, 1000, 0.95, 2);
    REQUIRE(coin_ci.has_value());
    CHECK(std::abs(coin_ci->lo - 0.40) <= 0.06);
    CHECK(std::abs(coin_ci->hi - 0.60) <= 0.06);
    double mean = 0.0;
    for (double v : coin) mean += v;
    mean /= coin.size();
    CHECK(coin_ci->lo <= mean);
    CHECK(coin_ci->hi >= mean);

    auto again = bootstrap_mean_ci(coin, 1000, 0.95, 2);
    REQUIRE(again.has_value());
    CHECK(again->lo == coin_ci->lo);
    CHECK(again->hi == coin_ci->hi);

    auto different_seed = bootstrap_mean_ci(coin, 1000, 0.95, 3);
    REQUIRE(different_seed.has_value());
    CHECK((different_seed->lo != coin_ci->lo || different_seed->hi != coin_ci->hi));
}

TEST_CASE("bootstrap_ci skips degenerate resamples and validates inputs") {
    // Statistic undefined unless both classes are present in the resample.
    std::vector<uint8_t> labels = {1, 0, 1, 0, 1};
    std::vector<double> scores = {0.9, 0.1, 0.8, 0.2, 0.7};
    auto ci = bootstrap_ci(
        labels.size(),
        [&](std::span<const size_t> idx) {
            std::vector<double> s;
            std::vector<uint8_t> l;
            for (size_t i : idx) {
                s.push_back(scores[i]);
                l.push_back(labels[i]);
            }
            return auroc(s, l);
        },
        300, 0.95, 7);
    REQUIRE(ci.has_value());
    CHECK(ci->lo >= 0.0);
    CHECK(ci->hi <= 1.0);
    CHECK(ci->lo <= ci->hi);

    CHECK_THROWS_AS(bootstrap_ci(0, [](std::span<const size_t>) { return 0.0; }, 10, 0.95, 1),
                    Error);
    CHECK_THROWS_AS(bootstrap_mean_ci(std::vector<double>{1.0}, 0, 0.95, 1), ConfigError);
    CHECK_THROWS_AS(bootstrap_mean_ci(std::vector<double>{1.0}, 10, 1.5, 1), ConfigError);
}
